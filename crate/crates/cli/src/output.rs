//! Output directory handling: CSV/JSON writers, the run manifest and the
//! optional gnuplot companion.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST: &str = "manifest.json";

static STARTED: OnceLock<Instant> = OnceLock::new();

/// Start of the wall-clock time recorded in manifests; call once early in `main`.
pub fn mark_start() {
    STARTED.get_or_init(Instant::now);
}

/// Full round-trip decimal form: 17 significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Long-format CSV assembled in memory.
pub struct Csv {
    text: String,
    columns: usize,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Csv {
            text: header.join(",") + "\n",
            columns: header.len(),
        }
    }

    /// One row; integer-valued identifier columns go through [`Cell::Int`].
    pub fn row(&mut self, cells: &[Cell]) {
        debug_assert_eq!(cells.len(), self.columns);
        for (i, c) in cells.iter().enumerate() {
            if i > 0 {
                self.text.push(',');
            }
            match c {
                Cell::Int(v) => write!(self.text, "{v}").unwrap(),
                Cell::Num(v) => self.text.push_str(&num(*v)),
            }
        }
        self.text.push('\n');
    }

    pub fn into_string(self) -> String {
        self.text
    }
}

pub enum Cell {
    Int(u64),
    Num(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    pub artifact_version: String,
    pub outputs: Vec<OutputFile>,
    pub wall_clock_seconds: f64,
}

/// An output directory being filled by one run.
pub struct OutDir {
    root: PathBuf,
    files: Vec<OutputFile>,
}

impl OutDir {
    /// Create `root`, or reuse it when it is empty. With `overwrite`, files
    /// listed in a previous manifest there are removed first; any other
    /// file is left alone and makes the directory unusable.
    pub fn create(root: &Path, overwrite: bool) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        let manifest = root.join(MANIFEST);
        if overwrite && manifest.exists() {
            let text = fs::read_to_string(&manifest).map_err(|e| CliError::io(&manifest, e))?;
            let old: RunManifest = serde_json::from_str(&text)
                .map_err(|e| CliError::Usage(format!("{}: not a manifest ({e})", manifest.display())))?;
            for f in &old.outputs {
                let p = root.join(&f.path);
                if p.exists() {
                    fs::remove_file(&p).map_err(|e| CliError::io(&p, e))?;
                }
            }
            fs::remove_file(&manifest).map_err(|e| CliError::io(&manifest, e))?;
        }
        let leftover = fs::read_dir(root).map_err(|e| CliError::io(root, e))?.next().is_some();
        if leftover {
            return Err(CliError::Usage(format!(
                "output directory {} is not empty (use --overwrite to replace a previous run)",
                root.display()
            )));
        }
        Ok(OutDir {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let p = self.root.join(name);
        fs::write(&p, contents).map_err(|e| CliError::io(&p, e))?;
        self.files.push(OutputFile {
            path: name.to_string(),
            bytes: contents.len() as u64,
            sha256: sha256_hex(contents.as_bytes()),
        });
        Ok(())
    }

    pub fn write_csv(&mut self, name: &str, csv: Csv) -> Result<(), CliError> {
        self.write(name, &csv.into_string())
    }

    /// Write the manifest; `config_text` is the echoed resolved config.
    pub fn finish(self, command: &str, config_text: &str, seed: u64) -> Result<RunManifest, CliError> {
        let manifest = RunManifest {
            command: command.to_string(),
            config_sha256: sha256_hex(config_text.as_bytes()),
            seed,
            artifact_version: env!("CARGO_PKG_VERSION").to_string(),
            outputs: self.files,
            wall_clock_seconds: STARTED.get_or_init(Instant::now).elapsed().as_secs_f64(),
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Usage(e.to_string()))? + "\n";
        let p = self.root.join(MANIFEST);
        fs::write(&p, text).map_err(|e| CliError::io(&p, e))?;
        Ok(manifest)
    }
}

/// A gnuplot script drawing `series` (file, x column, y column, title) on one plot.
pub fn gnuplot(title: &str, xlabel: &str, ylabel: &str, logy: bool, series: &[(&str, &str, &str, &str)]) -> String {
    let mut s = String::new();
    writeln!(s, "# gnuplot script; run from this directory: gnuplot -p plot.gp").unwrap();
    writeln!(s, "set datafile separator ','").unwrap();
    writeln!(s, "set key autotitle columnhead").unwrap();
    writeln!(s, "set title '{title}'").unwrap();
    writeln!(s, "set xlabel '{xlabel}'").unwrap();
    writeln!(s, "set ylabel '{ylabel}'").unwrap();
    if logy {
        writeln!(s, "set logscale y").unwrap();
    }
    let plots: Vec<String> = series
        .iter()
        .map(|(file, x, y, t)| format!("'{file}' using '{x}':'{y}' with lines title '{t}'"))
        .collect();
    writeln!(s, "plot {}", plots.join(", \\\n     ")).unwrap();
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 1e300, 0.0] {
            let s = num(x);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits(), "{s}");
        }
        assert_eq!(num(2f64.sqrt()), "1.4142135623730951e0");
    }

    #[test]
    fn csv_rows() {
        let mut c = Csv::new(&["step", "loss"]);
        c.row(&[Cell::Int(3), Cell::Num(0.5)]);
        assert_eq!(c.into_string(), "step,loss\n3,5.0000000000000000e-1\n");
    }
}
