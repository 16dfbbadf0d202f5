pub mod convert;
pub mod forward;
pub mod fp;
pub mod langevin;
pub mod reverse;
pub mod train;
pub mod verify;

use std::path::PathBuf;

use langevin_core::GaussianMixture;
use serde::Serialize;

use crate::config;
use crate::error::CliError;
use crate::output::OutDir;
use crate::RunArgs;

pub const OUTPUT_ROOT_VAR: &str = "LDIFF_OUTPUT_ROOT";

fn out_path(run: &RunArgs, command: &str) -> PathBuf {
    match &run.out {
        Some(p) => p.clone(),
        None => std::env::var_os(OUTPUT_ROOT_VAR)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("ldiff-out"))
            .join(command),
    }
}

/// A run in progress: the output directory plus the resolved config echo.
pub struct Run {
    pub out: OutDir,
    command: &'static str,
    config_text: String,
    seed: u64,
    emit_gnuplot: bool,
}

impl Run {
    pub fn start<T: Serialize>(run: &RunArgs, command: &'static str, cfg: &T, seed: u64) -> Result<Self, CliError> {
        let config_text = config::echo(cfg)?;
        let mut out = OutDir::create(&out_path(run, command), run.overwrite)?;
        out.write("config.toml", &config_text)?;
        Ok(Run {
            out,
            command,
            config_text,
            seed,
            emit_gnuplot: run.emit_gnuplot,
        })
    }

    pub fn gnuplot(&mut self, script: impl FnOnce() -> String) -> Result<(), CliError> {
        if self.emit_gnuplot {
            let s = script();
            self.out.write("plot.gp", &s)?;
        }
        Ok(())
    }

    pub fn finish(self) -> Result<(), CliError> {
        let dir = self.out.path().to_path_buf();
        let m = self.out.finish(self.command, &self.config_text, self.seed)?;
        eprintln!(
            "ldiff {}: wrote {} files to {}",
            self.command,
            m.outputs.len() + 1,
            dir.display()
        );
        Ok(())
    }
}

pub fn mixture(spec: &langevin_core::oracle::MixtureSpec) -> Result<GaussianMixture, CliError> {
    GaussianMixture::new(spec.clone()).map_err(|e| CliError::Config(format!("data: {e}")))
}
