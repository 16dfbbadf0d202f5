#![allow(dead_code)]

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

pub fn ldiff() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ldiff"));
    c.env_remove("LDIFF_OUTPUT_ROOT");
    c
}

pub fn run(args: &[&str]) -> Output {
    ldiff().args(args).output().expect("ldiff runs")
}

/// Run and require exit status 0; returns stdout.
pub fn run_ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "ldiff {args:?} exited {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

/// Header and rows of a CSV file written by ldiff.
pub fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(str::to_string).collect();
    let rows = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    (header, rows)
}

pub fn column(path: &Path, name: &str) -> Vec<f64> {
    let (header, rows) = read_csv(path);
    let j = header
        .iter()
        .position(|h| h == name)
        .unwrap_or_else(|| panic!("no column {name} in {header:?}"));
    rows.iter().map(|r| r[j].parse().unwrap()).collect()
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Every file in `dir` is `manifest.json` or listed in it with the right
/// size and hash, and every listed file exists.
pub fn manifest_complete(dir: &Path) -> Result<(), String> {
    let text = fs::read_to_string(dir.join("manifest.json")).map_err(|e| format!("{}: {e}", dir.display()))?;
    let m: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let outputs = m["outputs"].as_array().ok_or("manifest without outputs")?;
    let mut listed = BTreeSet::new();
    for o in outputs {
        let name = o["path"].as_str().ok_or("output without path")?;
        let bytes = fs::read(dir.join(name)).map_err(|e| format!("listed {name}: {e}"))?;
        if o["bytes"].as_u64() != Some(bytes.len() as u64) {
            return Err(format!("{name}: size differs from the manifest"));
        }
        if o["sha256"].as_str() != Some(sha256_hex(&bytes).as_str()) {
            return Err(format!("{name}: hash differs from the manifest"));
        }
        listed.insert(name.to_string());
    }
    for e in fs::read_dir(dir).map_err(|e| e.to_string())? {
        let name = e.map_err(|e| e.to_string())?.file_name().to_string_lossy().to_string();
        if name != "manifest.json" && !listed.contains(&name) {
            return Err(format!("orphan file {name}"));
        }
    }
    Ok(())
}

/// Manifest with the wall-clock field removed.
pub fn manifest_without_timing(dir: &Path) -> serde_json::Value {
    let text = fs::read_to_string(dir.join("manifest.json")).unwrap();
    let mut m: serde_json::Value = serde_json::from_str(&text).unwrap();
    m.as_object_mut().unwrap().remove("wall_clock_seconds");
    m
}

/// Byte comparison of two run directories; manifests compared without timing.
pub fn same_outputs(a: &Path, b: &Path) -> Result<usize, String> {
    let names = |d: &Path| -> BTreeSet<String> {
        fs::read_dir(d)
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().to_string())
            .collect()
    };
    let (na, nb) = (names(a), names(b));
    if na != nb {
        return Err(format!("file sets differ: {na:?} vs {nb:?}"));
    }
    for n in &na {
        if n == "manifest.json" {
            if manifest_without_timing(a) != manifest_without_timing(b) {
                return Err("manifests differ".into());
            }
        } else if fs::read(a.join(n)).unwrap() != fs::read(b.join(n)).unwrap() {
            return Err(format!("{n} differs"));
        }
    }
    Ok(na.len())
}
