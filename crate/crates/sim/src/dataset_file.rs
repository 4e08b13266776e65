//! Plain-text dataset files.
//!
//! ```text
//! <n_samples>,<n_features>,<n_classes>
//! <x_1>,...,<x_n_features>,<label>
//! ...
//! ```
//!
//! Reals are written in shortest round-trip form, so a write/read cycle is
//! bit-exact. An exported experiment directory holds `client_000.csv`,
//! `client_001.csv`, ... and `test.csv`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use fpp_core::Dataset;

use crate::error::{Result, SimError};

pub fn to_text(data: &Dataset) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{},{},{}", data.len(), data.n_features(), data.n_classes());
    for (i, label) in data.labels().iter().enumerate() {
        for x in data.row(i) {
            let _ = write!(out, "{x},");
        }
        let _ = writeln!(out, "{label}");
    }
    out
}

pub fn from_text(text: &str, path: &Path) -> Result<Dataset> {
    let bad = |line: usize, what: &str| SimError::format(path, format!("line {line}: {what}"));
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| bad(1, "missing header"))?;
    let dims: Vec<usize> = header
        .split(',')
        .map(|f| f.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| bad(1, "header must be n_samples,n_features,n_classes"))?;
    let [n_samples, n_features, n_classes] = dims[..] else {
        return Err(bad(1, "header must have three fields"));
    };
    let mut features = Vec::with_capacity(n_samples * n_features);
    let mut labels = Vec::with_capacity(n_samples);
    for (idx, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != n_features + 1 {
            return Err(bad(idx + 1, "wrong number of fields"));
        }
        for f in &fields[..n_features] {
            features.push(f.parse::<f64>().map_err(|_| bad(idx + 1, "feature is not a number"))?);
        }
        labels.push(fields[n_features].parse::<u32>().map_err(|_| bad(idx + 1, "label is not an integer"))?);
    }
    if labels.len() != n_samples {
        return Err(SimError::format(
            path,
            format!("header declares {n_samples} samples, found {}", labels.len()),
        ));
    }
    Ok(Dataset::new(features, labels, n_features, n_classes)?)
}

pub fn write(path: &Path, data: &Dataset) -> Result<()> {
    fs::write(path, to_text(data)).map_err(|e| SimError::io(path, e))
}

pub fn read(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
    from_text(&text, path)
}

pub fn client_file(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("client_{index:03}.csv"))
}

pub fn test_file(dir: &Path) -> PathBuf {
    dir.join("test.csv")
}

/// Write client datasets and the test set into `dir`.
pub fn export_dir(dir: &Path, clients: &[Dataset], test: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| SimError::io(dir, e))?;
    for (i, d) in clients.iter().enumerate() {
        write(&client_file(dir, i), d)?;
    }
    write(&test_file(dir), test)
}

/// Read `client_000.csv`, `client_001.csv`, ... until the first gap, plus `test.csv`.
pub fn import_dir(dir: &Path) -> Result<(Vec<Dataset>, Dataset)> {
    let mut clients = Vec::new();
    loop {
        let path = client_file(dir, clients.len());
        if !path.exists() {
            break;
        }
        clients.push(read(&path)?);
    }
    if clients.is_empty() {
        return Err(SimError::format(dir, "no client_000.csv found"));
    }
    Ok((clients, read(&test_file(dir))?))
}
