//! Per-round metrics and their CSV form.
//!
//! Columns: `round,strategy,e_t,test_accuracy,recovered,selected_ids,reputations`.
//! `e_t` is empty for strategies that do not evaluate, `selected_ids` lists the
//! round's trainers separated by `;`, and `reputations` holds `id:value`
//! pairs separated by `;`.

use std::fs::{self, File};
use std::io::Write;
use std::path::Path;

use fpp_core::RoundReport;

use crate::error::{Result, SimError};

pub const HEADER: [&str; 7] = [
    "round",
    "strategy",
    "e_t",
    "test_accuracy",
    "recovered",
    "selected_ids",
    "reputations",
];

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub round: u64,
    pub strategy: String,
    pub loss_estimate: Option<f64>,
    pub test_accuracy: f64,
    pub recovered: bool,
    pub selected_ids: Vec<u64>,
    pub reputations: Vec<(u64, f64)>,
}

impl MetricsRow {
    pub fn from_report(strategy: &str, report: &RoundReport) -> Self {
        Self {
            round: report.round,
            strategy: strategy.to_string(),
            loss_estimate: report.loss_estimate,
            test_accuracy: report.test_accuracy,
            recovered: report.recovered,
            selected_ids: report.trainers.clone(),
            reputations: report.reputations.clone(),
        }
    }

    pub fn fields(&self) -> [String; 7] {
        let ids: Vec<String> = self.selected_ids.iter().map(u64::to_string).collect();
        let reps: Vec<String> = self.reputations.iter().map(|(id, r)| format!("{id}:{r}")).collect();
        [
            self.round.to_string(),
            self.strategy.clone(),
            self.loss_estimate.map(|e| e.to_string()).unwrap_or_default(),
            self.test_accuracy.to_string(),
            self.recovered.to_string(),
            ids.join(";"),
            reps.join(";"),
        ]
    }

    pub fn reputation_of(&self, id: u64) -> Option<f64> {
        self.reputations.iter().find(|(c, _)| *c == id).map(|(_, r)| *r)
    }
}

/// CSV writer that flushes after every row.
pub struct MetricsWriter {
    inner: csv::Writer<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| SimError::io(dir, e))?;
        }
        let file = File::create(path).map_err(|e| SimError::io(path, e))?;
        let mut inner = csv::Writer::from_writer(file);
        inner.write_record(HEADER)?;
        inner.flush().map_err(|e| SimError::io(path, e))?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        self.inner.write_record(row.fields())?;
        self.inner.flush().map_err(|e| SimError::Csv(e.into()))
    }
}

/// Render rows to CSV text (header included).
pub fn to_csv(rows: &[MetricsRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(HEADER)?;
    for r in rows {
        w.write_record(r.fields())?;
    }
    w.flush().map_err(|e| SimError::Csv(e.into()))?;
    let bytes = w.into_inner().map_err(|e| SimError::Csv(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_all(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| SimError::io(dir, e))?;
    }
    let mut f = File::create(path).map_err(|e| SimError::io(path, e))?;
    f.write_all(to_csv(rows)?.as_bytes()).map_err(|e| SimError::io(path, e))
}
