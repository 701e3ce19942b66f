//! Per-epoch run reports, one JSON object per line.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    /// 1-based.
    pub epoch: usize,
    /// `"train"` or `"valid"`.
    pub split: String,
    pub nll: f64,
    pub ppl: f64,
    pub bpc: f64,
    /// Pre-clip global gradient norm over the epoch's updates; null for valid.
    pub grad_norm_mean: Option<f64>,
    pub grad_norm_max: Option<f64>,
    /// Wall time, only when timing is enabled, so that reports stay
    /// reproducible by default.
    pub seconds: Option<f64>,
}

pub trait ReportSink {
    fn emit(&mut self, report: &RunReport) -> Result<()>;
}

impl ReportSink for Vec<RunReport> {
    fn emit(&mut self, report: &RunReport) -> Result<()> {
        self.push(report.clone());
        Ok(())
    }
}

/// Discards reports.
pub struct NullSink;

impl ReportSink for NullSink {
    fn emit(&mut self, _: &RunReport) -> Result<()> {
        Ok(())
    }
}

/// Writes each report as a JSON line and flushes.
pub struct JsonlSink<W: Write>(pub W);

impl<W: Write> ReportSink for JsonlSink<W> {
    fn emit(&mut self, report: &RunReport) -> Result<()> {
        serde_json::to_writer(&mut self.0, report)?;
        self.0
            .write_all(b"\n")
            .and_then(|_| self.0.flush())
            .map_err(|e| Error::io("writing run report", e))
    }
}
