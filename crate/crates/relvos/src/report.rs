//! Metric and log writers.
//!
//! * `metrics.csv`: header `round,frame,object,J,F`, one row per
//!   (round, frame, object), scores with six decimals.
//! * `summary.json`: per-round means, AUC and the selection trace.
//! * `rounds.jsonl`: one engine round record per line.

use std::io::Write;

use relvos_core::robot::Selection;
use relvos_core::simulation::RoundSummary;
use relvos_core::{MetricReport, RoundRecord};
use serde::{Deserialize, Serialize};

use crate::error::{IoError, Result};

pub const CSV_HEADER: [&str; 5] = ["round", "frame", "object", "J", "F"];

pub fn write_metrics_csv<W: Write>(report: &MetricReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| IoError::format("metrics csv", e);
    w.write_record(CSV_HEADER).map_err(err)?;
    for r in &report.records {
        w.write_record([
            r.round.to_string(),
            r.frame.to_string(),
            r.object.to_string(),
            format!("{:.6}", r.j),
            format!("{:.6}", r.f),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| IoError::io("metrics csv", e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub sequence: String,
    pub mode: String,
    pub num_frames: usize,
    pub num_objects: u8,
    pub rounds: Vec<RoundSummary>,
    /// Area under the per-round mean J&F curve, round axis scaled to `[0, 1]`.
    pub auc: f64,
    pub selections: Vec<Selection>,
}

pub fn write_summary<W: Write>(summary: &Summary, mut out: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, summary).map_err(|e| IoError::format("summary", e))?;
    writeln!(out).map_err(|e| IoError::io("summary", e))
}

pub fn write_round_log<W: Write>(log: &[RoundRecord], mut out: W) -> Result<()> {
    for r in log {
        serde_json::to_writer(&mut out, r).map_err(|e| IoError::format("round log", e))?;
        writeln!(out).map_err(|e| IoError::io("round log", e))?;
    }
    Ok(())
}
