//! The `simulate` pipeline: video + ground truth -> robot-driven session ->
//! metrics, summary, round log and snapshot on disk.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use relvos_core::simulation::run_simulation;
use relvos_core::{MetricReport, SessionState};

use crate::config::RunConfig;
use crate::dataset::infer_num_objects;
use crate::error::{IoError, Result};
use crate::report::{write_metrics_csv, write_round_log, write_summary, Summary};
use crate::snapshot::{SessionSnapshot, VideoSource};

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const ROUND_LOG_FILE: &str = "rounds.jsonl";
pub const SNAPSHOT_FILE: &str = "snapshot.json";

#[derive(Debug)]
pub struct SimulationOutput {
    pub report: MetricReport,
    pub summary: Summary,
    pub session: SessionState,
    pub snapshot: SessionSnapshot,
}

/// Runs the robot simulation on `source` without touching the disk.
pub fn simulate(source: &VideoSource, config: &RunConfig, data_root: Option<&Path>) -> Result<SimulationOutput> {
    let (frames, gt) = source.load(data_root)?;
    let gt = gt.ok_or_else(|| IoError::format("sequence", "simulation needs ground-truth masks"))?;
    let num_objects = infer_num_objects(&gt)?;
    if num_objects == 0 {
        return Err(IoError::format("sequence", "ground truth contains no objects"));
    }
    let num_frames = frames.len();
    let mut session = SessionState::new(frames, num_objects, config.engine.clone())?;
    let report = run_simulation(&mut session, &gt, &config.simulation)?;
    let sequence = match source {
        VideoSource::Dataset { sequence } => sequence.clone(),
        VideoSource::Synthetic { config } => format!("synthetic-{}", config.seed),
    };
    let summary = Summary {
        sequence,
        mode: config.simulation.robot.mode.name().to_string(),
        num_frames,
        num_objects,
        rounds: report.rounds.clone(),
        auc: report.auc,
        selections: report.selection_trace(),
    };
    let snapshot = SessionSnapshot::capture(&session, source.clone())?;
    Ok(SimulationOutput {
        report,
        summary,
        session,
        snapshot,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| IoError::io(path, e))?))
}

/// Writes the four artifacts into `dir` and returns their paths.
pub fn write_outputs(out: &SimulationOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    let paths: Vec<PathBuf> = [METRICS_FILE, SUMMARY_FILE, ROUND_LOG_FILE, SNAPSHOT_FILE]
        .iter()
        .map(|f| dir.join(f))
        .collect();
    write_metrics_csv(&out.report, create(&paths[0])?)?;
    write_summary(&out.summary, create(&paths[1])?)?;
    write_round_log(out.session.log(), create(&paths[2])?)?;
    out.snapshot.save(&paths[3])?;
    Ok(paths)
}
