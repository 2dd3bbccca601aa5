use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use relvos::config::RunConfig;
use relvos::dataset::{write_mask, write_sequence, DATA_ROOT_ENV};
use relvos::server::{serve, ServiceConfig};
use relvos::simulate::{simulate, write_outputs};
use relvos::snapshot::{SessionSnapshot, VideoSource};
use relvos::{oracle, Result as IoResult};
use relvos_core::synthetic::generate;
use relvos_core::SelectionMode;

#[derive(Parser)]
#[command(name = "relvos", version, about = "Reliability-guided interactive video object segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a robot-user simulation and write metrics.csv, summary.json, rounds.jsonl and snapshot.json.
    Simulate {
        /// Sequence name (under the data root) or directory.
        #[arg(long, conflicts_with = "synthetic")]
        dataset: Option<String>,
        /// Use a generated video (the [synthetic] table of the config).
        #[arg(long)]
        synthetic: bool,
        /// Overrides the synthetic video seed.
        #[arg(long, requires = "synthetic")]
        synthetic_seed: Option<u64>,
        /// TOML run configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Frame selection: gt-worst, rs1, rs4-gt or random.
        #[arg(long)]
        mode: Option<SelectionMode>,
        #[arg(long)]
        rounds: Option<usize>,
        /// Robot seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, env = DATA_ROOT_ENV)]
        data_root: Option<PathBuf>,
    },
    /// Serve the HTTP session API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[arg(long, env = DATA_ROOT_ENV)]
        data_root: Option<PathBuf>,
        #[arg(long, default_value = "snapshots")]
        snapshot_dir: PathBuf,
        /// TOML file whose [engine] table configures new sessions.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Compare the engine with an independent scalar implementation on tiny fixtures.
    /// Exits with status 1 if any deviation exceeds 1e-9.
    Oracle {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of consecutive seeds to check.
        #[arg(long, default_value_t = 1)]
        count: u64,
        /// Print the reports as JSON lines.
        #[arg(long)]
        json: bool,
    },
    /// Rebuild a session from a snapshot and write every round's masks.
    Replay {
        snapshot: PathBuf,
        #[arg(long, default_value = "replay")]
        out: PathBuf,
        #[arg(long, env = DATA_ROOT_ENV)]
        data_root: Option<PathBuf>,
    },
    /// Write a synthetic sequence (frames and masks) in the dataset layout.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        objects: Option<u8>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: Option<&Path>) -> IoResult<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Simulate {
            dataset,
            synthetic,
            synthetic_seed,
            config,
            mode,
            rounds,
            seed,
            out,
            data_root,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(m) = mode {
                cfg.simulation.robot.mode = m;
            }
            if let Some(r) = rounds {
                cfg.simulation.rounds = r;
            }
            if let Some(s) = seed {
                cfg.simulation.robot.seed = s;
            }
            let source = match (dataset, synthetic) {
                (Some(sequence), false) => VideoSource::Dataset { sequence },
                (None, true) => {
                    let mut config = cfg.synthetic.clone();
                    if let Some(s) = synthetic_seed {
                        config.seed = s;
                    }
                    VideoSource::Synthetic { config }
                }
                _ => bail!("give --dataset or --synthetic"),
            };
            let result = simulate(&source, &cfg, data_root.as_deref())?;
            write_outputs(&result, &out)?;
            println!("round  frame  rule      mean J    mean F    mean J&F");
            for r in &result.summary.rounds {
                println!(
                    "{:>5}  {:>5}  {:<8}  {:.6}  {:.6}  {:.6}",
                    r.round, r.frame, r.rule, r.mean_j, r.mean_f, r.mean_jf
                );
            }
            println!("AUC {:.6}; wrote {}", result.summary.auc, out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Serve {
            addr,
            data_root,
            snapshot_dir,
            config,
        } => {
            let cfg = load_config(config.as_deref())?;
            let service = ServiceConfig {
                data_root,
                snapshot_dir,
                engine: cfg.engine,
            };
            let rt = tokio::runtime::Runtime::new().context("starting the runtime")?;
            rt.block_on(serve(addr, service))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Oracle { seed, count, json } => {
            let mut worst: f64 = 0.0;
            for s in seed..seed.saturating_add(count.max(1)) {
                let report = oracle::run(s)?;
                if json {
                    println!("{}", serde_json::to_string(&report)?);
                } else {
                    println!(
                        "seed {s}: hw {} C1 {} C2 {} C3 {} N {}",
                        report.hw, report.c1, report.c2, report.c3, report.sources
                    );
                    for c in &report.checks {
                        println!("  {:<22} {:.3e}", c.quantity, c.max_deviation);
                    }
                }
                worst = worst.max(report.max_deviation);
            }
            let ok = worst <= oracle::TOLERANCE;
            if !json {
                println!(
                    "max deviation {worst:.3e} ({} tolerance {:.0e})",
                    if ok { "within" } else { "EXCEEDS" },
                    oracle::TOLERANCE
                );
            }
            Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Replay {
            snapshot,
            out,
            data_root,
        } => {
            let snap = SessionSnapshot::load(&snapshot)?;
            let (frames, _) = snap.source.load(data_root.as_deref())?;
            let session = snap.replay(frames, |s| {
                let dir = out.join(format!("round_{:02}", s.round()));
                std::fs::create_dir_all(&dir).map_err(|e| relvos::IoError::Io {
                    path: dir.clone(),
                    source: e,
                })?;
                for t in 0..s.num_frames() {
                    write_mask(&dir.join(format!("{t:05}.pgm")), &s.mask(t)?)?;
                }
                Ok(())
            })?;
            println!(
                "replayed {} rounds; final masks match the snapshot; wrote {}",
                session.round(),
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Synth {
            config,
            seed,
            frames,
            objects,
            out,
        } => {
            let mut cfg = load_config(config.as_deref())?.synthetic;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(f) = frames {
                cfg.num_frames = f;
            }
            if let Some(k) = objects {
                cfg.num_objects = k;
            }
            let video = generate(&cfg)?;
            write_sequence(&out, &video.frames, Some(&video.masks))?;
            println!("wrote {} frames to {}", video.frames.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}
