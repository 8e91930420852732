//! `c2w-tune`: cavity-to-wall transfer learning on synthetic thin-wall
//! phantoms, end to end on a CPU.
//!
//! A typical run, from nothing to a metrics table:
//!
//! ```text
//! c2w-tune gen-phantoms  --config run.toml --out runs/a
//! c2w-tune localize      --config run.toml --out runs/a
//! c2w-tune train-cavity  --config run.toml --out runs/a
//! c2w-tune finetune-wall --config run.toml --out runs/a
//! c2w-tune train-scratch --config run.toml --out runs/a
//! c2w-tune predict       --config run.toml --out runs/a --checkpoint wall/checkpoint
//! c2w-tune evaluate      --config run.toml --out runs/a --pred wall --target wall
//! ```

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use c2w_tune::config::{RunConfig, SplitName, TargetName};
use c2w_tune::pipeline;

#[derive(Parser)]
#[command(name = "c2w-tune", version, about = "Cavity-to-wall transfer pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Declarative run configuration (TOML); an empty file selects the
    /// desk-scale defaults.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Run root; every artifact lands under it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the seeded ellipsoid-shell dataset with train/val/test splits.
    GenPhantoms {
        #[command(flatten)]
        common: Common,
    },
    /// Crop a fixed ROI around each cavity (oracle mask or coarse model).
    Localize {
        #[command(flatten)]
        common: Common,
    },
    /// Stage 1: train the cavity segmenter from scratch on the crops.
    TrainCavity {
        #[command(flatten)]
        common: Common,
    },
    /// Stage 2: fine-tune the wall segmenter from the cavity checkpoint
    /// with progressive unfreezing and stagewise restarts.
    FinetuneWall {
        #[command(flatten)]
        common: Common,
        /// Source checkpoint prefix (default: <out>/cavity/checkpoint).
        #[arg(long)]
        cavity_checkpoint: Option<PathBuf>,
    },
    /// Baseline: the wall task with identical budget but fresh weights.
    TrainScratch {
        #[command(flatten)]
        common: Common,
    },
    /// Write binary masks (sigmoid >= 0.5) for a split from a checkpoint.
    Predict {
        #[command(flatten)]
        common: Common,
        /// Checkpoint prefix, relative to --out (default from config).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum)]
        split: Option<SplitName>,
        /// Directory name under <out>/predictions (default: the
        /// checkpoint's parent directory name).
        #[arg(long)]
        name: Option<String>,
    },
    /// Per-case surface metrics plus a mean +/- sd summary.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Prediction directory name under <out>/predictions.
        #[arg(long)]
        pred: Option<String>,
        #[arg(long, value_enum)]
        target: Option<TargetName>,
        #[arg(long, value_enum)]
        split: Option<SplitName>,
        /// Surface tolerance in mm.
        #[arg(long)]
        tau: Option<f64>,
    },
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load(common: &Common) -> anyhow::Result<RunConfig> {
    RunConfig::load(&common.config, common.seed)
        .with_context(|| format!("loading {}", common.config.display()))
}

fn run() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::GenPhantoms { common } => {
            let cfg = load(&common)?;
            let (root, n) = pipeline::cmd_gen_phantoms(&cfg, &common.out)?;
            println!("generated {n} cases under {}", root.display());
        }
        Command::Localize { common } => {
            let cfg = load(&common)?;
            let (crops, n) = pipeline::cmd_localize(&cfg, &common.out)?;
            println!("localized {n} cases into {}", crops.display());
        }
        Command::TrainCavity { common } => {
            let cfg = load(&common)?;
            let outcome = pipeline::cmd_train_cavity(&cfg, &common.out)?;
            report_stage("cavity", &outcome);
        }
        Command::FinetuneWall { common, cavity_checkpoint } => {
            let cfg = load(&common)?;
            let outcome =
                pipeline::cmd_finetune_wall(&cfg, &common.out, cavity_checkpoint.as_deref())?;
            report_stage("wall", &outcome);
        }
        Command::TrainScratch { common } => {
            let cfg = load(&common)?;
            let outcome = pipeline::cmd_train_scratch(&cfg, &common.out)?;
            report_stage("scratch", &outcome);
        }
        Command::Predict { common, checkpoint, split, name } => {
            let mut cfg = load(&common)?;
            if let Some(c) = checkpoint {
                cfg.predict.checkpoint = c;
            }
            if let Some(s) = split {
                cfg.predict.split = s;
            }
            if let Some(n) = name {
                cfg.predict.name = Some(n);
            }
            let (dir, n) = pipeline::cmd_predict(&cfg, &common.out)?;
            println!("wrote {n} predictions under {}", dir.display());
        }
        Command::Evaluate { common, pred, target, split, tau } => {
            let mut cfg = load(&common)?;
            if let Some(p) = pred {
                cfg.evaluate.pred = p;
            }
            if let Some(t) = target {
                cfg.evaluate.target = t;
            }
            if let Some(s) = split {
                cfg.evaluate.split = s;
            }
            if let Some(t) = tau {
                cfg.evaluate.tol_mm = t;
                cfg.validate()?;
            }
            let (dir, summary) = pipeline::cmd_evaluate(&cfg, &common.out)?;
            let show = |m: &pipeline::MetricSummary| match (m.mean, m.sd) {
                (Some(mean), Some(sd)) => format!("{mean:.4} +/- {sd:.4}"),
                _ => "n/a".into(),
            };
            println!(
                "evaluated {} cases ({} with errors) into {}",
                summary.cases,
                summary.errors,
                dir.display()
            );
            println!(
                "  dice {}  surface_dice@{} {}  hd95_mm {}  assd_mm {}",
                show(&summary.dice),
                summary.tol_mm,
                show(&summary.surface_dice),
                show(&summary.hd95_mm),
                show(&summary.assd_mm)
            );
        }
    }
    Ok(())
}

fn report_stage(label: &str, outcome: &pipeline::StageOutcome) {
    let s = &outcome.summary;
    println!(
        "{label}: best val dice {:.4} at epoch {} ({} epochs run{}); artifacts under {}",
        s.best_val_dice,
        s.best_epoch,
        s.epochs_run,
        if s.stopped_early { ", stopped early" } else { "" },
        outcome.outdir.display()
    );
}
