//! The seven pipeline commands behind the `c2w-tune` binary.
//!
//! Every command takes a validated [`RunConfig`] plus the run root `out`
//! and owns one subdirectory of it:
//!
//! ```text
//! <out>/
//!   dataset/                  gen-phantoms   (unless dataset_root points elsewhere)
//!     manifest.json, case_*/{image,cavity,wall}.{json,raw}
//!   crops/                    localize
//!     case_*/{image,cavity,wall}.{json,raw} + localization.json
//!   cavity/ wall/ scratch/    train-cavity, finetune-wall, train-scratch
//!     checkpoint.{manifest.json,weights.raw}, log.ndjson, train_summary.json
//!   predictions/<name>/       predict
//!     case_*.{json,raw}
//!   metrics/<pred>-<target>-<split>/   evaluate
//!     records.ndjson, summary.json
//! ```
//!
//! Each command wipes and recreates its own subdirectory, drops a
//! `.partial` marker inside it before writing anything, and removes the
//! marker only on success, so an interrupted run is recognizable and a
//! rerun starts clean. Consumers refuse inputs whose directory still
//! carries the marker. Apart from `log.ndjson` (which records wall-clock
//! seconds), every artifact is a pure function of (config, seed), so two
//! runs with the same config are byte-identical.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use c2w_core::metrics::{self, MetricsError};
use c2w_core::network::{transfer_weights, Model, NetworkError};
use c2w_core::train::{
    predict_mask, train, Sample, ScheduleConfig, TrainConfig, TrainError, UnfreezeSchedule,
};
use c2w_core::volume::{
    center_of_mass, crop_roi, crop_roi_mask, zscore_normalize, RoiSpec, VolumeError,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
use crate::config::{
    derived_seed, under_root, EmptyFallback, RoiSource, RunConfig, SplitName, TargetName,
};
use crate::dataset::{generate_dataset, load_case, load_manifest, DatasetError, DatasetManifest};
use crate::logfile::{LogLine, NdjsonWriter};
use crate::mvol::{load_mask, load_volume, save_mask, MvolError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("precondition: {0}")]
    Precondition(String),
    #[error("no foreground predicted for case {0} (empty_fallback = \"abort\")")]
    EmptyPrediction(String),
    #[error("case mismatch: {0}")]
    CaseMismatch(String),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Mvol(#[from] MvolError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}

fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

/// A freshly claimed output directory carrying its `.partial` marker.
struct PendingDir {
    marker: PathBuf,
}

/// Wipe `dir` if it exists, recreate it, and drop the marker. The marker
/// is removed by [`PendingDir::finish`]; on any error path it stays put.
fn claim_outdir(dir: &Path) -> Result<PendingDir, PipelineError> {
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(io_at(dir))?;
    }
    fs::create_dir_all(dir).map_err(io_at(dir))?;
    let marker = dir.join(".partial");
    fs::write(&marker, b"").map_err(io_at(&marker))?;
    Ok(PendingDir { marker })
}

impl PendingDir {
    fn finish(self) -> Result<(), PipelineError> {
        fs::remove_file(&self.marker).map_err(io_at(&self.marker))
    }
}

/// Refuse to consume a directory an interrupted run left behind.
fn require_complete(dir: &Path, what: &str, rerun: &str) -> Result<(), PipelineError> {
    if dir.join(".partial").exists() {
        return Err(PipelineError::Precondition(format!(
            "{what} at {} is incomplete (interrupted run); re-run `{rerun}`",
            dir.display()
        )));
    }
    Ok(())
}

/// How a training stage departs from the shared configuration; wall and
/// scratch effective configs must be identical outside this subtree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discipline {
    pub init: String,
    pub source_checkpoint: Option<String>,
    pub unfreeze: String,
    pub schedule: String,
}

/// The run config with every derived seed filled in, as written to disk.
fn resolved_config(cfg: &RunConfig) -> RunConfig {
    let mut r = cfg.clone();
    r.phantom = cfg.phantom_with_seed();
    r.cavity.train.seed = derived_seed(cfg.seed, "cavity-train");
    r.wall.train.seed = derived_seed(cfg.seed, "wall-train");
    r
}

fn write_effective_config(
    dir: &Path,
    command: &str,
    cfg: &RunConfig,
    discipline: Option<&Discipline>,
) -> Result<(), PipelineError> {
    #[derive(Serialize)]
    struct Effective<'a> {
        command: &'a str,
        seed: u64,
        config: &'a RunConfig,
        #[serde(skip_serializing_if = "Option::is_none")]
        discipline: Option<&'a Discipline>,
    }
    let resolved = resolved_config(cfg);
    let eff = Effective { command, seed: cfg.seed, config: &resolved, discipline };
    let mut text = serde_json::to_string_pretty(&eff)?;
    text.push('\n');
    let path = dir.join("effective_config.json");
    fs::write(&path, text).map_err(io_at(&path))
}

fn write_pretty_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(io_at(path))
}

fn read_manifest(dataset_root: &Path) -> Result<DatasetManifest, PipelineError> {
    if !dataset_root.join("manifest.json").is_file() {
        return Err(PipelineError::Precondition(format!(
            "no dataset manifest under {}; run `gen-phantoms` first",
            dataset_root.display()
        )));
    }
    require_complete(dataset_root, "dataset", "gen-phantoms")?;
    Ok(load_manifest(dataset_root)?)
}

fn split_ids(manifest: &DatasetManifest, split: SplitName) -> Vec<String> {
    let mut ids = match split {
        SplitName::Train => manifest.splits.train.clone(),
        SplitName::Val => manifest.splits.val.clone(),
        SplitName::Test => manifest.splits.test.clone(),
    };
    ids.sort();
    ids
}

fn checkpoint_exists(prefix: &Path) -> bool {
    let mut os = prefix.as_os_str().to_os_string();
    os.push(".manifest.json");
    PathBuf::from(os).is_file()
}

fn volume_center(dims: (usize, usize, usize)) -> (f64, f64, f64) {
    ((dims.0 as f64 - 1.0) / 2.0, (dims.1 as f64 - 1.0) / 2.0, (dims.2 as f64 - 1.0) / 2.0)
}

// ---------------------------------------------------------------------------
// gen-phantoms

pub fn cmd_gen_phantoms(cfg: &RunConfig, out: &Path) -> Result<(PathBuf, usize), PipelineError> {
    let root = cfg.dataset_root(out);
    let pending = claim_outdir(&root)?;
    let manifest = generate_dataset(&cfg.phantom_with_seed(), &root)?;
    write_effective_config(&root, "gen-phantoms", cfg, None)?;
    pending.finish()?;
    let n = manifest.splits.train.len() + manifest.splits.val.len() + manifest.splits.test.len();
    Ok((root, n))
}

// ---------------------------------------------------------------------------
// localize

/// Where one case's ROI window came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Localization {
    pub case_id: String,
    /// ROI center in voxel index space, (z, y, x).
    pub center_zyx: [f64; 3],
    pub source: RoiSource,
    /// True when the mask or coarse prediction was empty and the volume
    /// center stood in.
    pub fallback_used: bool,
}

pub fn cmd_localize(cfg: &RunConfig, out: &Path) -> Result<(PathBuf, usize), PipelineError> {
    let dataset_root = cfg.dataset_root(out);
    let manifest = read_manifest(&dataset_root)?;
    let full_dims =
        (manifest.phantom.dims[0], manifest.phantom.dims[1], manifest.phantom.dims[2]);
    let roi = RoiSpec::new(cfg.roi_dhw(), cfg.roi.pad_value)?;

    // Resolve the coarse model before claiming the output directory so a
    // missing checkpoint cannot wipe existing crops.
    let coarse = match cfg.roi.source {
        RoiSource::OracleMask => None,
        RoiSource::CoarseModel => {
            let prefix = under_root(out, &cfg.roi.coarse_checkpoint);
            if !checkpoint_exists(&prefix) {
                return Err(PipelineError::Precondition(format!(
                    "no coarse checkpoint at {}; run `train-cavity` first or switch \
                     roi.source to \"oracle_mask\"",
                    prefix.display()
                )));
            }
            if let Some(dir) = prefix.parent() {
                require_complete(dir, "coarse checkpoint", "train-cavity")?;
            }
            let params = load_checkpoint(&prefix)?;
            let (model, _) = Model::init(cfg.model.spec(full_dims), 0)?;
            Some((model, params))
        }
    };

    let ids: Vec<String> = manifest
        .splits
        .train
        .iter()
        .chain(&manifest.splits.val)
        .chain(&manifest.splits.test)
        .cloned()
        .collect();

    let crops = out.join("crops");
    let pending = claim_outdir(&crops)?;
    for id in &ids {
        let case = load_case(&dataset_root, id)?;
        let (center, fallback_used) = match &coarse {
            None => {
                if case.cavity.foreground_count() == 0 {
                    match cfg.roi.empty_fallback {
                        EmptyFallback::Center => (volume_center(full_dims), true),
                        EmptyFallback::Abort => {
                            return Err(PipelineError::EmptyPrediction(id.clone()))
                        }
                    }
                } else {
                    (center_of_mass(&case.cavity)?, false)
                }
            }
            Some((model, params)) => {
                let pred = predict_mask(model, params, &zscore_normalize(&case.image))?;
                if pred.foreground_count() == 0 {
                    match cfg.roi.empty_fallback {
                        EmptyFallback::Center => (volume_center(full_dims), true),
                        EmptyFallback::Abort => {
                            return Err(PipelineError::EmptyPrediction(id.clone()))
                        }
                    }
                } else {
                    (center_of_mass(&pred)?, false)
                }
            }
        };

        // One shared window for the image and both masks.
        let dir = crops.join(id);
        fs::create_dir_all(&dir).map_err(io_at(&dir))?;
        save_mask(&crop_roi_mask(&case.cavity, center, roi.size), &dir.join("cavity"))?;
        save_mask(&crop_roi_mask(&case.wall, center, roi.size), &dir.join("wall"))?;
        let image = crop_roi(&case.image, center, &roi);
        crate::mvol::save_volume(&image, &dir.join("image"))?;
        let record = Localization {
            case_id: id.clone(),
            center_zyx: [center.0, center.1, center.2],
            source: cfg.roi.source,
            fallback_used,
        };
        write_pretty_json(&dir.join("localization.json"), &record)?;
    }
    write_effective_config(&crops, "localize", cfg, None)?;
    pending.finish()?;
    Ok((crops, ids.len()))
}

// ---------------------------------------------------------------------------
// the three training stages

/// Deterministic facts about a finished stage (times live in the ndjson log).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub best_epoch: usize,
    pub best_val_dice: f64,
    pub stopped_early: bool,
    pub epochs_run: usize,
}

#[derive(Debug)]
pub struct StageOutcome {
    pub outdir: PathBuf,
    pub summary: TrainSummary,
}

enum StageInit {
    Fresh { seed: u64 },
    Transfer { source: PathBuf, head_seed: u64 },
}

fn load_split_samples(
    crops: &Path,
    ids: &[String],
    target: TargetName,
) -> Result<Vec<Sample>, PipelineError> {
    require_complete(crops, "ROI crops", "localize")?;
    ids.iter()
        .map(|id| {
            let dir = crops.join(id);
            if !dir.is_dir() {
                return Err(PipelineError::Precondition(format!(
                    "no ROI crops for case {id} under {}; run `localize` first",
                    crops.display()
                )));
            }
            let image = zscore_normalize(&load_volume(&dir.join("image"))?);
            let mask = load_mask(&dir.join(target.as_str()))?;
            Ok(Sample { id: id.clone(), image, mask })
        })
        .collect()
}

#[allow(clippy::too_many_arguments)] // one internal call site per command
fn run_stage(
    cfg: &RunConfig,
    out: &Path,
    command: &'static str,
    label: &'static str,
    target: TargetName,
    train_cfg: &TrainConfig,
    sched: &ScheduleConfig,
    unfreeze: Option<&UnfreezeSchedule>,
    init: StageInit,
    discipline: Discipline,
) -> Result<StageOutcome, PipelineError> {
    let manifest = read_manifest(&cfg.dataset_root(out))?;
    let crops = out.join("crops");
    let train_samples = load_split_samples(&crops, &split_ids(&manifest, SplitName::Train), target)?;
    let val_samples = load_split_samples(&crops, &split_ids(&manifest, SplitName::Val), target)?;

    let spec = cfg.model.spec(cfg.roi_dhw());
    let (model, params) = match init {
        StageInit::Fresh { seed } => Model::init(spec, seed)?,
        StageInit::Transfer { source, head_seed } => {
            if !checkpoint_exists(&source) {
                return Err(PipelineError::Precondition(format!(
                    "no cavity checkpoint at {}; run `train-cavity` first",
                    source.display()
                )));
            }
            if let Some(dir) = source.parent() {
                require_complete(dir, "source checkpoint", "train-cavity")?;
            }
            let loaded = load_checkpoint(&source)?;
            let (model, fresh) = Model::init(spec, 0)?;
            let params = transfer_weights(&loaded, &fresh, true, head_seed)?;
            (model, params)
        }
    };

    let outdir = out.join(label);
    let pending = claim_outdir(&outdir)?;
    write_effective_config(&outdir, command, cfg, Some(&discipline))?;

    let log_path = outdir.join("log.ndjson");
    let mut log = NdjsonWriter::create(&log_path).map_err(io_at(&log_path))?;
    let mut log_err: Option<std::io::Error> = None;
    let start = Instant::now();
    let outcome = train(
        &model,
        params,
        &train_samples,
        &val_samples,
        train_cfg,
        sched,
        &cfg.loss,
        &cfg.optim,
        unfreeze,
        |rec, _snapshot| {
            if log_err.is_none() {
                if let Err(e) = log.write(&LogLine::from_record(rec, start.elapsed().as_secs_f64()))
                {
                    log_err = Some(e);
                }
            }
        },
    )?;
    if let Some(source) = log_err {
        return Err(PipelineError::Io { path: log_path, source });
    }

    save_checkpoint(&outcome.best, &outdir.join("checkpoint"))?;
    let summary = TrainSummary {
        best_epoch: outcome.best_epoch,
        best_val_dice: outcome.best_val_dice,
        stopped_early: outcome.stopped_early,
        epochs_run: outcome.log.len(),
    };
    write_pretty_json(&outdir.join("train_summary.json"), &summary)?;
    pending.finish()?;
    Ok(StageOutcome { outdir, summary })
}

pub fn cmd_train_cavity(cfg: &RunConfig, out: &Path) -> Result<StageOutcome, PipelineError> {
    let mut train_cfg = cfg.cavity.train.clone();
    train_cfg.seed = derived_seed(cfg.seed, "cavity-train");
    run_stage(
        cfg,
        out,
        "train-cavity",
        "cavity",
        TargetName::Cavity,
        &train_cfg,
        &cfg.cavity.sched,
        None,
        StageInit::Fresh { seed: derived_seed(cfg.seed, "cavity-init") },
        Discipline {
            init: "fresh".into(),
            source_checkpoint: None,
            unfreeze: "none".into(),
            schedule: "warmup_cosine".into(),
        },
    )
}

pub fn cmd_finetune_wall(
    cfg: &RunConfig,
    out: &Path,
    cavity_checkpoint: Option<&Path>,
) -> Result<StageOutcome, PipelineError> {
    let source = match cavity_checkpoint {
        Some(p) => under_root(out, p),
        None => out.join("cavity").join("checkpoint"),
    };
    let mut train_cfg = cfg.wall.train.clone();
    train_cfg.seed = derived_seed(cfg.seed, "wall-train");
    run_stage(
        cfg,
        out,
        "finetune-wall",
        "wall",
        TargetName::Wall,
        &train_cfg,
        &cfg.wall.sched,
        Some(&cfg.wall.unfreeze),
        StageInit::Transfer {
            source: source.clone(),
            head_seed: derived_seed(cfg.seed, "wall-head"),
        },
        Discipline {
            init: "transfer".into(),
            source_checkpoint: Some(source.display().to_string()),
            unfreeze: "progressive_abc".into(),
            schedule: "stagewise_cosine".into(),
        },
    )
}

/// Identical data, target, architecture, and epoch budget to
/// [`cmd_finetune_wall`] — including the shared `wall-train` seed, so both
/// runs see the same shuffle and augmentation draws — but freshly
/// initialized, fully trainable from epoch 0, on a plain cosine.
pub fn cmd_train_scratch(cfg: &RunConfig, out: &Path) -> Result<StageOutcome, PipelineError> {
    let mut train_cfg = cfg.wall.train.clone();
    train_cfg.seed = derived_seed(cfg.seed, "wall-train");
    run_stage(
        cfg,
        out,
        "train-scratch",
        "scratch",
        TargetName::Wall,
        &train_cfg,
        &cfg.scratch.sched,
        None,
        StageInit::Fresh { seed: derived_seed(cfg.seed, "scratch-init") },
        Discipline {
            init: "fresh".into(),
            source_checkpoint: None,
            unfreeze: "none".into(),
            schedule: "warmup_cosine".into(),
        },
    )
}

// ---------------------------------------------------------------------------
// predict

fn prediction_label(checkpoint: &Path) -> String {
    checkpoint
        .parent()
        .and_then(|p| p.file_name())
        .or_else(|| checkpoint.file_stem())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into())
}

pub fn cmd_predict(cfg: &RunConfig, out: &Path) -> Result<(PathBuf, usize), PipelineError> {
    let manifest = read_manifest(&cfg.dataset_root(out))?;
    let ids = split_ids(&manifest, cfg.predict.split);
    let crops = out.join("crops");
    require_complete(&crops, "ROI crops", "localize")?;
    for id in &ids {
        if !crops.join(id).is_dir() {
            return Err(PipelineError::Precondition(format!(
                "no ROI crops for case {id} under {}; run `localize` first",
                crops.display()
            )));
        }
    }

    let prefix = under_root(out, &cfg.predict.checkpoint);
    if !checkpoint_exists(&prefix) {
        return Err(PipelineError::Precondition(format!(
            "no checkpoint at {}; train one first",
            prefix.display()
        )));
    }
    if let Some(dir) = prefix.parent() {
        require_complete(dir, "checkpoint", "its training command")?;
    }
    let params = load_checkpoint(&prefix)?;
    let (model, _) = Model::init(cfg.model.spec(cfg.roi_dhw()), 0)?;

    let name =
        cfg.predict.name.clone().unwrap_or_else(|| prediction_label(&cfg.predict.checkpoint));
    let mut resolved = cfg.clone();
    resolved.predict.name = Some(name.clone());

    let outdir = out.join("predictions").join(&name);
    let pending = claim_outdir(&outdir)?;
    write_effective_config(&outdir, "predict", &resolved, None)?;
    for id in &ids {
        let image = zscore_normalize(&load_volume(&crops.join(id).join("image"))?);
        let mask = predict_mask(&model, &params, &image)?;
        save_mask(&mask, &outdir.join(id))?;
    }
    pending.finish()?;
    Ok((outdir, ids.len()))
}

// ---------------------------------------------------------------------------
// evaluate

/// One line of `records.ndjson`; `error` carries the metric error code for
/// degenerate cases (e.g. an empty prediction), never a silent number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub case_id: String,
    pub dice: f64,
    pub surface_dice: Option<f64>,
    pub tol_mm: f64,
    pub hd95_mm: Option<f64>,
    pub assd_mm: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    /// Cases contributing to this metric (errors excluded).
    pub n: usize,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
}

fn summarize(values: &[f64]) -> MetricSummary {
    if values.is_empty() {
        return MetricSummary { n: 0, mean: None, sd: None };
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    // Population variance: a single case reports sd 0, not NaN.
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    MetricSummary { n: values.len(), mean: Some(mean), sd: Some(var.sqrt()) }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub cases: usize,
    pub errors: usize,
    pub tol_mm: f64,
    pub dice: MetricSummary,
    pub surface_dice: MetricSummary,
    pub hd95_mm: MetricSummary,
    pub assd_mm: MetricSummary,
}

pub fn cmd_evaluate(cfg: &RunConfig, out: &Path) -> Result<(PathBuf, EvalSummary), PipelineError> {
    let manifest = read_manifest(&cfg.dataset_root(out))?;
    let ids = split_ids(&manifest, cfg.evaluate.split);
    let crops = out.join("crops");
    require_complete(&crops, "ROI crops", "localize")?;

    let preddir = out.join("predictions").join(&cfg.evaluate.pred);
    if !preddir.is_dir() {
        return Err(PipelineError::Precondition(format!(
            "no predictions named \"{}\" under {}; run `predict` first",
            cfg.evaluate.pred,
            out.join("predictions").display()
        )));
    }
    require_complete(&preddir, "predictions", "predict")?;

    // Strict two-way ID matching between the split and the prediction dir.
    let expected: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
    let mut listed: BTreeSet<String> = BTreeSet::new();
    for entry in fs::read_dir(&preddir).map_err(io_at(&preddir))? {
        let entry = entry.map_err(io_at(&preddir))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(stem) = name.strip_suffix(".json") {
            if stem != "effective_config" && !name.starts_with('.') {
                listed.insert(stem.to_string());
            }
        }
    }
    if let Some(missing) = expected.iter().find(|id| !listed.contains(**id)) {
        return Err(PipelineError::CaseMismatch(format!(
            "no prediction for case {missing} under {}",
            preddir.display()
        )));
    }
    if let Some(extra) = listed.iter().find(|id| !expected.contains(id.as_str())) {
        return Err(PipelineError::CaseMismatch(format!(
            "prediction {extra} does not belong to the {} split",
            cfg.evaluate.split.as_str()
        )));
    }

    let outdir = out.join("metrics").join(format!(
        "{}-{}-{}",
        cfg.evaluate.pred,
        cfg.evaluate.target.as_str(),
        cfg.evaluate.split.as_str()
    ));
    let pending = claim_outdir(&outdir)?;
    write_effective_config(&outdir, "evaluate", cfg, None)?;

    let records_path = outdir.join("records.ndjson");
    let mut writer = NdjsonWriter::create(&records_path).map_err(io_at(&records_path))?;
    let mut records = Vec::with_capacity(ids.len());
    for id in &ids {
        let pred = load_mask(&preddir.join(id))?;
        let reference = load_mask(&crops.join(id).join(cfg.evaluate.target.as_str()))?;
        let report = metrics::evaluate(&pred, &reference, cfg.evaluate.tol_mm)?;
        let record = CaseRecord {
            case_id: id.clone(),
            dice: report.dice,
            surface_dice: report.surface_dice,
            tol_mm: report.tolerance_mm,
            hd95_mm: report.hd95_mm,
            assd_mm: report.assd_mm,
            error: report.error,
        };
        writer.write(&record).map_err(io_at(&records_path))?;
        records.push(record);
    }

    let collect = |f: fn(&CaseRecord) -> Option<f64>| -> Vec<f64> {
        records.iter().filter_map(f).collect()
    };
    let summary = EvalSummary {
        cases: records.len(),
        errors: records.iter().filter(|r| r.error.is_some()).count(),
        tol_mm: cfg.evaluate.tol_mm,
        dice: summarize(&collect(|r| Some(r.dice))),
        surface_dice: summarize(&collect(|r| r.surface_dice)),
        hd95_mm: summarize(&collect(|r| r.hd95_mm)),
        assd_mm: summarize(&collect(|r| r.assd_mm)),
    };
    write_pretty_json(&outdir.join("summary.json"), &summary)?;
    pending.finish()?;
    Ok((outdir, summary))
}
