//! The training stack: loss, optimizer, schedules, augmentation, the
//! progressive-unfreezing controller, and the epoch loop that ties them
//! together.
//!
//! [`train`] is deterministic end to end: one master rng seeded from
//! `TrainConfig::seed` drives epoch shuffling, reference selection, and
//! augmentation in a fixed draw order, and every floating-point reduction
//! runs in a fixed sequence, so the same inputs reproduce the best
//! checkpoint and the log bitwise.

pub mod augment;
pub mod loss;
pub mod optim;
pub mod schedule;
pub mod unfreeze;

pub use augment::{augment, AugmentConfig};
pub use loss::{dice_focal_loss, LossConfig};
pub use optim::{adamw_step, AdamState, OptimizerConfig};
pub use schedule::{lr_at, ScheduleConfig, ScheduleKind};
pub use unfreeze::{unfreeze_state, UnfreezeSchedule};

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{AutodiffError, Tape};
use crate::metrics;
use crate::network::{Model, NetworkError, ParameterSet};
use crate::volume::{Mask3, Volume3};

/// Errors from training configuration and the epoch loop.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("{what} {got} is out of range (limit {limit})")]
    OutOfRange { what: &'static str, got: usize, limit: usize },
    #[error("missing gradient for trainable parameter {0}")]
    MissingGrad(String),
    #[error("empty train or validation split")]
    EmptySplit,
    #[error("non-finite loss at epoch {epoch}")]
    Divergence { epoch: usize },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// One training case: an identifier (for split bookkeeping) plus an
/// image/mask pair sharing geometry.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub image: Volume3,
    pub mask: Mask3,
}

/// Epoch-loop hyperparameters. Schedules and loss/optimizer constants are
/// passed to [`train`] separately.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop after this many consecutive epochs without improvement.
    pub early_stop_patience: usize,
    /// Validation Dice must exceed the best by more than this to count as
    /// an improvement; anything closer is a tie and keeps the earlier best.
    pub min_improvement: f64,
    pub seed: u64,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 4,
            max_epochs: 100,
            early_stop_patience: 10,
            min_improvement: 1e-4,
            seed: 0,
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: &str| Err(TrainError::InvalidConfig(String::from(msg)));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be >= 1");
        }
        if self.early_stop_patience == 0 {
            return bad("early_stop_patience must be >= 1");
        }
        if !(self.min_improvement.is_finite() && self.min_improvement >= 0.0) {
            return bad("min_improvement must be finite and >= 0");
        }
        self.augment.validate()
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Mean batch loss over the epoch.
    pub loss: f64,
    /// Learning rate used for this epoch's steps.
    pub lr: f64,
    /// Mean validation Dice after the epoch.
    pub val_dice: f64,
    /// Sorted stage tags that were trainable during the epoch.
    pub trainable_tags: Vec<String>,
}

/// What [`train`] hands back: the best checkpoint by validation Dice, the
/// final weights, and the full log.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: ParameterSet,
    /// 1-based epoch that produced `best`.
    pub best_epoch: usize,
    pub best_val_dice: f64,
    /// Whether patience ran out before `max_epochs`.
    pub stopped_early: bool,
    pub log: Vec<EpochRecord>,
    pub final_params: ParameterSet,
}

/// Threshold logits at 0 (sigmoid 0.5) into a mask with the image geometry.
pub fn predict_mask(
    model: &Model,
    params: &ParameterSet,
    image: &Volume3,
) -> Result<Mask3, TrainError> {
    let (d, h, w) = image.dims();
    let mut tape: Tape<f32> = Tape::new();
    let x = tape.leaf_from(image.data(), &[1, 1, d, h, w], false)?;
    let logits = model.forward(&mut tape, &x, params)?;
    let data: Vec<u8> = tape.value(&logits).iter().map(|&v| u8::from(v >= 0.0)).collect();
    Ok(Mask3::new(image.dims(), image.spacing(), data)
        .expect("network output shares the input geometry"))
}

fn preflight(
    model: &Model,
    train_split: &[Sample],
    val_split: &[Sample],
    cfg: &TrainConfig,
    sched: &ScheduleConfig,
    loss_cfg: &LossConfig,
    opt_cfg: &OptimizerConfig,
    unfreeze: Option<&UnfreezeSchedule>,
) -> Result<(), TrainError> {
    cfg.validate()?;
    sched.validate()?;
    loss_cfg.validate()?;
    opt_cfg.validate()?;
    if train_split.is_empty() || val_split.is_empty() {
        return Err(TrainError::EmptySplit);
    }
    if cfg.max_epochs > sched.horizon_epochs {
        return Err(TrainError::InvalidConfig(String::from(
            "max_epochs exceeds the schedule horizon",
        )));
    }
    if let Some(uf) = unfreeze {
        uf.validate(model.spec.stages.len())?;
        if cfg.max_epochs > uf.max_epochs {
            return Err(TrainError::InvalidConfig(String::from(
                "max_epochs exceeds the unfreeze schedule horizon",
            )));
        }
    }
    let train_ids: BTreeSet<&str> = train_split.iter().map(|s| s.id.as_str()).collect();
    if let Some(shared) = val_split.iter().find(|s| train_ids.contains(s.id.as_str())) {
        return Err(TrainError::InvalidConfig(alloc::format!(
            "case {} appears in both splits",
            shared.id
        )));
    }
    for s in train_split.iter().chain(val_split) {
        if s.image.dims() != s.mask.dims() || s.image.spacing() != s.mask.spacing() {
            return Err(TrainError::InvalidConfig(alloc::format!(
                "case {} has mismatched image/mask geometry",
                s.id
            )));
        }
    }
    let dims = train_split[0].image.dims();
    if train_split.iter().any(|s| s.image.dims() != dims) {
        return Err(TrainError::InvalidConfig(String::from(
            "training cases must share dims for batching",
        )));
    }
    Ok(())
}

/// Run the epoch loop: shuffle, augment, forward, DiceFocal loss, backward,
/// AdamW at `lr_at(epoch)`, then validation Dice; keep the best checkpoint
/// and stop when patience runs out.
///
/// With an [`UnfreezeSchedule`] the trainable set follows the three-step
/// controller and newly unfrozen parameters restart with zero optimizer
/// moments; without one, the incoming `trainable` flags stay in force for
/// the whole run (the from-scratch path).
///
/// `on_epoch` observes each record as it is produced, together with the
/// parameters as of the end of that epoch (for logging or snapshotting).
#[allow(clippy::too_many_arguments)] // the knobs are genuinely independent
pub fn train(
    model: &Model,
    params: ParameterSet,
    train_split: &[Sample],
    val_split: &[Sample],
    cfg: &TrainConfig,
    sched: &ScheduleConfig,
    loss_cfg: &LossConfig,
    opt_cfg: &OptimizerConfig,
    unfreeze: Option<&UnfreezeSchedule>,
    mut on_epoch: impl FnMut(&EpochRecord, &ParameterSet),
) -> Result<TrainOutcome, TrainError> {
    preflight(model, train_split, val_split, cfg, sched, loss_cfg, opt_cfg, unfreeze)?;
    let n_stages = model.spec.stages.len();
    let mut params = params;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(&params);
    let mut active_tags: Option<Vec<String>> = None;

    let mut log: Vec<EpochRecord> = Vec::new();
    let mut best = params.clone();
    let mut best_epoch = 0usize;
    let mut best_val_dice = f64::NEG_INFINITY;
    let mut epochs_since_improvement = 0usize;
    let mut stopped_early = false;

    for e in 0..cfg.max_epochs {
        if let Some(uf) = unfreeze {
            let tags = unfreeze_state(uf, n_stages, e)?;
            if active_tags.as_deref() != Some(&tags[..]) {
                let was: Vec<bool> = params.params().iter().map(|p| p.trainable).collect();
                let refs: Vec<&str> = tags.iter().map(String::as_str).collect();
                params.set_trainable_exactly(&refs)?;
                for (i, p) in params.params().iter().enumerate() {
                    if p.trainable && !was[i] {
                        adam.reset(i);
                    }
                }
                active_tags = Some(tags);
            }
        }
        let lr = lr_at(sched, e)?;

        let mut order: Vec<usize> = (0..train_split.len()).collect();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let mut cases: Vec<(Volume3, Mask3)> = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let reference = &train_split[rng.gen_range(0..train_split.len())].image;
                cases.push(augment(
                    &train_split[i].image,
                    &train_split[i].mask,
                    reference,
                    &cfg.augment,
                    &mut rng,
                ));
            }
            let (d, h, w) = cases[0].0.dims();
            let voxels = d * h * w;
            let mut xv: Vec<f32> = Vec::with_capacity(chunk.len() * voxels);
            let mut gv: Vec<f32> = Vec::with_capacity(chunk.len() * voxels);
            for (img, msk) in &cases {
                xv.extend_from_slice(img.data());
                gv.extend(msk.data().iter().map(|&b| f32::from(b)));
            }
            let shape = [chunk.len(), 1, d, h, w];
            let mut tape: Tape<f32> = Tape::new();
            let x = tape.leaf(xv, &shape, false)?;
            let (logits, leaves) = model.forward_with_bindings(&mut tape, &x, &params)?;
            let target = tape.leaf(gv, &shape, false)?;
            let loss_node = dice_focal_loss(&mut tape, &logits, &target, loss_cfg)?;
            let loss_value = tape.scalar_value(&loss_node) as f64;
            if !loss_value.is_finite() {
                return Err(TrainError::Divergence { epoch: e + 1 });
            }
            tape.backward(&loss_node)?;
            let grads: Vec<Option<Vec<f32>>> =
                leaves.iter().map(|t| tape.grad(t).map(|g| g.to_vec())).collect();
            adamw_step(&mut params, &grads, &mut adam, opt_cfg, lr)?;
            loss_sum += loss_value;
            batches += 1;
        }

        let mut dice_sum = 0.0f64;
        for s in val_split {
            let pred = predict_mask(model, &params, &s.image)?;
            dice_sum +=
                metrics::dice(&pred, &s.mask).expect("prediction shares the sample geometry");
        }
        let val_dice = dice_sum / val_split.len() as f64;

        let trainable_tags: Vec<String> = params
            .params()
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.stage_tag.clone())
            .collect::<BTreeSet<String>>()
            .into_iter()
            .collect();
        let record = EpochRecord {
            epoch: e + 1,
            loss: loss_sum / batches as f64,
            lr,
            val_dice,
            trainable_tags,
        };
        log.push(record.clone());
        on_epoch(&record, &params);

        if val_dice > best_val_dice + cfg.min_improvement {
            best_val_dice = val_dice;
            best_epoch = e + 1;
            best = params.clone();
            epochs_since_improvement = 0;
        } else {
            epochs_since_improvement += 1;
            if epochs_since_improvement >= cfg.early_stop_patience {
                stopped_early = true;
                break;
            }
        }
    }

    Ok(TrainOutcome { best, best_epoch, best_val_dice, stopped_early, log, final_params: params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{ModelSpec, StageSpec};
    use crate::phantom::{generate_case, PhantomConfig};
    use alloc::format;
    use alloc::vec;

    /// Two-stage micro-model: big enough to learn blobs, small enough for
    /// dozens of unit-test epochs.
    fn micro_spec() -> ModelSpec {
        let mut spec = ModelSpec::desk((12, 12, 12));
        spec.stages = vec![
            StageSpec { channels: 4, blocks: 1, downsample: (false, false, false) },
            StageSpec { channels: 8, blocks: 1, downsample: (true, true, true) },
        ];
        spec.cardinality = 2;
        spec
    }

    fn phantom_samples(prefix: &str, count: usize, seed: u64) -> Vec<Sample> {
        let cfg = PhantomConfig {
            dims: (12, 12, 12),
            radii_frac: (0.18, 0.25),
            jitter_frac: 0.02,
            thickness_vox: (1.0, 1.4),
            noise_sigma: 0.05,
            notch_prob: 0.0,
            seed,
            ..PhantomConfig::default()
        };
        cfg.validate().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|i| {
                let case = generate_case(&cfg, &mut rng).unwrap();
                Sample {
                    id: format!("{prefix}{i}"),
                    image: case.image,
                    mask: case.cavity,
                }
            })
            .collect()
    }

    fn quick_cfg(seed: u64, max_epochs: usize) -> TrainConfig {
        TrainConfig {
            batch_size: 2,
            max_epochs,
            early_stop_patience: max_epochs,
            min_improvement: 1e-4,
            seed,
            augment: AugmentConfig::none(),
        }
    }

    fn quick_sched(max_epochs: usize) -> ScheduleConfig {
        ScheduleConfig::warmup_cosine(3e-3, 3e-6, 1, max_epochs)
    }

    #[test]
    fn empty_splits_are_rejected() {
        let (model, params) = Model::init(micro_spec(), 0).unwrap();
        let samples = phantom_samples("t", 2, 1);
        let err = train(
            &model,
            params,
            &samples,
            &[],
            &quick_cfg(0, 2),
            &quick_sched(2),
            &LossConfig::default(),
            &OptimizerConfig::default(),
            None,
            |_, _| {},
        )
        .unwrap_err();
        assert_eq!(err, TrainError::EmptySplit);
    }

    #[test]
    fn overlapping_splits_are_rejected() {
        let (model, params) = Model::init(micro_spec(), 0).unwrap();
        let samples = phantom_samples("t", 2, 1);
        let err = train(
            &model,
            params,
            &samples,
            &samples[..1],
            &quick_cfg(0, 2),
            &quick_sched(2),
            &LossConfig::default(),
            &OptimizerConfig::default(),
            None,
            |_, _| {},
        )
        .unwrap_err();
        assert!(matches!(err, TrainError::InvalidConfig(_)));
    }

    #[test]
    fn patience_one_with_constant_score_stops_at_epoch_two() {
        // A zero learning rate freezes the weights, so validation Dice is
        // constant: epoch 1 improves on -inf, epoch 2 does not, and
        // patience 1 stops the run there.
        let (model, params) = Model::init(micro_spec(), 3).unwrap();
        let train_set = phantom_samples("t", 2, 10);
        let val_set = phantom_samples("v", 1, 20);
        let mut cfg = quick_cfg(0, 50);
        cfg.early_stop_patience = 1;
        let sched = ScheduleConfig::warmup_cosine(0.0, 0.0, 1, 50);
        let out = train(
            &model,
            params,
            &train_set,
            &val_set,
            &cfg,
            &sched,
            &LossConfig::default(),
            &OptimizerConfig::default(),
            None,
            |_, _| {},
        )
        .unwrap();
        assert_eq!(out.log.len(), 2);
        assert!(out.stopped_early);
        assert_eq!(out.best_epoch, 1);
        assert_eq!(out.log[0].val_dice, out.log[1].val_dice);
    }

    #[test]
    fn same_seed_reproduces_checkpoint_and_log_bitwise() {
        let train_set = phantom_samples("t", 3, 30);
        let val_set = phantom_samples("v", 2, 40);
        let run = || {
            let (model, params) = Model::init(micro_spec(), 7).unwrap();
            train(
                &model,
                params,
                &train_set,
                &val_set,
                &quick_cfg(5, 3),
                &quick_sched(3),
                &LossConfig::default(),
                &OptimizerConfig::default(),
                None,
                |_, _| {},
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.log, b.log);
        assert_eq!(a.best_epoch, b.best_epoch);
        for (pa, pb) in a.best.params().iter().zip(b.best.params()) {
            assert_eq!(pa.name, pb.name);
            let bits_a: Vec<u32> = pa.values.iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u32> = pb.values.iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b, "{} diverged", pa.name);
        }
    }

    #[test]
    fn different_seeds_take_different_paths() {
        let train_set = phantom_samples("t", 3, 30);
        let val_set = phantom_samples("v", 2, 40);
        let run = |seed: u64| {
            let (model, params) = Model::init(micro_spec(), 7).unwrap();
            train(
                &model,
                params,
                &train_set,
                &val_set,
                &quick_cfg(seed, 2),
                &quick_sched(2),
                &LossConfig::default(),
                &OptimizerConfig::default(),
                None,
                |_, _| {},
            )
            .unwrap()
        };
        // Same init, different shuffles/augmentation draws: the loss paths
        // must differ (validation Dice may coincide on easy data).
        let a = run(1);
        let b = run(2);
        assert_ne!(a.log[0].loss.to_bits(), b.log[0].loss.to_bits());
    }

    #[test]
    fn unfreeze_keeps_frozen_stages_bitwise_fixed() {
        // Run entirely inside Step A: encoder weights must finish the run
        // exactly as they started while the decoder/head actually move.
        let (model, params) = Model::init(micro_spec(), 11).unwrap();
        let init = params.clone();
        let train_set = phantom_samples("t", 2, 50);
        let val_set = phantom_samples("v", 1, 60);
        let uf = UnfreezeSchedule {
            step_a_end: 10,
            step_b_end: 11,
            deep_stage_cutoff: 1,
            max_epochs: 20,
        };
        let out = train(
            &model,
            params,
            &train_set,
            &val_set,
            &quick_cfg(2, 3),
            &quick_sched(3),
            &LossConfig::default(),
            &OptimizerConfig::default(),
            Some(&uf),
            |rec, _| {
                assert!(rec.trainable_tags.iter().all(|t| !t.starts_with("enc.")));
            },
        )
        .unwrap();
        let mut head_moved = false;
        for (p0, p1) in init.params().iter().zip(out.final_params.params()) {
            if p0.stage_tag.starts_with("enc.") {
                assert_eq!(p0.values, p1.values, "{} must stay frozen", p0.name);
            } else if p0.values != p1.values {
                head_moved = true;
            }
        }
        assert!(head_moved, "trainable parameters should have moved");
    }

    #[test]
    fn unfreeze_transitions_update_tags_and_moments() {
        // Boundaries at epochs 1 and 2 exercise all three steps in a 4-epoch
        // run; the recorded tag sets must widen at each boundary.
        let (model, params) = Model::init(micro_spec(), 13).unwrap();
        let train_set = phantom_samples("t", 2, 70);
        let val_set = phantom_samples("v", 1, 80);
        let uf =
            UnfreezeSchedule { step_a_end: 1, step_b_end: 2, deep_stage_cutoff: 1, max_epochs: 10 };
        let out = train(
            &model,
            params,
            &train_set,
            &val_set,
            &quick_cfg(3, 4),
            &quick_sched(4),
            &LossConfig::default(),
            &OptimizerConfig::default(),
            Some(&uf),
            |_, _| {},
        )
        .unwrap();
        let tags_of = |e: usize| &out.log[e].trainable_tags;
        assert!(tags_of(0).iter().all(|t| !t.starts_with("enc.")));
        assert_eq!(tags_of(0), tags_of(1)); // epoch 2 (0-based 1) still Step A
        assert!(tags_of(2).contains(&String::from("enc.stage2")));
        assert!(!tags_of(2).contains(&String::from("enc.stage1")));
        assert!(tags_of(3).contains(&String::from("enc.stage1")));
    }

    #[test]
    fn divergent_lr_reports_divergence() {
        // An absurd learning rate with weight decay makes the weights blow
        // up geometrically until activations overflow and the loss goes
        // non-finite; the loop must catch that, not loop on NaNs.
        let (model, params) = Model::init(micro_spec(), 17).unwrap();
        let train_set = phantom_samples("t", 2, 90);
        let val_set = phantom_samples("v", 1, 95);
        let sched = ScheduleConfig::warmup_cosine(1e7, 1e7, 1, 60);
        let opt = OptimizerConfig { weight_decay: 0.5, ..OptimizerConfig::default() };
        let err = train(
            &model,
            params,
            &train_set,
            &val_set,
            &quick_cfg(4, 60),
            &sched,
            &LossConfig::default(),
            &opt,
            None,
            |_, _| {},
        )
        .unwrap_err();
        assert!(matches!(err, TrainError::Divergence { .. }), "got {err:?}");
    }

    #[test]
    fn best_checkpoint_is_earliest_within_tie_window() {
        // With a huge min_improvement every later epoch ties, so the best
        // checkpoint must be the very first epoch.
        let (model, params) = Model::init(micro_spec(), 19).unwrap();
        let train_set = phantom_samples("t", 2, 100);
        let val_set = phantom_samples("v", 1, 110);
        let mut cfg = quick_cfg(6, 6);
        cfg.min_improvement = 10.0;
        cfg.early_stop_patience = 3;
        let out = train(
            &model,
            params,
            &train_set,
            &val_set,
            &cfg,
            &quick_sched(6),
            &LossConfig::default(),
            &OptimizerConfig::default(),
            None,
            |_, _| {},
        )
        .unwrap();
        assert_eq!(out.best_epoch, 1);
        assert!(out.stopped_early);
        assert_eq!(out.log.len(), 4); // epoch 1 improves, then patience 3 runs out
    }

    #[test]
    fn validation_dice_climbs_on_the_phantom_task() {
        // Smoke oracle: validation Dice strictly increases over the first
        // five epochs in at least 4 of 5 seeds.
        let train_set = phantom_samples("t", 6, 200);
        let val_set = phantom_samples("v", 3, 300);
        let mut climbs = 0usize;
        let mut curves: Vec<Vec<f64>> = Vec::new();
        // A horizon well past epoch 5 keeps the cosine near its peak for the
        // whole window, so learning is still visibly moving at epoch 5.
        for seed in 0..5u64 {
            let (model, params) = Model::init(micro_spec(), 1000 + seed).unwrap();
            let out = train(
                &model,
                params,
                &train_set,
                &val_set,
                &quick_cfg(seed, 5),
                &quick_sched(30),
                &LossConfig::default(),
                &OptimizerConfig::default(),
                None,
                |_, _| {},
            )
            .unwrap();
            let dices: Vec<f64> = out.log.iter().map(|r| r.val_dice).collect();
            if dices.windows(2).all(|w| w[1] > w[0]) {
                climbs += 1;
            }
            curves.push(dices);
        }
        assert!(climbs >= 4, "strict climb in only {climbs}/5 seeds: {curves:?}");
    }
}
