//! Progressive-unfreezing controller.
//!
//! Transfer fine-tuning moves through three steps: first only the head,
//! decoder, and bottleneck learn while the encoder stays frozen; then the
//! deep encoder stages join; finally everything trains end to end. This
//! module maps an epoch to the set of trainable stage tags; the train loop
//! applies the set with `ParameterSet::set_trainable_exactly` whenever it
//! changes.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::TrainError;

/// Epoch boundaries of the three-step unfreezing policy.
///
/// Boundaries are inclusive on the left phase: `epoch <= step_a_end` is
/// Step A, `epoch <= step_b_end` is Step B, everything later is Step C.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct UnfreezeSchedule {
    pub step_a_end: usize,
    pub step_b_end: usize,
    /// Encoder stages numbered above this count as "deep" and unfreeze in
    /// Step B; stages 1..=cutoff wait until Step C.
    pub deep_stage_cutoff: usize,
    pub max_epochs: usize,
}

impl UnfreezeSchedule {
    /// Full-scale defaults: steps end at epochs 60 and 180, stages 1-3 are
    /// shallow, horizon 1000.
    pub fn paper() -> Self {
        Self { step_a_end: 60, step_b_end: 180, deep_stage_cutoff: 3, max_epochs: 1000 }
    }

    /// Compressed boundaries for desk-scale runs.
    pub fn desk() -> Self {
        Self { step_a_end: 6, step_b_end: 18, deep_stage_cutoff: 3, max_epochs: 100 }
    }

    pub fn validate(&self, n_stages: usize) -> Result<(), TrainError> {
        if !(0 < self.step_a_end && self.step_a_end < self.step_b_end && self.step_b_end < self.max_epochs)
        {
            return Err(TrainError::InvalidConfig(String::from(
                "unfreeze boundaries must satisfy 0 < step_a_end < step_b_end < max_epochs",
            )));
        }
        if self.deep_stage_cutoff >= n_stages {
            return Err(TrainError::InvalidConfig(String::from(
                "deep_stage_cutoff must leave at least one deep encoder stage",
            )));
        }
        Ok(())
    }
}

/// Trainable tag set at a 0-based epoch, sorted for determinism.
///
/// `n_stages` is the encoder depth; the tag universe it implies is
/// `enc.stage1..=N`, `bottleneck`, `dec.stage1..=N-1`, and `head`.
pub fn unfreeze_state(
    sched: &UnfreezeSchedule,
    n_stages: usize,
    epoch: usize,
) -> Result<Vec<String>, TrainError> {
    sched.validate(n_stages)?;
    if epoch >= sched.max_epochs {
        return Err(TrainError::OutOfRange { what: "epoch", got: epoch, limit: sched.max_epochs });
    }
    let mut tags: Vec<String> = Vec::new();
    tags.push(String::from("bottleneck"));
    for k in 1..n_stages {
        tags.push(format!("dec.stage{k}"));
    }
    tags.push(String::from("head"));
    if epoch > sched.step_a_end {
        let lowest = if epoch > sched.step_b_end { 1 } else { sched.deep_stage_cutoff + 1 };
        for k in lowest..=n_stages {
            tags.push(format!("enc.stage{k}"));
        }
    }
    tags.sort_unstable();
    Ok(tags)
}
