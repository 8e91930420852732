//! Learning-rate schedules: warmup-cosine and its stagewise-restart variant.
//!
//! Endpoint values are part of the contract, not an approximation: the
//! warmup peak returns `lr_max` exactly and the final cosine epoch returns
//! `lr_min` exactly. The cosine phase is therefore computed as a convex
//! blend `lr_max*w + lr_min*(1-w)` with `w = (1 + cos(pi*t))/2`, which is
//! exact at `t = 0` (cos 0 = 1) and `t = 1` (cos of the f64 nearest pi
//! rounds to -1.0), instead of the algebraically equal but
//! rounding-sensitive `lr_min + (lr_max-lr_min)*w`.

use alloc::string::String;
use alloc::vec::Vec;

// Required in pure no_std graphs; once std is linked anywhere (tests, std
// consumers) f64's inherent methods shadow the trait and this goes unused.
#[allow(unused_imports)]
use num_traits::Float;

use super::TrainError;

/// Which curve `lr_at` evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// Linear warmup for `warmup_epochs`, then one cosine arc to `lr_min`.
    WarmupCosine,
    /// Warmup-cosine segments separated by `restart_boundaries`; segment k
    /// peaks at `lr_max / restart_decay^k` and bottoms out at peak/1000.
    StagewiseCosine,
}

/// Learning-rate schedule over a fixed epoch horizon.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    pub lr_max: f64,
    pub lr_min: f64,
    /// Linear warmup length of the first segment.
    pub warmup_epochs: usize,
    /// Total schedule length; `lr_at` is defined on `0..horizon_epochs`.
    pub horizon_epochs: usize,
    /// Epochs at which a new stagewise segment begins (strictly increasing,
    /// inside the horizon). Ignored by `WarmupCosine`.
    pub restart_boundaries: Vec<usize>,
    /// Peak divisor per restart: segment k peaks at `lr_max / decay^k`.
    pub restart_decay: f64,
    /// Warmup length of segments after the first.
    pub restart_warmup_epochs: usize,
}

impl ScheduleConfig {
    /// Single warmup-cosine arc from `lr_max` down to `lr_min`.
    pub fn warmup_cosine(lr_max: f64, lr_min: f64, warmup: usize, horizon: usize) -> Self {
        Self {
            kind: ScheduleKind::WarmupCosine,
            lr_max,
            lr_min,
            warmup_epochs: warmup,
            horizon_epochs: horizon,
            restart_boundaries: Vec::new(),
            restart_decay: 10.0,
            restart_warmup_epochs: 10,
        }
    }

    /// Stagewise restarts with peaks `lr_max / 10^k`; each segment's floor
    /// is its peak divided by 1000.
    pub fn stagewise(lr_max: f64, warmup: usize, boundaries: Vec<usize>, horizon: usize) -> Self {
        Self {
            kind: ScheduleKind::StagewiseCosine,
            lr_max,
            lr_min: lr_max / 1000.0,
            warmup_epochs: warmup,
            horizon_epochs: horizon,
            restart_boundaries: boundaries,
            restart_decay: 10.0,
            restart_warmup_epochs: 10,
        }
    }

    /// Segment start epochs, including the implicit first segment at 0.
    fn segment_starts(&self) -> Vec<usize> {
        let mut starts = Vec::with_capacity(1 + self.restart_boundaries.len());
        starts.push(0);
        match self.kind {
            ScheduleKind::WarmupCosine => {}
            ScheduleKind::StagewiseCosine => starts.extend_from_slice(&self.restart_boundaries),
        }
        starts
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: &str| Err(TrainError::InvalidConfig(String::from(msg)));
        if !(self.lr_max.is_finite() && self.lr_max >= 0.0) {
            return bad("lr_max must be finite and non-negative");
        }
        if !(self.lr_min.is_finite() && self.lr_min >= 0.0) || self.lr_min > self.lr_max {
            return bad("lr_min must satisfy 0 <= lr_min <= lr_max");
        }
        if self.horizon_epochs == 0 {
            return bad("horizon_epochs must be >= 1");
        }
        if self.kind == ScheduleKind::StagewiseCosine {
            if !(self.restart_decay.is_finite() && self.restart_decay >= 1.0) {
                return bad("restart_decay must be finite and >= 1");
            }
            let mut prev = 0usize;
            for &b in &self.restart_boundaries {
                if b <= prev || b >= self.horizon_epochs {
                    return bad("restart boundaries must be strictly increasing inside the horizon");
                }
                prev = b;
            }
        }
        // Every segment must be longer than its warmup so that the peak is
        // reached and at least one cosine epoch exists.
        let starts = self.segment_starts();
        for (k, &s) in starts.iter().enumerate() {
            let end = starts.get(k + 1).copied().unwrap_or(self.horizon_epochs);
            let warm = if k == 0 { self.warmup_epochs } else { self.restart_warmup_epochs };
            if end - s <= warm {
                return bad("each segment must be longer than its warmup");
            }
        }
        Ok(())
    }
}

/// One warmup-cosine arc over a segment of `len` epochs.
///
/// `lr(e) = peak*(e+1)/warm` for `e < warm`, else the cosine blend from
/// `peak` at `e = warm` to `floor` at `e = len-1`. A single-epoch cosine
/// phase (`len == warm + 1`) sits at the floor, matching the limit of the
/// closed form.
fn segment_lr(epoch: usize, len: usize, warm: usize, peak: f64, floor: f64) -> f64 {
    if epoch < warm {
        return peak * ((epoch + 1) as f64 / warm as f64);
    }
    let span = len - 1 - warm;
    if span == 0 {
        return floor;
    }
    let t = (epoch - warm) as f64 / span as f64;
    let w = 0.5 * (1.0 + (core::f64::consts::PI * t).cos());
    peak * w + floor * (1.0 - w)
}

/// Learning rate for a 0-based epoch. The config must be valid; epochs at or
/// beyond the horizon are `OutOfRange`.
pub fn lr_at(cfg: &ScheduleConfig, epoch: usize) -> Result<f64, TrainError> {
    if epoch >= cfg.horizon_epochs {
        return Err(TrainError::OutOfRange {
            what: "epoch",
            got: epoch,
            limit: cfg.horizon_epochs,
        });
    }
    let starts = cfg.segment_starts();
    let k = starts.iter().rposition(|&s| s <= epoch).expect("segment 0 starts at 0");
    let start = starts[k];
    let end = starts.get(k + 1).copied().unwrap_or(cfg.horizon_epochs);
    let (peak, floor, warm) = match cfg.kind {
        ScheduleKind::WarmupCosine => (cfg.lr_max, cfg.lr_min, cfg.warmup_epochs),
        ScheduleKind::StagewiseCosine => {
            let peak = cfg.lr_max / cfg.restart_decay.powi(k as i32);
            let warm = if k == 0 { cfg.warmup_epochs } else { cfg.restart_warmup_epochs };
            (peak, peak / 1000.0, warm)
        }
    };
    Ok(segment_lr(epoch - start, end - start, warm, peak, floor))
}
