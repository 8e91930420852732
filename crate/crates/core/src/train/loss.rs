//! DiceFocal loss on logits.
//!
//! The loss is `L_dice + focal_weight * L_focal` over the whole batch:
//!
//! * `L_dice = 1 - (2*sum(p*g) + eps) / (sum(p) + sum(g) + eps)` on the raw
//!   sigmoid probabilities, so its gradient is never clipped;
//! * `L_focal = -mean[alpha*g*(1-p)^gamma*ln(p)
//!   + (1-alpha)*(1-g)*p^gamma*ln(1-p)]` on probabilities clamped to
//!   `[1e-7, 1 - 1e-7]`, which keeps the logs finite for saturated logits.

use alloc::format;
use alloc::string::String;

use crate::autodiff::{AutodiffError, Tape, Tensor};
use crate::real::{real, Real};

use super::TrainError;

/// Probability clamp applied before the focal logs.
const PROB_CLAMP: f64 = 1e-7;

/// Constants of the DiceFocal loss.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossConfig {
    /// Additive smoothing in the Dice numerator and denominator.
    pub dice_eps: f64,
    /// Focal exponent gamma.
    pub focal_gamma: f64,
    /// Foreground weight alpha; background gets `1 - alpha`.
    pub focal_alpha: f64,
    /// Weight of the focal term relative to the Dice term (lambda_f).
    pub focal_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { dice_eps: 1e-5, focal_gamma: 2.0, focal_alpha: 0.5, focal_weight: 1.0 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: &str| Err(TrainError::InvalidConfig(String::from(msg)));
        if !(self.dice_eps.is_finite() && self.dice_eps > 0.0) {
            return bad("dice_eps must be finite and positive");
        }
        if !(self.focal_gamma.is_finite() && self.focal_gamma >= 0.0) {
            return bad("focal_gamma must be finite and >= 0");
        }
        if !(0.0..=1.0).contains(&self.focal_alpha) {
            return bad("focal_alpha must lie in [0, 1]");
        }
        if !(self.focal_weight.is_finite() && self.focal_weight >= 0.0) {
            return bad("focal_weight must be finite and >= 0");
        }
        Ok(())
    }
}

/// Build the DiceFocal loss node for a batch of logits against a 0/1 target
/// tensor of the same shape (usually a no-grad leaf made from masks).
pub fn dice_focal_loss<T: Real>(
    tape: &mut Tape<T>,
    logits: &Tensor,
    target: &Tensor,
    cfg: &LossConfig,
) -> Result<Tensor, AutodiffError> {
    if logits.shape() != target.shape() {
        return Err(AutodiffError::ShapeMismatch(format!(
            "loss shapes differ: logits {:?} vs target {:?}",
            logits.shape(),
            target.shape()
        )));
    }
    let one = real::<T>(1.0);
    let p = tape.sigmoid(logits);

    // Soft Dice over the whole batch, on unclamped probabilities.
    let pg = tape.mul(&p, target)?;
    let s_pg = tape.sum(&pg);
    let s_p = tape.sum(&p);
    let s_g = tape.sum(target);
    let eps = real::<T>(cfg.dice_eps);
    let num = tape.scalar_affine(&s_pg, real::<T>(2.0), eps);
    let den_sum = tape.add(&s_p, &s_g)?;
    let den = tape.scalar_affine(&den_sum, one, eps);
    let overlap = tape.div(&num, &den)?;
    let l_dice = tape.scalar_affine(&overlap, real::<T>(-1.0), one);

    // Focal term on clamped probabilities.
    let pc = tape.clamp(&p, real::<T>(PROB_CLAMP), real::<T>(1.0 - PROB_CLAMP));
    let qc = tape.scalar_affine(&pc, real::<T>(-1.0), one); // 1 - pc
    let ln_p = tape.ln(&pc);
    let ln_q = tape.ln(&qc);
    let gamma = real::<T>(cfg.focal_gamma);
    let w_pos = tape.pow_const(&qc, gamma);
    let w_neg = tape.pow_const(&pc, gamma);
    let pos_wl = tape.mul(&w_pos, &ln_p)?;
    let pos = tape.mul(target, &pos_wl)?;
    let g_inv = tape.scalar_affine(target, real::<T>(-1.0), one); // 1 - g
    let neg_wl = tape.mul(&w_neg, &ln_q)?;
    let neg = tape.mul(&g_inv, &neg_wl)?;
    let pos_scaled = tape.scalar_affine(&pos, real::<T>(cfg.focal_alpha), real::<T>(0.0));
    let neg_scaled = tape.scalar_affine(&neg, real::<T>(1.0 - cfg.focal_alpha), real::<T>(0.0));
    let inner = tape.add(&pos_scaled, &neg_scaled)?;
    let mean_inner = tape.mean(&inner);
    // Negation and the lambda_f weight folded into one affine node.
    let l_focal = tape.scalar_affine(&mean_inner, real::<T>(-cfg.focal_weight), real::<T>(0.0));

    tape.add(&l_dice, &l_focal)
}
