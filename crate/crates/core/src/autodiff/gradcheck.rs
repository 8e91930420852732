//! Central-difference gradient verification (f64 only).
//!
//! Runs the closure once on a gradient-enabled tape to get analytic
//! gradients, then re-evaluates it with each checked input element nudged
//! by ±step. Large inputs can be spot-checked by sampling positions.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor};

pub struct GradCheckConfig {
    /// Central-difference step h; error is O(h^2).
    pub step: f64,
    /// If set, check at most this many randomly chosen positions per input.
    pub max_samples_per_input: Option<usize>,
    /// Seed for position sampling.
    pub seed: u64,
    /// Scale floor for the error denominator. Central differences cannot
    /// resolve a gradient below ε·|f|/h to fine relative precision, so
    /// gradients smaller than this are compared at this scale instead.
    pub denom_floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { step: 1e-4, max_samples_per_input: None, seed: 0, denom_floor: 1e-7 }
    }
}

#[derive(Debug)]
pub struct GradCheckReport {
    /// Worst guarded relative error over all checked positions.
    pub max_rel_err: f64,
    /// Number of positions checked.
    pub checked: usize,
}

/// Compare analytic and central-difference gradients of a scalar-valued
/// function of several tensors.
///
/// `f` must be deterministic: it is called repeatedly with fresh tapes and
/// must build the same computation each time. Errors are
/// |a − n| / max(|a|, |n|, denom_floor); the floor keeps near-zero
/// gradients, which finite differences cannot resolve relatively, from
/// dominating the report.
pub fn grad_check<F>(
    f: F,
    inputs: &[(Vec<f64>, Vec<usize>)],
    cfg: &GradCheckConfig,
) -> GradCheckReport
where
    F: Fn(&mut Tape<f64>, &[Tensor]) -> Tensor,
{
    // Analytic pass.
    let mut tape: Tape<f64> = Tape::new();
    let leaves: Vec<Tensor> = inputs
        .iter()
        .map(|(v, s)| tape.leaf_from(v, s, true).expect("grad_check input shape"))
        .collect();
    let loss = f(&mut tape, &leaves);
    assert_eq!(loss.numel(), 1, "grad_check closure must return a scalar");
    tape.backward(&loss).expect("grad_check backward");
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .map(|t| tape.grad(t).expect("checked inputs must require grad").to_vec())
        .collect();

    let eval = |vals: &[Vec<f64>]| -> f64 {
        let mut tape: Tape<f64> = Tape::new();
        let leaves: Vec<Tensor> = vals
            .iter()
            .zip(inputs)
            .map(|(v, (_, s))| tape.leaf_from(v, s, false).unwrap())
            .collect();
        let loss = f(&mut tape, &leaves);
        tape.scalar_value(&loss)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut vals: Vec<Vec<f64>> = inputs.iter().map(|(v, _)| v.clone()).collect();
    let mut max_rel_err = 0.0f64;
    let mut checked = 0usize;
    for i in 0..inputs.len() {
        let n = inputs[i].0.len();
        let positions: Vec<usize> = match cfg.max_samples_per_input {
            Some(k) if k < n => rand::seq::index::sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        for j in positions {
            let orig = vals[i][j];
            vals[i][j] = orig + cfg.step;
            let fp = eval(&vals);
            vals[i][j] = orig - cfg.step;
            let fm = eval(&vals);
            vals[i][j] = orig;
            let numeric = (fp - fm) / (2.0 * cfg.step);
            let a = analytic[i][j];
            let denom = a.abs().max(numeric.abs()).max(cfg.denom_floor);
            let err = (a - numeric).abs() / denom;
            if err > max_rel_err {
                max_rel_err = err;
            }
            checked += 1;
        }
    }
    GradCheckReport { max_rel_err, checked }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::Rng;

    const TOL: f64 = 1e-5;

    fn randv(seed: u64, n: usize, lo: f64, hi: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(lo..hi)).collect()
    }

    #[test]
    fn quadratic_has_exact_gradient() {
        let x = randv(1, 6, -2.0, 2.0);
        let report = grad_check(
            |t, leaves| {
                let sq = t.mul(&leaves[0], &leaves[0]).unwrap();
                t.sum(&sq)
            },
            &[(x, vec![6])],
            &GradCheckConfig::default(),
        );
        assert_eq!(report.checked, 6);
        assert!(report.max_rel_err < 1e-9, "err = {}", report.max_rel_err);
    }

    #[test]
    fn composite_elementwise_expression() {
        // mixes mul/add/div/sigmoid/leaky_relu/ln/pow/clamp through one scalar
        let a = randv(2, 12, 0.2, 1.8);
        let b = randv(3, 12, -1.5, 1.5);
        let report = grad_check(
            |t, leaves| {
                let (a, b) = (&leaves[0], &leaves[1]);
                let p = t.mul(a, b).unwrap();
                let s = t.sigmoid(&p);
                let l = t.leaky_relu(b, 0.01);
                let num = t.add(&s, &l).unwrap();
                let sh = t.scalar_affine(a, 1.0, 2.5); // keep denominator positive
                let q = t.div(&num, &sh).unwrap();
                let ln = t.ln(&sh);
                let pw = t.pow_const(&ln, 2.0);
                let c = t.clamp(&q, -0.9, 0.9);
                let m = t.add(&pw, &c).unwrap();
                t.mean(&m)
            },
            &[(a, vec![3, 4]), (b, vec![3, 4])],
            &GradCheckConfig::default(),
        );
        assert!(report.max_rel_err < TOL, "err = {}", report.max_rel_err);
    }

    #[test]
    fn conv3d_with_groups_and_stride() {
        let x = randv(4, 2 * 4 * 5 * 5, -1.0, 1.0);
        let w = randv(5, 4 * 1 * 2 * 3 * 3, -0.5, 0.5);
        let bias = randv(6, 4, -0.2, 0.2);
        // out dims: D (4-2)/1+1 = 3, H/W (5+2-3)/2+1 = 3
        let proj = randv(7, 4 * 3 * 3 * 3, -1.0, 1.0);
        let report = grad_check(
            move |t, leaves| {
                let y = t
                    .conv3d(&leaves[0], &leaves[1], Some(&leaves[2]), [1, 2, 2], [0, 1, 1], 2)
                    .unwrap();
                // random projection so every output element matters
                let p = t.leaf_from(&proj, y.shape(), false).unwrap();
                let wy = t.mul(&y, &p).unwrap();
                t.sum(&wy)
            },
            &[
                (x, vec![1, 2, 4, 5, 5]),
                (w, vec![4, 1, 2, 3, 3]),
                (bias, vec![4]),
            ],
            &GradCheckConfig::default(),
        );
        assert!(report.max_rel_err < TOL, "err = {}", report.max_rel_err);
    }

    #[test]
    fn instance_norm_params_and_input() {
        let x = randv(8, 2 * 8, -2.0, 2.0);
        let gamma = randv(9, 2, 0.5, 1.5);
        let beta = randv(10, 2, -0.5, 0.5);
        let proj = randv(11, 2 * 8, -1.0, 1.0);
        let report = grad_check(
            move |t, leaves| {
                let y = t.instance_norm3d(&leaves[0], &leaves[1], &leaves[2], 1e-5).unwrap();
                let p = t.leaf_from(&proj, y.shape(), false).unwrap();
                let wy = t.mul(&y, &p).unwrap();
                t.sum(&wy)
            },
            &[
                (x, vec![1, 2, 2, 2, 2]),
                (gamma, vec![2]),
                (beta, vec![2]),
            ],
            &GradCheckConfig::default(),
        );
        assert!(report.max_rel_err < TOL, "err = {}", report.max_rel_err);
    }

    #[test]
    fn trilinear_resize_up_and_down() {
        let x = randv(12, 2 * 3 * 4 * 5, -1.0, 1.0);
        let proj = randv(13, 2 * 4 * 3 * 7, -1.0, 1.0);
        let report = grad_check(
            move |t, leaves| {
                let y = t.upsample_trilinear(&leaves[0], [4, 3, 7]).unwrap();
                let p = t.leaf_from(&proj, y.shape(), false).unwrap();
                let wy = t.mul(&y, &p).unwrap();
                t.sum(&wy)
            },
            &[(x, vec![1, 2, 3, 4, 5])],
            &GradCheckConfig::default(),
        );
        assert!(report.max_rel_err < TOL, "err = {}", report.max_rel_err);
    }

    #[test]
    fn sampling_limits_checked_positions() {
        let x = randv(14, 64, -1.0, 1.0);
        let report = grad_check(
            |t, leaves| {
                let sq = t.mul(&leaves[0], &leaves[0]).unwrap();
                t.sum(&sq)
            },
            &[(x, vec![64])],
            &GradCheckConfig { max_samples_per_input: Some(10), ..Default::default() },
        );
        assert_eq!(report.checked, 10);
        assert!(report.max_rel_err < TOL);
    }
}
