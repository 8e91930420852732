//! Instance normalization over [N, C, D, H, W].
//!
//! Each (sample, channel) pair is normalized by its own spatial mean and
//! population variance, then scaled and shifted by per-channel affine
//! parameters: y = gamma * (x - mean) / sqrt(var + eps) + beta. The
//! per-instance statistics are saved on the op node for the backward pass.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{AutodiffError, Op, Tape, Tensor};
use crate::real::{real, Real};

pub(super) fn forward<T: Real>(
    tape: &mut Tape<T>,
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: T,
) -> Result<Tensor, AutodiffError> {
    if input.shape.len() != 5 {
        return Err(AutodiffError::ShapeMismatch(format!(
            "instance_norm3d input must be [N,C,D,H,W], got {:?}",
            input.shape
        )));
    }
    let (n, c) = (input.shape[0], input.shape[1]);
    let v: usize = input.shape[2..].iter().product();
    if gamma.shape != [c] || beta.shape != [c] {
        return Err(AutodiffError::ShapeMismatch(format!(
            "instance_norm3d affine params must be [{c}], got gamma {:?} beta {:?}",
            gamma.shape, beta.shape
        )));
    }
    if v == 0 {
        return Err(AutodiffError::ShapeMismatch("instance_norm3d over empty volume".into()));
    }

    let x = &tape.node(input.id).values;
    let gv = &tape.node(gamma.id).values;
    let bv = &tape.node(beta.id).values;
    let inv_v = T::one() / real::<T>(v as f64);

    let mut out = vec![T::zero(); x.len()];
    let mut means = vec![T::zero(); n * c];
    let mut inv_stds = vec![T::zero(); n * c];
    for nc in 0..n * c {
        let xs = &x[nc * v..(nc + 1) * v];
        let mut s = T::zero();
        for &xi in xs {
            s = s + xi;
        }
        let mean = s * inv_v;
        let mut q = T::zero();
        for &xi in xs {
            let d = xi - mean;
            q = q + d * d;
        }
        let var = q * inv_v;
        let inv_std = T::one() / (var + eps).sqrt();
        means[nc] = mean;
        inv_stds[nc] = inv_std;
        let (g, b) = (gv[nc % c], bv[nc % c]);
        let ys = &mut out[nc * v..(nc + 1) * v];
        for (y, &xi) in ys.iter_mut().zip(xs) {
            *y = g * (xi - mean) * inv_std + b;
        }
    }

    let rg = tape.requires(&[input.id, gamma.id, beta.id]);
    Ok(tape.push(
        input.shape.clone(),
        out,
        rg,
        Op::InstanceNorm {
            input: input.id,
            gamma: gamma.id,
            beta: beta.id,
            mean: means,
            inv_std: inv_stds,
        },
    ))
}

#[allow(clippy::too_many_arguments)]
pub(super) fn backward<T: Real>(
    tape: &Tape<T>,
    input: usize,
    gamma: usize,
    beta: usize,
    means: &[T],
    inv_stds: &[T],
    gout: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    let shape = &tape.node(input).shape;
    let c = shape[1];
    let v: usize = shape[2..].iter().product();
    let nc_total = means.len();
    let x = &tape.node(input).values;
    let gv = &tape.node(gamma).values;
    let inv_v = T::one() / real::<T>(v as f64);

    for nc in 0..nc_total {
        let ch = nc % c;
        let mean = means[nc];
        let inv_std = inv_stds[nc];
        let xs = &x[nc * v..(nc + 1) * v];
        let gs = &gout[nc * v..(nc + 1) * v];

        // s1 = sum dy, s2 = sum dy * xhat
        let mut s1 = T::zero();
        let mut s2 = T::zero();
        for (&dy, &xi) in gs.iter().zip(xs) {
            s1 = s1 + dy;
            s2 = s2 + dy * (xi - mean) * inv_std;
        }
        if let Some(g) = grads[beta].as_mut() {
            g[ch] = g[ch] + s1;
        }
        if let Some(g) = grads[gamma].as_mut() {
            g[ch] = g[ch] + s2;
        }
        if let Some(g) = grads[input].as_mut() {
            let k = gv[ch] * inv_std;
            let m1 = s1 * inv_v;
            let m2 = s2 * inv_v;
            let dxs = &mut g[nc * v..(nc + 1) * v];
            for i in 0..v {
                let xhat = (xs[i] - mean) * inv_std;
                dxs[i] = dxs[i] + k * (gs[i] - m1 - xhat * m2);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::Tape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_two_pass_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (n, c, v) = (1usize, 2usize, 27usize);
        let xv: Vec<f64> = (0..n * c * v).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let eps = 1e-5;
        let (g0, g1, b0, b1) = (1.5, -0.5, 0.25, 2.0);

        let mut t: Tape<f64> = Tape::new();
        let x = t.leaf(xv.clone(), &[1, 2, 3, 3, 3], false).unwrap();
        let g = t.leaf(vec![g0, g1], &[2], false).unwrap();
        let b = t.leaf(vec![b0, b1], &[2], false).unwrap();
        let y = t.instance_norm3d(&x, &g, &b, eps).unwrap();
        let got = t.value(&y);

        for ch in 0..2 {
            let xs = &xv[ch * v..(ch + 1) * v];
            let mean: f64 = xs.iter().sum::<f64>() / v as f64;
            let var: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v as f64;
            let (gc, bc) = if ch == 0 { (g0, b0) } else { (g1, b1) };
            for i in 0..v {
                let want = gc * (xs[i] - mean) / (var + eps).sqrt() + bc;
                assert!((got[ch * v + i] - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn normalized_channel_has_zero_mean_unit_var() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v = 4 * 4 * 4;
        let xv: Vec<f64> = (0..v).map(|_| rng.gen_range(0.0..10.0)).collect();
        let mut t: Tape<f64> = Tape::new();
        let x = t.leaf(xv, &[1, 1, 4, 4, 4], false).unwrap();
        let g = t.leaf(vec![1.0], &[1], false).unwrap();
        let b = t.leaf(vec![0.0], &[1], false).unwrap();
        let y = t.instance_norm3d(&x, &g, &b, 1e-5).unwrap();
        let ys = t.value(&y);
        let mean: f64 = ys.iter().sum::<f64>() / v as f64;
        let var: f64 = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / v as f64;
        assert!(mean.abs() < 1e-12);
        // slightly under 1 because of eps in the denominator
        assert!((var - 1.0).abs() < 1e-3);
    }

    #[test]
    fn constant_channel_maps_to_beta_with_zero_grad() {
        let mut t: Tape<f64> = Tape::new();
        let x = t.leaf(vec![3.25; 8], &[1, 1, 2, 2, 2], true).unwrap();
        let g = t.leaf(vec![2.0], &[1], false).unwrap();
        let b = t.leaf(vec![-1.0], &[1], false).unwrap();
        let y = t.instance_norm3d(&x, &g, &b, 1e-5).unwrap();
        assert_eq!(t.value(&y), &[-1.0; 8]);
        let loss = t.sum(&y);
        t.backward(&loss).unwrap();
        let gx = t.grad(&x).unwrap();
        assert!(gx.iter().all(|d| d.is_finite()));
        assert!(gx.iter().all(|d| d.abs() < 1e-9));
    }

    #[test]
    fn per_instance_statistics_are_independent() {
        // two samples with shifted copies of the same channel normalize identically
        let base: Vec<f64> = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
        let mut xv = base.clone();
        xv.extend(base.iter().map(|x| x + 100.0));
        let mut t: Tape<f64> = Tape::new();
        let x = t.leaf(xv, &[2, 1, 2, 2, 2], false).unwrap();
        let g = t.leaf(vec![1.0], &[1], false).unwrap();
        let b = t.leaf(vec![0.0], &[1], false).unwrap();
        let y = t.instance_norm3d(&x, &g, &b, 1e-5).unwrap();
        let ys = t.value(&y);
        for i in 0..8 {
            assert!((ys[i] - ys[8 + i]).abs() < 1e-9);
        }
    }

    #[test]
    fn affine_shape_mismatch_rejected() {
        let mut t: Tape<f64> = Tape::new();
        let x = t.leaf(vec![0.0; 16], &[1, 2, 2, 2, 2], false).unwrap();
        let g = t.leaf(vec![1.0; 3], &[3], false).unwrap();
        let b = t.leaf(vec![0.0; 2], &[2], false).unwrap();
        assert!(t.instance_norm3d(&x, &g, &b, 1e-5).is_err());
    }
}
