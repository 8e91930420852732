//! Trilinear resize of [N, C, D, H, W] volumes, align-corners-false.
//!
//! Each output index maps to a source coordinate s = (o + 0.5)·(in/out) − 0.5
//! clamped to [0, in−1]; the value is the 8-corner weighted sum. The forward
//! pass evaluates exactly that weighted sum (not a nested lerp), and the
//! backward pass scatters the same eight weights, so the pair is a clean
//! adjoint up to rounding.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

// Required in pure no_std graphs; once std is linked anywhere (tests, std
// consumers) f64's inherent methods shadow the trait and this goes unused.
#[allow(unused_imports)]
use num_traits::Float;

use super::{AutodiffError, Op, Tape, Tensor};
use crate::real::{real, Real};

/// Per-axis interpolation table: (low index, high index, low weight, high weight).
fn axis_table<T: Real>(in_len: usize, out_len: usize) -> Vec<(usize, usize, T, T)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(in_len - 1);
            let frac = s - lo as f64;
            (lo, hi, real::<T>(1.0 - frac), real::<T>(frac))
        })
        .collect()
}

pub(super) fn forward<T: Real>(
    tape: &mut Tape<T>,
    input: &Tensor,
    out_dhw: [usize; 3],
) -> Result<Tensor, AutodiffError> {
    if input.shape.len() != 5 {
        return Err(AutodiffError::ShapeMismatch(format!(
            "resize input must be [N,C,D,H,W], got {:?}",
            input.shape
        )));
    }
    if out_dhw.iter().any(|&d| d == 0) || input.shape[2..].iter().any(|&d| d == 0) {
        return Err(AutodiffError::ShapeMismatch("resize with zero-length axis".into()));
    }
    let (n, c) = (input.shape[0], input.shape[1]);
    let (di, hi_, wi) = (input.shape[2], input.shape[3], input.shape[4]);
    let [od, oh, ow] = out_dhw;

    let tz = axis_table::<T>(di, od);
    let ty = axis_table::<T>(hi_, oh);
    let tx = axis_table::<T>(wi, ow);

    let x = &tape.node(input.id).values;
    let mut out = vec![T::zero(); n * c * od * oh * ow];
    let in_vol = di * hi_ * wi;
    let mut oi = 0usize;
    for nc in 0..n * c {
        let xs = &x[nc * in_vol..(nc + 1) * in_vol];
        for &(z0, z1, wz0, wz1) in &tz {
            for &(y0, y1, wy0, wy1) in &ty {
                let b00 = (z0 * hi_ + y0) * wi;
                let b01 = (z0 * hi_ + y1) * wi;
                let b10 = (z1 * hi_ + y0) * wi;
                let b11 = (z1 * hi_ + y1) * wi;
                let w00 = wz0 * wy0;
                let w01 = wz0 * wy1;
                let w10 = wz1 * wy0;
                let w11 = wz1 * wy1;
                for &(x0, x1, wx0, wx1) in &tx {
                    let v = w00 * wx0 * xs[b00 + x0]
                        + w00 * wx1 * xs[b00 + x1]
                        + w01 * wx0 * xs[b01 + x0]
                        + w01 * wx1 * xs[b01 + x1]
                        + w10 * wx0 * xs[b10 + x0]
                        + w10 * wx1 * xs[b10 + x1]
                        + w11 * wx0 * xs[b11 + x0]
                        + w11 * wx1 * xs[b11 + x1];
                    out[oi] = v;
                    oi += 1;
                }
            }
        }
    }

    let rg = tape.node(input.id).requires_grad;
    Ok(tape.push(
        vec![n, c, od, oh, ow],
        out,
        rg,
        Op::Resize3 { input: input.id, out_dhw },
    ))
}

pub(super) fn backward<T: Real>(
    tape: &Tape<T>,
    input: usize,
    out_dhw: [usize; 3],
    gout: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    let Some(g) = grads[input].as_mut() else { return };
    let shape = &tape.node(input).shape;
    let (n, c) = (shape[0], shape[1]);
    let (di, hi_, wi) = (shape[2], shape[3], shape[4]);
    let [od, oh, ow] = out_dhw;

    let tz = axis_table::<T>(di, od);
    let ty = axis_table::<T>(hi_, oh);
    let tx = axis_table::<T>(wi, ow);

    let in_vol = di * hi_ * wi;
    let mut oi = 0usize;
    for nc in 0..n * c {
        let gx = &mut g[nc * in_vol..(nc + 1) * in_vol];
        for &(z0, z1, wz0, wz1) in &tz {
            for &(y0, y1, wy0, wy1) in &ty {
                let b00 = (z0 * hi_ + y0) * wi;
                let b01 = (z0 * hi_ + y1) * wi;
                let b10 = (z1 * hi_ + y0) * wi;
                let b11 = (z1 * hi_ + y1) * wi;
                let w00 = wz0 * wy0;
                let w01 = wz0 * wy1;
                let w10 = wz1 * wy0;
                let w11 = wz1 * wy1;
                for &(x0, x1, wx0, wx1) in &tx {
                    let go = gout[oi];
                    oi += 1;
                    gx[b00 + x0] = gx[b00 + x0] + go * (w00 * wx0);
                    gx[b00 + x1] = gx[b00 + x1] + go * (w00 * wx1);
                    gx[b01 + x0] = gx[b01 + x0] + go * (w01 * wx0);
                    gx[b01 + x1] = gx[b01 + x1] + go * (w01 * wx1);
                    gx[b10 + x0] = gx[b10 + x0] + go * (w10 * wx0);
                    gx[b10 + x1] = gx[b10 + x1] + go * (w10 * wx1);
                    gx[b11 + x0] = gx[b11 + x0] + go * (w11 * wx0);
                    gx[b11 + x1] = gx[b11 + x1] + go * (w11 * wx1);
                }
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
    fn doubling_a_two_sample_axis() {
        // [0, 2] -> [0, 0.5, 1.5, 2] under align-corners-false
        let mut t: Tape<f64> = Tape::new();
        let x = t.leaf(vec![0.0, 2.0], &[1, 1, 1, 1, 2], false).unwrap();
        let y = t.upsample_trilinear(&x, [1, 1, 4]).unwrap();
        assert_eq!(t.value(&y), &[0.0, 0.5, 1.5, 2.0]);
    }

    #[test]
    fn upsample_x2_doubles_every_axis() {
        let mut t: Tape<f64> = Tape::new();
        let x = t.leaf((0..8).map(|i| i as f64).collect(), &[1, 1, 2, 2, 2], false).unwrap();
        let y = t.upsample_x2(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 4, 4, 4]);
    }

    #[test]
    fn identity_resize_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xv: Vec<f64> = (0..2 * 3 * 4 * 5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut t: Tape<f64> = Tape::new();
        let x = t.leaf(xv.clone(), &[1, 2, 3, 4, 5], false).unwrap();
        let y = t.upsample_trilinear(&x, [3, 4, 5]).unwrap();
        assert_eq!(t.value(&y), xv.as_slice());
    }

    #[test]
    fn downsample_by_two_averages_pairs() {
        let mut t: Tape<f64> = Tape::new();
        let x = t.leaf(vec![1.0, 3.0, 5.0, 9.0], &[1, 1, 1, 1, 4], false).unwrap();
        let y = t.upsample_trilinear(&x, [1, 1, 2]).unwrap();
        assert_eq!(t.value(&y), &[2.0, 7.0]);
    }

    #[test]
    fn constant_field_resizes_to_constant() {
        let mut t: Tape<f64> = Tape::new();
        let x = t.leaf(vec![0.7; 3 * 5 * 4], &[1, 1, 3, 5, 4], false).unwrap();
        let y = t.upsample_trilinear(&x, [7, 11, 6]).unwrap();
        for &v in t.value(&y) {
            assert!((v - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn values_stay_within_input_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let xv: Vec<f64> = (0..4 * 5 * 6).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let (lo, hi) = xv.iter().fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
        let mut t: Tape<f64> = Tape::new();
        let x = t.leaf(xv, &[1, 1, 4, 5, 6], false).unwrap();
        let y = t.upsample_trilinear(&x, [9, 7, 13]).unwrap();
        for &v in t.value(&y) {
            assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }

    #[test]
    fn odd_target_dims_are_supported() {
        // 11 -> 6 -> 11 style round trips show up in the decoder
        let mut t: Tape<f64> = Tape::new();
        let x = t.leaf(vec![1.0; 6 * 6 * 6], &[1, 1, 6, 6, 6], false).unwrap();
        let y = t.upsample_trilinear(&x, [11, 11, 11]).unwrap();
        assert_eq!(y.shape(), &[1, 1, 11, 11, 11]);
    }

    #[test]
    fn adjoint_identity_holds() {
        // <up(x), y> == <x, upT(y)> up to rounding
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let xv: Vec<f64> = (0..2 * 3 * 4 * 5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let out = [5usize, 7, 9];
        let yn = 2 * out[0] * out[1] * out[2];
        let yv: Vec<f64> = (0..yn).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let mut t: Tape<f64> = Tape::new();
        let x = t.leaf(xv.clone(), &[1, 2, 3, 4, 5], true).unwrap();
        let up = t.upsample_trilinear(&x, out).unwrap();
        let y = t.leaf(yv, &[1, 2, out[0], out[1], out[2]], false).unwrap();
        let prod = t.mul(&up, &y).unwrap();
        let lhs_t = t.sum(&prod);
        let lhs = t.scalar_value(&lhs_t);
        t.backward(&lhs_t).unwrap();
        // grad of <up(x), y> wrt x is exactly upT(y)
        let upt_y = t.grad(&x).unwrap();
        let rhs: f64 = xv.iter().zip(upt_y).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10, "lhs={lhs} rhs={rhs}");
    }

    #[test]
    fn zero_axis_rejected() {
        let mut t: Tape<f64> = Tape::new();
        let x = t.leaf(vec![1.0; 8], &[1, 1, 2, 2, 2], false).unwrap();
        assert!(t.upsample_trilinear(&x, [0, 2, 2]).is_err());
    }
}
