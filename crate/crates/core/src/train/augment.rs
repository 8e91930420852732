//! Training-time augmentation for image/mask pairs.
//!
//! The pipeline applies, in a fixed order, each step with its configured
//! probability: left-right flip, small rotation about the depth axis,
//! elastic deformation, intensity scaling, and histogram matching to a
//! reference volume. Geometry (dims, spacing) and mask binarity are
//! preserved throughout; warped voxels sampled from outside the volume
//! read as 0.
//!
//! Determinism contract: all randomness comes from the caller's rng, and
//! draws happen in a fixed order — one coin per step, followed by that
//! step's parameter draws only when the coin hits. Replaying the same rng
//! state therefore reproduces the output bitwise.

use alloc::vec;
use alloc::vec::Vec;

// Required in pure no_std graphs; once std is linked anywhere (tests, std
// consumers) f64's inherent methods shadow the trait and this goes unused.
#[allow(unused_imports)]
use num_traits::Float;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::volume::{Axis, Mask3, Volume3};

use super::TrainError;

/// Per-step probabilities and transform parameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AugmentConfig {
    /// Left-right (x axis) flip probability.
    pub flip_prob: f64,
    pub rotate_prob: f64,
    /// Rotation angle is drawn uniformly from ±this, in degrees.
    pub rotate_max_deg: f64,
    pub elastic_prob: f64,
    /// Gaussian smoothing sigma of the displacement field, in voxels.
    pub elastic_sigma_vox: f64,
    /// Peak displacement scale, in voxels.
    pub elastic_alpha_vox: f64,
    pub intensity_prob: f64,
    /// Uniform multiplicative intensity range, image only.
    pub intensity_lo: f64,
    pub intensity_hi: f64,
    /// Histogram matching to a reference volume, image only.
    pub hist_match_prob: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flip_prob: 0.5,
            rotate_prob: 0.5,
            rotate_max_deg: 10.0,
            elastic_prob: 0.25,
            elastic_sigma_vox: 3.0,
            elastic_alpha_vox: 2.0,
            intensity_prob: 0.5,
            intensity_lo: 0.9,
            intensity_hi: 1.1,
            hist_match_prob: 0.25,
        }
    }
}

impl AugmentConfig {
    /// Identity pipeline: every probability zero.
    pub fn none() -> Self {
        Self {
            flip_prob: 0.0,
            rotate_prob: 0.0,
            elastic_prob: 0.0,
            intensity_prob: 0.0,
            hist_match_prob: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: &str| Err(TrainError::InvalidConfig(alloc::string::String::from(msg)));
        for p in [
            self.flip_prob,
            self.rotate_prob,
            self.elastic_prob,
            self.intensity_prob,
            self.hist_match_prob,
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad("augmentation probabilities must lie in [0, 1]");
            }
        }
        if !(self.rotate_max_deg.is_finite() && self.rotate_max_deg >= 0.0) {
            return bad("rotate_max_deg must be finite and >= 0");
        }
        if !(self.elastic_sigma_vox.is_finite() && self.elastic_sigma_vox > 0.0) {
            return bad("elastic_sigma_vox must be finite and positive");
        }
        if !(self.elastic_alpha_vox.is_finite() && self.elastic_alpha_vox >= 0.0) {
            return bad("elastic_alpha_vox must be finite and >= 0");
        }
        if !(self.intensity_lo.is_finite()
            && self.intensity_hi.is_finite()
            && 0.0 < self.intensity_lo
            && self.intensity_lo <= self.intensity_hi)
        {
            return bad("intensity range must satisfy 0 < lo <= hi");
        }
        Ok(())
    }
}

/// Trilinear sample at fractional (z, y, x); out-of-volume corners read 0.
fn sample_trilinear(data: &[f32], dims: (usize, usize, usize), z: f64, y: f64, x: f64) -> f32 {
    let (d, h, w) = dims;
    let (z0, y0, x0) = (z.floor(), y.floor(), x.floor());
    let (fz, fy, fx) = (z - z0, y - y0, x - x0);
    let mut acc = 0.0f64;
    for (dz, wz) in [(0i64, 1.0 - fz), (1, fz)] {
        for (dy, wy) in [(0i64, 1.0 - fy), (1, fy)] {
            for (dx, wx) in [(0i64, 1.0 - fx), (1, fx)] {
                let weight = wz * wy * wx;
                if weight == 0.0 {
                    continue;
                }
                let (zi, yi, xi) = (z0 as i64 + dz, y0 as i64 + dy, x0 as i64 + dx);
                if zi < 0 || yi < 0 || xi < 0 {
                    continue;
                }
                let (zi, yi, xi) = (zi as usize, yi as usize, xi as usize);
                if zi >= d || yi >= h || xi >= w {
                    continue;
                }
                acc += weight * data[(zi * h + yi) * w + xi] as f64;
            }
        }
    }
    acc as f32
}

/// Nearest-neighbour sample of a label grid; out-of-volume reads background.
fn sample_nearest(data: &[u8], dims: (usize, usize, usize), z: f64, y: f64, x: f64) -> u8 {
    let (d, h, w) = dims;
    let (zi, yi, xi) = (z.round(), y.round(), x.round());
    if zi < 0.0 || yi < 0.0 || xi < 0.0 {
        return 0;
    }
    let (zi, yi, xi) = (zi as usize, yi as usize, xi as usize);
    if zi >= d || yi >= h || xi >= w {
        return 0;
    }
    data[(zi * h + yi) * w + xi]
}

/// In-plane rotation about the depth axis by `deg` degrees: the image is
/// resampled trilinearly (the z coordinate stays integral), the mask by
/// nearest neighbour.
fn rotate_in_plane(img: &[f32], msk: &[u8], dims: (usize, usize, usize), deg: f64) -> (Vec<f32>, Vec<u8>) {
    let (d, h, w) = dims;
    let theta = deg.to_radians();
    let (sin, cos) = theta.sin_cos();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut out_img = vec![0.0f32; img.len()];
    let mut out_msk = vec![0u8; msk.len()];
    for z in 0..d {
        for y in 0..h {
            let dy = y as f64 - cy;
            for x in 0..w {
                let dx = x as f64 - cx;
                // inverse mapping: source = R(-theta) * (p - c) + c
                let sy = cy + dy * cos - dx * sin;
                let sx = cx + dy * sin + dx * cos;
                let o = (z * h + y) * w + x;
                out_img[o] = sample_trilinear(img, dims, z as f64, sy, sx);
                out_msk[o] = sample_nearest(msk, dims, z as f64, sy, sx);
            }
        }
    }
    (out_img, out_msk)
}

/// Separable Gaussian blur along one axis, renormalizing truncated kernels
/// at the edges so the field keeps its scale there.
fn blur_axis(field: &mut Vec<f32>, dims: (usize, usize, usize), axis: Axis, kernel: &[f64]) {
    let (d, h, w) = dims;
    let r = (kernel.len() - 1) / 2;
    let (len, stride) = match axis {
        Axis::Z => (d, h * w),
        Axis::Y => (h, w),
        Axis::X => (w, 1),
    };
    let lines = field.len() / len;
    let mut line = vec![0.0f64; len];
    let mut out = vec![0.0f32; field.len()];
    for l in 0..lines {
        // Map line number to the base offset of the axis run.
        let base = match axis {
            Axis::Z => l,
            Axis::Y => (l / w) * (h * w) + l % w,
            Axis::X => l * w,
        };
        for (i, v) in line.iter_mut().enumerate() {
            *v = field[base + i * stride] as f64;
        }
        for i in 0..len {
            let mut acc = 0.0f64;
            let mut norm = 0.0f64;
            for (k, &kw) in kernel.iter().enumerate() {
                let j = i as i64 + k as i64 - r as i64;
                if j < 0 || j >= len as i64 {
                    continue;
                }
                acc += kw * line[j as usize];
                norm += kw;
            }
            out[base + i * stride] = (acc / norm) as f32;
        }
    }
    *field = out;
}

/// Gaussian-smoothed random displacement field, one component per axis,
/// drawn from U(-1, 1) and scaled by `alpha` after smoothing.
fn elastic_fields(
    dims: (usize, usize, usize),
    sigma: f64,
    alpha: f64,
    rng: &mut ChaCha8Rng,
) -> [Vec<f32>; 3] {
    let n = dims.0 * dims.1 * dims.2;
    let mut fields = [vec![0.0f32; n], vec![0.0f32; n], vec![0.0f32; n]];
    for field in &mut fields {
        for v in field.iter_mut() {
            *v = rng.gen_range(-1.0f32..1.0);
        }
    }
    let radius = (2.0 * sigma).ceil().max(1.0) as usize;
    let kernel: Vec<f64> = (0..=2 * radius)
        .map(|k| {
            let t = k as f64 - radius as f64;
            (-0.5 * (t / sigma) * (t / sigma)).exp()
        })
        .collect();
    for field in &mut fields {
        for axis in [Axis::Z, Axis::Y, Axis::X] {
            blur_axis(field, dims, axis, &kernel);
        }
        for v in field.iter_mut() {
            *v = (*v as f64 * alpha) as f32;
        }
    }
    fields
}

/// Backward-warp image and mask through a displacement field defined on the
/// output grid: `out(p) = in(p + disp(p))`.
fn warp(
    img: &[f32],
    msk: &[u8],
    dims: (usize, usize, usize),
    disp: &[Vec<f32>; 3],
) -> (Vec<f32>, Vec<u8>) {
    let (d, h, w) = dims;
    let mut out_img = vec![0.0f32; img.len()];
    let mut out_msk = vec![0u8; msk.len()];
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let o = (z * h + y) * w + x;
                let sz = z as f64 + disp[0][o] as f64;
                let sy = y as f64 + disp[1][o] as f64;
                let sx = x as f64 + disp[2][o] as f64;
                out_img[o] = sample_trilinear(img, dims, sz, sy, sx);
                out_msk[o] = sample_nearest(msk, dims, sz, sy, sx);
            }
        }
    }
    (out_img, out_msk)
}

/// Monotone CDF mapping of `src` onto the value distribution of
/// `reference`: the rank-i source voxel takes the value at the matching
/// quantile of the sorted reference. Matching a volume to itself is exact.
fn hist_match(src: &[f32], reference: &[f32]) -> Vec<f32> {
    let n = src.len();
    let nr = reference.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by(|&a, &b| src[a].total_cmp(&src[b]).then(a.cmp(&b)));
    let mut ref_sorted: Vec<f32> = reference.to_vec();
    ref_sorted.sort_unstable_by(f32::total_cmp);
    let mut out = vec![0.0f32; n];
    for (rank, &pos) in order.iter().enumerate() {
        let q = if n == 1 {
            (nr - 1) / 2
        } else {
            ((rank as f64) * (nr as f64 - 1.0) / (n as f64 - 1.0)).round() as usize
        };
        out[pos] = ref_sorted[q];
    }
    out
}

/// Run the augmentation pipeline on one image/mask pair.
///
/// `reference` is the histogram-matching target, usually another training
/// image chosen by the caller. Image and mask must share geometry.
pub fn augment(
    image: &Volume3,
    mask: &Mask3,
    reference: &Volume3,
    cfg: &AugmentConfig,
    rng: &mut ChaCha8Rng,
) -> (Volume3, Mask3) {
    assert_eq!(image.dims(), mask.dims(), "augment expects a matched image/mask pair");
    let dims = image.dims();
    let spacing = image.spacing();
    let mut img: Vec<f32> = image.data().to_vec();
    let mut msk: Vec<u8> = mask.data().to_vec();

    // 1. left-right flip
    if rng.gen::<f64>() < cfg.flip_prob {
        let v = Volume3::new(dims, spacing, img).expect("flip preserves validity");
        let m = Mask3::new(dims, spacing, msk).expect("flip preserves validity");
        img = v.flipped(Axis::X).data().to_vec();
        msk = m.flipped(Axis::X).data().to_vec();
    }
    // 2. rotation about the depth axis
    if rng.gen::<f64>() < cfg.rotate_prob {
        let deg = rng.gen_range(-cfg.rotate_max_deg..=cfg.rotate_max_deg);
        let (ri, rm) = rotate_in_plane(&img, &msk, dims, deg);
        img = ri;
        msk = rm;
    }
    // 3. elastic deformation
    if rng.gen::<f64>() < cfg.elastic_prob {
        let fields = elastic_fields(dims, cfg.elastic_sigma_vox, cfg.elastic_alpha_vox, rng);
        let (wi, wm) = warp(&img, &msk, dims, &fields);
        img = wi;
        msk = wm;
    }
    // 4. intensity scaling, image only
    if rng.gen::<f64>() < cfg.intensity_prob {
        let a = rng.gen_range(cfg.intensity_lo..=cfg.intensity_hi);
        for v in img.iter_mut() {
            *v = (*v as f64 * a) as f32;
        }
    }
    // 5. histogram matching, image only
    if rng.gen::<f64>() < cfg.hist_match_prob {
        img = hist_match(&img, reference.data());
    }

    let image = Volume3::new(dims, spacing, img).expect("augmentation preserves finiteness");
    let mask = Mask3::new(dims, spacing, msk).expect("augmentation preserves binarity");
    (image, mask)
}
