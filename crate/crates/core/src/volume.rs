//! Volumes, masks, and ROI geometry.
//!
//! A [`Volume3`] is a dense 3D scalar image with anisotropic voxel spacing
//! in millimetres; a [`Mask3`] is a binary label volume sharing that
//! geometry. Data is stored C-order with x fastest:
//! `index = z*H*W + y*W + x`.
//!
//! Both types validate their invariants at construction and are immutable
//! afterwards, so they can be shared freely.

use alloc::vec;
use alloc::vec::Vec;

// Required in pure no_std graphs; once std is linked anywhere (tests, std
// consumers) f64's inherent methods shadow the trait and this goes unused.
#[allow(unused_imports)]
use num_traits::Float;

/// Errors from volume construction and geometry operations.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum VolumeError {
    #[error("data length {got} does not match dims product {want}")]
    SizeMismatch { got: usize, want: usize },
    #[error("spacing components must be strictly positive and finite")]
    BadSpacing,
    #[error("dims components must be positive")]
    BadDims,
    #[error("volume contains non-finite data")]
    NonFiniteData,
    #[error("mask labels must be 0 or 1")]
    BadLabel,
    #[error("mask has no foreground voxels")]
    EmptyMask,
    #[error("ROI size components must be >= 1")]
    BadRoi,
}

/// Voxel axis, in (z, y, x) storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Z,
    Y,
    X,
}

/// Dense 3D scalar image with spacing in mm per voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3 {
    dims: (usize, usize, usize),
    spacing: (f64, f64, f64),
    data: Vec<f32>,
}

/// Binary label volume sharing a [`Volume3`]'s geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask3 {
    dims: (usize, usize, usize),
    spacing: (f64, f64, f64),
    data: Vec<u8>,
}

/// Fixed-size crop window specification.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RoiSpec {
    /// Output size in voxels, (d, h, w).
    pub size: (usize, usize, usize),
    /// Fill value for voxels outside the source volume.
    pub pad_value: f32,
}

fn check_geometry(
    dims: (usize, usize, usize),
    spacing: (f64, f64, f64),
    len: usize,
) -> Result<(), VolumeError> {
    if dims.0 == 0 || dims.1 == 0 || dims.2 == 0 {
        return Err(VolumeError::BadDims);
    }
    for s in [spacing.0, spacing.1, spacing.2] {
        if !(s.is_finite() && s > 0.0) {
            return Err(VolumeError::BadSpacing);
        }
    }
    let want = dims.0 * dims.1 * dims.2;
    if len != want {
        return Err(VolumeError::SizeMismatch { got: len, want });
    }
    Ok(())
}

impl Volume3 {
    pub fn new(
        dims: (usize, usize, usize),
        spacing: (f64, f64, f64),
        data: Vec<f32>,
    ) -> Result<Self, VolumeError> {
        check_geometry(dims, spacing, data.len())?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(VolumeError::NonFiniteData);
        }
        Ok(Self { dims, spacing, data })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn spacing(&self) -> (f64, f64, f64) {
        self.spacing
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.dims.1 + y) * self.dims.2 + x
    }

    #[inline]
    pub fn voxel(&self, z: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(z, y, x)]
    }

    /// Reverse one axis. Used by augmentation and flip-equivariance tests.
    pub fn flipped(&self, axis: Axis) -> Volume3 {
        let (d, h, w) = self.dims;
        let mut out = vec![0.0f32; self.data.len()];
        for z in 0..d {
            for y in 0..h {
                for x in 0..w {
                    let (sz, sy, sx) = match axis {
                        Axis::Z => (d - 1 - z, y, x),
                        Axis::Y => (z, h - 1 - y, x),
                        Axis::X => (z, y, w - 1 - x),
                    };
                    out[self.index(z, y, x)] = self.voxel(sz, sy, sx);
                }
            }
        }
        Volume3 { dims: self.dims, spacing: self.spacing, data: out }
    }
}

impl Mask3 {
    pub fn new(
        dims: (usize, usize, usize),
        spacing: (f64, f64, f64),
        data: Vec<u8>,
    ) -> Result<Self, VolumeError> {
        check_geometry(dims, spacing, data.len())?;
        if data.iter().any(|&v| v > 1) {
            return Err(VolumeError::BadLabel);
        }
        Ok(Self { dims, spacing, data })
    }

    /// All-background mask with the given geometry.
    pub fn zeros(dims: (usize, usize, usize), spacing: (f64, f64, f64)) -> Result<Self, VolumeError> {
        Self::new(dims, spacing, vec![0u8; dims.0 * dims.1 * dims.2])
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn spacing(&self) -> (f64, f64, f64) {
        self.spacing
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.dims.1 + y) * self.dims.2 + x
    }

    #[inline]
    pub fn voxel(&self, z: usize, y: usize, x: usize) -> u8 {
        self.data[self.index(z, y, x)]
    }

    pub fn foreground_count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn same_geometry(&self, other: &Mask3) -> bool {
        self.dims == other.dims && self.spacing == other.spacing
    }

    pub fn flipped(&self, axis: Axis) -> Mask3 {
        let (d, h, w) = self.dims;
        let mut out = vec![0u8; self.data.len()];
        for z in 0..d {
            for y in 0..h {
                for x in 0..w {
                    let (sz, sy, sx) = match axis {
                        Axis::Z => (d - 1 - z, y, x),
                        Axis::Y => (z, h - 1 - y, x),
                        Axis::X => (z, y, w - 1 - x),
                    };
                    out[self.index(z, y, x)] = self.voxel(sz, sy, sx);
                }
            }
        }
        Mask3 { dims: self.dims, spacing: self.spacing, data: out }
    }
}

impl RoiSpec {
    pub fn new(size: (usize, usize, usize), pad_value: f32) -> Result<Self, VolumeError> {
        if size.0 == 0 || size.1 == 0 || size.2 == 0 {
            return Err(VolumeError::BadRoi);
        }
        Ok(Self { size, pad_value })
    }
}

/// Z-score normalize to mean 0, population standard deviation 1.
///
/// Constant volumes (population std below 1e-8) map to all zeros instead
/// of dividing by a vanishing denominator.
pub fn zscore_normalize(v: &Volume3) -> Volume3 {
    let n = v.data.len() as f64;
    let mean = v.data.iter().map(|&x| x as f64).sum::<f64>() / n;
    let var = v.data.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    let data = if std < 1e-8 {
        vec![0.0f32; v.data.len()]
    } else {
        v.data.iter().map(|&x| ((x as f64 - mean) / std) as f32).collect()
    };
    Volume3 { dims: v.dims, spacing: v.spacing, data }
}

/// Unweighted mean of foreground voxel indices, as fractional (z, y, x).
pub fn center_of_mass(m: &Mask3) -> Result<(f64, f64, f64), VolumeError> {
    let (d, h, w) = m.dims;
    let mut sum = [0.0f64; 3];
    let mut count = 0usize;
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                if m.voxel(z, y, x) == 1 {
                    sum[0] += z as f64;
                    sum[1] += y as f64;
                    sum[2] += x as f64;
                    count += 1;
                }
            }
        }
    }
    if count == 0 {
        return Err(VolumeError::EmptyMask);
    }
    let n = count as f64;
    Ok((sum[0] / n, sum[1] / n, sum[2] / n))
}

/// Start indices (possibly negative) of the crop window for a center.
///
/// Per axis: `start = round_half_up(center) - floor(size / 2)`. The window
/// is never repositioned; out-of-volume voxels are padded by the caller.
pub fn crop_window(center: (f64, f64, f64), size: (usize, usize, usize)) -> [isize; 3] {
    let start = |c: f64, s: usize| -> isize {
        let rounded = (c + 0.5).floor() as isize;
        rounded - (s / 2) as isize
    };
    [start(center.0, size.0), start(center.1, size.1), start(center.2, size.2)]
}

/// Crop a fixed-size window centered (by [`crop_window`]) on `center`.
///
/// Voxels outside the source take `roi.pad_value`; spacing is preserved.
pub fn crop_roi(v: &Volume3, center: (f64, f64, f64), roi: &RoiSpec) -> Volume3 {
    let start = crop_window(center, roi.size);
    let (od, oh, ow) = roi.size;
    let (d, h, w) = v.dims;
    let mut data = vec![roi.pad_value; od * oh * ow];
    for z in 0..od {
        let sz = start[0] + z as isize;
        if sz < 0 || sz >= d as isize {
            continue;
        }
        for y in 0..oh {
            let sy = start[1] + y as isize;
            if sy < 0 || sy >= h as isize {
                continue;
            }
            for x in 0..ow {
                let sx = start[2] + x as isize;
                if sx < 0 || sx >= w as isize {
                    continue;
                }
                data[(z * oh + y) * ow + x] = v.voxel(sz as usize, sy as usize, sx as usize);
            }
        }
    }
    Volume3 { dims: roi.size, spacing: v.spacing, data }
}

/// Crop a mask with the same window arithmetic as [`crop_roi`], padding
/// with background so image and label crops align voxel-for-voxel.
pub fn crop_roi_mask(m: &Mask3, center: (f64, f64, f64), size: (usize, usize, usize)) -> Mask3 {
    let start = crop_window(center, size);
    let (od, oh, ow) = size;
    let (d, h, w) = m.dims;
    let mut data = vec![0u8; od * oh * ow];
    for z in 0..od {
        let sz = start[0] + z as isize;
        if sz < 0 || sz >= d as isize {
            continue;
        }
        for y in 0..oh {
            let sy = start[1] + y as isize;
            if sy < 0 || sy >= h as isize {
                continue;
            }
            for x in 0..ow {
                let sx = start[2] + x as isize;
                if sx < 0 || sx >= w as isize {
                    continue;
                }
                data[(z * oh + y) * ow + x] = m.voxel(sz as usize, sy as usize, sx as usize);
            }
        }
    }
    Mask3 { dims: size, spacing: m.spacing, data }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube(n: usize, vals: Vec<f32>) -> Volume3 {
        Volume3::new((n, n, n), (1.0, 1.0, 1.0), vals).unwrap()
    }

    #[test]
    fn construction_validates_invariants() {
        assert_eq!(
            Volume3::new((2, 2, 2), (1.0, 1.0, 1.0), vec![0.0; 3]).unwrap_err(),
            VolumeError::SizeMismatch { got: 3, want: 8 }
        );
        assert_eq!(
            Volume3::new((1, 1, 1), (0.0, 1.0, 1.0), vec![0.0]).unwrap_err(),
            VolumeError::BadSpacing
        );
        assert_eq!(
            Volume3::new((1, 1, 1), (1.0, 1.0, 1.0), vec![f32::NAN]).unwrap_err(),
            VolumeError::NonFiniteData
        );
        assert_eq!(
            Mask3::new((1, 1, 1), (1.0, 1.0, 1.0), vec![2]).unwrap_err(),
            VolumeError::BadLabel
        );
    }

    #[test]
    fn zscore_constant_volume_is_zeroed() {
        let v = cube(2, vec![7.0; 8]);
        let z = zscore_normalize(&v);
        assert!(z.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn zscore_two_level_volume() {
        // values {0, 2} equally populated: mean 1, population std 1.
        let v = cube(2, vec![0.0, 2.0, 0.0, 2.0, 0.0, 2.0, 0.0, 2.0]);
        let z = zscore_normalize(&v);
        for (&raw, &out) in v.data().iter().zip(z.data()) {
            let want = if raw == 0.0 { -1.0 } else { 1.0 };
            assert!((out - want).abs() < 1e-6);
        }
    }

    #[test]
    fn zscore_is_idempotent_and_standardizes() {
        let vals: Vec<f32> = (0..27).map(|i| (i as f32) * 0.37 - 2.0).collect();
        let v = cube(3, vals);
        let z1 = zscore_normalize(&v);
        let n = z1.numel() as f64;
        let mean = z1.data().iter().map(|&x| x as f64).sum::<f64>() / n;
        let var = z1.data().iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-5);
        assert!((var.sqrt() - 1.0).abs() < 1e-5);
        let z2 = zscore_normalize(&z1);
        for (a, b) in z1.data().iter().zip(z2.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn center_of_mass_examples() {
        let mut data = vec![0u8; 4 * 4 * 4];
        data[(1 * 4 + 2) * 4 + 3] = 1;
        let m = Mask3::new((4, 4, 4), (1.0, 1.0, 1.0), data).unwrap();
        assert_eq!(center_of_mass(&m).unwrap(), (1.0, 2.0, 3.0));

        let full = Mask3::new((3, 3, 3), (1.0, 1.0, 1.0), vec![1; 27]).unwrap();
        assert_eq!(center_of_mass(&full).unwrap(), (1.0, 1.0, 1.0));

        let mut two = vec![0u8; 27];
        two[0] = 1; // (0,0,0)
        two[2] = 1; // (0,0,2)
        let m2 = Mask3::new((3, 3, 3), (1.0, 1.0, 1.0), two).unwrap();
        assert_eq!(center_of_mass(&m2).unwrap(), (0.0, 0.0, 1.0));

        let empty = Mask3::zeros((2, 2, 2), (1.0, 1.0, 1.0)).unwrap();
        assert_eq!(center_of_mass(&empty).unwrap_err(), VolumeError::EmptyMask);
    }

    #[test]
    fn center_of_mass_flip_equivariance() {
        let mut data = vec![0u8; 3 * 4 * 5];
        for i in [0usize, 7, 13, 22, 41] {
            data[i] = 1;
        }
        let m = Mask3::new((3, 4, 5), (1.0, 1.0, 1.0), data).unwrap();
        let c = center_of_mass(&m).unwrap();
        let cx = center_of_mass(&m.flipped(Axis::X)).unwrap();
        assert!((cx.2 - (5.0 - 1.0 - c.2)).abs() < 1e-12);
        assert_eq!((cx.0, cx.1), (c.0, c.1));
        let cz = center_of_mass(&m.flipped(Axis::Z)).unwrap();
        assert!((cz.0 - (3.0 - 1.0 - c.0)).abs() < 1e-12);
    }

    #[test]
    fn crop_identity_when_roi_matches_dims() {
        let vals: Vec<f32> = (0..64).map(|i| i as f32).collect();
        let v = cube(4, vals);
        let roi = RoiSpec::new((4, 4, 4), 0.0).unwrap();
        let c = crop_roi(&v, (1.5, 1.5, 1.5), &roi);
        assert_eq!(c, v);
    }

    #[test]
    fn crop_rounding_rule_matches_index_oracle() {
        // 4^3 volume, roi 2^3, center (1.0,1.0,1.0):
        // round_half_up(1.0)=1, start = 1 - 1 = 0, so the [0..2)^3 block.
        let vals: Vec<f32> = (0..64).map(|i| i as f32).collect();
        let v = cube(4, vals);
        let roi = RoiSpec::new((2, 2, 2), -1.0).unwrap();
        let c = crop_roi(&v, (1.0, 1.0, 1.0), &roi);
        for z in 0..2 {
            for y in 0..2 {
                for x in 0..2 {
                    assert_eq!(c.voxel(z, y, x), v.voxel(z, y, x));
                }
            }
        }
    }

    #[test]
    fn crop_pads_outside_voxels() {
        let v = cube(4, vec![1.0; 64]);
        let roi = RoiSpec::new((6, 6, 6), 0.0).unwrap();
        let c = crop_roi(&v, (1.5, 1.5, 1.5), &roi);
        assert_eq!(c.numel(), 216);
        let total: f32 = c.data().iter().sum();
        assert_eq!(total, 64.0);
    }

    #[test]
    fn crop_mask_uses_identical_window() {
        let mut mdata = vec![0u8; 64];
        mdata[21] = 1;
        let m = Mask3::new((4, 4, 4), (1.0, 1.0, 1.0), mdata).unwrap();
        let vals: Vec<f32> = (0..64).map(|i| i as f32).collect();
        let v = cube(4, vals);
        let roi = RoiSpec::new((3, 3, 3), 0.0).unwrap();
        // windows start at (0, 0, -1): padding on x, foreground still inside
        let center = (1.2, 0.7, 0.4);
        let cv = crop_roi(&v, center, &roi);
        let cm = crop_roi_mask(&m, center, roi.size);
        // Foreground stays aligned with the same image voxel after cropping.
        for z in 0..3 {
            for y in 0..3 {
                for x in 0..3 {
                    if cm.voxel(z, y, x) == 1 {
                        assert_eq!(cv.voxel(z, y, x), 21.0);
                    }
                }
            }
        }
        assert_eq!(cm.foreground_count(), 1);
    }

    #[test]
    fn crop_preserves_contained_foreground_count() {
        let mut mdata = vec![0u8; 64];
        for i in [21, 22, 25, 37] {
            mdata[i] = 1;
        }
        let m = Mask3::new((4, 4, 4), (1.0, 1.0, 1.0), mdata).unwrap();
        let c = crop_roi_mask(&m, center_of_mass(&m).unwrap(), (4, 4, 4));
        assert_eq!(c.foreground_count(), m.foreground_count());
    }
}
