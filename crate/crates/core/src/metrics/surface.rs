//! Surface extraction and directed surface-to-surface distances.

use alloc::vec::Vec;

use super::edt::squared_edt_mm;
use super::MetricsError;
use crate::volume::Mask3;

// Required in pure no_std graphs; once std is linked anywhere (tests, std
// consumers) f64's inherent methods shadow the trait and this goes unused.
#[allow(unused_imports)]
use num_traits::Float;

/// How to compute nearest-surface distances.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistanceMethod {
    /// Exact separable squared-EDT over the voxel grid (fast path).
    Edt,
    /// O(|A|·|B|) pairwise scan (verification oracle).
    Brute,
}

/// Voxel centers on a mask's six-connected boundary, in both index and
/// millimetre coordinates.
#[derive(Debug, Clone)]
pub struct SurfacePointSet {
    dims: (usize, usize, usize),
    spacing: (f64, f64, f64),
    voxels: Vec<(usize, usize, usize)>,
}

impl SurfacePointSet {
    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn spacing(&self) -> (f64, f64, f64) {
        self.spacing
    }

    pub fn voxels(&self) -> &[(usize, usize, usize)] {
        &self.voxels
    }

    /// Point coordinates in mm (`index * spacing`, (z, y, x) order).
    pub fn points_mm(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.voxels.iter().map(move |&(z, y, x)| {
            (z as f64 * self.spacing.0, y as f64 * self.spacing.1, x as f64 * self.spacing.2)
        })
    }
}

/// Foreground voxels with at least one six-connected background or
/// out-of-volume neighbor.
pub fn extract_surface(m: &Mask3) -> Result<SurfacePointSet, MetricsError> {
    let (d, h, w) = m.dims();
    let mut voxels = Vec::new();
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                if m.voxel(z, y, x) == 0 {
                    continue;
                }
                let exposed = (z == 0 || m.voxel(z - 1, y, x) == 0)
                    || (z + 1 == d || m.voxel(z + 1, y, x) == 0)
                    || (y == 0 || m.voxel(z, y - 1, x) == 0)
                    || (y + 1 == h || m.voxel(z, y + 1, x) == 0)
                    || (x == 0 || m.voxel(z, y, x - 1) == 0)
                    || (x + 1 == w || m.voxel(z, y, x + 1) == 0);
                if exposed {
                    voxels.push((z, y, x));
                }
            }
        }
    }
    if voxels.is_empty() {
        return Err(MetricsError::EmptyMask);
    }
    Ok(SurfacePointSet { dims: m.dims(), spacing: m.spacing(), voxels })
}

fn directed_edt(a: &SurfacePointSet, b: &SurfacePointSet) -> Vec<f64> {
    let (d, h, w) = a.dims;
    let mut seed = alloc::vec![false; d * h * w];
    for &(z, y, x) in &b.voxels {
        seed[(z * h + y) * w + x] = true;
    }
    let d2 = squared_edt_mm(a.dims, a.spacing, &seed);
    a.voxels.iter().map(|&(z, y, x)| d2[(z * h + y) * w + x].sqrt()).collect()
}

fn directed_brute(a: &SurfacePointSet, b: &SurfacePointSet) -> Vec<f64> {
    let (sz, sy, sx) = a.spacing;
    a.voxels
        .iter()
        .map(|&(az, ay, ax)| {
            let mut best = f64::INFINITY;
            for &(bz, by, bx) in &b.voxels {
                let dx = (ax as f64 - bx as f64) * sx;
                let dy = (ay as f64 - by as f64) * sy;
                let dz = (az as f64 - bz as f64) * sz;
                // same accumulation order as the separable transform
                let d2 = dx * dx + dy * dy + dz * dz;
                if d2 < best {
                    best = d2;
                }
            }
            best.sqrt()
        })
        .collect()
}

/// Directed nearest-point distances d(A→B) and d(B→A), in mm.
pub fn surface_distances(
    a: &SurfacePointSet,
    b: &SurfacePointSet,
    method: DistanceMethod,
) -> Result<(Vec<f64>, Vec<f64>), MetricsError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricsError::EmptyMask);
    }
    if a.dims != b.dims || a.spacing != b.spacing {
        return Err(MetricsError::GeometryMismatch);
    }
    Ok(match method {
        DistanceMethod::Edt => (directed_edt(a, b), directed_edt(b, a)),
        DistanceMethod::Brute => (directed_brute(a, b), directed_brute(b, a)),
    })
}
