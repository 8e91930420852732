//! Spacing-aware overlap and surface metrics.
//!
//! All surface metrics share one substrate: boundary voxel centers in mm
//! ([`extract_surface`]) and directed nearest-point distances
//! ([`surface_distances`]), which has an exact EDT fast path and a brute
//! pairwise oracle. Empty masks are refused by surface metrics and handled
//! by documented conventions in [`dice`] and [`evaluate`].

mod edt;
mod surface;

pub use surface::{extract_surface, surface_distances, DistanceMethod, SurfacePointSet};

/// Squared distance (in voxel units) from every voxel to the nearest seed —
/// the substrate for morphological dilation in the phantom generator.
pub(crate) fn squared_edt_voxels(dims: (usize, usize, usize), seed: &[bool]) -> Vec<f64> {
    edt::squared_edt_mm(dims, (1.0, 1.0, 1.0), seed)
}

use alloc::string::String;
use alloc::vec::Vec;

use crate::volume::Mask3;

// Required in pure no_std graphs; once std is linked anywhere (tests, std
// consumers) f64's inherent methods shadow the trait and this goes unused.
#[allow(unused_imports)]
use num_traits::Float;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("masks have different dims or spacing")]
    GeometryMismatch,
    #[error("surface metrics are undefined for an empty mask")]
    EmptyMask,
    #[error("tolerance must be positive")]
    NonPositiveTolerance,
}

/// Surface-Dice counting convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurfaceDiceMode {
    /// Standard NSD: agreeing points from both surfaces over both sizes.
    Symmetric,
    /// Fraction of the *first* mask's surface within tolerance of the second.
    OneSided,
}

/// HD95 pooling convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hd95Mode {
    /// max(P95(d(A→B)), P95(d(B→A))) — the default here.
    MaxOfDirected,
    /// P95 of the pooled directed distances.
    UnionPool,
}

/// All four metrics for one mask pair. Surface fields are `None` when a
/// mask was empty; `error` then carries the code instead of a silent number.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricsReport {
    pub dice: f64,
    pub surface_dice: Option<f64>,
    pub hd95_mm: Option<f64>,
    pub assd_mm: Option<f64>,
    pub tolerance_mm: f64,
    pub error: Option<String>,
}

/// 2|A∩B| / (|A|+|B|). Both empty → 1.0; one empty → 0.0.
pub fn dice(a: &Mask3, b: &Mask3) -> Result<f64, MetricsError> {
    if !a.same_geometry(b) {
        return Err(MetricsError::GeometryMismatch);
    }
    let mut inter = 0usize;
    let mut na = 0usize;
    let mut nb = 0usize;
    for (&va, &vb) in a.data().iter().zip(b.data()) {
        na += va as usize;
        nb += vb as usize;
        inter += (va & vb) as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (na + nb) as f64)
}

/// Percentile by linear interpolation between order statistics of a sorted
/// slice: rank = q/100·(n−1), value = v[⌊rank⌋] + frac·(v[⌊rank⌋+1] − v[⌊rank⌋]).
pub fn percentile_linear(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty slice");
    assert!((0.0..=100.0).contains(&q));
    let rank = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let frac = rank - lo as f64;
    if frac == 0.0 || lo + 1 == sorted.len() {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(|a, b| a.partial_cmp(b).expect("distances are finite"));
    v
}

fn distances(
    a: &Mask3,
    b: &Mask3,
    method: DistanceMethod,
) -> Result<(Vec<f64>, Vec<f64>), MetricsError> {
    if !a.same_geometry(b) {
        return Err(MetricsError::GeometryMismatch);
    }
    let sa = extract_surface(a)?;
    let sb = extract_surface(b)?;
    surface_distances(&sa, &sb, method)
}

fn hd95_of(d_ab: &[f64], d_ba: &[f64], mode: Hd95Mode) -> f64 {
    match mode {
        Hd95Mode::MaxOfDirected => {
            let p_ab = percentile_linear(&sorted(d_ab.to_vec()), 95.0);
            let p_ba = percentile_linear(&sorted(d_ba.to_vec()), 95.0);
            p_ab.max(p_ba)
        }
        Hd95Mode::UnionPool => {
            let mut pool = d_ab.to_vec();
            pool.extend_from_slice(d_ba);
            percentile_linear(&sorted(pool), 95.0)
        }
    }
}

fn assd_of(d_ab: &[f64], d_ba: &[f64]) -> f64 {
    // per-array sums first: addition is commutative, so swapping the
    // arguments cannot change the result by even an ulp
    let sa: f64 = d_ab.iter().sum();
    let sb: f64 = d_ba.iter().sum();
    (sa + sb) / (d_ab.len() + d_ba.len()) as f64
}

fn surface_dice_of(d_ab: &[f64], d_ba: &[f64], tol: f64, mode: SurfaceDiceMode) -> f64 {
    let hits = |d: &[f64]| d.iter().filter(|&&v| v <= tol).count();
    match mode {
        SurfaceDiceMode::OneSided => hits(d_ab) as f64 / d_ab.len() as f64,
        SurfaceDiceMode::Symmetric => {
            (hits(d_ab) + hits(d_ba)) as f64 / (d_ab.len() + d_ba.len()) as f64
        }
    }
}

/// 95th-percentile Hausdorff distance in mm (max of directed percentiles).
pub fn hd95(a: &Mask3, b: &Mask3) -> Result<f64, MetricsError> {
    hd95_with(a, b, Hd95Mode::MaxOfDirected, DistanceMethod::Edt)
}

pub fn hd95_with(
    a: &Mask3,
    b: &Mask3,
    mode: Hd95Mode,
    method: DistanceMethod,
) -> Result<f64, MetricsError> {
    let (d_ab, d_ba) = distances(a, b, method)?;
    Ok(hd95_of(&d_ab, &d_ba, mode))
}

/// Average symmetric surface distance in mm.
pub fn assd(a: &Mask3, b: &Mask3) -> Result<f64, MetricsError> {
    let (d_ab, d_ba) = distances(a, b, DistanceMethod::Edt)?;
    Ok(assd_of(&d_ab, &d_ba))
}

/// Fraction of surface points within `tol_mm` of the other surface.
pub fn surface_dice(
    a: &Mask3,
    b: &Mask3,
    tol_mm: f64,
    mode: SurfaceDiceMode,
) -> Result<f64, MetricsError> {
    if !(tol_mm > 0.0) {
        return Err(MetricsError::NonPositiveTolerance);
    }
    let (d_ab, d_ba) = distances(a, b, DistanceMethod::Edt)?;
    Ok(surface_dice_of(&d_ab, &d_ba, tol_mm, mode))
}

/// Exact Hausdorff distance (max of directed maxima); hd95 never exceeds it.
pub fn hausdorff(a: &Mask3, b: &Mask3) -> Result<f64, MetricsError> {
    let (d_ab, d_ba) = distances(a, b, DistanceMethod::Edt)?;
    let m = d_ab.iter().chain(&d_ba).fold(0.0f64, |acc, &v| acc.max(v));
    Ok(m)
}

/// Full report for one prediction/reference pair. Geometry mismatch is a
/// hard error; an empty mask downgrades the surface metrics to an error
/// code inside the report so batch evaluation stays total.
pub fn evaluate(pred: &Mask3, reference: &Mask3, tol_mm: f64) -> Result<MetricsReport, MetricsError> {
    if !pred.same_geometry(reference) {
        return Err(MetricsError::GeometryMismatch);
    }
    if !(tol_mm > 0.0) {
        return Err(MetricsError::NonPositiveTolerance);
    }
    let dice_v = dice(pred, reference)?;
    match distances(pred, reference, DistanceMethod::Edt) {
        Ok((d_ab, d_ba)) => Ok(MetricsReport {
            dice: dice_v,
            surface_dice: Some(surface_dice_of(&d_ab, &d_ba, tol_mm, SurfaceDiceMode::Symmetric)),
            hd95_mm: Some(hd95_of(&d_ab, &d_ba, Hd95Mode::MaxOfDirected)),
            assd_mm: Some(assd_of(&d_ab, &d_ba)),
            tolerance_mm: tol_mm,
            error: None,
        }),
        Err(MetricsError::EmptyMask) => Ok(MetricsReport {
            dice: dice_v,
            surface_dice: None,
            hd95_mm: None,
            assd_mm: None,
            tolerance_mm: tol_mm,
            error: Some(String::from("EmptyMask")),
        }),
        Err(e) => Err(e),
    }
}
