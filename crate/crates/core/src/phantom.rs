//! Seeded ellipsoid phantoms: bright cavity, thin surrounding shell.
//!
//! Each case is a randomly posed ellipsoid "blood pool" plus a wall formed
//! by true morphological dilation — a voxel belongs to the wall iff it is
//! outside the cavity and its Euclidean distance (in voxels) to the cavity
//! is at most the sampled thickness. That makes the enclosure invariant
//! hold by construction and keeps the wall thin and low-contrast, which is
//! the regime the transfer experiment needs. An optional cylindrical notch
//! carves an opening through the shell, mimicking a vessel ostium.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

// Required in pure no_std graphs; once std is linked anywhere (tests, std
// consumers) f64's inherent methods shadow the trait and this goes unused.
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::metrics::squared_edt_voxels;
use crate::volume::{Mask3, Volume3};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PhantomError {
    #[error("invalid phantom config: {0}")]
    InvalidConfig(String),
}

/// Geometry, intensity, and dataset-size settings for phantom generation.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PhantomConfig {
    pub dims: (usize, usize, usize),
    pub spacing_mm: (f64, f64, f64),
    /// Cavity semi-axis range as fractions of each dim.
    pub radii_frac: (f64, f64),
    /// Center jitter range as a fraction of each dim (±).
    pub jitter_frac: f64,
    /// Wall thickness range in voxels.
    pub thickness_vox: (f64, f64),
    pub mu_background: f32,
    pub mu_wall: f32,
    pub mu_cavity: f32,
    pub noise_sigma: f64,
    /// Probability of carving one cylindrical notch through the wall.
    pub notch_prob: f64,
    /// Notch cylinder radius range in voxels.
    pub notch_radius_vox: (f64, f64),
    /// Cases per split: (train, val, test).
    pub counts: (usize, usize, usize),
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            dims: (32, 32, 32),
            spacing_mm: (1.0, 1.0, 1.0),
            radii_frac: (0.2, 0.35),
            jitter_frac: 0.05,
            thickness_vox: (1.0, 2.0),
            mu_background: 0.0,
            mu_wall: 0.35,
            mu_cavity: 1.0,
            noise_sigma: 0.15,
            notch_prob: 0.5,
            notch_radius_vox: (1.5, 3.0),
            counts: (60, 20, 20),
            seed: 0,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<(), PhantomError> {
        let (lo, hi) = self.radii_frac;
        if !(0.0 < lo && lo <= hi && hi < 0.5) {
            return Err(PhantomError::InvalidConfig(format!(
                "radii fractions ({lo}, {hi}) must satisfy 0 < lo <= hi < 0.5"
            )));
        }
        if !(self.jitter_frac >= 0.0) {
            return Err(PhantomError::InvalidConfig("jitter must be >= 0".into()));
        }
        let (t_lo, t_hi) = self.thickness_vox;
        if !(0.0 < t_lo && t_lo <= t_hi) {
            return Err(PhantomError::InvalidConfig("thickness range must be positive".into()));
        }
        if !(self.mu_background < self.mu_wall && self.mu_wall < self.mu_cavity) {
            return Err(PhantomError::InvalidConfig(
                "intensity means must be ordered background < wall < cavity".into(),
            ));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(PhantomError::InvalidConfig("noise sigma must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.notch_prob) {
            return Err(PhantomError::InvalidConfig("notch probability must be in [0,1]".into()));
        }
        // the wall must fit inside the volume at the worst-case pose
        for (name, dim) in
            [("z", self.dims.0), ("y", self.dims.1), ("x", self.dims.2)]
        {
            if dim == 0 {
                return Err(PhantomError::InvalidConfig("dims must be positive".into()));
            }
            let d = dim as f64;
            let reach = d / 2.0 + self.jitter_frac * d + hi * d + t_hi;
            if reach > d - 1.0 {
                return Err(PhantomError::InvalidConfig(format!(
                    "wall can leave the volume along {name}: reach {reach:.1} > {:.1}",
                    d - 1.0
                )));
            }
        }
        Ok(())
    }
}

/// One generated case: image plus both ground-truth masks.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomCase {
    pub image: Volume3,
    pub cavity: Mask3,
    pub wall: Mask3,
}

fn unit_direction(rng: &mut ChaCha8Rng) -> (f64, f64, f64) {
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    loop {
        let v = (std_normal.sample(rng), std_normal.sample(rng), std_normal.sample(rng));
        let n = (v.0 * v.0 + v.1 * v.1 + v.2 * v.2).sqrt();
        if n > 1e-6 {
            return (v.0 / n, v.1 / n, v.2 / n);
        }
    }
}

/// Generate one phantom. Draws from `rng` in a fixed order (radii, jitter,
/// thickness, notch, noise), so a given rng state maps to exactly one case.
pub fn generate_case(
    cfg: &PhantomConfig,
    rng: &mut ChaCha8Rng,
) -> Result<PhantomCase, PhantomError> {
    cfg.validate()?;
    let (d, h, w) = cfg.dims;
    let n = d * h * w;

    let frac = |rng: &mut ChaCha8Rng| rng.gen_range(cfg.radii_frac.0..=cfg.radii_frac.1);
    let radii = (
        frac(rng) * d as f64,
        frac(rng) * h as f64,
        frac(rng) * w as f64,
    );
    let jitter = |rng: &mut ChaCha8Rng, dim: usize| {
        let j = cfg.jitter_frac * dim as f64;
        dim as f64 / 2.0 + if j > 0.0 { rng.gen_range(-j..=j) } else { 0.0 }
    };
    let center = (jitter(rng, d), jitter(rng, h), jitter(rng, w));
    let thickness = rng.gen_range(cfg.thickness_vox.0..=cfg.thickness_vox.1);

    // cavity: ellipsoid interior in index space
    let mut cavity = vec![0u8; n];
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let fz = (z as f64 - center.0) / radii.0;
                let fy = (y as f64 - center.1) / radii.1;
                let fx = (x as f64 - center.2) / radii.2;
                if fz * fz + fy * fy + fx * fx <= 1.0 {
                    cavity[(z * h + y) * w + x] = 1;
                }
            }
        }
    }

    // wall: voxels within `thickness` voxels of the cavity, excluding it
    let seeds: Vec<bool> = cavity.iter().map(|&v| v == 1).collect();
    let d2 = squared_edt_voxels(cfg.dims, &seeds);
    let t2 = thickness * thickness;
    let mut wall: Vec<u8> = cavity
        .iter()
        .zip(&d2)
        .map(|(&c, &dist2)| u8::from(c == 0 && dist2 <= t2))
        .collect();

    if rng.gen_bool(cfg.notch_prob) {
        let dir = unit_direction(rng);
        let radius = rng.gen_range(cfg.notch_radius_vox.0..=cfg.notch_radius_vox.1);
        let r2 = radius * radius;
        for z in 0..d {
            for y in 0..h {
                for x in 0..w {
                    let idx = (z * h + y) * w + x;
                    if wall[idx] == 0 {
                        continue;
                    }
                    let v = (z as f64 - center.0, y as f64 - center.1, x as f64 - center.2);
                    let along = v.0 * dir.0 + v.1 * dir.1 + v.2 * dir.2;
                    if along < 0.0 {
                        continue; // half-cylinder: carve only the exit side
                    }
                    let p = (v.0 - along * dir.0, v.1 - along * dir.1, v.2 - along * dir.2);
                    if p.0 * p.0 + p.1 * p.1 + p.2 * p.2 <= r2 {
                        wall[idx] = 0;
                    }
                }
            }
        }
    }

    let mut image = vec![0.0f32; n];
    for i in 0..n {
        image[i] = if cavity[i] == 1 {
            cfg.mu_cavity
        } else if wall[i] == 1 {
            cfg.mu_wall
        } else {
            cfg.mu_background
        };
    }
    if cfg.noise_sigma > 0.0 {
        let noise = Normal::new(0.0, cfg.noise_sigma).expect("valid sigma");
        for v in &mut image {
            *v += noise.sample(rng) as f32;
        }
    }

    let build = |data| Mask3::new(cfg.dims, cfg.spacing_mm, data).expect("mask geometry");
    Ok(PhantomCase {
        image: Volume3::new(cfg.dims, cfg.spacing_mm, image).expect("image geometry"),
        cavity: build(cavity),
        wall: build(wall),
    })
}
