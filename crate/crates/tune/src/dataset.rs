//! On-disk phantom datasets.
//!
//! Layout: `<root>/manifest.json` plus one directory per case holding
//! `image.{json,raw}`, `cavity.{json,raw}`, `wall.{json,raw}` in MVOL
//! format. The manifest records the generator seed, the per-split case ids
//! (disjoint by construction), and the phantom configuration, so the whole
//! tree is regenerable from the manifest alone.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use c2w_core::phantom::{generate_case, PhantomConfig, PhantomError};
use c2w_core::{Mask3, Volume3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mvol::{self, MvolError};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid dataset config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Phantom(#[from] PhantomError),
    #[error(transparent)]
    Mvol(#[from] MvolError),
    #[error("malformed manifest: {0}")]
    MalformedManifest(String),
    #[error("io failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl DatasetError {
    fn io(path: &Path, source: io::Error) -> Self {
        DatasetError::IoFailure { path: path.to_path_buf(), source }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitIds {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub splits: SplitIds,
    pub phantom: PhantomJson,
}

/// Phantom configuration as stored in the manifest. Kept as a plain mirror
/// of the in-memory struct so the manifest stays self-describing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhantomJson {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub radii_frac: [f64; 2],
    pub jitter_frac: f64,
    pub thickness_vox: [f64; 2],
    pub mu_background: f32,
    pub mu_wall: f32,
    pub mu_cavity: f32,
    pub noise_sigma: f64,
    pub notch_prob: f64,
    pub notch_radius_vox: [f64; 2],
    pub counts: [usize; 3],
}

impl From<&PhantomConfig> for PhantomJson {
    fn from(c: &PhantomConfig) -> Self {
        Self {
            dims: [c.dims.0, c.dims.1, c.dims.2],
            spacing_mm: [c.spacing_mm.0, c.spacing_mm.1, c.spacing_mm.2],
            radii_frac: [c.radii_frac.0, c.radii_frac.1],
            jitter_frac: c.jitter_frac,
            thickness_vox: [c.thickness_vox.0, c.thickness_vox.1],
            mu_background: c.mu_background,
            mu_wall: c.mu_wall,
            mu_cavity: c.mu_cavity,
            noise_sigma: c.noise_sigma,
            notch_prob: c.notch_prob,
            notch_radius_vox: [c.notch_radius_vox.0, c.notch_radius_vox.1],
            counts: [c.counts.0, c.counts.1, c.counts.2],
        }
    }
}

/// Generate every case of `cfg` under `root` and write the manifest.
///
/// Case ids are `case_000`, `case_001`, … across train, then val, then
/// test. Each case draws from its own rng seeded by a value taken from a
/// master stream, so cases are independent of each other and the dataset
/// depends only on (config, seed).
pub fn generate_dataset(cfg: &PhantomConfig, root: &Path) -> Result<DatasetManifest, DatasetError> {
    cfg.validate()?;
    let (n_train, n_val, n_test) = cfg.counts;
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(DatasetError::InvalidConfig(format!(
            "every split needs at least one case, got ({n_train}, {n_val}, {n_test})"
        )));
    }
    let total = n_train + n_val + n_test;
    let width = total.to_string().len().max(3);
    let ids: Vec<String> = (0..total).map(|i| format!("case_{i:0width$}")).collect();

    let mut seeder = ChaCha8Rng::seed_from_u64(cfg.seed);
    let case_seeds: Vec<u64> = (0..total).map(|_| seeder.gen()).collect();

    fs::create_dir_all(root).map_err(|e| DatasetError::io(root, e))?;
    for (id, &seed) in ids.iter().zip(&case_seeds) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let case = generate_case(cfg, &mut rng)?;
        let dir = root.join(id);
        fs::create_dir_all(&dir).map_err(|e| DatasetError::io(&dir, e))?;
        mvol::save_volume(&case.image, &dir.join("image"))?;
        mvol::save_mask(&case.cavity, &dir.join("cavity"))?;
        mvol::save_mask(&case.wall, &dir.join("wall"))?;
    }

    let manifest = DatasetManifest {
        seed: cfg.seed,
        splits: SplitIds {
            train: ids[..n_train].to_vec(),
            val: ids[n_train..n_train + n_val].to_vec(),
            test: ids[n_train + n_val..].to_vec(),
        },
        phantom: PhantomJson::from(cfg),
    };
    let mp = root.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&mp, text).map_err(|e| DatasetError::io(&mp, e))?;
    Ok(manifest)
}

/// Read `<root>/manifest.json`.
pub fn load_manifest(root: &Path) -> Result<DatasetManifest, DatasetError> {
    let mp = root.join("manifest.json");
    let text = fs::read_to_string(&mp).map_err(|e| DatasetError::io(&mp, e))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| DatasetError::MalformedManifest(e.to_string()))?;
    let s = &manifest.splits;
    let mut all: Vec<&String> = s.train.iter().chain(&s.val).chain(&s.test).collect();
    let n = all.len();
    all.sort();
    all.dedup();
    if all.len() != n {
        return Err(DatasetError::MalformedManifest("splits share case ids".into()));
    }
    Ok(manifest)
}

/// One case loaded back from disk.
pub struct DiskCase {
    pub id: String,
    pub image: Volume3,
    pub cavity: Mask3,
    pub wall: Mask3,
}

/// Load the named case from a dataset or crops directory.
pub fn load_case(root: &Path, id: &str) -> Result<DiskCase, DatasetError> {
    let dir = root.join(id);
    Ok(DiskCase {
        id: id.to_string(),
        image: mvol::load_volume(&dir.join("image"))?,
        cavity: mvol::load_mask(&dir.join("cavity"))?,
        wall: mvol::load_mask(&dir.join("wall"))?,
    })
}
