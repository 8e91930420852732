//! Checkpoints: `<name>.manifest.json` + `<name>.weights.raw`.
//!
//! The manifest lists every parameter in model layout order — name, stage
//! tag, shape, trainable flag — and the raw file concatenates their values
//! as little-endian f32 in that same order. Save followed by load restores
//! the parameter set bitwise, flags included.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use c2w_core::network::{Param, ParameterSet};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("manifest mismatch: {0}")]
    ManifestMismatch(String),
    #[error("io failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl CheckpointError {
    fn io(path: &Path, source: io::Error) -> Self {
        CheckpointError::IoFailure { path: path.to_path_buf(), source }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamMeta {
    name: String,
    stage_tag: String,
    shape: Vec<usize>,
    trainable: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    dtype: String,
    params: Vec<ParamMeta>,
}

const FORMAT: &str = "c2w-checkpoint";

fn manifest_path(prefix: &Path) -> PathBuf {
    let mut p = prefix.as_os_str().to_owned();
    p.push(".manifest.json");
    PathBuf::from(p)
}

fn weights_path(prefix: &Path) -> PathBuf {
    let mut p = prefix.as_os_str().to_owned();
    p.push(".weights.raw");
    PathBuf::from(p)
}

/// Write `set` as `<prefix>.manifest.json` + `<prefix>.weights.raw`.
pub fn save_checkpoint(set: &ParameterSet, prefix: &Path) -> Result<(), CheckpointError> {
    if let Some(dir) = prefix.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| CheckpointError::io(dir, e))?;
        }
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        dtype: "f32".into(),
        params: set
            .params()
            .iter()
            .map(|p| ParamMeta {
                name: p.name.clone(),
                stage_tag: p.stage_tag.clone(),
                shape: p.shape.clone(),
                trainable: p.trainable,
            })
            .collect(),
    };
    let mp = manifest_path(prefix);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&mp, text).map_err(|e| CheckpointError::io(&mp, e))?;

    let total: usize = set.params().iter().map(|p| p.values.len()).sum();
    let mut payload = Vec::with_capacity(total * 4);
    for p in set.params() {
        for v in &p.values {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let wp = weights_path(prefix);
    fs::write(&wp, payload).map_err(|e| CheckpointError::io(&wp, e))
}

/// Read a checkpoint pair back into a parameter set.
pub fn load_checkpoint(prefix: &Path) -> Result<ParameterSet, CheckpointError> {
    let mp = manifest_path(prefix);
    let text = fs::read_to_string(&mp).map_err(|e| CheckpointError::io(&mp, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| CheckpointError::ManifestMismatch(e.to_string()))?;
    if manifest.format != FORMAT {
        return Err(CheckpointError::ManifestMismatch(format!(
            "format {:?} where {FORMAT:?} was expected",
            manifest.format
        )));
    }
    if manifest.dtype != "f32" {
        return Err(CheckpointError::ManifestMismatch(format!(
            "dtype {:?} where \"f32\" was expected",
            manifest.dtype
        )));
    }

    let wp = weights_path(prefix);
    let payload = fs::read(&wp).map_err(|e| CheckpointError::io(&wp, e))?;
    let want: usize = manifest.params.iter().map(|m| m.shape.iter().product::<usize>()).sum();
    if payload.len() != want * 4 {
        return Err(CheckpointError::ManifestMismatch(format!(
            "weights file holds {} bytes but the manifest implies {}",
            payload.len(),
            want * 4
        )));
    }

    let mut params = Vec::with_capacity(manifest.params.len());
    let mut offset = 0usize;
    for meta in manifest.params {
        if meta.shape.is_empty() || meta.shape.contains(&0) {
            return Err(CheckpointError::ManifestMismatch(format!(
                "parameter {:?} has degenerate shape {:?}",
                meta.name, meta.shape
            )));
        }
        let n: usize = meta.shape.iter().product();
        let values = payload[offset..offset + n * 4]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4-byte chunk")))
            .collect();
        offset += n * 4;
        params.push(Param {
            name: meta.name,
            stage_tag: meta.stage_tag,
            shape: meta.shape,
            trainable: meta.trainable,
            values,
        });
    }
    Ok(ParameterSet::from_params(params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use c2w_core::network::{Model, ModelSpec};
    use tempfile::TempDir;

    fn desk_params(seed: u64) -> ParameterSet {
        let (_, params) = Model::init(ModelSpec::desk((10, 10, 10)), seed).unwrap();
        params
    }

    fn bits(set: &ParameterSet) -> Vec<(String, String, Vec<usize>, bool, Vec<u32>)> {
        set.params()
            .iter()
            .map(|p| {
                (
                    p.name.clone(),
                    p.stage_tag.clone(),
                    p.shape.clone(),
                    p.trainable,
                    p.values.iter().map(|v| v.to_bits()).collect(),
                )
            })
            .collect()
    }

    #[test]
    fn round_trip_is_bitwise_including_flags() {
        let dir = TempDir::new().unwrap();
        let mut set = desk_params(11);
        set.set_trainable_exactly(&["head", "bottleneck"]).unwrap();
        let prefix = dir.path().join("ckpt");
        save_checkpoint(&set, &prefix).unwrap();
        let back = load_checkpoint(&prefix).unwrap();
        assert_eq!(bits(&back), bits(&set));
    }

    #[test]
    fn saving_twice_writes_identical_bytes() {
        let dir = TempDir::new().unwrap();
        let set = desk_params(12);
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        save_checkpoint(&set, &a).unwrap();
        save_checkpoint(&load_checkpoint(&a).unwrap(), &b).unwrap();
        assert_eq!(
            fs::read(manifest_path(&a)).unwrap(),
            fs::read(manifest_path(&b)).unwrap()
        );
        assert_eq!(fs::read(weights_path(&a)).unwrap(), fs::read(weights_path(&b)).unwrap());
    }

    #[test]
    fn truncated_weights_are_a_manifest_mismatch() {
        let dir = TempDir::new().unwrap();
        let set = desk_params(13);
        let prefix = dir.path().join("ckpt");
        save_checkpoint(&set, &prefix).unwrap();
        let wp = weights_path(&prefix);
        let bytes = fs::read(&wp).unwrap();
        fs::write(&wp, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(
            load_checkpoint(&prefix),
            Err(CheckpointError::ManifestMismatch(_))
        ));
    }

    #[test]
    fn foreign_format_and_bad_json_are_manifest_mismatches() {
        let dir = TempDir::new().unwrap();
        let prefix = dir.path().join("alien");
        fs::write(manifest_path(&prefix), r#"{"format":"other","dtype":"f32","params":[]}"#)
            .unwrap();
        fs::write(weights_path(&prefix), []).unwrap();
        assert!(matches!(
            load_checkpoint(&prefix),
            Err(CheckpointError::ManifestMismatch(_))
        ));

        fs::write(manifest_path(&prefix), "{").unwrap();
        assert!(matches!(
            load_checkpoint(&prefix),
            Err(CheckpointError::ManifestMismatch(_))
        ));
    }

    #[test]
    fn missing_files_are_io_failures() {
        let dir = TempDir::new().unwrap();
        assert!(matches!(
            load_checkpoint(&dir.path().join("nope")),
            Err(CheckpointError::IoFailure { .. })
        ));
    }
}
