//! MVOL on-disk volumes.
//!
//! A volume named `foo` is the file pair `foo.json` + `foo.raw`. The JSON
//! header fixes geometry and element type:
//!
//! ```json
//! {"dims":[D,H,W],"spacing_mm":[sz,sy,sx],"dtype":"f32"}
//! ```
//!
//! and the raw file carries exactly D·H·W values, little-endian, C order
//! with x fastest. Masks use dtype `"u8"` with one byte per voxel, each 0
//! or 1. Save followed by load is bitwise identity.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use c2w_core::volume::VolumeError;
use c2w_core::{Mask3, Volume3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MvolError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("payload is {got} bytes but the header implies {want}")]
    SizeMismatch { want: usize, got: usize },
    #[error("non-finite value at linear index {0}")]
    NonFiniteData(usize),
    #[error("io failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl MvolError {
    fn io(path: &Path, source: io::Error) -> Self {
        MvolError::IoFailure { path: path.to_path_buf(), source }
    }
}

impl From<VolumeError> for MvolError {
    fn from(e: VolumeError) -> Self {
        MvolError::MalformedHeader(e.to_string())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    dtype: String,
}

fn header_path(prefix: &Path) -> PathBuf {
    let mut p = prefix.as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

fn raw_path(prefix: &Path) -> PathBuf {
    let mut p = prefix.as_os_str().to_owned();
    p.push(".raw");
    PathBuf::from(p)
}

fn read_header(prefix: &Path, want_dtype: &str) -> Result<Header, MvolError> {
    let hp = header_path(prefix);
    let text = fs::read_to_string(&hp).map_err(|e| MvolError::io(&hp, e))?;
    let header: Header =
        serde_json::from_str(&text).map_err(|e| MvolError::MalformedHeader(e.to_string()))?;
    if header.dtype != want_dtype {
        return Err(MvolError::MalformedHeader(format!(
            "dtype {:?} where {:?} was expected",
            header.dtype, want_dtype
        )));
    }
    if header.dims.contains(&0) {
        return Err(MvolError::MalformedHeader("zero extent in dims".into()));
    }
    Ok(header)
}

fn write_pair(prefix: &Path, header: &Header, payload: &[u8]) -> Result<(), MvolError> {
    if let Some(dir) = prefix.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| MvolError::io(dir, e))?;
        }
    }
    let hp = header_path(prefix);
    let text = serde_json::to_string(header).expect("header serializes");
    fs::write(&hp, text).map_err(|e| MvolError::io(&hp, e))?;
    let rp = raw_path(prefix);
    fs::write(&rp, payload).map_err(|e| MvolError::io(&rp, e))
}

/// Write `v` as `<prefix>.json` + `<prefix>.raw` with dtype f32.
pub fn save_volume(v: &Volume3, prefix: &Path) -> Result<(), MvolError> {
    let (d, h, w) = v.dims();
    let (sz, sy, sx) = v.spacing();
    let header =
        Header { dims: [d, h, w], spacing_mm: [sz, sy, sx], dtype: "f32".into() };
    let mut payload = Vec::with_capacity(v.numel() * 4);
    for x in v.data() {
        payload.extend_from_slice(&x.to_le_bytes());
    }
    write_pair(prefix, &header, &payload)
}

/// Read a dtype-f32 MVOL pair back into a volume.
pub fn load_volume(prefix: &Path) -> Result<Volume3, MvolError> {
    let header = read_header(prefix, "f32")?;
    let rp = raw_path(prefix);
    let payload = fs::read(&rp).map_err(|e| MvolError::io(&rp, e))?;
    let n = header.dims.iter().product::<usize>();
    if payload.len() != n * 4 {
        return Err(MvolError::SizeMismatch { want: n * 4, got: payload.len() });
    }
    let mut data = Vec::with_capacity(n);
    for (i, b) in payload.chunks_exact(4).enumerate() {
        let x = f32::from_le_bytes(b.try_into().expect("4-byte chunk"));
        if !x.is_finite() {
            return Err(MvolError::NonFiniteData(i));
        }
        data.push(x);
    }
    let [d, h, w] = header.dims;
    let [sz, sy, sx] = header.spacing_mm;
    Ok(Volume3::new((d, h, w), (sz, sy, sx), data)?)
}

/// Write `m` as `<prefix>.json` + `<prefix>.raw` with dtype u8.
pub fn save_mask(m: &Mask3, prefix: &Path) -> Result<(), MvolError> {
    let (d, h, w) = m.dims();
    let (sz, sy, sx) = m.spacing();
    let header =
        Header { dims: [d, h, w], spacing_mm: [sz, sy, sx], dtype: "u8".into() };
    write_pair(prefix, &header, m.data())
}

/// Read a dtype-u8 MVOL pair back into a mask.
pub fn load_mask(prefix: &Path) -> Result<Mask3, MvolError> {
    let header = read_header(prefix, "u8")?;
    let rp = raw_path(prefix);
    let payload = fs::read(&rp).map_err(|e| MvolError::io(&rp, e))?;
    let n = header.dims.iter().product::<usize>();
    if payload.len() != n {
        return Err(MvolError::SizeMismatch { want: n, got: payload.len() });
    }
    let [d, h, w] = header.dims;
    let [sz, sy, sx] = header.spacing_mm;
    Ok(Mask3::new((d, h, w), (sz, sy, sx), payload)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use tempfile::TempDir;

    fn random_volume(rng: &mut ChaCha8Rng) -> Volume3 {
        let dims = (rng.gen_range(1..=5), rng.gen_range(1..=5), rng.gen_range(1..=5));
        let spacing =
            (rng.gen_range(0.3..2.0), rng.gen_range(0.3..2.0), rng.gen_range(0.3..2.0));
        let n = dims.0 * dims.1 * dims.2;
        let data = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
        Volume3::new(dims, spacing, data).unwrap()
    }

    fn random_mask(rng: &mut ChaCha8Rng) -> Mask3 {
        let dims = (rng.gen_range(1..=5), rng.gen_range(1..=5), rng.gen_range(1..=5));
        let n = dims.0 * dims.1 * dims.2;
        let data = (0..n).map(|_| u8::from(rng.gen_bool(0.5))).collect();
        Mask3::new(dims, (1.0, 1.0, 1.0), data).unwrap()
    }

    #[test]
    fn volume_round_trip_is_bitwise() {
        let dir = TempDir::new().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for i in 0..20 {
            let v = random_volume(&mut rng);
            let prefix = dir.path().join(format!("v{i}"));
            save_volume(&v, &prefix).unwrap();
            let back = load_volume(&prefix).unwrap();
            assert_eq!(back.dims(), v.dims());
            assert_eq!(back.spacing(), v.spacing());
            let a: Vec<u32> = v.data().iter().map(|x| x.to_bits()).collect();
            let b: Vec<u32> = back.data().iter().map(|x| x.to_bits()).collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn mask_round_trip_is_bitwise() {
        let dir = TempDir::new().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for i in 0..20 {
            let m = random_mask(&mut rng);
            let prefix = dir.path().join(format!("m{i}"));
            save_mask(&m, &prefix).unwrap();
            assert_eq!(load_mask(&prefix).unwrap(), m);
        }
    }

    #[test]
    fn saving_twice_writes_identical_bytes() {
        let dir = TempDir::new().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = random_volume(&mut rng);
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        save_volume(&v, &a).unwrap();
        save_volume(&load_volume(&a).unwrap(), &b).unwrap();
        assert_eq!(fs::read(header_path(&a)).unwrap(), fs::read(header_path(&b)).unwrap());
        assert_eq!(fs::read(raw_path(&a)).unwrap(), fs::read(raw_path(&b)).unwrap());
    }

    #[test]
    fn single_voxel_payload_is_little_endian() {
        let dir = TempDir::new().unwrap();
        let v = Volume3::new((1, 1, 1), (1.0, 1.0, 1.0), vec![3.5]).unwrap();
        let prefix = dir.path().join("one");
        save_volume(&v, &prefix).unwrap();
        assert_eq!(fs::read(raw_path(&prefix)).unwrap(), 3.5f32.to_le_bytes());
    }

    #[test]
    fn paper_scale_header_loads_with_its_fields() {
        let dir = TempDir::new().unwrap();
        let prefix = dir.path().join("roi");
        let n = 44 * 256 * 256;
        fs::write(
            header_path(&prefix),
            r#"{"dims":[44,256,256],"spacing_mm":[0.625,0.625,0.625],"dtype":"f32"}"#,
        )
        .unwrap();
        fs::write(raw_path(&prefix), vec![0u8; n * 4]).unwrap();
        let v = load_volume(&prefix).unwrap();
        assert_eq!(v.dims(), (44, 256, 256));
        assert_eq!(v.spacing(), (0.625, 0.625, 0.625));
    }

    #[test]
    fn short_payload_is_a_size_mismatch() {
        let dir = TempDir::new().unwrap();
        let prefix = dir.path().join("short");
        fs::write(
            header_path(&prefix),
            r#"{"dims":[2,2,2],"spacing_mm":[1.0,1.0,1.0],"dtype":"f32"}"#,
        )
        .unwrap();
        fs::write(raw_path(&prefix), vec![0u8; 3 * 4]).unwrap();
        match load_volume(&prefix) {
            Err(MvolError::SizeMismatch { want: 32, got: 12 }) => {}
            other => panic!("expected SizeMismatch, got {other:?}"),
        }
    }

    #[test]
    fn bad_json_and_wrong_dtype_are_malformed_headers() {
        let dir = TempDir::new().unwrap();
        let prefix = dir.path().join("bad");
        fs::write(header_path(&prefix), "{not json").unwrap();
        fs::write(raw_path(&prefix), []).unwrap();
        assert!(matches!(load_volume(&prefix), Err(MvolError::MalformedHeader(_))));

        let m = Mask3::zeros((1, 1, 1), (1.0, 1.0, 1.0)).unwrap();
        let mp = dir.path().join("mask");
        save_mask(&m, &mp).unwrap();
        assert!(matches!(load_volume(&mp), Err(MvolError::MalformedHeader(_))));
    }

    #[test]
    fn non_finite_payload_is_rejected_with_its_index() {
        let dir = TempDir::new().unwrap();
        let prefix = dir.path().join("nan");
        fs::write(
            header_path(&prefix),
            r#"{"dims":[1,1,2],"spacing_mm":[1.0,1.0,1.0],"dtype":"f32"}"#,
        )
        .unwrap();
        let mut payload = 1.0f32.to_le_bytes().to_vec();
        payload.extend_from_slice(&f32::NAN.to_le_bytes());
        fs::write(raw_path(&prefix), payload).unwrap();
        match load_volume(&prefix) {
            Err(MvolError::NonFiniteData(1)) => {}
            other => panic!("expected NonFiniteData(1), got {other:?}"),
        }
    }

    #[test]
    fn unwritable_destination_is_an_io_failure() {
        let missing = Path::new("/proc/definitely/not/writable/v");
        assert!(matches!(
            save_volume(
                &Volume3::new((1, 1, 1), (1.0, 1.0, 1.0), vec![0.0]).unwrap(),
                missing
            ),
            Err(MvolError::IoFailure { .. })
        ));
    }

    #[test]
    fn mask_bytes_outside_zero_one_are_rejected() {
        let dir = TempDir::new().unwrap();
        let prefix = dir.path().join("two");
        fs::write(
            header_path(&prefix),
            r#"{"dims":[1,1,1],"spacing_mm":[1.0,1.0,1.0],"dtype":"u8"}"#,
        )
        .unwrap();
        fs::write(raw_path(&prefix), [2u8]).unwrap();
        assert!(load_mask(&prefix).is_err());
    }
}
