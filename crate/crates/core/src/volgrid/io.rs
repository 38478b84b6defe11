//! Header + raw payload file pairs.
//!
//! `<name>.json` carries `{dims, spacing_um, dtype, order, data_file}`; the
//! raw file next to it is little-endian, x-fastest. Volumes are `f32`,
//! masks are `u8` in `{0, 1}`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{voxel_count, Dims, Mask, Volume};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub dims: Dims,
    pub spacing_um: [f64; 3],
    pub dtype: String,
    pub order: String,
    pub data_file: String,
}

fn raw_path_for(header_path: &Path) -> PathBuf {
    header_path.with_extension("raw")
}

fn write_pair(path: &Path, header: &VolumeHeader, payload: &[u8]) -> Result<()> {
    let raw = raw_path_for(path);
    fs::write(&raw, payload).map_err(|e| Error::io(&raw, e))?;
    let text = serde_json::to_string_pretty(header)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_pair(path: &Path, dtype: &str) -> Result<(VolumeHeader, Vec<u8>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let header: VolumeHeader = serde_json::from_str(&text).map_err(|source| Error::Header {
        path: path.to_owned(),
        source,
    })?;
    if header.dtype != dtype {
        return Err(Error::invalid(format!(
            "{}: expected dtype {dtype:?}, found {:?}",
            path.display(),
            header.dtype
        )));
    }
    if header.order != "xyz" {
        return Err(Error::invalid(format!(
            "{}: unsupported voxel order {:?}",
            path.display(),
            header.order
        )));
    }
    let raw = path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&header.data_file);
    let bytes = fs::read(&raw).map_err(|e| Error::io(&raw, e))?;
    Ok((header, bytes))
}

fn header_for(path: &Path, dims: Dims, spacing: [f64; 3], dtype: &str) -> VolumeHeader {
    let data_file = raw_path_for(path)
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    VolumeHeader {
        dims,
        spacing_um: spacing,
        dtype: dtype.to_owned(),
        order: "xyz".to_owned(),
        data_file,
    }
}

/// Writes `v` as an `f32` pair. The raw file takes the header's stem.
pub fn save_volume<T: Scalar>(v: &Volume<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut payload = Vec::with_capacity(v.len() * 4);
    for &x in v.data() {
        payload.extend_from_slice(&(x.as_f64() as f32).to_le_bytes());
    }
    write_pair(path, &header_for(path, v.dims(), v.spacing(), "f32"), &payload)
}

pub fn load_volume<T: Scalar>(path: impl AsRef<Path>) -> Result<Volume<T>> {
    let (header, bytes) = read_pair(path.as_ref(), "f32")?;
    let expected = voxel_count(header.dims);
    if bytes.len() % 4 != 0 || bytes.len() / 4 != expected {
        return Err(Error::LengthMismatch {
            expected,
            found: bytes.len() / 4,
        });
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| T::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
        .collect();
    Volume::new(header.dims, header.spacing_um, data)
}

pub fn save_mask(m: &Mask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let payload: Vec<u8> = m.data().iter().map(|&b| b as u8).collect();
    write_pair(path, &header_for(path, m.dims(), m.spacing(), "u8"), &payload)
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let (header, bytes) = read_pair(path.as_ref(), "u8")?;
    let expected = voxel_count(header.dims);
    if bytes.len() != expected {
        return Err(Error::LengthMismatch {
            expected,
            found: bytes.len(),
        });
    }
    if let Some(i) = bytes.iter().position(|&b| b > 1) {
        return Err(Error::invalid(format!("mask voxel {i} is not 0 or 1")));
    }
    Mask::new(header.dims, header.spacing_um, bytes.iter().map(|&b| b == 1).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_eight_floats_load() {
        let dir = tempfile::tempdir().unwrap();
        let v = Volume::<f32>::from_fn([2, 2, 2], |x, y, z| (x + 2 * y + 4 * z) as f32);
        let path = dir.path().join("cube.json");
        save_volume(&v, &path).unwrap();
        let back: Volume<f32> = load_volume(&path).unwrap();
        assert_eq!(back.len(), 8);
        assert_eq!(back, v);
        let header: VolumeHeader =
            serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(header.data_file, "cube.raw");
        assert_eq!(header.dtype, "f32");
    }

    #[test]
    fn spacing_survives_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let v = Volume::<f32>::zeros([3, 1, 2]).with_spacing([10.0, 12.5, 7.25]).unwrap();
        let path = dir.path().join("s.json");
        save_volume(&v, &path).unwrap();
        let back: Volume<f32> = load_volume(&path).unwrap();
        assert_eq!(back.spacing(), [10.0, 12.5, 7.25]);
    }

    #[test]
    fn short_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        let header = header_for(&path, [2, 2, 2], [10.0; 3], "f32");
        let payload: Vec<u8> = (0..7).flat_map(|i| (i as f32).to_le_bytes()).collect();
        write_pair(&path, &header, &payload).unwrap();
        assert!(matches!(
            load_volume::<f32>(&path),
            Err(Error::LengthMismatch { expected: 8, found: 7 })
        ));
    }

    #[test]
    fn non_finite_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nan.json");
        let header = header_for(&path, [1, 1, 2], [10.0; 3], "f32");
        let payload: Vec<u8> = [1.0f32, f32::INFINITY].iter().flat_map(|v| v.to_le_bytes()).collect();
        write_pair(&path, &header, &payload).unwrap();
        assert!(matches!(load_volume::<f32>(&path), Err(Error::NonFinite(1))));
    }

    #[test]
    fn missing_file_and_unwritable_target() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_volume::<f32>(dir.path().join("nope.json")),
            Err(Error::Io { .. })
        ));
        let v = Volume::<f32>::zeros([1, 1, 1]);
        let target = dir.path().join("no_such_dir").join("v.json");
        assert!(matches!(save_volume(&v, target), Err(Error::Io { .. })));
    }

    #[test]
    fn mask_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let m = Mask::from_fn([3, 3, 2], |x, y, z| (x + y + z) % 2 == 0);
        let path = dir.path().join("m.json");
        save_mask(&m, &path).unwrap();
        assert_eq!(load_mask(&path).unwrap(), m);
        assert!(load_volume::<f32>(&path).is_err());
    }
}
