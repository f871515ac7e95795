//! Raw-binary voxel files with a JSON sidecar descriptor.
//!
//! The sidecar carries exactly the keys `dims`, `spacing_mm`, `dtype` and
//! `endianness`; the raw payload sits next to it with the `.json` suffix
//! stripped (`cell.raw.json` describes `cell.raw`). Values are stored
//! x-fastest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::voxel::{GrayscaleVolume, VoxelGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalarType {
    U8,
    U16,
    F32,
}

impl ScalarType {
    pub fn byte_size(&self) -> usize {
        match self {
            ScalarType::U8 => 1,
            ScalarType::U16 => 2,
            ScalarType::F32 => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Endianness {
    Little,
    Big,
}

/// Sidecar descriptor. Unknown keys are rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoxelSidecar {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub dtype: ScalarType,
    pub endianness: Endianness,
}

/// Raw payload path for a sidecar path: strips a trailing `.json`.
pub fn raw_path_for(sidecar: &Path) -> Result<PathBuf> {
    let s = sidecar.to_string_lossy();
    match s.strip_suffix(".json") {
        Some(stem) => Ok(PathBuf::from(stem)),
        None => Err(Error::BadDescriptor(format!(
            "sidecar path {s} does not end in .json"
        ))),
    }
}

/// Load a grayscale volume from `sidecar_path` and its raw payload.
pub fn load_raw_volume(sidecar_path: &Path) -> Result<GrayscaleVolume> {
    let meta: VoxelSidecar = serde_json::from_str(&fs::read_to_string(sidecar_path)?)?;
    let bytes = fs::read(raw_path_for(sidecar_path)?)?;
    decode_volume(&meta, &bytes)
}

pub fn decode_volume(meta: &VoxelSidecar, bytes: &[u8]) -> Result<GrayscaleVolume> {
    let count = meta.dims[0] * meta.dims[1] * meta.dims[2];
    let expected = count as u64 * meta.dtype.byte_size() as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::SizeMismatch {
            expected,
            actual: bytes.len() as u64,
            dims: meta.dims,
            dtype: format!("{:?}", meta.dtype).to_lowercase(),
        });
    }
    let values: Vec<f64> = match meta.dtype {
        ScalarType::U8 => bytes.iter().map(|&b| b as f64).collect(),
        ScalarType::U16 => bytes
            .chunks_exact(2)
            .map(|c| {
                let raw = [c[0], c[1]];
                let v = match meta.endianness {
                    Endianness::Little => u16::from_le_bytes(raw),
                    Endianness::Big => u16::from_be_bytes(raw),
                };
                v as f64
            })
            .collect(),
        ScalarType::F32 => bytes
            .chunks_exact(4)
            .map(|c| {
                let raw = [c[0], c[1], c[2], c[3]];
                let v = match meta.endianness {
                    Endianness::Little => f32::from_le_bytes(raw),
                    Endianness::Big => f32::from_be_bytes(raw),
                };
                v as f64
            })
            .collect(),
    };
    GrayscaleVolume::new(meta.dims, meta.spacing_mm, values)
}

pub fn encode_volume(vol: &GrayscaleVolume, dtype: ScalarType, endianness: Endianness) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(vol.values.len() * dtype.byte_size());
    for &v in &vol.values {
        match dtype {
            ScalarType::U8 => bytes.push(v.round().clamp(0.0, 255.0) as u8),
            ScalarType::U16 => {
                let raw = (v.round().clamp(0.0, 65_535.0) as u16).to_le_bytes();
                match endianness {
                    Endianness::Little => bytes.extend_from_slice(&raw),
                    Endianness::Big => {
                        bytes.extend_from_slice(&u16::from_le_bytes(raw).to_be_bytes())
                    }
                }
            }
            ScalarType::F32 => {
                let f = v as f32;
                match endianness {
                    Endianness::Little => bytes.extend_from_slice(&f.to_le_bytes()),
                    Endianness::Big => bytes.extend_from_slice(&f.to_be_bytes()),
                }
            }
        }
    }
    bytes
}

/// Write volume + sidecar. `sidecar_path` must end in `.json`.
pub fn save_raw_volume(
    vol: &GrayscaleVolume,
    sidecar_path: &Path,
    dtype: ScalarType,
    endianness: Endianness,
) -> Result<()> {
    let meta = VoxelSidecar {
        dims: vol.dims,
        spacing_mm: vol.spacing,
        dtype,
        endianness,
    };
    fs::write(sidecar_path, serde_json::to_string_pretty(&meta)?)?;
    fs::write(
        raw_path_for(sidecar_path)?,
        encode_volume(vol, dtype, endianness),
    )?;
    Ok(())
}

/// Write a segmented grid as a u8 mask (1 material, 0 void).
pub fn save_grid(grid: &VoxelGrid, sidecar_path: &Path) -> Result<()> {
    let values: Vec<f64> = grid
        .material
        .iter()
        .map(|&m| if m { 1.0 } else { 0.0 })
        .collect();
    let vol = GrayscaleVolume::new(grid.dims, grid.spacing, values)?;
    save_raw_volume(&vol, sidecar_path, ScalarType::U8, Endianness::Little)
}

/// Load a u8/u16/f32 mask file as a grid: nonzero values are material.
pub fn load_grid(sidecar_path: &Path, alpha_void: f64) -> Result<VoxelGrid> {
    let vol = load_raw_volume(sidecar_path)?;
    let material = vol.values.iter().map(|&v| v != 0.0).collect();
    VoxelGrid::new(vol.dims, vol.spacing, material, alpha_void)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_volume_round_trip() {
        let dir = std::env::temp_dir().join("voxcell_io_zero");
        fs::create_dir_all(&dir).unwrap();
        let vol = GrayscaleVolume::new([2, 2, 2], [1.0; 3], vec![0.0; 8]).unwrap();
        let sidecar = dir.join("zeros.raw.json");
        save_raw_volume(&vol, &sidecar, ScalarType::U16, Endianness::Little).unwrap();
        let back = load_raw_volume(&sidecar).unwrap();
        assert_eq!(back.dims, [2, 2, 2]);
        assert_eq!(back.spacing, [1.0; 3]);
        assert!(back.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn short_file_reports_byte_counts() {
        let meta = VoxelSidecar {
            dims: [2, 2, 2],
            spacing_mm: [1.0; 3],
            dtype: ScalarType::U16,
            endianness: Endianness::Little,
        };
        let err = decode_volume(&meta, &[0u8; 15]).unwrap_err();
        match err {
            Error::SizeMismatch {
                expected, actual, ..
            } => {
                assert_eq!(expected, 16);
                assert_eq!(actual, 15);
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn unknown_dtype_rejected() {
        let json = r#"{"dims":[1,1,1],"spacing_mm":[1,1,1],"dtype":"i64","endianness":"little"}"#;
        assert!(serde_json::from_str::<VoxelSidecar>(json).is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let json =
            r#"{"dims":[1,1,1],"spacing_mm":[1,1,1],"dtype":"u8","endianness":"little","extra":1}"#;
        assert!(serde_json::from_str::<VoxelSidecar>(json).is_err());
    }

    /// Write-then-read oracle: u16 little-endian values survive unchanged.
    #[test]
    fn u16_le_round_trip_exact() {
        let values = vec![1_000.0, 20_000.0, 0.0, 65_535.0, 333.0, 14_500.0, 7.0, 42.0];
        let vol = GrayscaleVolume::new([2, 2, 2], [0.027; 3], values.clone()).unwrap();
        let bytes = encode_volume(&vol, ScalarType::U16, Endianness::Little);
        let meta = VoxelSidecar {
            dims: [2, 2, 2],
            spacing_mm: [0.027; 3],
            dtype: ScalarType::U16,
            endianness: Endianness::Little,
        };
        let back = decode_volume(&meta, &bytes).unwrap();
        assert_eq!(back.values, values);
    }

    #[test]
    fn big_endian_round_trip() {
        let values = vec![1_000.0, 20_000.0];
        let vol = GrayscaleVolume::new([2, 1, 1], [1.0; 3], values.clone()).unwrap();
        let bytes = encode_volume(&vol, ScalarType::U16, Endianness::Big);
        assert_eq!(&bytes[..2], &[0x03, 0xE8]);
        let meta = VoxelSidecar {
            dims: [2, 1, 1],
            spacing_mm: [1.0; 3],
            dtype: ScalarType::U16,
            endianness: Endianness::Big,
        };
        let back = decode_volume(&meta, &bytes).unwrap();
        assert_eq!(back.values, values);
    }

    #[test]
    fn sidecar_keys_are_exact() {
        let meta = VoxelSidecar {
            dims: [1, 2, 3],
            spacing_mm: [0.1, 0.2, 0.3],
            dtype: ScalarType::F32,
            endianness: Endianness::Big,
        };
        let json = serde_json::to_string(&meta).unwrap();
        // Field order in the emitted file is the declaration order.
        let order: Vec<usize> = ["\"dims\"", "\"spacing_mm\"", "\"dtype\"", "\"endianness\""]
            .iter()
            .map(|k| json.find(k).unwrap())
            .collect();
        assert!(order.windows(2).all(|w| w[0] < w[1]), "{json}");
        assert!(json.contains("\"dtype\":\"f32\""));
        assert!(json.contains("\"endianness\":\"big\""));
    }
}
