//! VVOL: a minimal self-describing volume container.
//!
//! Layout: the 8-byte magic `VVOL0001`, `\n`, one compact JSON header line,
//! `\n`, then the little-endian payload in x-fastest order. `f32` payloads
//! are scalar grids, `u8` payloads with values in {0, 1} are masks.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BinaryMask, Geometry, Volume, VolumeKind, VoxelGrid};
use crate::error::{Error, Result};

pub const VVOL_MAGIC: &[u8; 8] = b"VVOL0001";

const HEADER_START: u64 = 9;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    origin_mm: [f64; 3],
    dtype: Dtype,
    kind: VolumeKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Dtype {
    F32,
    U8,
}

impl Dtype {
    fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::U8 => 1,
        }
    }
}

/// Borrowed view over either VVOL payload.
#[derive(Debug, Clone, Copy)]
pub enum VolumeRef<'a> {
    Grid(&'a VoxelGrid),
    Mask(&'a BinaryMask),
}

impl<'a> From<&'a VoxelGrid> for VolumeRef<'a> {
    fn from(g: &'a VoxelGrid) -> Self {
        VolumeRef::Grid(g)
    }
}

impl<'a> From<&'a BinaryMask> for VolumeRef<'a> {
    fn from(m: &'a BinaryMask) -> Self {
        VolumeRef::Mask(m)
    }
}

impl<'a> From<&'a Volume> for VolumeRef<'a> {
    fn from(v: &'a Volume) -> Self {
        match v {
            Volume::Grid(g) => VolumeRef::Grid(g),
            Volume::Mask(m) => VolumeRef::Mask(m),
        }
    }
}

/// Serialize a grid or mask into VVOL bytes.
pub fn encode_volume<'a>(volume: impl Into<VolumeRef<'a>>) -> Result<Vec<u8>> {
    let volume = volume.into();
    let (geometry, kind, dtype) = match volume {
        VolumeRef::Grid(g) => {
            if g.kind() == VolumeKind::Probability
                && g.values().iter().any(|v| !(0.0..=1.0).contains(v))
            {
                return Err(Error::Invariant(
                    "probability grid holds values outside [0, 1]".into(),
                ));
            }
            (*g.geometry(), g.kind(), Dtype::F32)
        }
        VolumeRef::Mask(m) => (*m.geometry(), VolumeKind::Generic, Dtype::U8),
    };
    geometry.validate()?;
    let header = Header {
        dims: geometry.dims,
        spacing_mm: geometry.spacing,
        origin_mm: geometry.origin,
        dtype,
        kind,
    };
    let header = serde_json::to_string(&header)?;
    let mut out = Vec::with_capacity(10 + header.len() + geometry.len() * dtype.size());
    out.extend_from_slice(VVOL_MAGIC);
    out.push(b'\n');
    out.extend_from_slice(header.as_bytes());
    out.push(b'\n');
    match volume {
        VolumeRef::Grid(g) => {
            for v in g.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        VolumeRef::Mask(m) => out.extend(m.bits().iter().map(|&b| u8::from(b))),
    }
    Ok(out)
}

/// Parse VVOL bytes.
pub fn decode_volume(bytes: &[u8]) -> Result<Volume> {
    if bytes.len() < 8 || &bytes[..8] != VVOL_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "missing VVOL0001 magic".into(),
        });
    }
    if bytes.get(8) != Some(&b'\n') {
        return Err(Error::Format {
            offset: 8,
            message: "expected newline after magic".into(),
        });
    }
    let rest = &bytes[HEADER_START as usize..];
    let header_len = rest.iter().position(|&b| b == b'\n').ok_or(Error::Format {
        offset: bytes.len() as u64,
        message: "unterminated header line".into(),
    })?;
    let header_bytes = &rest[..header_len];
    let header_text = std::str::from_utf8(header_bytes).map_err(|e| Error::Format {
        offset: HEADER_START + e.valid_up_to() as u64,
        message: "header is not valid UTF-8".into(),
    })?;
    let header: Header = serde_json::from_str(header_text).map_err(|e| Error::Format {
        offset: HEADER_START + line_col_offset(header_text, e.column()),
        message: format!("bad header: {e}"),
    })?;
    if header.spacing_mm.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        let col = header_text.find("\"spacing_mm\"").unwrap_or(0) as u64;
        return Err(Error::Format {
            offset: HEADER_START + col,
            message: format!("non-positive spacing {:?}", header.spacing_mm),
        });
    }
    let geometry = Geometry::new(header.dims, header.spacing_mm, header.origin_mm).map_err(|e| {
        Error::Format {
            offset: HEADER_START,
            message: e.to_string(),
        }
    })?;
    let payload_offset = HEADER_START + header_len as u64 + 1;
    let payload = &bytes[payload_offset as usize..];
    let expected = geometry.len() as u64 * header.dtype.size() as u64;
    if payload.len() as u64 != expected {
        return Err(Error::PayloadLength {
            offset: payload_offset,
            expected,
            found: payload.len() as u64,
        });
    }
    match header.dtype {
        Dtype::F32 => {
            let values: Vec<f32> = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if header.kind == VolumeKind::Probability {
                if let Some(i) = values.iter().position(|v| !(0.0..=1.0).contains(v)) {
                    return Err(Error::Format {
                        offset: payload_offset + 4 * i as u64,
                        message: format!("probability value {} outside [0, 1]", values[i]),
                    });
                }
            }
            Ok(Volume::Grid(VoxelGrid::new(geometry, header.kind, values)?))
        }
        Dtype::U8 => {
            if let Some(i) = payload.iter().position(|&b| b > 1) {
                return Err(Error::Format {
                    offset: payload_offset + i as u64,
                    message: format!("mask byte {} is not 0 or 1", payload[i]),
                });
            }
            let bits = payload.iter().map(|&b| b == 1).collect();
            Ok(Volume::Mask(BinaryMask::new(geometry, bits)?))
        }
    }
}

// serde_json reports 1-based columns on a single line.
fn line_col_offset(text: &str, column: usize) -> u64 {
    column.saturating_sub(1).min(text.len()) as u64
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_volume(&bytes)
}

pub fn write_volume<'a>(volume: impl Into<VolumeRef<'a>>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_volume(volume)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Stream variant of [`write_volume`].
pub fn write_volume_to<'a, W: Write>(volume: impl Into<VolumeRef<'a>>, mut out: W) -> Result<()> {
    let bytes = encode_volume(volume)?;
    out.write_all(&bytes).map_err(|e| Error::io("<stream>", e))
}
