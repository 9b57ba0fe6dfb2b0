//! HSF1 field files.
//!
//! Layout: `"HSF1"`, a little-endian u32 header length, a UTF-8 JSON header,
//! one mask byte per node, then one little-endian f64 per node. Nodes are
//! x-fastest in both payload sections.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DomainMask, Field, Grid, MaskShape};

const MAGIC: &[u8; 4] = b"HSF1";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    version: u32,
    n: u32,
    bounds: [[f64; 2]; 3],
    resolution: [usize; 3],
    mask: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<serde_json::Value>,
}

pub fn encode_field(u: &Field, provenance: Option<serde_json::Value>) -> Result<Vec<u8>> {
    let g = u.grid();
    let header = Header {
        version: 1,
        n: 1,
        bounds: g.bounds(),
        resolution: g.res(),
        mask: "embedded".into(),
        provenance,
    };
    let json = serde_json::to_vec(&header)?;
    let len = u32::try_from(json.len()).map_err(|_| Error::Format("header too long".into()))?;
    let mut out = Vec::with_capacity(8 + json.len() + 9 * g.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&json);
    out.extend(u.mask().flags().iter().map(|&b| b as u8));
    for v in u.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_field(bytes: &[u8]) -> Result<Field> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing HSF1 magic".into()));
    }
    let len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let body = &bytes[8..];
    if body.len() < len {
        return Err(Error::LengthMismatch {
            expected: 8 + len,
            found: bytes.len(),
        });
    }
    let header: Header = serde_json::from_slice(&body[..len]).map_err(|e| Error::Format(format!("bad header: {e}")))?;
    if header.version != 1 {
        return Err(Error::Format(format!("unsupported version {}", header.version)));
    }
    if header.n != 1 {
        return Err(Error::Format(format!(
            "only n = 1 grids are supported, got {}",
            header.n
        )));
    }
    let grid = Grid::new(header.bounds, header.resolution)?;
    let nodes = grid.len();
    let payload = &body[len..];
    let expected = nodes * 9;
    if payload.len() != expected {
        return Err(Error::LengthMismatch {
            expected: 8 + len + expected,
            found: bytes.len(),
        });
    }
    let (mask_bytes, value_bytes) = payload.split_at(nodes);
    let mut flags = Vec::with_capacity(nodes);
    for &b in mask_bytes {
        match b {
            0 => flags.push(false),
            1 => flags.push(true),
            _ => return Err(Error::Format(format!("mask byte {b} is not 0 or 1"))),
        }
    }
    let values: Vec<f64> = value_bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mask = Arc::new(DomainMask::from_flags(grid, flags, MaskShape::Embedded)?);
    // reject files whose values violate the zero-trace invariant instead of
    // silently projecting them
    for (i, &v) in values.iter().enumerate() {
        if !mask.inside(i) && v != 0.0 {
            return Err(Error::Format(format!("nonzero value at masked-out node {i}")));
        }
    }
    Field::from_values(&mask, values)
}

/// Seventeen significant digits, locale-free; the form used in every artifact.
pub fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

pub fn save_field(u: &Field, path: impl AsRef<Path>) -> Result<()> {
    save_field_with(u, path, None)
}

pub fn save_field_with(u: &Field, path: impl AsRef<Path>, provenance: Option<serde_json::Value>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_field(u, provenance)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_field(path: impl AsRef<Path>) -> Result<Field> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_field(&bytes)
}
