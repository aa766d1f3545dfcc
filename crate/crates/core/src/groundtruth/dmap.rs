//! Density-map export: `DMAP` binary, CSV for inspection, and an 8-bit heat
//! rendering.
//!
//! Binary layout (little-endian): `"DMAP" | u32 h | u32 w | u32 reserved (0)`
//! followed by `h * w` f32 values in row-major order.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::density::{DensityMap, Resolution};
use crate::error::{Error, Result};

pub const DMAP_MAGIC: &[u8; 4] = b"DMAP";
const HEADER_LEN: usize = 16;

pub fn dmap_to_bytes(map: &DensityMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * map.data().len());
    out.extend_from_slice(DMAP_MAGIC);
    out.extend_from_slice(&(map.height() as u32).to_le_bytes());
    out.extend_from_slice(&(map.width() as u32).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for v in map.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// The resolution tag is not stored; maps come back as [`Resolution::Full`]
/// unless the caller knows better.
pub fn dmap_from_bytes(bytes: &[u8]) -> Result<DensityMap> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != DMAP_MAGIC {
        return Err(Error::invalid("not a DMAP file"));
    }
    let word = |i: usize| {
        u32::from_le_bytes([bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]]) as usize
    };
    let (h, w) = (word(4), word(8));
    let body = &bytes[HEADER_LEN..];
    if body.len() != 4 * h * w {
        return Err(Error::invalid(format!(
            "DMAP body has {} bytes, {h}x{w} needs {}",
            body.len(),
            4 * h * w
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    DensityMap::from_vec(h, w, data, Resolution::Full)
}

pub fn write_dmap(map: &DensityMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, dmap_to_bytes(map)).map_err(|e| Error::io(path, e))
}

pub fn read_dmap(path: impl AsRef<Path>) -> Result<DensityMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    dmap_from_bytes(&bytes).map_err(|e| Error::data(path, e.to_string()))
}

/// One line per row, comma-separated.
pub fn write_density_csv(map: &DensityMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for row in map.data().chunks_exact(map.width().max(1)) {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                text.push(',');
            }
            write!(text, "{v}").expect("write to string");
        }
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Linear grayscale rendering scaled to the map's own maximum.
pub fn heat_pixels(map: &DensityMap) -> Vec<u8> {
    let max = map.max();
    map.data()
        .iter()
        .map(|&v| {
            if max > 0.0 {
                (v / max * 255.0).round().clamp(0.0, 255.0) as u8
            } else {
                0
            }
        })
        .collect()
}

/// Writes [`heat_pixels`] as a binary PGM.
pub fn write_heat_pgm(map: &DensityMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = format!("P5\n{} {}\n255\n", map.width(), map.height()).into_bytes();
    out.extend(heat_pixels(map));
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
