use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dot annotation in pixel units, origin at the top-left corner. Pixel
/// centres sit at integer coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }
}

impl From<[f64; 2]> for Point {
    fn from([x, y]: [f64; 2]) -> Self {
        Point { x, y }
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

/// All dots for one image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DotAnnotation {
    /// Image path relative to the dataset's image directory; doubles as the
    /// image id.
    pub file: String,
    pub points: Vec<Point>,
}

#[derive(Serialize, Deserialize)]
struct AnnotationFile {
    images: Vec<DotAnnotation>,
}

impl DotAnnotation {
    pub fn new(file: impl Into<String>, points: Vec<Point>) -> Self {
        DotAnnotation {
            file: file.into(),
            points,
        }
    }

    pub fn count(&self) -> usize {
        self.points.len()
    }

    /// Nearest pixel `(row, col)` of every point on an `h × w` image.
    ///
    /// Points that fall off the image but inside the box twice the image size
    /// centred on it are clamped to the border; anything further out is an
    /// error.
    pub fn pixels(&self, h: usize, w: usize) -> Result<Vec<(usize, usize)>> {
        resolve_pixels(&self.points, h, w).map_err(|(k, p)| {
            Error::data(
                &self.file,
                format!(
                    "point #{k} ({}, {}) lies outside the {w}x{h} image beyond the clamping margin",
                    p.x, p.y
                ),
            )
        })
    }
}

pub(crate) fn resolve_pixels(
    points: &[Point],
    h: usize,
    w: usize,
) -> std::result::Result<Vec<(usize, usize)>, (usize, Point)> {
    points
        .iter()
        .enumerate()
        .map(|(k, p)| match (nearest(p.x, w), nearest(p.y, h)) {
            (Some(x), Some(y)) => Ok((y, x)),
            _ => Err((k, *p)),
        })
        .collect()
}

fn nearest(v: f64, extent: usize) -> Option<usize> {
    let e = extent as f64;
    if !v.is_finite() || v < -0.5 * e || v >= 1.5 * e {
        return None;
    }
    Some(v.round().clamp(0.0, e - 1.0) as usize)
}

/// Reads `{"images": [{"file": ..., "points": [[x, y], ...]}, ...]}`.
pub fn parse_annotations(path: impl AsRef<Path>) -> Result<Vec<DotAnnotation>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parsed: AnnotationFile = serde_json::from_str(&text)
        .map_err(|e| Error::data(path, format!("malformed annotation JSON: {e}")))?;
    for (i, ann) in parsed.images.iter().enumerate() {
        if ann.file.is_empty() {
            return Err(Error::data(path, format!("record {i}: empty file name")));
        }
        if let Some(k) = ann
            .points
            .iter()
            .position(|p| !p.x.is_finite() || !p.y.is_finite())
        {
            return Err(Error::data(
                path,
                format!("record {i} ({}): point #{k} is not finite", ann.file),
            ));
        }
    }
    Ok(parsed.images)
}

pub fn write_annotations(path: impl AsRef<Path>, anns: &[DotAnnotation]) -> Result<()> {
    let path = path.as_ref();
    let doc = AnnotationFile {
        images: anns.to_vec(),
    };
    let text = serde_json::to_string_pretty(&doc).expect("annotations serialize");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
