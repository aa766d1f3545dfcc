use std::path::Path;

use super::annotation::{parse_annotations, DotAnnotation, Point};
use super::image::{load_image, normalize_image};
use crate::error::Result;
use crate::tensor::Tensor;

/// One normalized image with its dots.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    /// `1×C×H×W`, values in `[-1, 1]`.
    pub image: Tensor<f32>,
    pub points: Vec<Point>,
}

impl Sample {
    pub fn count(&self) -> usize {
        self.points.len()
    }

    pub fn height(&self) -> usize {
        self.image.shape().h
    }

    pub fn width(&self) -> usize {
        self.image.shape().w
    }
}

/// Loads every annotated image of `annotations`, resolving file names
/// against `images_dir`. Points are checked against each image's extent.
pub fn load_dataset(
    annotations: impl AsRef<Path>,
    images_dir: impl AsRef<Path>,
) -> Result<Vec<Sample>> {
    let anns = parse_annotations(annotations)?;
    anns.into_iter()
        .map(|a| load_sample(&a, images_dir.as_ref()))
        .collect()
}

pub fn load_sample(ann: &DotAnnotation, images_dir: &Path) -> Result<Sample> {
    let image = normalize_image(&load_image(images_dir.join(&ann.file))?);
    let s = image.shape();
    ann.pixels(s.h, s.w)?;
    Ok(Sample {
        id: ann.file.clone(),
        image,
        points: ann.points.clone(),
    })
}
