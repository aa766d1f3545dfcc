use serde::{Deserialize, Serialize};

use super::annotation::{resolve_pixels, DotAnnotation, Point};
use crate::error::{Error, Result};
use crate::net::DOWNSAMPLE;
use crate::tensor::{sum_pool, Scalar, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resolution {
    /// Same grid as the input image.
    Full,
    /// Model output grid (input / 4).
    Output,
}

/// Non-negative single-channel map whose sum is the object count.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMap {
    height: usize,
    width: usize,
    data: Vec<f32>,
    resolution: Resolution,
}

impl DensityMap {
    pub fn zeros(height: usize, width: usize, resolution: Resolution) -> Self {
        DensityMap {
            height,
            width,
            data: vec![0.0; height * width],
            resolution,
        }
    }

    pub fn from_vec(
        height: usize,
        width: usize,
        data: Vec<f32>,
        resolution: Resolution,
    ) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape(format!(
                "{} values do not fill a {height}x{width} density map",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid(format!(
                "density value {} at index {i} is negative or not finite",
                data[i]
            )));
        }
        Ok(DensityMap {
            height,
            width,
            data,
            resolution,
        })
    }

    /// Takes a `1×1×h×w` tensor, e.g. a model prediction.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>, resolution: Resolution) -> Result<Self> {
        let s = t.shape();
        if s.n != 1 || s.c != 1 {
            return Err(Error::shape(format!(
                "density map needs a 1x1xHxW tensor, got {s}"
            )));
        }
        Self::from_vec(
            s.h,
            s.w,
            t.data().iter().map(|v| v.as_f64() as f32).collect(),
            resolution,
        )
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_vec(
            Shape::new(1, 1, self.height, self.width),
            self.data.iter().map(|&v| T::from_f64(v as f64)).collect(),
        )
        .expect("extents match")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }

    /// Integral of the map, i.e. the count it represents.
    pub fn count(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(0.0, f32::max)
    }

    /// Mirror left-right.
    pub fn hflip(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks_exact(self.width) {
            data.extend(row.iter().rev());
        }
        DensityMap { data, ..*self }
    }

    /// Block-sum downsampling by `factor`; the count is conserved.
    pub fn downsample(&self, factor: usize) -> Result<Self> {
        let pooled = sum_pool(&self.to_tensor::<f64>(), factor)?;
        let s = pooled.shape();
        Ok(DensityMap {
            height: s.h,
            width: s.w,
            data: pooled.data().iter().map(|&v| v as f32).collect(),
            resolution: if factor == 1 {
                self.resolution
            } else {
                Resolution::Output
            },
        })
    }
}

/// Ground truth at model-output resolution (input / 4).
pub fn downsample_gt(d: &DensityMap) -> Result<DensityMap> {
    d.downsample(DOWNSAMPLE)
}

/// Truncated, renormalized Gaussian deposit for one dot: a
/// `(2·ceil(4σ)+1)²` window clipped to the image and rescaled so the dot
/// contributes exactly one unit of mass.
struct Kernel {
    radius: usize,
    taps: Vec<f64>,
}

impl Kernel {
    fn new(sigma: f64) -> Self {
        let radius = (4.0 * sigma).ceil() as usize;
        let taps = (0..=2 * radius)
            .map(|i| {
                let d = i as f64 - radius as f64;
                (-d * d / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        Kernel { radius, taps }
    }

    /// Kernel taps covering `[lo, hi]` around `center`, normalized over that
    /// clipped range.
    fn clipped(&self, center: usize, extent: usize) -> (usize, Vec<f64>) {
        let lo = center.saturating_sub(self.radius);
        let hi = (center + self.radius).min(extent - 1);
        let first = lo + self.radius - center;
        let taps = &self.taps[first..first + (hi - lo + 1)];
        let total: f64 = taps.iter().sum();
        (lo, taps.iter().map(|t| t / total).collect())
    }
}

/// Builds the ground-truth density map of `ann` on an `h × w` grid.
pub fn generate_density_map(
    ann: &DotAnnotation,
    h: usize,
    w: usize,
    sigma: f64,
) -> Result<DensityMap> {
    let pixels = ann.pixels(h, w)?;
    deposit(&pixels, h, w, sigma)
}

/// Same as [`generate_density_map`] for a bare point list.
pub fn density_map_from_points(
    points: &[Point],
    h: usize,
    w: usize,
    sigma: f64,
) -> Result<DensityMap> {
    let pixels = resolve_pixels(points, h, w).map_err(|(k, p)| {
        Error::invalid(format!(
            "point #{k} ({}, {}) lies outside the {w}x{h} grid",
            p.x, p.y
        ))
    })?;
    deposit(&pixels, h, w, sigma)
}

fn deposit(pixels: &[(usize, usize)], h: usize, w: usize, sigma: f64) -> Result<DensityMap> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    if h == 0 || w == 0 {
        return Err(Error::invalid("density map extents must be positive"));
    }
    let kernel = Kernel::new(sigma);
    let mut acc = vec![0.0f64; h * w];
    for &(py, px) in pixels {
        let (y0, gy) = kernel.clipped(py, h);
        let (x0, gx) = kernel.clipped(px, w);
        for (dy, &wy) in gy.iter().enumerate() {
            let row = &mut acc[(y0 + dy) * w + x0..(y0 + dy) * w + x0 + gx.len()];
            for (cell, &wx) in row.iter_mut().zip(&gx) {
                *cell += wy * wx;
            }
        }
    }
    Ok(DensityMap {
        height: h,
        width: w,
        data: acc.into_iter().map(|v| v as f32).collect(),
        resolution: Resolution::Full,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centred_point_sums_to_one_and_peaks_there() {
        let ann = DotAnnotation::new("c", vec![Point::new(50.0, 50.0)]);
        let d = generate_density_map(&ann, 101, 101, 7.0).unwrap();
        assert!((d.count() - 1.0).abs() < 1e-6);
        let argmax = d
            .data()
            .iter()
            .enumerate()
            .fold((0, 0.0f32), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
            .0;
        assert_eq!(argmax, 50 * 101 + 50);
    }

    #[test]
    fn corner_point_is_renormalized() {
        let ann = DotAnnotation::new("c", vec![Point::new(0.0, 0.0)]);
        let d = generate_density_map(&ann, 64, 64, 7.0).unwrap();
        assert!((d.count() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn empty_annotation_is_all_zero() {
        let d = generate_density_map(&DotAnnotation::new("e", vec![]), 8, 8, 7.0).unwrap();
        assert!(d.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_bad_sigma() {
        let ann = DotAnnotation::new("s", vec![Point::new(1.0, 1.0)]);
        assert!(generate_density_map(&ann, 8, 8, 0.0).is_err());
        assert!(generate_density_map(&ann, 8, 8, -1.0).is_err());
        assert!(generate_density_map(&ann, 8, 8, f64::NAN).is_err());
    }

    #[test]
    fn downsample_factor_one_is_identity() {
        let ann = DotAnnotation::new("d", vec![Point::new(3.0, 5.0)]);
        let d = generate_density_map(&ann, 16, 16, 2.0).unwrap();
        let same = d.downsample(1).unwrap();
        assert_eq!(same, d);
        let small = downsample_gt(&d).unwrap();
        assert_eq!((small.height(), small.width()), (4, 4));
        assert_eq!(small.resolution(), Resolution::Output);
        assert!((small.count() - d.count()).abs() < 1e-6);
    }

    #[test]
    fn from_vec_rejects_negative() {
        assert!(DensityMap::from_vec(1, 2, vec![0.5, -0.1], Resolution::Full).is_err());
        assert!(DensityMap::from_vec(1, 2, vec![0.5], Resolution::Full).is_err());
    }
}
