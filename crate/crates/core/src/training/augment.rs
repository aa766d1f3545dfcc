use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::groundtruth::Point;
use crate::tensor::Tensor;

/// Photometric and geometric augmentation applied per training image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub flip: bool,
    pub brightness: bool,
    pub contrast: bool,
    /// Brightness offsets are drawn from `[-brightness_delta, brightness_delta]`.
    pub brightness_delta: f32,
    pub contrast_min: f32,
    pub contrast_max: f32,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            flip: true,
            brightness: true,
            contrast: true,
            brightness_delta: 0.1,
            contrast_min: 0.8,
            contrast_max: 1.2,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        AugmentConfig {
            flip: false,
            brightness: false,
            contrast: false,
            ..AugmentConfig::default()
        }
    }

    pub fn is_identity(&self) -> bool {
        !(self.flip || self.brightness || self.contrast)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.brightness_delta >= 0.0 && self.brightness_delta.is_finite()) {
            return Err(Error::invalid(format!(
                "brightness delta must be finite and >= 0, got {}",
                self.brightness_delta
            )));
        }
        if !(self.contrast_min > 0.0
            && self.contrast_min <= self.contrast_max
            && self.contrast_max.is_finite())
        {
            return Err(Error::invalid(format!(
                "contrast range [{}, {}] must satisfy 0 < min <= max",
                self.contrast_min, self.contrast_max
            )));
        }
        Ok(())
    }
}

/// Mirrors an `N×C×H×W` tensor left to right.
pub fn hflip_image(image: &Tensor<f32>) -> Tensor<f32> {
    let w = image.shape().w;
    let mut out = image.clone();
    for (dst, src) in out
        .data_mut()
        .chunks_exact_mut(w)
        .zip(image.data().chunks_exact(w))
    {
        for (d, s) in dst.iter_mut().zip(src.iter().rev()) {
            *d = *s;
        }
    }
    out
}

/// Mirrors dot positions for an image of width `width`: `x → W − 1 − x`.
pub fn hflip_points(points: &[Point], width: usize) -> Vec<Point> {
    let last = width as f64 - 1.0;
    points.iter().map(|p| Point::new(last - p.x, p.y)).collect()
}

/// Random horizontal flip (p = 0.5), brightness offset and contrast scaling
/// about the image mean, in that order, then clamping to `[-1, 1]`.
/// Random numbers are drawn only for enabled transforms.
pub fn augment<R: Rng + ?Sized>(
    image: &Tensor<f32>,
    points: &[Point],
    config: &AugmentConfig,
    rng: &mut R,
) -> (Tensor<f32>, Vec<Point>) {
    if config.is_identity() {
        return (image.clone(), points.to_vec());
    }
    let (mut out, pts) = if config.flip && rng.random_bool(0.5) {
        (hflip_image(image), hflip_points(points, image.shape().w))
    } else {
        (image.clone(), points.to_vec())
    };
    if config.brightness && config.brightness_delta > 0.0 {
        let d = config.brightness_delta;
        let u: f32 = rng.random_range(-d..=d);
        out.data_mut().iter_mut().for_each(|v| *v += u);
    }
    if config.contrast {
        let c: f32 = rng.random_range(config.contrast_min..=config.contrast_max);
        let mean = (out.sum() / out.len().max(1) as f64) as f32;
        out.data_mut()
            .iter_mut()
            .for_each(|v| *v = (*v - mean) * c + mean);
    }
    out.data_mut()
        .iter_mut()
        .for_each(|v| *v = v.clamp(-1.0, 1.0));
    (out, pts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::groundtruth::density_map_from_points;
    use crate::tensor::Shape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn image() -> Tensor<f32> {
        Tensor::from_fn(Shape::new(1, 3, 6, 9), |_, c, h, w| {
            ((c * 31 + h * 7 + w) as f32 * 0.37).sin() * 0.9
        })
    }

    #[test]
    fn double_flip_is_identity() {
        let img = image();
        let pts = vec![
            Point::new(0.0, 1.0),
            Point::new(3.5, 2.0),
            Point::new(8.0, 5.5),
        ];
        assert_eq!(hflip_image(&hflip_image(&img)), img);
        assert_eq!(hflip_points(&hflip_points(&pts, 9), 9), pts);
        assert_eq!(hflip_image(&img).get(0, 1, 2, 0), img.get(0, 1, 2, 8));
    }

    #[test]
    fn disabled_is_identity() {
        let img = image();
        let pts = vec![Point::new(2.0, 2.0)];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (a, p) = augment(&img, &pts, &AugmentConfig::disabled(), &mut rng);
        assert_eq!(a, img);
        assert_eq!(p, pts);
    }

    #[test]
    fn deterministic_and_bounded() {
        let img = image();
        let pts = vec![Point::new(2.0, 2.0)];
        let cfg = AugmentConfig {
            brightness_delta: 0.5,
            ..AugmentConfig::default()
        };
        for seed in 0..20 {
            let a = augment(&img, &pts, &cfg, &mut ChaCha8Rng::seed_from_u64(seed));
            let b = augment(&img, &pts, &cfg, &mut ChaCha8Rng::seed_from_u64(seed));
            assert_eq!(a, b);
            assert!(a.0.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn brightness_only_shifts_by_bounded_constant() {
        let img = image().map(|v| v * 0.5);
        let cfg = AugmentConfig {
            flip: false,
            contrast: false,
            ..AugmentConfig::default()
        };
        let (out, _) = augment(&img, &[], &cfg, &mut ChaCha8Rng::seed_from_u64(4));
        let d0 = out.data()[0] - img.data()[0];
        assert!(d0.abs() <= 0.1 + 1e-6);
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b - d0).abs() < 1e-6);
        }
    }

    #[test]
    fn flip_commutes_with_density_generation() {
        let pts = vec![
            Point::new(1.0, 2.0),
            Point::new(7.0, 4.0),
            Point::new(12.0, 9.0),
        ];
        let (h, w) = (14, 17);
        let a = density_map_from_points(&hflip_points(&pts, w), h, w, 2.0).unwrap();
        let b = density_map_from_points(&pts, h, w, 2.0).unwrap().hflip();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= 1e-6);
        }
    }

    #[test]
    fn validate_ranges() {
        assert!(AugmentConfig::default().validate().is_ok());
        let bad = AugmentConfig {
            contrast_min: 1.5,
            contrast_max: 1.2,
            ..AugmentConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
