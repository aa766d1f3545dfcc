use std::fs;
use std::io::Cursor;
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageFormat};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Decodes an 8-bit binary PGM (`P5`) or PPM (`P6`) into a `1×C×H×W` tensor
/// of raw values in `[0, 255]`.
pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes).map_err(|msg| Error::data(path, msg))
}

fn decode_image(bytes: &[u8]) -> std::result::Result<Tensor<f32>, String> {
    let magic = &bytes[..bytes.len().min(2)];
    if magic != b"P5" && magic != b"P6" {
        return Err(format!(
            "unsupported image magic {:?}; expected binary PGM (P5) or PPM (P6)",
            String::from_utf8_lossy(magic)
        ));
    }
    let img =
        image::load_from_memory_with_format(bytes, ImageFormat::Pnm).map_err(|e| e.to_string())?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, raw) = match img {
        DynamicImage::ImageLuma8(g) => (1, g.into_raw()),
        DynamicImage::ImageRgb8(c) => (3, c.into_raw()),
        other => {
            return Err(format!(
                "only 8-bit images are supported, got {:?}",
                other.color()
            ))
        }
    };
    // Interleaved HWC to planar CHW.
    let mut data = vec![0.0f32; raw.len()];
    for (i, &v) in raw.iter().enumerate() {
        let (pix, c) = (i / channels, i % channels);
        data[c * h * w + pix] = v as f32;
    }
    Tensor::from_vec(Shape::new(1, channels, h, w), data).map_err(|e| e.to_string())
}

/// Maps `[0, 255]` to `[-1, 1]`.
pub fn normalize_image(x: &Tensor<f32>) -> Tensor<f32> {
    x.map(|v| v / 127.5 - 1.0)
}

/// Writes a `1×1×H×W` (PGM) or `1×3×H×W` (PPM) tensor of values in
/// `[0, 255]`; values are rounded and clamped.
pub fn write_image(x: &Tensor<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let s = x.shape();
    let (subtype, color) = match (s.n, s.c) {
        (1, 1) => (
            PnmSubtype::Graymap(SampleEncoding::Binary),
            ExtendedColorType::L8,
        ),
        (1, 3) => (
            PnmSubtype::Pixmap(SampleEncoding::Binary),
            ExtendedColorType::Rgb8,
        ),
        _ => {
            return Err(Error::shape(format!(
                "cannot write a {s} tensor as an image"
            )))
        }
    };
    let mut interleaved = vec![0u8; s.len()];
    for c in 0..s.c {
        for p in 0..s.plane() {
            interleaved[p * s.c + c] = x.data()[c * s.plane() + p].round().clamp(0.0, 255.0) as u8;
        }
    }
    let mut buf = Cursor::new(Vec::new());
    PnmEncoder::new(&mut buf)
        .with_subtype(subtype)
        .write_image(&interleaved, s.w as u32, s.h as u32, color)
        .map_err(|e| Error::data(path, e.to_string()))?;
    fs::write(path, buf.into_inner()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_endpoints() {
        let x = Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![0.0, 127.5, 255.0]).unwrap();
        assert_eq!(normalize_image(&x).data(), &[-1.0, 0.0, 1.0]);
    }

    #[test]
    fn rejects_unknown_magic() {
        let err = decode_image(b"P3\n1 1\n255\n0 0 0\n").unwrap_err();
        assert!(err.contains("\"P3\""), "{err}");
        let err = decode_image(b"\x89PNG").unwrap_err();
        assert!(err.contains("magic"), "{err}");
    }

    #[test]
    fn decodes_ppm_planar() {
        let mut bytes = b"P6\n2 1\n255\n".to_vec();
        bytes.extend([10, 20, 30, 40, 50, 60]);
        let t = decode_image(&bytes).unwrap();
        assert_eq!(t.shape(), Shape::new(1, 3, 1, 2));
        assert_eq!(t.data(), &[10.0, 40.0, 20.0, 50.0, 30.0, 60.0]);
    }
}
