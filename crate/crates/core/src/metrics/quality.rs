use crate::error::{Error, Result};
use crate::groundtruth::DensityMap;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

fn check_shapes(a: &DensityMap, b: &DensityMap, what: &str) -> Result<()> {
    if (a.height(), a.width()) != (b.height(), b.width()) {
        return Err(Error::shape(format!(
            "{what}: maps differ in shape: {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    if a.data().is_empty() {
        return Err(Error::shape(format!("{what}: empty maps")));
    }
    Ok(())
}

/// Normalized 1-D Gaussian of `len` taps centred in the window.
pub fn gaussian_window(len: usize, sigma: f64) -> Vec<f64> {
    let c = (len as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..len)
        .map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Dynamic range used for the SSIM constants: the range of the values of
/// both maps together, or 1 when both maps are one constant.
pub fn ssim_range(a: &DensityMap, b: &DensityMap) -> f64 {
    let (lo, hi) = a
        .data()
        .iter()
        .chain(b.data())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v as f64), hi.max(v as f64))
        });
    let l = hi - lo;
    if l > 0.0 {
        l
    } else {
        1.0
    }
}

/// Separable "valid" filtering of a row-major `h × w` plane.
fn filter_valid(data: &[f64], h: usize, w: usize, kh: &[f64], kw: &[f64]) -> Vec<f64> {
    let (oh, ow) = (h - kh.len() + 1, w - kw.len() + 1);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        let row = &data[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = kw.iter().zip(&row[x..]).map(|(k, v)| k * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for (i, k) in kh.iter().enumerate() {
            let src = &tmp[(y + i) * ow..(y + i + 1) * ow];
            for (o, v) in out[y * ow..(y + 1) * ow].iter_mut().zip(src) {
                *o += k * v;
            }
        }
    }
    out
}

/// Mean structural similarity over every fully contained window. The
/// window is an 11×11 Gaussian with σ = 1.5, shrunk to the map extent along
/// any axis shorter than 11.
pub fn ssim(pred: &DensityMap, gt: &DensityMap) -> Result<f64> {
    check_shapes(pred, gt, "SSIM")?;
    let (h, w) = (gt.height(), gt.width());
    let l = ssim_range(pred, gt);
    let c1 = (0.01 * l).powi(2);
    let c2 = (0.03 * l).powi(2);
    let kh = gaussian_window(SSIM_WINDOW.min(h), SSIM_SIGMA);
    let kw = gaussian_window(SSIM_WINDOW.min(w), SSIM_SIGMA);

    let x: Vec<f64> = pred.data().iter().map(|&v| v as f64).collect();
    let y: Vec<f64> = gt.data().iter().map(|&v| v as f64).collect();
    let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<f64>>();
    let mx = filter_valid(&x, h, w, &kh, &kw);
    let my = filter_valid(&y, h, w, &kh, &kw);
    let mxx = filter_valid(&prod(&x, &x), h, w, &kh, &kw);
    let myy = filter_valid(&prod(&y, &y), h, w, &kh, &kw);
    let mxy = filter_valid(&prod(&x, &y), h, w, &kh, &kw);

    let mut sum = 0.0;
    for i in 0..mx.len() {
        let (ux, uy) = (mx[i], my[i]);
        let vx = mxx[i] - ux * ux;
        let vy = myy[i] - uy * uy;
        let cxy = mxy[i] - ux * uy;
        sum +=
            ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
    }
    Ok(sum / mx.len() as f64)
}

/// Peak signal-to-noise ratio in dB with the peak taken from the ground
/// truth. Identical maps give `f64::INFINITY`. When the ground truth is all
/// zero the prediction's largest magnitude is used as the peak.
pub fn psnr(pred: &DensityMap, gt: &DensityMap) -> Result<f64> {
    check_shapes(pred, gt, "PSNR")?;
    let n = gt.data().len() as f64;
    let mse = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(&p, &g)| (p as f64 - g as f64).powi(2))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    let mut peak = gt.max() as f64;
    if peak <= 0.0 {
        peak = pred
            .data()
            .iter()
            .fold(0.0f64, |m, &v| m.max((v as f64).abs()));
    }
    Ok(10.0 * (peak * peak / mse).log10())
}
