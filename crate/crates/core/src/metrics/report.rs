use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::bench::{benchmark, model_footprint, BenchOptions};
use super::counting::{game, mae};
use super::quality::{psnr, ssim};
use crate::error::{Error, Result};
use crate::groundtruth::{density_map_from_points, downsample_gt, DensityMap, Resolution, Sample};
use crate::net::DroneNet;
use crate::tensor::{Scalar, Shape};

/// Writes non-finite values as the strings `"inf"`, `"-inf"` and `"nan"`.
pub mod float_or_string {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_nan() {
            s.serialize_str("nan")
        } else if v.is_infinite() {
            s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!(
                    "expected a number or \"inf\", got {other:?}"
                ))),
            },
        }
    }
}

fn format_float(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v}")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferenceMs {
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub id: String,
    pub annotated_count: usize,
    /// Sum of the ground-truth density map.
    pub true_count: f64,
    pub estimated_count: f64,
}

/// The full evaluation of a model on a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub model: String,
    pub images: usize,
    pub mae: f64,
    /// Mean GAME keyed by grid size.
    pub game: BTreeMap<usize, f64>,
    pub ssim: f64,
    #[serde(with = "float_or_string")]
    pub psnr: f64,
    pub model_size_bytes: usize,
    pub gmacs: f64,
    pub inference_ms: InferenceMs,
    pub throughput_fps: f64,
    pub per_image: Vec<ImageScore>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub dataset_id: String,
    pub model_id: String,
    pub sigma: f64,
    pub grids: Vec<usize>,
    pub bench: BenchOptions,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            dataset_id: "dataset".into(),
            model_id: "model".into(),
            sigma: 7.0,
            grids: vec![1, 2, 3, 4],
            bench: BenchOptions::default(),
        }
    }
}

/// Predicted and ground-truth density maps at output resolution.
pub fn predict_pair<T: Scalar>(
    model: &DroneNet<T>,
    sample: &Sample,
    sigma: f64,
) -> Result<(DensityMap, DensityMap)> {
    let pred = DensityMap::from_tensor(
        &model.forward(&sample.image.cast::<T>())?,
        Resolution::Output,
    )
    .map_err(|e| Error::invalid(format!("{}: prediction: {e}", sample.id)))?;
    let full = density_map_from_points(&sample.points, sample.height(), sample.width(), sigma)?;
    Ok((pred, downsample_gt(&full)?))
}

/// Scores `model` on `samples` and times it on the first sample's shape.
pub fn evaluate<T: Scalar>(
    model: &DroneNet<T>,
    samples: &[Sample],
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let first = samples
        .first()
        .ok_or_else(|| Error::invalid("evaluation set is empty"))?;
    if opts.grids.is_empty() || opts.grids.contains(&0) {
        return Err(Error::invalid(format!(
            "GAME grids must be positive, got {:?}",
            opts.grids
        )));
    }
    let mut per_image = Vec::with_capacity(samples.len());
    let mut game_sums: BTreeMap<usize, f64> = opts.grids.iter().map(|&g| (g, 0.0)).collect();
    let (mut ssim_sum, mut psnr_sum) = (0.0, 0.0);
    for s in samples {
        let (pred, gt) = predict_pair(model, s, opts.sigma)?;
        for (g, sum) in game_sums.iter_mut() {
            *sum += game(&pred, &gt, *g)?;
        }
        ssim_sum += ssim(&pred, &gt)?;
        psnr_sum += psnr(&pred, &gt)?;
        per_image.push(ImageScore {
            id: s.id.clone(),
            annotated_count: s.count(),
            true_count: gt.count(),
            estimated_count: pred.count(),
        });
    }
    let n = samples.len() as f64;
    let pairs: Vec<(f64, f64)> = per_image
        .iter()
        .map(|p| (p.estimated_count, p.true_count))
        .collect();
    let footprint = model_footprint(model);
    let bench = benchmark(
        model,
        Shape::new(1, first.image.shape().c, first.height(), first.width()),
        opts.bench,
    )?;
    Ok(EvalReport {
        dataset: opts.dataset_id.clone(),
        model: opts.model_id.clone(),
        images: samples.len(),
        mae: mae(&pairs)?,
        game: game_sums.into_iter().map(|(g, s)| (g, s / n)).collect(),
        ssim: ssim_sum / n,
        psnr: psnr_sum / n,
        model_size_bytes: footprint.size_bytes,
        gmacs: footprint.gmacs,
        inference_ms: InferenceMs {
            mean: bench.mean_ms,
            std: bench.std_ms,
        },
        throughput_fps: bench.throughput_fps,
        per_image,
    })
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn csv_header(&self) -> String {
        let mut cols = vec![
            "dataset".to_string(),
            "model".into(),
            "images".into(),
            "mae".into(),
        ];
        cols.extend(self.game.keys().map(|g| format!("game{g}")));
        cols.extend(
            [
                "ssim",
                "psnr",
                "model_size_bytes",
                "gmacs",
                "inference_ms_mean",
                "inference_ms_std",
                "throughput_fps",
            ]
            .map(String::from),
        );
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cols = vec![
            self.dataset.replace(',', ";"),
            self.model.replace(',', ";"),
            self.images.to_string(),
            format_float(self.mae),
        ];
        cols.extend(self.game.values().map(|&v| format_float(v)));
        cols.extend([
            format_float(self.ssim),
            format_float(self.psnr),
            self.model_size_bytes.to_string(),
            format_float(self.gmacs),
            format_float(self.inference_ms.mean),
            format_float(self.inference_ms.std),
            format_float(self.throughput_fps),
        ]);
        cols.join(",")
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    /// Appends one row to a results CSV, writing the header when the file
    /// is new. An existing file must have the same header.
    pub fn append_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let header = self.csv_header();
        let existing = match fs::read_to_string(path) {
            Ok(s) => Some(s),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
            Err(e) => return Err(Error::io(path, e)),
        };
        let mut text = String::new();
        match existing.as_deref().and_then(|s| s.lines().next()) {
            None => text.push_str(&format!("{header}\n")),
            Some(h) if h == header => {}
            Some(h) => {
                return Err(Error::data(
                    path,
                    format!("results file has columns `{h}`, this report needs `{header}`"),
                ))
            }
        }
        text.push_str(&self.csv_row());
        text.push('\n');
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
    }
}
