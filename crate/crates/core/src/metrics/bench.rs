use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{model_to_bytes, DroneNet};
use crate::tensor::{Scalar, Shape, Tensor};

pub const ENV_WARMUP: &str = "DRONENET_BENCH_WARMUP";
pub const ENV_RUNS: &str = "DRONENET_BENCH_RUNS";

/// Input extent used for the GMAC figure (height × width).
pub const REFERENCE_INPUT: (usize, usize) = (512, 640);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchOptions {
    pub warmup: usize,
    pub runs: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            warmup: 2,
            runs: 10,
        }
    }
}

impl BenchOptions {
    /// `self` with `DRONENET_BENCH_WARMUP` / `DRONENET_BENCH_RUNS` applied.
    pub fn with_env(self) -> Result<Self> {
        let read = |key: &str, fallback: usize| -> Result<usize> {
            match std::env::var(key) {
                Ok(v) => v.trim().parse().map_err(|_| {
                    Error::invalid(format!("{key}={v:?} is not a non-negative integer"))
                }),
                Err(_) => Ok(fallback),
            }
        };
        Ok(BenchOptions {
            warmup: read(ENV_WARMUP, self.warmup)?,
            runs: read(ENV_RUNS, self.runs)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub input: [usize; 4],
    pub warmup: usize,
    pub runs: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    pub throughput_fps: f64,
    pub samples_ms: Vec<f64>,
}

/// Deterministic input in `[-1, 1]` for timing runs.
pub fn bench_input<T: Scalar>(shape: Shape) -> Tensor<T> {
    let mut i = 0u64;
    Tensor::from_fn(shape, |_, _, _, _| {
        i += 1;
        T::from_f64(((i as f64) * 0.618_034).sin())
    })
}

/// Times `runs` forward passes after `warmup` untimed ones, on a dedicated
/// single-thread pool.
pub fn benchmark<T: Scalar>(
    model: &DroneNet<T>,
    shape: Shape,
    opts: BenchOptions,
) -> Result<BenchReport> {
    if opts.runs == 0 {
        return Err(Error::invalid("benchmark needs at least one timed run"));
    }
    if shape.c != model.in_channels() || shape.n == 0 {
        return Err(Error::shape(format!(
            "benchmark input {shape} does not fit a model with {} input channels",
            model.in_channels()
        )));
    }
    let x = bench_input::<T>(shape);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start benchmark thread: {e}")))?;
    let samples = pool.install(|| -> Result<Vec<f64>> {
        for _ in 0..opts.warmup {
            std::hint::black_box(model.forward(&x)?);
        }
        let mut samples = Vec::with_capacity(opts.runs);
        for _ in 0..opts.runs {
            let t = Instant::now();
            std::hint::black_box(model.forward(&x)?);
            samples.push(t.elapsed().as_secs_f64() * 1e3);
        }
        Ok(samples)
    })?;
    Ok(summarize(shape, opts, samples))
}

fn summarize(shape: Shape, opts: BenchOptions, samples: Vec<f64>) -> BenchReport {
    let n = samples.len() as f64;
    let total: f64 = samples.iter().sum();
    let mean = total / n;
    let var = if samples.len() > 1 {
        samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    BenchReport {
        input: [shape.n, shape.c, shape.h, shape.w],
        warmup: opts.warmup,
        runs: opts.runs,
        mean_ms: mean,
        std_ms: var.sqrt(),
        min_ms: samples.iter().copied().fold(f64::INFINITY, f64::min),
        max_ms: samples.iter().copied().fold(0.0, f64::max),
        throughput_fps: if total > 0.0 {
            n * shape.n as f64 * 1e3 / total
        } else {
            f64::INFINITY
        },
        samples_ms: samples,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Footprint {
    pub size_bytes: usize,
    pub parameters: usize,
    pub gmacs: f64,
    pub reference_input: [usize; 2],
}

/// Serialized size and GMACs at the 512×640 reference input.
pub fn model_footprint<T: Scalar>(model: &DroneNet<T>) -> Footprint {
    let (h, w) = REFERENCE_INPUT;
    Footprint {
        size_bytes: model_to_bytes(model).len(),
        parameters: model.param_count(),
        gmacs: model.count_macs(h, w).gmacs(),
        reference_input: [h, w],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::DroneNetConfig;

    #[test]
    fn fps_and_mean_agree() {
        let m = DroneNet::<f32>::build(DroneNetConfig::tiny(2)).unwrap();
        let r = benchmark(
            &m,
            Shape::new(1, 3, 16, 16),
            BenchOptions { warmup: 1, runs: 5 },
        )
        .unwrap();
        assert_eq!(r.samples_ms.len(), 5);
        assert!((r.throughput_fps * r.mean_ms / 1000.0 - 1.0).abs() < 0.05);
        assert!(r.min_ms <= r.mean_ms && r.mean_ms <= r.max_ms);
    }

    #[test]
    fn zero_runs_rejected() {
        let m = DroneNet::<f32>::build(DroneNetConfig::tiny(1)).unwrap();
        assert!(benchmark(
            &m,
            Shape::new(1, 3, 8, 8),
            BenchOptions { warmup: 0, runs: 0 }
        )
        .is_err());
        assert!(benchmark(&m, Shape::new(1, 1, 8, 8), BenchOptions::default()).is_err());
    }

    #[test]
    fn summary_statistics() {
        let r = summarize(
            Shape::new(1, 1, 1, 1),
            BenchOptions { warmup: 0, runs: 4 },
            vec![1.0, 2.0, 3.0, 4.0],
        );
        assert_eq!(r.mean_ms, 2.5);
        assert!((r.std_ms - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(r.throughput_fps, 400.0);
    }

    #[test]
    fn footprint_of_default_model() {
        let m = DroneNet::<f32>::build(DroneNetConfig::dronenet()).unwrap();
        let f = model_footprint(&m);
        assert_eq!(f.parameters, 650_065);
        assert_eq!(f.size_bytes, 12 + 40 * 13 + 4 * 650_065 + 4);
        assert!((f.gmacs - 38.295_429_12).abs() < 1e-9);
    }
}
