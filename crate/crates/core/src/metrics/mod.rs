//! Counting and map-quality metrics, inference timing and the evaluation
//! report.

mod bench;
mod counting;
mod quality;
mod report;

pub use bench::{
    bench_input, benchmark, model_footprint, BenchOptions, BenchReport, Footprint, ENV_RUNS,
    ENV_WARMUP, REFERENCE_INPUT,
};
pub use counting::{game, game_mean, mae};
pub use quality::{gaussian_window, psnr, ssim, ssim_range, SSIM_SIGMA, SSIM_WINDOW};
pub use report::{
    evaluate, float_or_string, predict_pair, EvalOptions, EvalReport, ImageScore, InferenceMs,
};
