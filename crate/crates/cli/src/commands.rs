use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use dronenet_core::groundtruth::{
    generate_density_map, load_dataset, load_image, normalize_image, parse_annotations, write_dmap,
    write_heat_pgm, Resolution,
};
use dronenet_core::metrics::{
    benchmark, evaluate, model_footprint, BenchReport, EvalOptions, Footprint,
};
use dronenet_core::net::{init_for_training, load_model};
use dronenet_core::training::{gradcheck_suite, split_dataset, train_with, GradCheckReport};
use dronenet_core::{DensityMap, DroneNet, Precision, Sample, Scalar, Shape};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::settings::Settings;

/// State shared by every command: the resolved settings and the bookkeeping
/// that ends up in the run manifest.
#[derive(Debug)]
pub struct Run {
    pub settings: Settings,
    pub seed: u64,
    pub out: PathBuf,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

impl Run {
    pub fn new(settings: Settings, seed: u64, out: PathBuf) -> Self {
        Run {
            settings,
            seed,
            out,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    fn out_dir(&self) -> CliResult<&Path> {
        fs::create_dir_all(&self.out)
            .map_err(|e| CliError::Data(format!("{}: {e}", self.out.display())))?;
        Ok(&self.out)
    }

    fn input(&mut self, p: &Path) {
        self.inputs.push(p.to_path_buf());
    }

    fn output(&mut self, p: PathBuf) {
        if !self.outputs.contains(&p) {
            self.outputs.push(p);
        }
    }

    fn write_json<S: Serialize>(&mut self, name: &str, value: &S) -> CliResult<PathBuf> {
        let path = self.out_dir()?.join(name);
        let text = serde_json::to_string_pretty(value).expect("report serializes");
        fs::write(&path, text + "\n")
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        self.output(path.clone());
        Ok(path)
    }
}

fn data_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn check_channels(model_channels: usize, what: &str, channels: usize) -> CliResult<()> {
    if model_channels != channels {
        return Err(CliError::Data(format!(
            "channel mismatch: the model expects {model_channels}-channel images but {what} has {channels} channel{}",
            if channels == 1 { "" } else { "s" }
        )));
    }
    Ok(())
}

fn check_dataset_channels(model_channels: usize, samples: &[Sample]) -> CliResult<()> {
    for s in samples {
        check_channels(
            model_channels,
            &format!("image {}", s.id),
            s.image.shape().c,
        )?;
    }
    Ok(())
}

fn load_samples(run: &mut Run) -> CliResult<Vec<Sample>> {
    let ann = run.settings.require_path("annotations")?.to_path_buf();
    let images = run.settings.require_path("images")?.to_path_buf();
    run.input(&ann);
    run.input(&images);
    let samples = load_dataset(&ann, &images)?;
    if samples.is_empty() {
        return Err(CliError::Data(format!(
            "{}: no annotated images",
            ann.display()
        )));
    }
    Ok(samples)
}

fn load_checkpoint<T: Scalar>(run: &mut Run) -> CliResult<DroneNet<T>> {
    let path = run.settings.require_path("model")?.to_path_buf();
    run.input(&path);
    Ok(load_model::<T>(&path)?)
}

/// Output file name for an annotation or image entry: the file's stem with
/// a new extension, keeping any sub-directories.
fn derived_name(file: &str, ext: &str) -> PathBuf {
    Path::new(file).with_extension(ext)
}

pub fn make_gt(run: &mut Run) -> CliResult<()> {
    let ann_path = run.settings.require_path("annotations")?.to_path_buf();
    let images = run.settings.require_path("images")?.to_path_buf();
    let sigma = run.settings.train.sigma;
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(CliError::Usage(format!(
            "config key `sigma`: must be > 0, got {sigma}"
        )));
    }
    run.input(&ann_path);
    run.input(&images);
    let anns = parse_annotations(&ann_path)?;
    let out = run.out_dir()?.to_path_buf();

    let mut summary = String::from("file,count,map_sum\n");
    let mut failures = Vec::new();
    for ann in &anns {
        let image_path = images.join(&ann.file);
        let map = match load_image(&image_path).and_then(|img| {
            let s = img.shape();
            generate_density_map(ann, s.h, s.w, sigma)
        }) {
            Ok(m) => m,
            Err(e) => {
                eprintln!("error: {}: {e}", ann.file);
                failures.push(ann.file.clone());
                continue;
            }
        };
        let dest = out.join(derived_name(&ann.file, "dmap"));
        if let Some(parent) = dest.parent() {
            fs::create_dir_all(parent).map_err(|e| data_err(parent, e))?;
        }
        write_dmap(&map, &dest)?;
        run.input(&image_path);
        run.output(dest);
        let line = format!("{}, {}, {:.6}", ann.file, ann.count(), map.count());
        println!("{line}");
        summary.push_str(&format!("{},{},{}\n", ann.file, ann.count(), map.count()));
    }
    let summary_path = out.join("gt_summary.csv");
    fs::write(&summary_path, summary).map_err(|e| data_err(&summary_path, e))?;
    run.output(summary_path);

    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Data(format!(
            "{} of {} records failed: {}",
            failures.len(),
            anns.len(),
            failures.join(", ")
        )))
    }
}

pub fn train(run: &mut Run) -> CliResult<()> {
    let config = run.settings.train_config(run.seed)?;
    let model_config = run.settings.model_config()?;
    let samples = load_samples(run)?;
    check_dataset_channels(model_config.in_channels, &samples)?;
    let (train_set, val_set) = split_dataset(&samples, config.val_fraction, config.seed)?;
    let out = run.out_dir()?.to_path_buf();
    println!(
        "training on {} images, validating on {} ({} precision)",
        train_set.len(),
        val_set.len(),
        config.precision
    );
    match config.precision {
        Precision::F32 => train_typed::<f32>(&model_config, &train_set, &val_set, &config, &out)?,
        Precision::F64 => train_typed::<f64>(&model_config, &train_set, &val_set, &config, &out)?,
    }

    let mut names = vec!["train_log.csv".to_string(), "epoch_times.csv".to_string()];
    for stem in ["best", "final"] {
        names.push(format!("{stem}.sonn"));
        names.push(format!("{stem}.json"));
    }
    if config.checkpoint_every > 0 {
        for epoch in (config.checkpoint_every..=config.epochs).step_by(config.checkpoint_every) {
            names.push(format!("epoch_{epoch:04}.sonn"));
            names.push(format!("epoch_{epoch:04}.json"));
        }
    }
    for n in names {
        run.output(out.join(n));
    }
    Ok(())
}

fn train_typed<T: Scalar>(
    model_config: &dronenet_core::DroneNetConfig,
    train_set: &[Sample],
    val_set: &[Sample],
    config: &dronenet_core::TrainConfig,
    out: &Path,
) -> CliResult<()> {
    let mut model = DroneNet::<T>::build(model_config.clone())?;
    init_for_training(&mut model, config.seed);
    let outcome = train_with(model, train_set, val_set, config, Some(out), |row| {
        println!(
            "epoch {:>4}  train_loss {:.6}  val_mae {:.4}  ({:.1}s)",
            row.epoch, row.train_loss, row.val_mae, row.seconds
        );
        let _ = std::io::stdout().flush();
    })?;
    println!(
        "best epoch {} after {} steps",
        outcome.best_epoch, outcome.steps
    );
    Ok(())
}

pub fn evaluate_cmd(run: &mut Run) -> CliResult<()> {
    match run.settings.train.precision {
        Precision::F32 => evaluate_typed::<f32>(run),
        Precision::F64 => evaluate_typed::<f64>(run),
    }
}

fn evaluate_typed<T: Scalar>(run: &mut Run) -> CliResult<()> {
    let model = load_checkpoint::<T>(run)?;
    let samples = load_samples(run)?;
    check_dataset_channels(model.config().in_channels, &samples)?;
    let s = &run.settings;
    let stem = |p: &Path| {
        p.file_stem()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_default()
    };
    let opts = EvalOptions {
        dataset_id: s
            .dataset_id
            .clone()
            .unwrap_or_else(|| stem(s.annotations.as_deref().expect("checked by load_samples"))),
        model_id: stem(s.model.as_deref().expect("checked by load_checkpoint")),
        sigma: s.train.sigma,
        grids: s.grids.clone(),
        bench: s.bench.with_env()?,
    };
    let report = evaluate(&model, &samples, &opts)?;
    println!("{}", report.to_json());
    run.write_json("eval.json", &report)?;
    let csv = run.out_dir()?.join("eval.csv");
    report.append_csv(&csv)?;
    run.output(csv);
    Ok(())
}

pub fn predict(run: &mut Run) -> CliResult<()> {
    match run.settings.train.precision {
        Precision::F32 => predict_typed::<f32>(run),
        Precision::F64 => predict_typed::<f64>(run),
    }
}

fn predict_typed<T: Scalar>(run: &mut Run) -> CliResult<()> {
    let model = load_checkpoint::<T>(run)?;
    let image_path = run.settings.require_path("image")?.to_path_buf();
    run.input(&image_path);
    let image = normalize_image(&load_image(&image_path)?);
    check_channels(
        model.config().in_channels,
        &image_path.display().to_string(),
        image.shape().c,
    )?;
    let pred = model.forward(&image.cast::<T>())?;
    if !pred.is_finite() {
        return Err(CliError::Numerical(format!(
            "prediction for {} contains non-finite values",
            image_path.display()
        )));
    }
    let map = DensityMap::from_tensor(&pred, Resolution::Output)?;
    let name = image_path
        .file_name()
        .map(|f| f.to_string_lossy().into_owned())
        .unwrap_or_else(|| "prediction".into());
    let out = run.out_dir()?.to_path_buf();
    let dmap = out.join(derived_name(&name, "dmap"));
    let heat = out.join(derived_name(&name, "pgm"));
    write_dmap(&map, &dmap)?;
    write_heat_pgm(&map, &heat)?;
    run.output(dmap);
    run.output(heat);
    println!("{:.2}", map.count());
    Ok(())
}

/// Contents of `benchmark.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkOutput {
    pub model: String,
    pub timing: BenchReport,
    pub footprint: Footprint,
}

pub fn benchmark_cmd(run: &mut Run) -> CliResult<()> {
    match run.settings.train.precision {
        Precision::F32 => benchmark_typed::<f32>(run),
        Precision::F64 => benchmark_typed::<f64>(run),
    }
}

fn benchmark_typed<T: Scalar>(run: &mut Run) -> CliResult<()> {
    let (model, label) = match run.settings.model.clone() {
        Some(path) => (load_checkpoint::<T>(run)?, path.display().to_string()),
        None => {
            let mut m = DroneNet::<T>::build(run.settings.model_config()?)?;
            init_for_training(&mut m, run.seed);
            (
                m,
                format!("{} (fresh, seed {})", run.settings.architecture, run.seed),
            )
        }
    };
    let s = &run.settings;
    let shape = Shape::new(1, model.config().in_channels, s.bench_height, s.bench_width);
    let timing = benchmark(&model, shape, s.bench.with_env()?)?;
    let footprint = model_footprint(&model);
    println!(
        "{label}: {:.3} ms mean ({:.3} ms std) over {} runs, {:.2} fps, {} parameters, {:.3} GMACs at {}x{}",
        timing.mean_ms,
        timing.std_ms,
        timing.runs,
        timing.throughput_fps,
        footprint.parameters,
        footprint.gmacs,
        footprint.reference_input[0],
        footprint.reference_input[1],
    );
    run.write_json(
        "benchmark.json",
        &BenchmarkOutput {
            model: label,
            timing,
            footprint,
        },
    )?;
    Ok(())
}

pub fn gradcheck(run: &mut Run) -> CliResult<()> {
    let reports: Vec<GradCheckReport> = gradcheck_suite(run.seed, &run.settings.gradcheck)?;
    for r in &reports {
        println!(
            "{:<28} max rel err {:.3e}  (tol {:.0e}, {} of {} outputs active)  {}",
            r.label,
            r.max_rel_err,
            r.tolerance,
            r.active_outputs,
            r.total_outputs,
            if r.passed { "PASS" } else { "FAIL" }
        );
    }
    run.write_json("gradcheck.json", &reports)?;
    let failed: Vec<String> = reports
        .iter()
        .filter(|r| !r.passed)
        .map(|r| {
            let worst = r
                .layers
                .iter()
                .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
                .map(|l| l.layer.as_str())
                .unwrap_or("?");
            format!("{} (worst layer {worst}, {:.3e})", r.label, r.max_rel_err)
        })
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::GradCheck(failed.join("; ")))
    }
}
