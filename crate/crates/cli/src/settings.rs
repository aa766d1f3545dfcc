//! Flat `key = value` run configuration.
//!
//! A config file holds one assignment per line; blank lines and lines
//! starting with `#` are ignored. Values are applied in order, so a later
//! assignment of the same key (from the file, a command flag or `--set`)
//! replaces an earlier one.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use dronenet_core::metrics::{BenchOptions, REFERENCE_INPUT};
use dronenet_core::training::GradCheckOptions;
use dronenet_core::{DroneNetConfig, Precision, TrainConfig};

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Architecture {
    DroneNet,
    /// The same graph with every layer at q = 1.
    Mcnn,
    /// Two-layer columns of the given width, for tests and smoke runs.
    Tiny(usize),
}

impl FromStr for Architecture {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "dronenet" => Ok(Architecture::DroneNet),
            "mcnn" => Ok(Architecture::Mcnn),
            _ => s
                .strip_prefix("tiny")
                .and_then(|n| n.parse::<usize>().ok())
                .filter(|&n| n > 0)
                .map(Architecture::Tiny)
                .ok_or_else(|| format!("expected dronenet, mcnn or tinyN, got {s:?}")),
        }
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Architecture::DroneNet => f.write_str("dronenet"),
            Architecture::Mcnn => f.write_str("mcnn"),
            Architecture::Tiny(n) => write!(f, "tiny{n}"),
        }
    }
}

/// Every tunable of every command, with defaults.
#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    pub annotations: Option<PathBuf>,
    pub images: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub image: Option<PathBuf>,
    pub dataset_id: Option<String>,

    pub architecture: Architecture,
    /// Overrides the q of the first layer of each column.
    pub q_first: Option<usize>,
    /// Overrides the q of every later column layer.
    pub q_rest: Option<usize>,

    pub train: TrainConfig,

    pub grids: Vec<usize>,
    pub bench: BenchOptions,
    pub bench_height: usize,
    pub bench_width: usize,

    pub gradcheck: GradCheckOptions,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            annotations: None,
            images: None,
            model: None,
            image: None,
            dataset_id: None,
            architecture: Architecture::DroneNet,
            q_first: None,
            q_rest: None,
            train: TrainConfig::default(),
            grids: vec![1, 2, 3, 4],
            bench: BenchOptions::default(),
            bench_height: REFERENCE_INPUT.0,
            bench_width: REFERENCE_INPUT.1,
            gradcheck: GradCheckOptions::default(),
        }
    }
}

/// Every key accepted by [`Settings::set`], in the order they are reported.
pub const KEYS: &[&str] = &[
    "annotations",
    "images",
    "model",
    "image",
    "dataset_id",
    "architecture",
    "q_first",
    "q_rest",
    "learning_rate",
    "epochs",
    "batch_size",
    "sigma",
    "val_fraction",
    "checkpoint_every",
    "precision",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "augment_flip",
    "augment_brightness",
    "augment_contrast",
    "brightness_delta",
    "contrast_min",
    "contrast_max",
    "grids",
    "bench_warmup",
    "bench_runs",
    "bench_height",
    "bench_width",
    "gradcheck_step",
    "gradcheck_tolerance",
    "gradcheck_height",
    "gradcheck_width",
];

fn parse<T: FromStr>(key: &str, value: &str) -> CliResult<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse::<T>()
        .map_err(|e| CliError::Usage(format!("config key `{key}`: cannot parse {value:?}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> CliResult<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(CliError::Usage(format!(
            "config key `{key}`: expected true or false, got {value:?}"
        ))),
    }
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_default()
}

impl Settings {
    /// Assigns one key. Unknown keys and unparsable values are usage errors
    /// naming the key.
    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let value = value.trim();
        let t = &mut self.train;
        match key {
            "annotations" => self.annotations = opt_path(value),
            "images" => self.images = opt_path(value),
            "model" => self.model = opt_path(value),
            "image" => self.image = opt_path(value),
            "dataset_id" => self.dataset_id = (!value.is_empty()).then(|| value.to_string()),
            "architecture" => self.architecture = parse(key, value)?,
            "q_first" => self.q_first = parse_q(key, value)?,
            "q_rest" => self.q_rest = parse_q(key, value)?,
            "learning_rate" => t.learning_rate = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "sigma" => t.sigma = parse(key, value)?,
            "val_fraction" => t.val_fraction = parse(key, value)?,
            "checkpoint_every" => t.checkpoint_every = parse(key, value)?,
            "precision" => t.precision = parse::<Precision>(key, value)?,
            "adam_beta1" => t.adam.beta1 = parse(key, value)?,
            "adam_beta2" => t.adam.beta2 = parse(key, value)?,
            "adam_eps" => t.adam.eps = parse(key, value)?,
            "augment_flip" => t.augment.flip = parse_bool(key, value)?,
            "augment_brightness" => t.augment.brightness = parse_bool(key, value)?,
            "augment_contrast" => t.augment.contrast = parse_bool(key, value)?,
            "brightness_delta" => t.augment.brightness_delta = parse(key, value)?,
            "contrast_min" => t.augment.contrast_min = parse(key, value)?,
            "contrast_max" => t.augment.contrast_max = parse(key, value)?,
            "grids" => {
                self.grids = value
                    .split(',')
                    .map(|g| parse::<usize>(key, g.trim()))
                    .collect::<CliResult<Vec<_>>>()?;
                if self.grids.contains(&0) {
                    return Err(CliError::Usage(format!(
                        "config key `{key}`: grid sizes must be positive"
                    )));
                }
            }
            "bench_warmup" => self.bench.warmup = parse(key, value)?,
            "bench_runs" => self.bench.runs = parse(key, value)?,
            "bench_height" => self.bench_height = parse(key, value)?,
            "bench_width" => self.bench_width = parse(key, value)?,
            "gradcheck_step" => self.gradcheck.step = parse(key, value)?,
            "gradcheck_tolerance" => self.gradcheck.tolerance = parse(key, value)?,
            "gradcheck_height" => self.gradcheck.height = parse(key, value)?,
            "gradcheck_width" => self.gradcheck.width = parse(key, value)?,
            _ => return Err(CliError::Usage(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Applies `key=value` text: a whole config file or a single override.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> CliResult<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!(
                    "{origin}:{}: expected key=value, got {line:?}",
                    n + 1
                ))
            })?;
            self.set(key.trim(), value).map_err(|e| match e {
                CliError::Usage(m) => CliError::Usage(format!("{origin}:{}: {m}", n + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> CliResult<()> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text, &path.display().to_string())
    }

    pub fn apply_override(&mut self, assignment: &str) -> CliResult<()> {
        let (key, value) = assignment.split_once('=').ok_or_else(|| {
            CliError::Usage(format!("--set expects key=value, got {assignment:?}"))
        })?;
        self.set(key.trim(), value)
    }

    /// The value of every key, defaults included, as it would be written in
    /// a config file.
    pub fn resolved(&self) -> BTreeMap<String, String> {
        let t = &self.train;
        let q = |v: Option<usize>| v.map(|q| q.to_string()).unwrap_or_default();
        let values: Vec<String> = vec![
            show_path(&self.annotations),
            show_path(&self.images),
            show_path(&self.model),
            show_path(&self.image),
            self.dataset_id.clone().unwrap_or_default(),
            self.architecture.to_string(),
            q(self.q_first),
            q(self.q_rest),
            t.learning_rate.to_string(),
            t.epochs.to_string(),
            t.batch_size.to_string(),
            t.sigma.to_string(),
            t.val_fraction.to_string(),
            t.checkpoint_every.to_string(),
            t.precision.to_string(),
            t.adam.beta1.to_string(),
            t.adam.beta2.to_string(),
            t.adam.eps.to_string(),
            t.augment.flip.to_string(),
            t.augment.brightness.to_string(),
            t.augment.contrast.to_string(),
            t.augment.brightness_delta.to_string(),
            t.augment.contrast_min.to_string(),
            t.augment.contrast_max.to_string(),
            self.grids
                .iter()
                .map(|g| g.to_string())
                .collect::<Vec<_>>()
                .join(","),
            self.bench.warmup.to_string(),
            self.bench.runs.to_string(),
            self.bench_height.to_string(),
            self.bench_width.to_string(),
            self.gradcheck.step.to_string(),
            self.gradcheck.tolerance.to_string(),
            self.gradcheck.height.to_string(),
            self.gradcheck.width.to_string(),
        ];
        debug_assert_eq!(values.len(), KEYS.len());
        KEYS.iter().map(|k| k.to_string()).zip(values).collect()
    }

    pub fn model_config(&self) -> CliResult<DroneNetConfig> {
        let base = match self.architecture {
            Architecture::DroneNet => DroneNetConfig::dronenet(),
            Architecture::Mcnn => DroneNetConfig::mcnn(),
            Architecture::Tiny(n) => DroneNetConfig::tiny(n),
        };
        let first = base.columns[0].layers[0].q;
        let rest = base.columns[0].layers.get(1).map_or(first, |l| l.q);
        let config = match (self.q_first, self.q_rest) {
            (None, None) => base,
            (f, r) => base.with_q(f.unwrap_or(first), r.unwrap_or(rest)),
        };
        config
            .validate()
            .map_err(|e| CliError::Usage(format!("model configuration: {e}")))?;
        Ok(config)
    }

    /// The training configuration with `seed` folded in, validated.
    pub fn train_config(&self, seed: u64) -> CliResult<TrainConfig> {
        let config = TrainConfig {
            seed,
            ..self.train.clone()
        };
        config
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(config)
    }

    pub fn require_path(&self, key: &str) -> CliResult<&Path> {
        let p = match key {
            "annotations" => &self.annotations,
            "images" => &self.images,
            "model" => &self.model,
            "image" => &self.image,
            _ => unreachable!("not a path key: {key}"),
        };
        p.as_deref().ok_or_else(|| {
            CliError::Usage(format!(
                "missing `{key}`: pass --{key} or set it in the config"
            ))
        })
    }
}

fn parse_q(key: &str, value: &str) -> CliResult<Option<usize>> {
    if value.is_empty() {
        return Ok(None);
    }
    let q: usize = parse(key, value)?;
    if q == 0 {
        return Err(CliError::Usage(format!(
            "config key `{key}`: q must be at least 1"
        )));
    }
    Ok(Some(q))
}
