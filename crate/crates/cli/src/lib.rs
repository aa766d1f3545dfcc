//! The `dronenet` command-line tool.
//!
//! Every command reads the same flat settings (see [`settings`]), runs, and
//! leaves a [`manifest::RunManifest`] in its output directory, whether it
//! succeeded or not.

pub mod commands;
pub mod error;
pub mod manifest;
pub mod settings;

use std::path::PathBuf;

use chrono::Utc;
use clap::{Args, Parser, Subcommand};

use commands::Run;
use error::{exit, CliError, CliResult};
use manifest::{timestamp, RunManifest};
use settings::Settings;

#[derive(Debug, Parser)]
#[command(
    name = "dronenet",
    version,
    about = "Self-ONN crowd density estimation"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Flat key=value configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed for initialization, splitting, shuffling and augmentation.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; 1 gives bit-reproducible runs. Defaults to all cores.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    /// Override one config key; may be repeated, later ones win.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build ground-truth density maps from dot annotations.
    MakeGt {
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long)]
        images: Option<PathBuf>,
        #[arg(long)]
        sigma: Option<f64>,
    },
    /// Train a model; writes checkpoints and the training log.
    Train {
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long)]
        images: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Score a model on an annotated dataset.
    Evaluate {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long)]
        images: Option<PathBuf>,
    },
    /// Estimate the count of one image and write its density map.
    Predict {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        image: Option<PathBuf>,
    },
    /// Time inference; uses a fresh model when no --model is given.
    Benchmark {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        height: Option<usize>,
        #[arg(long)]
        width: Option<usize>,
    },
    /// Compare analytic and finite-difference gradients on tiny models.
    Gradcheck,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::MakeGt { .. } => "make-gt",
            Command::Train { .. } => "train",
            Command::Evaluate { .. } => "evaluate",
            Command::Predict { .. } => "predict",
            Command::Benchmark { .. } => "benchmark",
            Command::Gradcheck => "gradcheck",
        }
    }

    /// The command's own flags as config assignments.
    fn assignments(&self) -> Vec<(&'static str, String)> {
        let p =
            |k: &'static str, v: &Option<PathBuf>| v.as_ref().map(|v| (k, v.display().to_string()));
        let n = |k: &'static str, v: Option<usize>| v.map(|v| (k, v.to_string()));
        let list = match self {
            Command::MakeGt {
                annotations,
                images,
                sigma,
            } => vec![
                p("annotations", annotations),
                p("images", images),
                sigma.map(|s| ("sigma", s.to_string())),
            ],
            Command::Train {
                annotations,
                images,
                epochs,
            } => vec![
                p("annotations", annotations),
                p("images", images),
                n("epochs", *epochs),
            ],
            Command::Evaluate {
                model,
                annotations,
                images,
            } => vec![
                p("model", model),
                p("annotations", annotations),
                p("images", images),
            ],
            Command::Predict { model, image } => vec![p("model", model), p("image", image)],
            Command::Benchmark {
                model,
                height,
                width,
            } => {
                vec![
                    p("model", model),
                    n("bench_height", *height),
                    n("bench_width", *width),
                ]
            }
            Command::Gradcheck => vec![],
        };
        list.into_iter().flatten().collect()
    }
}

/// Settings in order of precedence: defaults, the config file, the
/// command's flags, then each `--set`.
pub fn resolve_settings(cli: &Cli) -> CliResult<Settings> {
    let mut s = Settings::default();
    if let Some(path) = &cli.common.config {
        s.apply_file(path)?;
    }
    for (k, v) in cli.command.assignments() {
        s.set(k, &v)?;
    }
    for o in &cli.common.overrides {
        s.apply_override(o)?;
    }
    Ok(s)
}

fn configure_threads(threads: Option<usize>) -> CliResult<usize> {
    match threads {
        Some(0) => Err(CliError::Usage("--threads must be at least 1".into())),
        Some(n) => {
            // Fails only when a pool already exists, e.g. on a second run in
            // the same process; that pool is kept.
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global();
            Ok(rayon::current_num_threads())
        }
        None => Ok(rayon::current_num_threads()),
    }
}

fn dispatch(command: &Command, run: &mut Run) -> CliResult<()> {
    match command {
        Command::MakeGt { .. } => commands::make_gt(run),
        Command::Train { .. } => commands::train(run),
        Command::Evaluate { .. } => commands::evaluate_cmd(run),
        Command::Predict { .. } => commands::predict(run),
        Command::Benchmark { .. } => commands::benchmark_cmd(run),
        Command::Gradcheck => commands::gradcheck(run),
    }
}

/// Runs a parsed command line and returns the process exit code. Errors are
/// reported on standard error.
pub fn run(cli: Cli) -> u8 {
    let started = Utc::now();
    let settings = match resolve_settings(&cli) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return e.code();
        }
    };
    let threads = match configure_threads(cli.common.threads) {
        Ok(n) => n,
        Err(e) => {
            eprintln!("error: {e}");
            return e.code();
        }
    };
    let config = settings.resolved();
    let mut state = Run::new(settings, cli.common.seed, cli.common.out.clone());
    let result = dispatch(&cli.command, &mut state);
    let code = match &result {
        Ok(()) => exit::OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.code()
        }
    };

    let mut manifest = RunManifest {
        command: cli.command.name().to_string(),
        config,
        seed: cli.common.seed,
        threads,
        inputs: state.inputs,
        outputs: state.outputs,
        started: timestamp(started),
        finished: String::new(),
        checksums: Default::default(),
        exit_code: code,
    };
    let written = manifest.checksum_outputs().and_then(|()| {
        manifest.finished = timestamp(Utc::now());
        manifest.write(&cli.common.out)
    });
    match written {
        Ok(_) => code,
        Err(e) => {
            eprintln!("error: could not write the run manifest: {e}");
            if code == exit::OK {
                e.code()
            } else {
                code
            }
        }
    }
}
