use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::mse_loss;
use crate::error::{Error, Result};
use crate::net::{init_weights, DroneNet, DroneNetConfig, Gradients};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Largest relative error accepted.
    pub tolerance: f64,
    pub height: usize,
    pub width: usize,
    /// The fixture shifts the fusion bias so that the smallest pre-activation
    /// of the output ReLU equals this margin.
    pub relu_margin: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            tolerance: 1e-5,
            height: 8,
            width: 8,
            relu_margin: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorCheck {
    pub name: String,
    pub len: usize,
    pub max_abs_err: f64,
    pub max_rel_err: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerCheck {
    pub layer: String,
    pub max_rel_err: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub label: String,
    pub input: [usize; 4],
    pub step: f64,
    pub tolerance: f64,
    pub parameters: usize,
    pub active_outputs: usize,
    pub total_outputs: usize,
    pub tensors: Vec<TensorCheck>,
    pub layers: Vec<LayerCheck>,
    pub max_rel_err: f64,
    pub passed: bool,
}

/// Relative error of one gradient entry. Entries whose magnitudes are both
/// below `floor` are compared against `floor` instead.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(floor)
}

/// Model, input and target used by the check: Glorot weights from `seed`,
/// inputs in `[-1, 1]` and targets in `[0, 0.5]` drawn from the same seed.
/// Every output is kept on the active side of the final ReLU.
pub fn gradcheck_fixture(
    config: &DroneNetConfig,
    seed: u64,
    opts: &GradCheckOptions,
) -> Result<(DroneNet<f64>, Tensor<f64>, Tensor<f64>)> {
    let mut model = DroneNet::<f64>::build(config.clone())?;
    init_weights(&mut model, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let shape = Shape::new(1, config.in_channels, opts.height, opts.width);
    let x = Tensor::from_fn(shape, |_, _, _, _| rng.random_range(-1.0..1.0));

    let offset = 1e3;
    set_fusion_bias(&mut model, offset);
    let lowest = model
        .forward(&x)?
        .data()
        .iter()
        .fold(f64::INFINITY, |m, &v| m.min(v - offset));
    set_fusion_bias(&mut model, opts.relu_margin - lowest);
    let gt = Tensor::from_fn(model.output_shape(shape), |_, _, _, _| {
        rng.random_range(0.0..0.5)
    });
    Ok((model, x, gt))
}

fn set_fusion_bias(model: &mut DroneNet<f64>, value: f64) {
    let bias = model.params_mut().pop().expect("fusion bias");
    bias.data_mut().iter_mut().for_each(|b| *b = value);
}

pub fn analytic_gradients(
    model: &DroneNet<f64>,
    x: &Tensor<f64>,
    gt: &Tensor<f64>,
) -> Result<Gradients<f64>> {
    let (pred, cache) = model.forward_cached(x)?;
    let loss = mse_loss(&pred, gt)?;
    model.backward(&cache, &loss.grad)
}

/// Central differences `(L(θ+h) − L(θ−h)) / 2h` for every parameter entry.
pub fn numeric_gradients(
    model: &DroneNet<f64>,
    x: &Tensor<f64>,
    gt: &Tensor<f64>,
    step: f64,
) -> Result<Gradients<f64>> {
    if step.is_nan() || step <= 0.0 {
        return Err(Error::invalid(format!(
            "finite-difference step must be > 0, got {step}"
        )));
    }
    let mut probe = model.clone();
    let loss = |m: &DroneNet<f64>| -> Result<f64> { Ok(mse_loss(&m.forward(x)?, gt)?.value) };
    let names = model.param_names();
    let mut tensors: Vec<Tensor<f64>> = model
        .params()
        .iter()
        .map(|p| Tensor::zeros(p.shape()))
        .collect();
    for (pi, out) in tensors.iter_mut().enumerate() {
        for i in 0..out.len() {
            let orig = probe.params()[pi].data()[i];
            probe.params_mut()[pi].data_mut()[i] = orig + step;
            let up = loss(&probe)?;
            probe.params_mut()[pi].data_mut()[i] = orig - step;
            let down = loss(&probe)?;
            probe.params_mut()[pi].data_mut()[i] = orig;
            out.data_mut()[i] = (up - down) / (2.0 * step);
        }
    }
    Ok(Gradients { names, tensors })
}

fn layer_of(param: &str) -> &str {
    param.rsplit_once('.').map_or(param, |(layer, _)| layer)
}

/// Compares two gradient sets entry by entry and aggregates per tensor and
/// per layer. The error floor is `tolerance`-independent: `1e-3` times the
/// largest numeric magnitude of the tensor, at least `1e-8`.
pub fn compare_gradients(
    analytic: &Gradients<f64>,
    numeric: &Gradients<f64>,
    tolerance: f64,
) -> Result<(Vec<TensorCheck>, Vec<LayerCheck>)> {
    if analytic.names != numeric.names {
        return Err(Error::shape("gradient sets name different parameters"));
    }
    let mut tensors = Vec::with_capacity(analytic.names.len());
    let mut layers: Vec<LayerCheck> = Vec::new();
    for ((name, a), n) in analytic
        .names
        .iter()
        .zip(&analytic.tensors)
        .zip(&numeric.tensors)
    {
        a.expect_shape(n.shape(), name)?;
        let floor = (1e-3 * n.max_abs()).max(1e-8);
        let mut max_abs_err = 0.0f64;
        let mut max_rel_err = 0.0f64;
        for (&av, &nv) in a.data().iter().zip(n.data()) {
            max_abs_err = max_abs_err.max((av - nv).abs());
            max_rel_err = max_rel_err.max(relative_error(av, nv, floor));
        }
        let layer = layer_of(name);
        match layers.last_mut() {
            Some(l) if l.layer == layer => l.max_rel_err = l.max_rel_err.max(max_rel_err),
            _ => layers.push(LayerCheck {
                layer: layer.to_string(),
                max_rel_err,
                passed: true,
            }),
        }
        tensors.push(TensorCheck {
            name: name.clone(),
            len: a.len(),
            max_abs_err,
            max_rel_err,
        });
    }
    for l in &mut layers {
        l.passed = l.max_rel_err < tolerance;
    }
    Ok((tensors, layers))
}

fn build_report(
    label: &str,
    model: &DroneNet<f64>,
    x: &Tensor<f64>,
    analytic: &Gradients<f64>,
    numeric: &Gradients<f64>,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let (tensors, layers) = compare_gradients(analytic, numeric, opts.tolerance)?;
    let out = model.forward(x)?;
    let max_rel_err = layers.iter().map(|l| l.max_rel_err).fold(0.0, f64::max);
    let s = x.shape();
    Ok(GradCheckReport {
        label: label.to_string(),
        input: [s.n, s.c, s.h, s.w],
        step: opts.step,
        tolerance: opts.tolerance,
        parameters: model.param_count(),
        active_outputs: out.data().iter().filter(|&&v| v > 0.0).count(),
        total_outputs: out.len(),
        passed: layers.iter().all(|l| l.passed),
        tensors,
        layers,
        max_rel_err,
    })
}

pub fn gradient_check(config: &DroneNetConfig, seed: u64) -> Result<GradCheckReport> {
    gradient_check_with(config, seed, &GradCheckOptions::default(), "custom")
}

/// Builds the fixture for `config` and checks every parameter gradient.
pub fn gradient_check_with(
    config: &DroneNetConfig,
    seed: u64,
    opts: &GradCheckOptions,
    label: &str,
) -> Result<GradCheckReport> {
    config.validate()?;
    let (model, x, gt) = gradcheck_fixture(config, seed, opts)?;
    let analytic = analytic_gradients(&model, &x, &gt)?;
    let numeric = numeric_gradients(&model, &x, &gt, opts.step)?;
    build_report(label, &model, &x, &analytic, &numeric, opts)
}

/// Same as [`gradient_check_with`] but lets the caller tamper with the
/// analytic gradients first. Used to confirm that the check can fail.
pub fn gradient_check_tampered(
    config: &DroneNetConfig,
    seed: u64,
    opts: &GradCheckOptions,
    tamper: impl FnOnce(&mut Gradients<f64>),
) -> Result<GradCheckReport> {
    let (model, x, gt) = gradcheck_fixture(config, seed, opts)?;
    let mut analytic = analytic_gradients(&model, &x, &gt)?;
    tamper(&mut analytic);
    let numeric = numeric_gradients(&model, &x, &gt, opts.step)?;
    build_report("tampered", &model, &x, &analytic, &numeric, opts)
}

/// The shipped check: the tiny two-channel model with its default powers
/// (3 in the first layer of each column, 5 after) and the same model with
/// every power set to 1.
pub fn gradcheck_suite(seed: u64, opts: &GradCheckOptions) -> Result<Vec<GradCheckReport>> {
    let base = DroneNetConfig::tiny(2);
    Ok(vec![
        gradient_check_with(&base, seed, opts, "tiny q=3/5")?,
        gradient_check_with(&base.with_uniform_q(1), seed, opts, "tiny q=1")?,
    ])
}
