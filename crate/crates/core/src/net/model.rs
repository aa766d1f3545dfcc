use rayon::prelude::*;

use super::config::{DroneNetConfig, DOWNSAMPLE};
use super::layer::SelfOnnLayer;
use super::macs::{count_macs, MacReport};
use crate::error::{Error, Result};
use crate::tensor::{
    concat_channels, maxpool2x2_backward, maxpool2x2_forward, relu_backward, relu_forward,
    split_channels, tanh_backward, tanh_forward, ConvSpec, PoolIndices, Precision, Scalar, Shape,
    Tensor,
};

/// Three (or more) Self-ONN columns whose outputs are concatenated and fused
/// by a 1×1 convolution followed by ReLU. The output is a single-channel
/// density map at 1/4 of the input resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct DroneNet<T> {
    config: DroneNetConfig,
    columns: Vec<Vec<SelfOnnLayer<T>>>,
    /// Plain 1×1 convolution (a single weight bank).
    fusion: SelfOnnLayer<T>,
}

/// Activations kept by [`DroneNet::forward_cached`] for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    columns: Vec<Vec<LayerCache<T>>>,
    fused_input: Tensor<T>,
    fused_pre: Tensor<T>,
}

#[derive(Clone, Debug)]
struct LayerCache<T> {
    input: Tensor<T>,
    /// Tanh output, before pooling.
    act: Tensor<T>,
    pool: Option<PoolIndices>,
}

/// Parameter gradients in [`DroneNet::param_names`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn add_assign(&mut self, other: &Gradients<T>) -> Result<()> {
        if self.names != other.names {
            return Err(Error::shape("gradient sets come from different models"));
        }
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_assign(b)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: T) {
        for t in &mut self.tensors {
            t.scale(factor);
        }
    }
}

pub(crate) fn layer_name(column: usize, layer: usize) -> String {
    format!("col{}.layer{}", column + 1, layer + 1)
}

impl<T: Scalar> DroneNet<T> {
    /// Builds the graph with all parameters zero; see
    /// [`init_weights`](super::init_weights) for a usable starting point.
    pub fn build(config: DroneNetConfig) -> Result<Self> {
        config.validate()?;
        let mut columns = Vec::with_capacity(config.columns.len());
        for col in &config.columns {
            let mut in_c = config.in_channels;
            let mut layers = Vec::with_capacity(col.layers.len());
            for l in &col.layers {
                layers.push(SelfOnnLayer::new(
                    ConvSpec::same(in_c, l.channels, l.kernel)?,
                    l.q,
                )?);
                in_c = l.channels;
            }
            columns.push(layers);
        }
        let fusion = SelfOnnLayer::new(ConvSpec::same(config.fusion_in_channels(), 1, 1)?, 1)?;
        Ok(DroneNet {
            config,
            columns,
            fusion,
        })
    }

    /// Assembles a model from existing layers, checking them against `config`.
    pub fn from_layers(
        config: DroneNetConfig,
        columns: Vec<Vec<SelfOnnLayer<T>>>,
        fusion: SelfOnnLayer<T>,
    ) -> Result<Self> {
        let template = Self::build(config)?;
        let mismatch = |what: String| {
            Error::ModelFormat(format!("layer geometry does not match config: {what}"))
        };
        if columns.len() != template.columns.len() {
            return Err(mismatch(format!("{} columns", columns.len())));
        }
        for (ci, (got, want)) in columns.iter().zip(&template.columns).enumerate() {
            if got.len() != want.len() {
                return Err(mismatch(format!(
                    "column {} has {} layers",
                    ci + 1,
                    got.len()
                )));
            }
            for (li, (g, w)) in got.iter().zip(want).enumerate() {
                if g.spec() != w.spec() || g.q_max() != w.q_max() {
                    return Err(mismatch(layer_name(ci, li)));
                }
            }
        }
        if fusion.spec() != template.fusion.spec() || fusion.q_max() != 1 {
            return Err(mismatch("fusion".into()));
        }
        Ok(DroneNet {
            config: template.config,
            columns,
            fusion,
        })
    }

    pub fn config(&self) -> &DroneNetConfig {
        &self.config
    }

    pub fn columns(&self) -> &[Vec<SelfOnnLayer<T>>] {
        &self.columns
    }

    pub fn fusion(&self) -> &SelfOnnLayer<T> {
        &self.fusion
    }

    pub fn in_channels(&self) -> usize {
        self.config.in_channels
    }

    pub fn precision(&self) -> Precision {
        T::PRECISION
    }

    pub fn param_count(&self) -> usize {
        self.columns
            .iter()
            .flatten()
            .map(SelfOnnLayer::param_count)
            .sum::<usize>()
            + self.fusion.param_count()
    }

    /// Stable parameter names: `colC.layerL.w_qQ`, `colC.layerL.bias`, then
    /// `fusion.weight`, `fusion.bias`.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (ci, col) in self.columns.iter().enumerate() {
            for (li, layer) in col.iter().enumerate() {
                let base = layer_name(ci, li);
                for q in 1..=layer.q_max() {
                    names.push(format!("{base}.w_q{q}"));
                }
                names.push(format!("{base}.bias"));
            }
        }
        names.push("fusion.weight".into());
        names.push("fusion.bias".into());
        names
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for layer in self.columns.iter().flatten() {
            out.extend(layer.weights());
            out.push(layer.bias());
        }
        out.extend(self.fusion.weights());
        out.push(self.fusion.bias());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for layer in self
            .columns
            .iter_mut()
            .flatten()
            .chain(std::iter::once(&mut self.fusion))
        {
            let (weights, bias) = layer_parts_mut(layer);
            out.extend(weights);
            out.push(bias);
        }
        out
    }

    /// Output extent for an `h × w` input.
    pub fn output_extent(&self, h: usize, w: usize) -> (usize, usize) {
        (h.div_ceil(DOWNSAMPLE), w.div_ceil(DOWNSAMPLE))
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let s = x.shape();
        if s.c != self.config.in_channels {
            return Err(Error::shape(format!(
                "model expects {}-channel input, got {} channels",
                self.config.in_channels, s.c
            )));
        }
        if s.is_empty() {
            return Err(Error::shape(format!("empty input {s}")));
        }
        Ok(())
    }

    /// Inference forward pass without caching.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let outs = self
            .columns
            .par_iter()
            .zip(&self.config.columns)
            .map(|(col, spec)| {
                let mut h = x.clone();
                for (layer, desc) in col.iter().zip(&spec.layers) {
                    h = tanh_forward(&layer.forward(&h)?);
                    if desc.pool_after {
                        h = maxpool2x2_forward(&h)?.0;
                    }
                }
                Ok(h)
            })
            .collect::<Result<Vec<_>>>()?;
        let cat = concat_channels(&outs.iter().collect::<Vec<_>>())?;
        Ok(relu_forward(&self.fusion.forward(&cat)?))
    }

    /// Forward pass that keeps every activation needed by [`Self::backward`].
    pub fn forward_cached(&self, x: &Tensor<T>) -> Result<(Tensor<T>, ForwardCache<T>)> {
        self.check_input(x)?;
        let results = self
            .columns
            .par_iter()
            .zip(&self.config.columns)
            .map(|(col, spec)| {
                let mut h = x.clone();
                let mut caches = Vec::with_capacity(col.len());
                for (layer, desc) in col.iter().zip(&spec.layers) {
                    let act = tanh_forward(&layer.forward(&h)?);
                    let (next, pool) = if desc.pool_after {
                        let (p, idx) = maxpool2x2_forward(&act)?;
                        (p, Some(idx))
                    } else {
                        (act.clone(), None)
                    };
                    caches.push(LayerCache {
                        input: h,
                        act,
                        pool,
                    });
                    h = next;
                }
                Ok((h, caches))
            })
            .collect::<Result<Vec<_>>>()?;
        let (outs, columns): (Vec<_>, Vec<_>) = results.into_iter().unzip();
        let fused_input = concat_channels(&outs.iter().collect::<Vec<_>>())?;
        let fused_pre = self.fusion.forward(&fused_input)?;
        let out = relu_forward(&fused_pre);
        Ok((
            out,
            ForwardCache {
                columns,
                fused_input,
                fused_pre,
            },
        ))
    }

    /// Gradients of every parameter given `dL/d(output)`.
    pub fn backward(&self, cache: &ForwardCache<T>, grad_out: &Tensor<T>) -> Result<Gradients<T>> {
        grad_out.expect_shape(cache.fused_pre.shape(), "model grad_out")?;
        let g_pre = relu_backward(&cache.fused_pre, grad_out)?;
        let fusion = self.fusion.backward(&cache.fused_input, &g_pre, true)?;
        let splits: Vec<usize> = self
            .config
            .columns
            .iter()
            .map(|c| c.out_channels())
            .collect();
        let g_cols = split_channels(&fusion.grad_x.expect("requested"), &splits)?;

        let col_grads = self
            .columns
            .par_iter()
            .zip(&cache.columns)
            .zip(g_cols)
            .map(|((col, caches), mut g)| {
                let mut per_layer = Vec::with_capacity(col.len());
                for (li, (layer, c)) in col.iter().zip(caches).enumerate().rev() {
                    if let Some(idx) = &c.pool {
                        g = maxpool2x2_backward(&g, idx)?;
                    }
                    g = tanh_backward(&c.act, &g)?;
                    let lg = layer.backward(&c.input, &g, li > 0)?;
                    if let Some(gx) = lg.grad_x {
                        g = gx;
                    }
                    per_layer.push((lg.grad_weights, lg.grad_bias));
                }
                per_layer.reverse();
                Ok(per_layer)
            })
            .collect::<Result<Vec<_>>>()?;

        let mut tensors = Vec::new();
        for (weights, bias) in col_grads.into_iter().flatten() {
            tensors.extend(weights);
            tensors.push(bias);
        }
        tensors.extend(fusion.grad_weights);
        tensors.push(fusion.grad_bias);
        Ok(Gradients {
            names: self.param_names(),
            tensors,
        })
    }

    pub fn count_macs(&self, h: usize, w: usize) -> MacReport {
        count_macs(&self.config, h, w)
    }

    pub fn cast<U: Scalar>(&self) -> DroneNet<U> {
        DroneNet {
            config: self.config.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| c.iter().map(SelfOnnLayer::cast).collect())
                .collect(),
            fusion: self.fusion.cast(),
        }
    }

    /// Expected output shape for an input shape.
    pub fn output_shape(&self, input: Shape) -> Shape {
        let (h, w) = self.output_extent(input.h, input.w);
        Shape::new(input.n, 1, h, w)
    }
}

fn layer_parts_mut<T: Scalar>(
    layer: &mut SelfOnnLayer<T>,
) -> (Vec<&mut Tensor<T>>, &mut Tensor<T>) {
    let (weights, bias) = layer.parts_mut();
    (weights.iter_mut().collect(), bias)
}

impl<T: Scalar> ForwardCache<T> {
    /// Name of the first layer (in forward order) whose output contains a
    /// NaN or infinity.
    pub fn first_non_finite(&self) -> Option<String> {
        for (ci, col) in self.columns.iter().enumerate() {
            for (li, c) in col.iter().enumerate() {
                if !c.act.is_finite() {
                    return Some(layer_name(ci, li));
                }
            }
        }
        (!self.fused_pre.is_finite()).then(|| "fusion".to_string())
    }
}
