use crate::error::{Error, Result};
use crate::tensor::{
    power_conv2d_backward, power_conv2d_forward, ConvAlgo, ConvSpec, Scalar, Tensor,
};

/// Self-organized operational layer: `y = b + Σ_{q=1..Q} W_q ⋆ x^q`.
///
/// With `Q = 1` this is exactly a standard convolution layer. The bias is
/// applied once per layer, not once per power bank.
#[derive(Clone, Debug, PartialEq)]
pub struct SelfOnnLayer<T> {
    spec: ConvSpec,
    weights: Vec<Tensor<T>>,
    bias: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelfOnnGrads<T> {
    pub grad_x: Option<Tensor<T>>,
    pub grad_weights: Vec<Tensor<T>>,
    pub grad_bias: Tensor<T>,
}

impl<T: Scalar> SelfOnnLayer<T> {
    /// Zero-initialized layer with `q_max` weight banks.
    pub fn new(spec: ConvSpec, q_max: usize) -> Result<Self> {
        spec.validate()?;
        if q_max == 0 {
            return Err(Error::invalid("q_max must be at least 1"));
        }
        Ok(SelfOnnLayer {
            spec,
            weights: (0..q_max)
                .map(|_| Tensor::zeros(spec.weight_shape()))
                .collect(),
            bias: Tensor::zeros(spec.bias_shape()),
        })
    }

    pub fn from_parts(spec: ConvSpec, weights: Vec<Tensor<T>>, bias: Tensor<T>) -> Result<Self> {
        spec.validate()?;
        if weights.is_empty() {
            return Err(Error::invalid("q_max must be at least 1"));
        }
        for (i, w) in weights.iter().enumerate() {
            w.expect_shape(spec.weight_shape(), &format!("weight bank q={}", i + 1))?;
        }
        bias.expect_shape(spec.bias_shape(), "bias")?;
        Ok(SelfOnnLayer {
            spec,
            weights,
            bias,
        })
    }

    pub fn spec(&self) -> &ConvSpec {
        &self.spec
    }

    pub fn q_max(&self) -> usize {
        self.weights.len()
    }

    /// Weight banks; index `q - 1` multiplies `x^q`.
    pub fn weights(&self) -> &[Tensor<T>] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.weights
    }

    pub fn bias(&self) -> &Tensor<T> {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut Tensor<T> {
        &mut self.bias
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut [Tensor<T>], &mut Tensor<T>) {
        (&mut self.weights, &mut self.bias)
    }

    pub fn param_count(&self) -> usize {
        self.q_max() * self.spec.weight_shape().len() + self.spec.out_channels
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward_with(T::DEFAULT_CONV, x)
    }

    pub fn forward_with(&self, algo: ConvAlgo, x: &Tensor<T>) -> Result<Tensor<T>> {
        power_conv2d_forward(algo, x, &self.weights, &self.bias, &self.spec)
    }

    pub fn backward(
        &self,
        x: &Tensor<T>,
        grad_out: &Tensor<T>,
        want_input_grad: bool,
    ) -> Result<SelfOnnGrads<T>> {
        self.backward_with(T::DEFAULT_CONV, x, grad_out, want_input_grad)
    }

    pub fn backward_with(
        &self,
        algo: ConvAlgo,
        x: &Tensor<T>,
        grad_out: &Tensor<T>,
        want_input_grad: bool,
    ) -> Result<SelfOnnGrads<T>> {
        let g = power_conv2d_backward(
            algo,
            x,
            &self.weights,
            &self.spec,
            grad_out,
            want_input_grad,
        )?;
        Ok(SelfOnnGrads {
            grad_x: g.grad_x,
            grad_weights: g.grad_weights,
            grad_bias: g.grad_bias,
        })
    }

    pub fn cast<U: Scalar>(&self) -> SelfOnnLayer<U> {
        SelfOnnLayer {
            spec: self.spec,
            weights: self.weights.iter().map(Tensor::cast).collect(),
            bias: self.bias.cast(),
        }
    }
}
