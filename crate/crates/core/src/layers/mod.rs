//! Layer kinds of the classifier, each with forward, backward and
//! parameter access.
//!
//! Every layer follows the same contract:
//!
//! * `forward(x, Mode::Train)` caches whatever `backward` needs;
//!   `forward(x, Mode::Eval)` and `infer(x)` never touch the cache.
//! * `backward(grad_out)` consumes the cache, returns the input gradient
//!   and *accumulates* parameter gradients. Callers zero them per step.
//! * `output_shape` is the symbolic counterpart of `forward`.

mod activation;
mod conv;
mod dense;
mod dropout;
mod flatten;
mod pool;

pub use activation::{
    cross_entropy_per_sample, softmax, softmax_backward, softmax_cross_entropy,
    softmax_cross_entropy_backward, Relu,
};
pub use conv::{Conv2d, ConvSpec};
pub use dense::Dense;
pub use dropout::Dropout;
pub use flatten::Flatten;
pub use pool::MaxPool2d;

use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Activation fused into a conv or dense layer.
///
/// `Softmax` marks the classification head: the layer itself emits logits
/// and the softmax is applied by the loss (training) or by prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    None,
    Relu,
    Softmax,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::None => "none",
            Activation::Relu => "relu",
            Activation::Softmax => "softmax",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv2d,
    MaxPool2d,
    Relu,
    Flatten,
    Dense,
    Dropout,
}

impl LayerKind {
    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Conv2d => "conv2d",
            LayerKind::MaxPool2d => "maxpool2d",
            LayerKind::Relu => "relu",
            LayerKind::Flatten => "flatten",
            LayerKind::Dense => "dense",
            LayerKind::Dropout => "dropout",
        }
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone)]
pub enum Layer<T: Real> {
    Conv2d(Conv2d<T>),
    MaxPool2d(MaxPool2d),
    Relu(Relu),
    Flatten(Flatten),
    Dense(Dense<T>),
    Dropout(Dropout),
}

macro_rules! dispatch {
    ($self:expr, $l:ident => $body:expr) => {
        match $self {
            Layer::Conv2d($l) => $body,
            Layer::MaxPool2d($l) => $body,
            Layer::Relu($l) => $body,
            Layer::Flatten($l) => $body,
            Layer::Dense($l) => $body,
            Layer::Dropout($l) => $body,
        }
    };
}

impl<T: Real> Layer<T> {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Conv2d(_) => LayerKind::Conv2d,
            Layer::MaxPool2d(_) => LayerKind::MaxPool2d,
            Layer::Relu(_) => LayerKind::Relu,
            Layer::Flatten(_) => LayerKind::Flatten,
            Layer::Dense(_) => LayerKind::Dense,
            Layer::Dropout(_) => LayerKind::Dropout,
        }
    }

    pub fn activation(&self) -> Activation {
        match self {
            Layer::Conv2d(l) => l.activation,
            Layer::Dense(l) => l.activation,
            _ => Activation::None,
        }
    }

    /// Short human-readable form, e.g. `conv2d(3->16, k3 s1 p1)+relu`.
    pub fn describe(&self) -> String {
        let base = match self {
            Layer::Conv2d(l) => format!(
                "conv2d({}->{}, k{} s{} p{})",
                l.spec.in_channels, l.spec.out_channels, l.spec.kernel, l.spec.stride, l.spec.padding
            ),
            Layer::MaxPool2d(l) => format!("maxpool2d({}x{}, s{})", l.window, l.window, l.stride),
            Layer::Relu(_) => "relu".to_string(),
            Layer::Flatten(_) => "flatten".to_string(),
            Layer::Dense(l) => format!("dense({}->{})", l.in_features(), l.out_features()),
            Layer::Dropout(l) => format!("dropout({})", l.rate()),
        };
        match self.activation() {
            Activation::None => base,
            a => format!("{base}+{}", a.name()),
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        dispatch!(self, l => l.forward(x, mode))
    }

    /// Eval-mode forward without touching any cache.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        dispatch!(self, l => l.infer(x))
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        dispatch!(self, l => l.backward(grad_out))
    }

    pub fn output_shape(&self, input: &Shape) -> Result<Shape> {
        dispatch!(self, l => l.output_shape(input))
    }

    /// Named parameters in a stable order (`weight` before `bias`).
    pub fn params(&self) -> Vec<(&'static str, &Tensor<T>)> {
        match self {
            Layer::Conv2d(l) => vec![("weight", &l.weight), ("bias", &l.bias)],
            Layer::Dense(l) => vec![("weight", &l.weight), ("bias", &l.bias)],
            _ => Vec::new(),
        }
    }

    pub fn grads(&self) -> Vec<(&'static str, &Tensor<T>)> {
        match self {
            Layer::Conv2d(l) => vec![("weight", &l.grad_weight), ("bias", &l.grad_bias)],
            Layer::Dense(l) => vec![("weight", &l.grad_weight), ("bias", &l.grad_bias)],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        match self {
            Layer::Conv2d(l) => vec![("weight", &mut l.weight), ("bias", &mut l.bias)],
            Layer::Dense(l) => vec![("weight", &mut l.weight), ("bias", &mut l.bias)],
            _ => Vec::new(),
        }
    }

    /// Each parameter paired with its accumulated gradient.
    pub fn params_and_grads_mut(&mut self) -> Vec<(&mut Tensor<T>, &Tensor<T>)> {
        match self {
            Layer::Conv2d(l) => vec![(&mut l.weight, &l.grad_weight), (&mut l.bias, &l.grad_bias)],
            Layer::Dense(l) => vec![(&mut l.weight, &l.grad_weight), (&mut l.bias, &l.grad_bias)],
            _ => Vec::new(),
        }
    }

    pub fn zero_grads(&mut self) {
        match self {
            Layer::Conv2d(l) => {
                l.grad_weight.fill(T::zero());
                l.grad_bias.fill(T::zero());
            }
            Layer::Dense(l) => {
                l.grad_weight.fill(T::zero());
                l.grad_bias.fill(T::zero());
            }
            _ => {}
        }
    }

    pub fn clear_cache(&mut self) {
        dispatch!(self, l => l.clear_cache())
    }
}

/// `U(-sqrt(6 / fan_in), +sqrt(6 / fan_in))`, suited to ReLU layers.
pub fn he_uniform<T: Real, R: Rng>(dims: Vec<usize>, fan_in: usize, rng: &mut R) -> Result<Tensor<T>> {
    uniform(dims, (6.0 / fan_in as f64).sqrt(), rng)
}

/// `U(-sqrt(6 / (fan_in + fan_out)), +sqrt(6 / (fan_in + fan_out)))`.
pub fn xavier_uniform<T: Real, R: Rng>(
    dims: Vec<usize>,
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Result<Tensor<T>> {
    uniform(dims, (6.0 / (fan_in + fan_out) as f64).sqrt(), rng)
}

fn uniform<T: Real, R: Rng>(dims: Vec<usize>, limit: f64, rng: &mut R) -> Result<Tensor<T>> {
    let n: usize = dims.iter().product();
    let data = (0..n).map(|_| T::from_f64(rng.gen_range(-limit..limit))).collect();
    Tensor::from_vec(dims, data)
}

/// Forward output, per-position auxiliary values, input dims and output
/// spatial size.
pub(crate) type Computed<T, A> = (Vec<T>, Vec<A>, [usize; 4], (usize, usize));

/// ReLU pass-through test. Written as `!(v <= 0)` so NaN survives and
/// divergence stays visible downstream.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub(crate) fn relu_keeps<T: Real>(v: T) -> bool {
    !(v <= T::zero())
}

pub(crate) fn missing_cache(layer: &str) -> Error {
    Error::State(format!("{layer}: backward called without a preceding train-mode forward"))
}

pub(crate) fn check_grad_shape(layer: &str, grad: &Shape, expected: &Shape) -> Result<()> {
    if grad != expected {
        return Err(Error::Dimension(format!(
            "{layer}: gradient shape {grad} does not match forward output {expected}"
        )));
    }
    Ok(())
}
