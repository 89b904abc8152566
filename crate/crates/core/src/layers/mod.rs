//! Noisy fully-connected and convolutional layers, activations and a
//! sequential container.

pub mod activation;
pub mod conv;
pub mod fc;
pub(crate) mod linear;
pub mod pool;

pub use conv::{ConvGeometry, ConvGrads, ConvLayer};
pub use fc::{FcGrads, FcLayer};
pub use pool::MaxPool;

use crate::error::{Error, Result};
use crate::noise::ShakeoutParams;
use crate::rng::RngStream;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Fc(FcLayer),
    Conv(ConvLayer),
    Relu(Option<Tensor>),
    Sigmoid(Option<Tensor>),
    MaxPool(MaxPool),
    Flatten(Option<Vec<usize>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub w: Tensor,
    pub b: Tensor,
}

impl Layer {
    pub fn relu() -> Self {
        Layer::Relu(None)
    }

    pub fn sigmoid() -> Self {
        Layer::Sigmoid(None)
    }

    pub fn flatten() -> Self {
        Layer::Flatten(None)
    }

    pub fn is_parametric(&self) -> bool {
        matches!(self, Layer::Fc(_) | Layer::Conv(_))
    }

    pub fn noise(&self) -> Option<&ShakeoutParams> {
        match self {
            Layer::Fc(l) => Some(&l.noise),
            Layer::Conv(l) => Some(&l.noise),
            _ => None,
        }
    }

    /// `(weights, bias)` of a parametric layer; conv weights are flattened.
    pub fn params(&self) -> Option<(&Tensor, &Tensor)> {
        match self {
            Layer::Fc(l) => Some((l.weights(), l.bias())),
            Layer::Conv(l) => Some((l.weights(), l.bias())),
            _ => None,
        }
    }

    pub fn update(&mut self, f: impl FnOnce(&mut [f64], &mut [f64])) {
        match self {
            Layer::Fc(l) => l.update(f),
            Layer::Conv(l) => l.update(f),
            _ => {}
        }
    }

    pub fn forward(&mut self, x: &Tensor, mode: ForwardMode, stream: &RngStream) -> Result<Tensor> {
        let train = mode == ForwardMode::Train;
        match self {
            Layer::Fc(l) => l.forward(x, mode, stream),
            Layer::Conv(l) => l.forward(x, mode, stream),
            Layer::Relu(cache) => {
                let y = activation::relu(x);
                *cache = train.then(|| x.clone());
                Ok(y)
            }
            Layer::Sigmoid(cache) => {
                let y = activation::sigmoid(x);
                *cache = train.then(|| y.clone());
                Ok(y)
            }
            Layer::MaxPool(p) => p.forward(x, train),
            Layer::Flatten(cache) => {
                let batch = x.shape()[0];
                *cache = train.then(|| x.shape().to_vec());
                x.clone().reshape(vec![batch, x.len() / batch])
            }
        }
    }

    /// Returns `(grad_x, param grads)`; `grad_x` is skipped when not wanted.
    pub fn backward(&mut self, grad: &Tensor, want_grad_x: bool) -> Result<(Option<Tensor>, Option<ParamGrads>)> {
        let missing = || Error::State("backward without a training-mode forward".into());
        match self {
            Layer::Fc(l) => {
                let (gx, w, b) = l.backward_impl(grad, want_grad_x)?;
                Ok((gx, Some(ParamGrads { w, b })))
            }
            Layer::Conv(l) => {
                let (gx, w, b) = l.backward_impl(grad, want_grad_x)?;
                Ok((gx, Some(ParamGrads { w, b })))
            }
            Layer::Relu(cache) => {
                let x = cache.take().ok_or_else(missing)?;
                Ok((Some(activation::relu_grad(&x, grad)?), None))
            }
            Layer::Sigmoid(cache) => {
                let y = cache.take().ok_or_else(missing)?;
                Ok((Some(activation::sigmoid_grad(&y, grad)?), None))
            }
            Layer::MaxPool(p) => Ok((Some(p.backward(grad)?), None)),
            Layer::Flatten(cache) => {
                let shape = cache.take().ok_or_else(missing)?;
                Ok((Some(grad.clone().reshape(shape)?), None))
            }
        }
    }
}

/// Sequential stack; layer `i` draws its switches from `stream.child(i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub layers: Vec<Layer>,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    pub fn forward(&mut self, x: &Tensor, mode: ForwardMode, stream: &RngStream) -> Result<Tensor> {
        let mut h = x.clone();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            h = layer.forward(&h, mode, &stream.child(i as u64))?;
        }
        Ok(h)
    }

    /// Back-propagates `grad` from the output; entry `i` holds layer `i`'s
    /// parameter gradients.
    pub fn backward(&mut self, grad: &Tensor) -> Result<Vec<Option<ParamGrads>>> {
        let first_param = self.layers.iter().position(Layer::is_parametric).unwrap_or(0);
        let mut grads = vec![None; self.layers.len()];
        let mut g = grad.clone();
        for (i, layer) in self.layers.iter_mut().enumerate().rev() {
            let (gx, pg) = layer.backward(&g, i > first_param)?;
            grads[i] = pg;
            match gx {
                Some(gx) => g = gx,
                None => break,
            }
        }
        Ok(grads)
    }

    pub fn predict(&mut self, x: &Tensor) -> Result<Tensor> {
        self.forward(x, ForwardMode::Eval, &RngStream::new(0, 0))
    }

    /// Indices of parametric layers that carry noise.
    pub fn noisy_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.noise().is_some_and(|n| n.kind != crate::noise::NoiseKind::None))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn parametric_layers(&self) -> Vec<usize> {
        self.layers.iter().enumerate().filter(|(_, l)| l.is_parametric()).map(|(i, _)| i).collect()
    }
}
