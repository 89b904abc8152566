use serde::{Deserialize, Serialize};

use super::linear;
use super::ForwardMode;
use crate::error::{Error, Result};
use crate::noise::{sgn, NoiseKind, ShakeoutParams, SwitchTensor};
use crate::rng::RngStream;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
struct FcCache {
    input: Tensor,
    switches: Option<Tensor>,
}

/// Fully-connected layer `u = Wx + b` with noise applied to its inputs.
///
/// Every weight `W_ij` leaving input unit `j` shares the switch `r_j`; each
/// sample in a batch draws its own switches.
#[derive(Debug, Clone, PartialEq)]
pub struct FcLayer {
    weights: Tensor,
    bias: Tensor,
    signs: Tensor,
    pub noise: ShakeoutParams,
    cache: Option<FcCache>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FcGrads {
    pub grad_x: Tensor,
    pub grad_w: Tensor,
    pub grad_b: Tensor,
}

impl FcLayer {
    pub fn new(weights: Tensor, bias: Tensor, noise: ShakeoutParams) -> Result<Self> {
        let (out, _) = weights.dims2()?;
        if bias.shape() != [out] {
            return Err(Error::Dimension(format!(
                "bias {:?} does not match {out} outputs",
                bias.shape()
            )));
        }
        let signs = weights.map(sgn);
        Ok(Self { weights, bias, signs, noise, cache: None })
    }

    pub fn in_features(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn signs(&self) -> &Tensor {
        &self.signs
    }

    pub fn set_weights(&mut self, weights: Tensor) -> Result<()> {
        if weights.shape() != self.weights.shape() {
            return Err(Error::Dimension(format!(
                "weights {:?} vs {:?}",
                weights.shape(),
                self.weights.shape()
            )));
        }
        self.signs = weights.map(sgn);
        self.weights = weights;
        Ok(())
    }

    /// In-place parameter update; signs are refreshed afterwards.
    pub fn update(&mut self, f: impl FnOnce(&mut [f64], &mut [f64])) {
        f(self.weights.data_mut(), self.bias.data_mut());
        self.signs = self.weights.map(sgn);
    }

    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }

    /// Switches used by the last training-mode forward, if any.
    pub fn cached_switches(&self) -> Option<&Tensor> {
        self.cache.as_ref().and_then(|c| c.switches.as_ref())
    }

    fn check_input(&self, x: &Tensor) -> Result<usize> {
        let (batch, cols) = x.dims2()?;
        if cols != self.in_features() {
            return Err(Error::Dimension(format!(
                "input has {cols} features, layer expects {}",
                self.in_features()
            )));
        }
        Ok(batch)
    }

    /// Train mode draws one switch row per sample from `stream.child(sample)`;
    /// eval mode is the plain affine map and leaves no cache.
    pub fn forward(&mut self, x: &Tensor, mode: ForwardMode, stream: &RngStream) -> Result<Tensor> {
        let batch = self.check_input(x)?;
        match mode {
            ForwardMode::Eval => {
                self.cache = None;
                let mut u = linear::forward(x, None, 0.0, &self.weights, &self.signs)?;
                linear::add_bias(&mut u, &self.bias);
                Ok(u)
            }
            ForwardMode::Train => {
                let switches = match self.noise.kind {
                    NoiseKind::None => None,
                    _ => Some(SwitchTensor::draw(stream, batch, self.in_features(), &self.noise)?.values),
                };
                self.forward_with_switches(x, switches)
            }
        }
    }

    /// Training-mode forward with caller-supplied switches (`batch × in`).
    pub fn forward_with_switches(&mut self, x: &Tensor, switches: Option<Tensor>) -> Result<Tensor> {
        self.check_input(x)?;
        let mut u = linear::forward(x, switches.as_ref(), self.noise.c, &self.weights, &self.signs)?;
        linear::add_bias(&mut u, &self.bias);
        self.cache = Some(FcCache { input: x.clone(), switches });
        Ok(u)
    }

    /// Forward with `tanh(W)` standing in for `sgn(W)`; the weight gradient
    /// of [`FcLayer::backward`] is exact for this surrogate. Leaves the cache alone.
    pub fn smoothed_forward(&self, x: &Tensor, switches: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let smooth = self.weights.map(f64::tanh);
        let mut u = linear::forward(x, Some(switches), self.noise.c, &self.weights, &smooth)?;
        linear::add_bias(&mut u, &self.bias);
        Ok(u)
    }

    /// Consumes the cache of the matching training-mode forward.
    pub fn backward(&mut self, grad_u: &Tensor) -> Result<FcGrads> {
        let (grad_x, grad_w, grad_b) = self.backward_impl(grad_u, true)?;
        Ok(FcGrads { grad_x: grad_x.expect("requested"), grad_w, grad_b })
    }

    pub(crate) fn backward_impl(
        &mut self,
        grad_u: &Tensor,
        want_grad_x: bool,
    ) -> Result<(Option<Tensor>, Tensor, Tensor)> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::State("fc backward without a training-mode forward".into()))?;
        let (batch, out) = grad_u.dims2()?;
        if batch != cache.input.shape()[0] || out != self.out_features() {
            return Err(Error::Dimension(format!(
                "gradient {:?} does not match output {}×{}",
                grad_u.shape(),
                cache.input.shape()[0],
                self.out_features()
            )));
        }
        let c = self.noise.c;
        let r = cache.switches.as_ref();
        let grad_x = if want_grad_x {
            Some(linear::grad_input(grad_u, r, c, &self.weights, &self.signs)?)
        } else {
            None
        };
        let grad_w = linear::grad_weights(grad_u, &cache.input, r, c, &self.weights)?;
        let grad_b = linear::column_sums(grad_u)?;
        Ok((grad_x, grad_w, grad_b))
    }
}
