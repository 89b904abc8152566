use super::linear;
use super::ForwardMode;
use crate::error::{Error, Result};
use crate::noise::{sgn, NoiseKind, ShakeoutParams, SwitchTensor};
use crate::rng::RngStream;
use crate::tensor::Tensor;

/// Spatial geometry of a convolution; `input` is `(maps, h, w)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_maps: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn output_hw(&self) -> Result<(usize, usize)> {
        let (kh, kw) = self.kernel;
        if self.stride == 0 || kh == 0 || kw == 0 {
            return Err(Error::Dimension("kernel and stride must be positive".into()));
        }
        let ph = self.height + 2 * self.padding;
        let pw = self.width + 2 * self.padding;
        if kh > ph || kw > pw {
            return Err(Error::Dimension(format!(
                "kernel {kh}×{kw} larger than padded input {ph}×{pw}"
            )));
        }
        if (ph - kh) % self.stride != 0 || (pw - kw) % self.stride != 0 {
            return Err(Error::Dimension(format!(
                "stride {} does not tile padded input {ph}×{pw} with kernel {kh}×{kw}",
                self.stride
            )));
        }
        Ok(((ph - kh) / self.stride + 1, (pw - kw) / self.stride + 1))
    }

    fn patch_len(&self) -> usize {
        self.in_maps * self.kernel.0 * self.kernel.1
    }

    /// Source pixel for patch entry `(map, ky, kx)` at output `(oy, ox)`, or
    /// `None` inside the zero padding.
    #[inline]
    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let y = (oy * self.stride + ky).checked_sub(self.padding)?;
        let x = (ox * self.stride + kx).checked_sub(self.padding)?;
        (y < self.height && x < self.width).then_some((y, x))
    }
}

/// Unfolds `[batch, maps, h, w]` into rows `(b, oy, ox)` and columns
/// `(map, ky, kx)`; padded positions hold `pad`.
pub fn im2col(x: &[f64], batch: usize, g: &ConvGeometry, pad: f64) -> Result<Tensor> {
    let (oh, ow) = g.output_hw()?;
    let (kh, kw) = g.kernel;
    let plen = g.patch_len();
    let img = g.in_maps * g.height * g.width;
    let mut cols = vec![pad; batch * oh * ow * plen];
    for b in 0..batch {
        let src = &x[b * img..(b + 1) * img];
        for oy in 0..oh {
            for ox in 0..ow {
                let row = &mut cols[((b * oh + oy) * ow + ox) * plen..][..plen];
                for m in 0..g.in_maps {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            if let Some((y, xx)) = g.source(oy, ox, ky, kx) {
                                row[(m * kh + ky) * kw + kx] = src[(m * g.height + y) * g.width + xx];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![batch * oh * ow, plen], cols)
}

/// Adjoint of [`im2col`]: scatters-and-sums patch columns back to images.
pub fn col2im(cols: &Tensor, batch: usize, g: &ConvGeometry) -> Result<Tensor> {
    let (oh, ow) = g.output_hw()?;
    let (kh, kw) = g.kernel;
    let plen = g.patch_len();
    if cols.shape() != [batch * oh * ow, plen] {
        return Err(Error::Dimension(format!("column matrix {:?}", cols.shape())));
    }
    let img = g.in_maps * g.height * g.width;
    let mut out = vec![0.0; batch * img];
    for b in 0..batch {
        let dst = &mut out[b * img..(b + 1) * img];
        for oy in 0..oh {
            for ox in 0..ow {
                let row = &cols.data()[((b * oh + oy) * ow + ox) * plen..][..plen];
                for m in 0..g.in_maps {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            if let Some((y, xx)) = g.source(oy, ox, ky, kx) {
                                dst[(m * g.height + y) * g.width + xx] += row[(m * kh + ky) * kw + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![batch, g.in_maps, g.height, g.width], out)
}

#[derive(Debug, Clone, PartialEq)]
struct ConvCache {
    cols: Tensor,
    switch_cols: Option<Tensor>,
    switches: Option<Tensor>,
    batch: usize,
}

/// 2-D convolution with one switch map per input feature map per sample,
/// shared by every output map.
///
/// Weights are kept flattened as `out × (in·kh·kw)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    weights: Tensor,
    bias: Tensor,
    signs: Tensor,
    geometry: ConvGeometry,
    pub noise: ShakeoutParams,
    cache: Option<ConvCache>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub grad_x: Tensor,
    pub grad_w: Tensor,
    pub grad_b: Tensor,
}

impl ConvLayer {
    /// `weights` has shape `[out, in, kh, kw]` or the flattened `[out, in·kh·kw]`.
    pub fn new(weights: Tensor, bias: Tensor, geometry: ConvGeometry, noise: ShakeoutParams) -> Result<Self> {
        geometry.output_hw()?;
        let out = weights.shape()[0];
        let plen = geometry.patch_len();
        if weights.len() != out * plen {
            return Err(Error::Dimension(format!(
                "weights {:?} do not match {}×{}×{} kernels",
                weights.shape(),
                geometry.in_maps,
                geometry.kernel.0,
                geometry.kernel.1
            )));
        }
        if bias.shape() != [out] {
            return Err(Error::Dimension(format!("bias {:?} for {out} maps", bias.shape())));
        }
        let weights = weights.reshape(vec![out, plen])?;
        let signs = weights.map(sgn);
        Ok(Self { weights, bias, signs, geometry, noise, cache: None })
    }

    pub fn geometry(&self) -> &ConvGeometry {
        &self.geometry
    }

    pub fn out_maps(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn output_shape(&self) -> Result<[usize; 3]> {
        let (oh, ow) = self.geometry.output_hw()?;
        Ok([self.out_maps(), oh, ow])
    }

    /// Flattened `out × (in·kh·kw)` weights.
    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn update(&mut self, f: impl FnOnce(&mut [f64], &mut [f64])) {
        f(self.weights.data_mut(), self.bias.data_mut());
        self.signs = self.weights.map(sgn);
    }

    pub fn set_weights(&mut self, weights: Tensor) -> Result<()> {
        if weights.len() != self.weights.len() {
            return Err(Error::Dimension(format!("weights {:?}", weights.shape())));
        }
        let weights = weights.reshape(self.weights.shape().to_vec())?;
        self.signs = weights.map(sgn);
        self.weights = weights;
        Ok(())
    }

    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }

    pub fn cached_switches(&self) -> Option<&Tensor> {
        self.cache.as_ref().and_then(|c| c.switches.as_ref())
    }

    fn check_input(&self, x: &Tensor) -> Result<usize> {
        let g = &self.geometry;
        match x.shape() {
            [b, m, h, w] if *m == g.in_maps && *h == g.height && *w == g.width => Ok(*b),
            s => Err(Error::Dimension(format!(
                "conv input {s:?}, expected [batch, {}, {}, {}]",
                g.in_maps, g.height, g.width
            ))),
        }
    }

    pub fn forward(&mut self, x: &Tensor, mode: ForwardMode, stream: &RngStream) -> Result<Tensor> {
        let batch = self.check_input(x)?;
        match mode {
            ForwardMode::Eval => {
                self.cache = None;
                let cols = im2col(x.data(), batch, &self.geometry, 0.0)?;
                let u = linear::forward(&cols, None, 0.0, &self.weights, &self.signs)?;
                self.finish(u, batch)
            }
            ForwardMode::Train => {
                let switches = match self.noise.kind {
                    NoiseKind::None => None,
                    _ => {
                        let g = &self.geometry;
                        let units = g.in_maps * g.height * g.width;
                        let s = SwitchTensor::draw(stream, batch, units, &self.noise)?.values;
                        Some(s.reshape(vec![batch, g.in_maps, g.height, g.width])?)
                    }
                };
                self.forward_with_switches(x, switches)
            }
        }
    }

    /// Training-mode forward with switches shaped like `x`.
    pub fn forward_with_switches(&mut self, x: &Tensor, switches: Option<Tensor>) -> Result<Tensor> {
        let batch = self.check_input(x)?;
        if let Some(r) = &switches {
            if r.shape() != x.shape() {
                return Err(Error::Dimension(format!(
                    "switch maps {:?} do not match input {:?}",
                    r.shape(),
                    x.shape()
                )));
            }
        }
        let cols = im2col(x.data(), batch, &self.geometry, 0.0)?;
        let switch_cols = match &switches {
            Some(r) => Some(im2col(r.data(), batch, &self.geometry, 1.0)?),
            None => None,
        };
        let u = linear::forward(&cols, switch_cols.as_ref(), self.noise.c, &self.weights, &self.signs)?;
        self.cache = Some(ConvCache { cols, switch_cols, switches, batch });
        self.finish(u, batch)
    }

    /// Forward with `tanh(W)` in place of `sgn(W)`; leaves the cache alone.
    pub fn smoothed_forward(&self, x: &Tensor, switches: &Tensor) -> Result<Tensor> {
        let batch = self.check_input(x)?;
        let cols = im2col(x.data(), batch, &self.geometry, 0.0)?;
        let rcols = im2col(switches.data(), batch, &self.geometry, 1.0)?;
        let smooth = self.weights.map(f64::tanh);
        let u = linear::forward(&cols, Some(&rcols), self.noise.c, &self.weights, &smooth)?;
        self.finish(u, batch)
    }

    /// `[(b, oy, ox), out]` → `[b, out, oy, ox]` plus bias.
    fn finish(&self, u: Tensor, batch: usize) -> Result<Tensor> {
        let [out, oh, ow] = self.output_shape()?;
        let hw = oh * ow;
        let mut data = vec![0.0; batch * out * hw];
        for b in 0..batch {
            for p in 0..hw {
                let src = &u.data()[(b * hw + p) * out..][..out];
                for (o, &v) in src.iter().enumerate() {
                    data[(b * out + o) * hw + p] = v + self.bias.data()[o];
                }
            }
        }
        Tensor::new(vec![batch, out, oh, ow], data)
    }

    pub fn backward(&mut self, grad_u: &Tensor) -> Result<ConvGrads> {
        let (grad_x, grad_w, grad_b) = self.backward_impl(grad_u, true)?;
        Ok(ConvGrads { grad_x: grad_x.expect("requested"), grad_w, grad_b })
    }

    pub(crate) fn backward_impl(
        &mut self,
        grad_u: &Tensor,
        want_grad_x: bool,
    ) -> Result<(Option<Tensor>, Tensor, Tensor)> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::State("conv backward without a training-mode forward".into()))?;
        let [out, oh, ow] = self.output_shape()?;
        let batch = cache.batch;
        if grad_u.shape() != [batch, out, oh, ow] {
            return Err(Error::Dimension(format!(
                "gradient {:?}, expected {:?}",
                grad_u.shape(),
                [batch, out, oh, ow]
            )));
        }
        let hw = oh * ow;
        let mut g = vec![0.0; batch * hw * out];
        let mut grad_b = vec![0.0; out];
        for b in 0..batch {
            for o in 0..out {
                let src = &grad_u.data()[(b * out + o) * hw..][..hw];
                for (p, &v) in src.iter().enumerate() {
                    g[(b * hw + p) * out + o] = v;
                    grad_b[o] += v;
                }
            }
        }
        let g = Tensor::new(vec![batch * hw, out], g)?;
        let c = self.noise.c;
        let r = cache.switch_cols.as_ref();
        // One switch per input pixel, so R factors out of the col2im sum.
        let grad_x = if want_grad_x {
            let scatter = |w: &Tensor| -> Result<Tensor> {
                col2im(&linear::grad_input(&g, None, 0.0, w, w)?, batch, &self.geometry)
            };
            Some(match &cache.switches {
                None => scatter(&self.weights)?,
                Some(maps) if c == 0.0 => scatter(&self.weights)?.mul(maps)?,
                Some(maps) => {
                    let shifted = self.weights.zip_map(&self.signs, |w, s| w + c * s)?;
                    let mut out = scatter(&shifted)?.mul(maps)?;
                    for (o, v) in out.data_mut().iter_mut().zip(scatter(&self.signs)?.data()) {
                        *o -= c * v;
                    }
                    out
                }
            })
        } else {
            None
        };
        let grad_w = linear::grad_weights(&g, &cache.cols, r, c, &self.weights)?;
        Ok((grad_x, grad_w, Tensor::from_vec(grad_b)))
    }
}
