//! The noisy weighted sum shared by fully-connected and (im2col'd)
//! convolutional layers.
//!
//! Rows of `x` are independent inputs of width `k`; `switches`, when present,
//! has the same shape and holds one switch per input unit. With weights
//! `W: out×k` and signs `S = sgn(W)`:
//!
//! ```text
//! u      = (x∘R)·Wᵀ + c·((R-1)∘x)·Sᵀ
//! ∂L/∂x  = R∘(G·(W + cS)) - c·(G·S)
//! ∂L/∂W  = Gᵀ·(x∘R) + c·(1 - tanh²W)∘(Gᵀ·((R-1)∘x))
//! ```
//!
//! The `c` terms are skipped entirely when `c = 0`, so Dropout and Shakeout
//! with `c = 0` run the identical float operations.

use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor, Transpose};

fn masked(x: &Tensor, switches: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    x.zip_map(switches, f)
}

pub(crate) fn forward(
    x: &Tensor,
    switches: Option<&Tensor>,
    c: f64,
    weights: &Tensor,
    signs: &Tensor,
) -> Result<Tensor> {
    let Some(r) = switches else {
        return gemm(x, Transpose::No, weights, Transpose::Yes);
    };
    if r.shape() != x.shape() {
        return Err(Error::Dimension(format!(
            "switches {:?} do not match input {:?}",
            r.shape(),
            x.shape()
        )));
    }
    let mut u = gemm(&masked(x, r, |a, b| a * b)?, Transpose::No, weights, Transpose::Yes)?;
    if c != 0.0 {
        let reversed = gemm(&masked(x, r, |a, b| (b - 1.0) * a)?, Transpose::No, signs, Transpose::Yes)?;
        for (ui, vi) in u.data_mut().iter_mut().zip(reversed.data()) {
            *ui += c * vi;
        }
    }
    Ok(u)
}

pub(crate) fn add_bias(u: &mut Tensor, bias: &Tensor) {
    let out = bias.len();
    for row in u.data_mut().chunks_mut(out) {
        for (v, b) in row.iter_mut().zip(bias.data()) {
            *v += b;
        }
    }
}

pub(crate) fn column_sums(g: &Tensor) -> Result<Tensor> {
    let (_, cols) = g.dims2()?;
    let mut sums = vec![0.0; cols];
    for row in g.data().chunks(cols) {
        for (s, v) in sums.iter_mut().zip(row) {
            *s += v;
        }
    }
    Ok(Tensor::from_vec(sums))
}

pub(crate) fn grad_input(
    grad: &Tensor,
    switches: Option<&Tensor>,
    c: f64,
    weights: &Tensor,
    signs: &Tensor,
) -> Result<Tensor> {
    let Some(r) = switches else {
        return gemm(grad, Transpose::No, weights, Transpose::No);
    };
    if c == 0.0 {
        let gw = gemm(grad, Transpose::No, weights, Transpose::No)?;
        return gw.mul(r);
    }
    let shifted = weights.zip_map(signs, |w, s| w + c * s)?;
    let through = gemm(grad, Transpose::No, &shifted, Transpose::No)?;
    let reverse = gemm(grad, Transpose::No, signs, Transpose::No)?;
    let mut out = through.mul(r)?;
    for (o, v) in out.data_mut().iter_mut().zip(reverse.data()) {
        *o -= c * v;
    }
    Ok(out)
}

pub(crate) fn grad_weights(
    grad: &Tensor,
    x: &Tensor,
    switches: Option<&Tensor>,
    c: f64,
    weights: &Tensor,
) -> Result<Tensor> {
    let Some(r) = switches else {
        return gemm(grad, Transpose::Yes, x, Transpose::No);
    };
    let mut gw = gemm(grad, Transpose::Yes, &masked(x, r, |a, b| a * b)?, Transpose::No)?;
    if c != 0.0 {
        let rev = gemm(grad, Transpose::Yes, &masked(x, r, |a, b| (b - 1.0) * a)?, Transpose::No)?;
        for ((g, v), w) in gw.data_mut().iter_mut().zip(rev.data()).zip(weights.data()) {
            let t = w.tanh();
            *g += c * (1.0 - t * t) * v;
        }
    }
    Ok(gw)
}
