//! Multiplicative noise rules: Shakeout, inverted Dropout and Gaussian Dropout.
//!
//! Shakeout draws one switch `r` per input unit with `P(r = 0) = τ` and
//! `P(r = 1/(1-τ)) = 1-τ`, then replaces each weight `w` (sign `s`) by
//!
//! * `-c·s` when `r = 0` (reverse),
//! * `(w + cτs)/(1-τ)` otherwise (enhance).
//!
//! Both branches keep zero weights at zero and the expectation equals `w`.
//! With `c = 0` the rule is exactly inverted Dropout.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{check_tau, fill_bernoulli_switches, RngStream};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    Shakeout,
    Dropout,
    GaussianDropout,
    None,
}

impl NoiseKind {
    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::Shakeout => "shakeout",
            NoiseKind::Dropout => "dropout",
            NoiseKind::GaussianDropout => "gaussian-dropout",
            NoiseKind::None => "none",
        }
    }
}

impl std::str::FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shakeout" => Ok(NoiseKind::Shakeout),
            "dropout" => Ok(NoiseKind::Dropout),
            "gaussian-dropout" | "gaussian" => Ok(NoiseKind::GaussianDropout),
            "none" | "std" | "std-bp" => Ok(NoiseKind::None),
            other => Err(Error::Parameter(format!("unknown noise kind {other:?}"))),
        }
    }
}

impl std::fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Noise hyper-parameters. Dropout and Gaussian Dropout always carry `c = 0`;
/// `kind = None` carries `tau = c = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShakeoutParams {
    pub kind: NoiseKind,
    pub tau: f64,
    pub c: f64,
}

impl ShakeoutParams {
    pub fn new(kind: NoiseKind, tau: f64, c: f64) -> Result<Self> {
        match kind {
            NoiseKind::None => Ok(Self::none()),
            NoiseKind::Dropout | NoiseKind::GaussianDropout => {
                check_tau(tau)?;
                Ok(Self { kind, tau, c: 0.0 })
            }
            NoiseKind::Shakeout => {
                check_tau(tau)?;
                if !(c >= 0.0 && c.is_finite()) {
                    return Err(Error::Parameter(format!("c must be finite and >= 0, got {c}")));
                }
                Ok(Self { kind, tau, c })
            }
        }
    }

    pub fn shakeout(tau: f64, c: f64) -> Result<Self> {
        Self::new(NoiseKind::Shakeout, tau, c)
    }

    pub fn dropout(tau: f64) -> Result<Self> {
        Self::new(NoiseKind::Dropout, tau, 0.0)
    }

    pub fn gaussian_dropout(tau: f64) -> Result<Self> {
        Self::new(NoiseKind::GaussianDropout, tau, 0.0)
    }

    pub fn none() -> Self {
        Self { kind: NoiseKind::None, tau: 0.0, c: 0.0 }
    }

    /// True for the two kinds whose switches take values in `{0, 1/(1-τ)}`.
    pub fn is_bernoulli(&self) -> bool {
        matches!(self.kind, NoiseKind::Shakeout | NoiseKind::Dropout)
    }

    pub fn keep_scale(&self) -> f64 {
        1.0 / (1.0 - self.tau)
    }

    /// Variance of the Gaussian Dropout multiplier, `τ/(1-τ)`.
    pub fn gaussian_variance(&self) -> f64 {
        self.tau / (1.0 - self.tau)
    }
}

/// Sign with `sgn(0) = 0`.
pub fn sgn(w: f64) -> f64 {
    if w > 0.0 {
        1.0
    } else if w < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_switch(r: f64, params: &ShakeoutParams) -> Result<()> {
    let keep = params.keep_scale();
    if r == 0.0 || (r - keep).abs() <= 1e-12 * keep {
        Ok(())
    } else {
        Err(Error::Parameter(format!("switch {r} is neither 0 nor 1/(1-tau) = {keep}")))
    }
}

/// The weight actually used in a noisy forward pass for switch value `r`.
pub fn perturb_weight(w: f64, s: f64, r: f64, params: &ShakeoutParams) -> Result<f64> {
    if s != -1.0 && s != 0.0 && s != 1.0 {
        return Err(Error::Parameter(format!("sign must be -1, 0 or 1, got {s}")));
    }
    match params.kind {
        NoiseKind::None => Ok(w),
        NoiseKind::GaussianDropout => Ok(r * w),
        NoiseKind::Dropout | NoiseKind::Shakeout => {
            check_switch(r, params)?;
            let (tau, c) = (params.tau, params.c);
            // r = 1/(1-τ) here, so the enhance branch is r·(w + cτs)
            let out = if r == 0.0 { -c * s } else { r * (w + c * tau * s) };
            // normalizes -0.0 from the reverse branch at w = 0
            Ok(out + 0.0)
        }
    }
}

/// `E_r[w̃]`, evaluated branch by branch; analytically equal to `w`.
pub fn expected_perturbed_weight(w: f64, params: &ShakeoutParams) -> f64 {
    if !params.is_bernoulli() {
        return w;
    }
    let (tau, c, s) = (params.tau, params.c, sgn(w));
    tau * (-c * s) + (1.0 - tau) * (w + c * tau * s) / (1.0 - tau)
}

/// Input-space view of the same noise: `x̃ = γ·x` with `γ = r + c(r-1)/|w|`.
pub fn input_scale_factor(r: f64, w: f64, c: f64) -> Result<f64> {
    if w == 0.0 {
        return Err(Error::UndefinedScale);
    }
    Ok(r + c * (r - 1.0) / w.abs())
}

/// One draw from `Normal(1, τ/(1-τ))`.
pub fn gaussian_dropout_scale(rng: &mut impl Rng, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    let normal = Normal::new(1.0, (tau / (1.0 - tau)).sqrt())
        .map_err(|e| Error::Parameter(e.to_string()))?;
    Ok(normal.sample(rng))
}

/// Switch values realized for one forward pass, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchTensor {
    pub values: Tensor,
    pub stream: RngStream,
}

impl SwitchTensor {
    /// Draws `rows × units` switches; row `b` comes from `stream.child(b)` so
    /// every sample's mask can be regenerated independently.
    pub fn draw(
        stream: &RngStream,
        rows: usize,
        units: usize,
        params: &ShakeoutParams,
    ) -> Result<Self> {
        let mut data = vec![0.0; rows * units];
        match params.kind {
            NoiseKind::None => {
                return Err(Error::Parameter("no switches for noise kind none".into()));
            }
            NoiseKind::Shakeout | NoiseKind::Dropout => {
                for (b, row) in data.chunks_mut(units).enumerate() {
                    fill_bernoulli_switches(&mut stream.child(b as u64).generator(), params.tau, row);
                }
            }
            NoiseKind::GaussianDropout => {
                let normal = Normal::new(1.0, params.gaussian_variance().sqrt())
                    .map_err(|e| Error::Parameter(e.to_string()))?;
                for (b, row) in data.chunks_mut(units).enumerate() {
                    let mut rng = stream.child(b as u64).generator();
                    for v in row {
                        *v = normal.sample(&mut rng);
                    }
                }
            }
        }
        Ok(Self { values: Tensor::new(vec![rows, units], data)?, stream: *stream })
    }
}
