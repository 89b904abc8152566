//! Shakeout regularizer for generalized linear models.
//!
//! For a GLM with log-partition `A` and `θ = wᵀx`, the noise turns the loss
//! `-θy + A(θ)` into `-θy + A(θ) + π(w)` in expectation. This module evaluates
//! `π` in closed form (per-feature terms built from `q_j = x_j(w_j + c·s_j)`),
//! by Monte Carlo through the weight-perturbation rule, and by exhaustive
//! enumeration of the `2^p` switch patterns.
//!
//! The closed form sums one two-point expectation per feature. It is exact
//! whenever `A` is quadratic or `p = 1`; for other `A` and `p > 1` it drops the
//! mixed moments between distinct switches and differs from the true
//! expectation. [`shakeout_reg_enumerated`] gives the true value.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{perturb_weight, sgn, ShakeoutParams};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GlmKind {
    Linear,
    Logistic,
    Custom,
}

impl std::str::FromStr for GlmKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(GlmKind::Linear),
            "logistic" => Ok(GlmKind::Logistic),
            other => Err(Error::Parameter(format!("unknown GLM spec {other:?}"))),
        }
    }
}

/// A GLM given by its log-partition function and first two derivatives.
#[derive(Debug, Clone, Copy)]
pub struct GlmSpec {
    pub kind: GlmKind,
    a: fn(f64) -> f64,
    a1: fn(f64) -> f64,
    a2: fn(f64) -> f64,
}

impl GlmSpec {
    /// `A(θ) = θ²/2`.
    pub fn linear() -> Self {
        Self { kind: GlmKind::Linear, a: |t| 0.5 * t * t, a1: |t| t, a2: |_| 1.0 }
    }

    /// `A(θ) = ln(1 + e^θ)`.
    pub fn logistic() -> Self {
        Self { kind: GlmKind::Logistic, a: softplus, a1: sigmoid, a2: |t| {
            let s = sigmoid(t);
            s * (1.0 - s)
        } }
    }

    pub fn custom(a: fn(f64) -> f64, a1: fn(f64) -> f64, a2: fn(f64) -> f64) -> Self {
        Self { kind: GlmKind::Custom, a, a1, a2 }
    }

    pub fn from_kind(kind: GlmKind) -> Result<Self> {
        match kind {
            GlmKind::Linear => Ok(Self::linear()),
            GlmKind::Logistic => Ok(Self::logistic()),
            GlmKind::Custom => Err(Error::Parameter("custom specs need explicit functions".into())),
        }
    }

    pub fn a(&self, theta: f64) -> f64 {
        (self.a)(theta)
    }

    pub fn a1(&self, theta: f64) -> f64 {
        (self.a1)(theta)
    }

    pub fn a2(&self, theta: f64) -> f64 {
        (self.a2)(theta)
    }
}

/// `ln(1 + e^t)` without overflow.
pub fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn dot(w: &[f64], x: &[f64]) -> f64 {
    w.iter().zip(x).map(|(a, b)| a * b).sum()
}

fn check_inputs(w: &[f64], x: &[f64], params: &ShakeoutParams) -> Result<()> {
    if w.is_empty() {
        return Err(Error::Dimension("need at least one feature".into()));
    }
    if w.len() != x.len() {
        return Err(Error::Dimension(format!("w has {} entries, x has {}", w.len(), x.len())));
    }
    if !params.is_bernoulli() {
        return Err(Error::Parameter(format!(
            "regularizer is defined for shakeout/dropout noise, got {}",
            params.kind
        )));
    }
    Ok(())
}

/// `-θy + A(θ)` with `θ = wᵀx`.
pub fn glm_loss(spec: &GlmSpec, w: &[f64], x: &[f64], y: f64) -> Result<f64> {
    if w.len() != x.len() {
        return Err(Error::Dimension(format!("w has {} entries, x has {}", w.len(), x.len())));
    }
    let theta = dot(w, x);
    Ok(-theta * y + spec.a(theta))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureTerm {
    pub q: f64,
    pub theta_minus: f64,
    pub theta_plus: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularizerEval {
    pub pi: f64,
    pub theta: f64,
    pub per_feature: Vec<FeatureTerm>,
}

/// Closed-form regularizer `τΣA(θ_j-) + (1-τ)ΣA(θ_j+) - pA(θ)`.
///
/// Accumulated one feature at a time, which keeps the cancellation against
/// `A(θ)` local when `|θ|` is large.
pub fn shakeout_reg_exact(
    spec: &GlmSpec,
    w: &[f64],
    x: &[f64],
    params: &ShakeoutParams,
) -> Result<RegularizerEval> {
    check_inputs(w, x, params)?;
    let (tau, c) = (params.tau, params.c);
    let theta = dot(w, x);
    let a_theta = spec.a(theta);
    let ratio = tau / (1.0 - tau);
    let mut pi = 0.0;
    let per_feature = w
        .iter()
        .zip(x)
        .map(|(&wj, &xj)| {
            let q = xj * (wj + c * sgn(wj));
            let term = FeatureTerm { q, theta_minus: theta - q, theta_plus: theta + ratio * q };
            pi += tau * spec.a(term.theta_minus) + (1.0 - tau) * spec.a(term.theta_plus) - a_theta;
            term
        })
        .collect();
    Ok(RegularizerEval { pi, theta, per_feature })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub draws: usize,
}

/// Monte-Carlo estimate of `E_r[A(θ̃)] - A(θ)` with perturbed weights drawn
/// through [`perturb_weight`].
pub fn shakeout_reg_mc(
    spec: &GlmSpec,
    w: &[f64],
    x: &[f64],
    params: &ShakeoutParams,
    draws: usize,
    stream: &RngStream,
) -> Result<McEstimate> {
    check_inputs(w, x, params)?;
    if draws < 10_000 {
        return Err(Error::Parameter(format!("need at least 10^4 draws, got {draws}")));
    }
    let keep = params.keep_scale();
    // contribution w̃_j·x_j under the reverse and enhance branches
    let mut branches = Vec::with_capacity(w.len());
    for (&wj, &xj) in w.iter().zip(x) {
        let s = sgn(wj);
        branches.push((
            perturb_weight(wj, s, 0.0, params)? * xj,
            perturb_weight(wj, s, keep, params)? * xj,
        ));
    }
    let a_theta = spec.a(dot(w, x));
    let mut rng = stream.generator();
    let (mut mean, mut m2) = (0.0, 0.0);
    for n in 1..=draws {
        let theta_tilde: f64 = branches
            .iter()
            .map(|&(rev, enh)| if rng.gen::<f64>() < params.tau { rev } else { enh })
            .sum();
        let gap = spec.a(theta_tilde) - a_theta;
        let delta = gap - mean;
        mean += delta / n as f64;
        m2 += delta * (gap - mean);
    }
    let var = m2 / (draws - 1) as f64;
    Ok(McEstimate { mean, std_error: (var / draws as f64).sqrt(), draws })
}

/// True expectation gap by summing over all `2^p` switch patterns.
pub fn shakeout_reg_enumerated(
    spec: &GlmSpec,
    w: &[f64],
    x: &[f64],
    params: &ShakeoutParams,
) -> Result<f64> {
    check_inputs(w, x, params)?;
    let p = w.len();
    if p > 20 {
        return Err(Error::Parameter(format!("enumeration limited to p <= 20, got {p}")));
    }
    let keep = params.keep_scale();
    let mut branches = Vec::with_capacity(p);
    for (&wj, &xj) in w.iter().zip(x) {
        let s = sgn(wj);
        branches.push((
            perturb_weight(wj, s, 0.0, params)? * xj,
            perturb_weight(wj, s, keep, params)? * xj,
        ));
    }
    let a_theta = spec.a(dot(w, x));
    let mut total = 0.0;
    for pattern in 0u32..(1 << p) {
        let mut prob = 1.0;
        let mut theta_tilde = 0.0;
        for (j, &(rev, enh)) in branches.iter().enumerate() {
            if pattern & (1 << j) == 0 {
                prob *= params.tau;
                theta_tilde += rev;
            } else {
                prob *= 1.0 - params.tau;
                theta_tilde += enh;
            }
        }
        total += prob * (spec.a(theta_tilde) - a_theta);
    }
    Ok(total)
}

/// Linear-regression regularizer split into its three penalty components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearRegTerms {
    pub pi: f64,
    /// `Σ x_j² 1[w_j ≠ 0]`
    pub l0: f64,
    /// `Σ x_j² |w_j|`
    pub l1: f64,
    /// `Σ x_j² w_j²`
    pub l2: f64,
}

pub fn reg_linear_closed_form(
    w: &[f64],
    x: &[f64],
    params: &ShakeoutParams,
) -> Result<LinearRegTerms> {
    check_inputs(w, x, params)?;
    let (mut l0, mut l1, mut l2) = (0.0, 0.0, 0.0);
    for (&wj, &xj) in w.iter().zip(x) {
        let x2 = xj * xj;
        if wj != 0.0 {
            l0 += x2;
        }
        l1 += x2 * wj.abs();
        l2 += x2 * wj * wj;
    }
    let (tau, c) = (params.tau, params.c);
    let pi = tau / (2.0 * (1.0 - tau)) * (l2 + 2.0 * c * l1 + c * c * l0);
    Ok(LinearRegTerms { pi, l0, l1, l2 })
}

/// `ln(e^a + e^b)` by max-subtraction.
fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Logistic-regression regularizer as a sum of per-feature log ratios
/// `ln[(1+e^θ-)^τ (1+e^θ+)^(1-τ) / (1+e^θ)]`.
pub fn reg_logistic_closed_form(w: &[f64], x: &[f64], params: &ShakeoutParams) -> Result<f64> {
    check_inputs(w, x, params)?;
    let (tau, c) = (params.tau, params.c);
    let theta = dot(w, x);
    let log_den = log_add_exp(0.0, theta);
    Ok(w
        .iter()
        .zip(x)
        .map(|(&wj, &xj)| {
            let q = xj * (wj + c * sgn(wj));
            let minus = theta - q;
            let plus = theta + tau / (1.0 - tau) * q;
            tau * log_add_exp(0.0, minus) + (1.0 - tau) * log_add_exp(0.0, plus) - log_den
        })
        .sum())
}

/// Second-order approximation `τ/(2(1-τ)) · A''(θ) · ‖x∘(w + c·s)‖²`.
pub fn reg_quadratic_approx(
    spec: &GlmSpec,
    w: &[f64],
    x: &[f64],
    params: &ShakeoutParams,
) -> Result<f64> {
    check_inputs(w, x, params)?;
    let (tau, c) = (params.tau, params.c);
    let norm2: f64 = w
        .iter()
        .zip(x)
        .map(|(&wj, &xj)| {
            let q = xj * (wj + c * sgn(wj));
            q * q
        })
        .sum();
    Ok(tau / (2.0 * (1.0 - tau)) * spec.a2(dot(w, x)) * norm2)
}

/// Bound on the single-weight logistic regularizer, `τ ln(1 + e^{c|x|})`.
pub fn logistic_single_weight_bound(params: &ShakeoutParams, x: f64) -> f64 {
    params.tau * softplus(params.c * x.abs())
}

/// One-sided slopes `(π(0) - π(-h))/h` and `(π(h) - π(0))/h` of the
/// single-weight regularizer at `w = 0`.
pub fn one_sided_slopes_at_zero(
    spec: &GlmSpec,
    x: f64,
    params: &ShakeoutParams,
    h: f64,
) -> Result<(f64, f64)> {
    let pi = |w: f64| shakeout_reg_exact(spec, &[w], &[x], params).map(|e| e.pi);
    let at0 = pi(0.0)?;
    Ok(((at0 - pi(-h)?) / h, (pi(h)? - at0) / h))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContourGrid {
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
    /// `pi[i][k]` is the regularizer at `(w1[i], w2[k])`.
    pub pi: Vec<Vec<f64>>,
}

impl ContourGrid {
    /// CSV with header `w1,w2,pi`, `w2` varying fastest.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("w1,w2,pi\n");
        for (i, &a) in self.w1.iter().enumerate() {
            for (k, &b) in self.w2.iter().enumerate() {
                out.push_str(&format!("{},{},{}\n", fmt17(a), fmt17(b), fmt17(self.pi[i][k])));
            }
        }
        out
    }

    pub fn value_at(&self, w1: f64, w2: f64) -> Option<f64> {
        let i = self.w1.iter().position(|&v| v == w1)?;
        let k = self.w2.iter().position(|&v| v == w2)?;
        Some(self.pi[i][k])
    }
}

/// 17 significant digits.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

fn linspace(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    (0..steps)
        .map(|k| if k + 1 == steps { hi } else { lo + (hi - lo) * k as f64 / (steps - 1) as f64 })
        .collect()
}

/// Regularizer over a 2-D weight grid for a fixed two-feature input.
pub fn contour_grid(
    spec: &GlmSpec,
    x: [f64; 2],
    params: &ShakeoutParams,
    w1_range: (f64, f64),
    w2_range: (f64, f64),
    steps: usize,
) -> Result<ContourGrid> {
    if steps < 2 {
        return Err(Error::Parameter(format!("need at least 2 grid steps, got {steps}")));
    }
    let w1 = linspace(w1_range.0, w1_range.1, steps);
    let w2 = linspace(w2_range.0, w2_range.1, steps);
    let mut pi = Vec::with_capacity(steps);
    for &a in &w1 {
        let row = w2
            .iter()
            .map(|&b| shakeout_reg_exact(spec, &[a, b], &x, params).map(|e| e.pi))
            .collect::<Result<Vec<_>>>()?;
        pi.push(row);
    }
    Ok(ContourGrid { w1, w2, pi })
}

/// A random regularizer instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmInstance {
    pub w: Vec<f64>,
    pub x: Vec<f64>,
    pub params: ShakeoutParams,
}

impl GlmInstance {
    /// `p` uniform in `1..=max_p`, entries uniform in `[-bound, bound]`,
    /// `τ` and `c` drawn from the given grids.
    pub fn random(
        rng: &mut impl Rng,
        max_p: usize,
        bound: f64,
        taus: &[f64],
        cs: &[f64],
    ) -> Result<Self> {
        let p = rng.gen_range(1..=max_p);
        let w = (0..p).map(|_| rng.gen_range(-bound..=bound)).collect();
        let x = (0..p).map(|_| rng.gen_range(-bound..=bound)).collect();
        let tau = taus[rng.gen_range(0..taus.len())];
        let c = cs[rng.gen_range(0..cs.len())];
        Ok(Self { w, x, params: ShakeoutParams::shakeout(tau, c)? })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub proposition: String,
    pub detail: String,
    pub instance: GlmInstance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropositionReport {
    pub spec: GlmKind,
    pub trials: usize,
    /// Number of individual checks performed per proposition, `[P1, P2, P3, P4]`.
    pub checks: [usize; 4],
    pub violations: Vec<Violation>,
}

impl PropositionReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

pub const TAU_GRID: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];
pub const C_GRID: [f64; 9] = [0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0];
const SLOPE_STEP: f64 = 1e-5;

/// Numerical certification of the four regularizer propositions over
/// `trials` random instances:
///
/// 1. `π(0) = 0` (to 1e-12);
/// 2. `π ≥ 0` (to -1e-10) for convex `A`;
/// 3. `π` nondecreasing along [`TAU_GRID`] and [`C_GRID`] when some `x_j w_j ≠ 0`;
/// 4. with a single active weight, `∂π/∂w` has the sign of `w`; for the
///    logistic spec the slope at `|w| = 10³` is below 1e-3.
pub fn check_propositions(
    spec: &GlmSpec,
    trials: usize,
    stream: &RngStream,
) -> Result<PropositionReport> {
    if trials == 0 {
        return Err(Error::Parameter("trials must be positive".into()));
    }
    let pi = |w: &[f64], x: &[f64], p: &ShakeoutParams| {
        shakeout_reg_exact(spec, w, x, p).map(|e| e.pi)
    };
    let mut rng = stream.generator();
    let mut checks = [0usize; 4];
    let mut violations = Vec::new();
    let mut flag = |prop: &str, detail: String, inst: &GlmInstance| {
        violations.push(Violation {
            proposition: prop.to_string(),
            detail,
            instance: inst.clone(),
        });
    };

    for _ in 0..trials {
        let tau = rng.gen_range(0.05..0.95);
        let c = rng.gen_range(0.0..2.0);
        let p = rng.gen_range(1..=8usize);
        let w: Vec<f64> = (0..p).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let x: Vec<f64> = (0..p).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let params = ShakeoutParams::shakeout(tau, c)?;
        let inst = GlmInstance { w: w.clone(), x: x.clone(), params };

        // P1
        checks[0] += 1;
        let zero = pi(&vec![0.0; p], &x, &params)?;
        if zero.abs() > 1e-12 {
            flag("P1", format!("pi(0) = {zero:e}"), &inst);
        }

        // P2
        checks[1] += 1;
        let value = pi(&w, &x, &params)?;
        if value < -1e-10 {
            flag("P2", format!("pi = {value:e}"), &inst);
        }

        // P3
        if w.iter().zip(&x).any(|(a, b)| a * b != 0.0) {
            checks[2] += 1;
            let along_tau = TAU_GRID
                .iter()
                .map(|&t| pi(&w, &x, &ShakeoutParams::shakeout(t, c)?))
                .collect::<Result<Vec<_>>>()?;
            if let Some(k) = first_decrease(&along_tau) {
                flag(
                    "P3",
                    format!("tau {} -> {}: {} -> {}", TAU_GRID[k], TAU_GRID[k + 1], along_tau[k], along_tau[k + 1]),
                    &inst,
                );
            }
            let along_c = C_GRID
                .iter()
                .map(|&cc| pi(&w, &x, &ShakeoutParams::shakeout(tau, cc)?))
                .collect::<Result<Vec<_>>>()?;
            if let Some(k) = first_decrease(&along_c) {
                flag(
                    "P3",
                    format!("c {} -> {}: {} -> {}", C_GRID[k], C_GRID[k + 1], along_c[k], along_c[k + 1]),
                    &inst,
                );
            }
        }

        // P4: all other weights zero, one active weight with a nonzero feature
        let active = rng.gen_range(0..p);
        let mut x4 = x.clone();
        if x4[active].abs() < 0.1 {
            x4[active] = 0.1_f64.copysign(x4[active] + f64::MIN_POSITIVE);
        }
        let magnitude = rng.gen_range(0.05..2.5);
        for sign in [1.0, -1.0] {
            let mut w4 = vec![0.0; p];
            let slope_at = |w4: &mut Vec<f64>, at: f64| -> Result<f64> {
                w4[active] = at + SLOPE_STEP;
                let hi = pi(w4, &x4, &params)?;
                w4[active] = at - SLOPE_STEP;
                let lo = pi(w4, &x4, &params)?;
                w4[active] = at;
                Ok((hi - lo) / (2.0 * SLOPE_STEP))
            };
            let at = sign * magnitude;
            let slope = slope_at(&mut w4, at)?;
            checks[3] += 1;
            if !(slope * sign > 0.0) {
                let inst4 = GlmInstance { w: w4.clone(), x: x4.clone(), params };
                flag("P4", format!("slope {slope:e} at w = {at}"), &inst4);
            }
            if spec.kind == GlmKind::Logistic {
                let far = sign * 1e3;
                let slope = slope_at(&mut w4, far)?;
                checks[3] += 1;
                if slope.abs() >= 1e-3 {
                    let inst4 = GlmInstance { w: w4.clone(), x: x4.clone(), params };
                    flag("P4", format!("slope {slope:e} at w = {far}"), &inst4);
                }
            }
        }
    }
    Ok(PropositionReport { spec: spec.kind, trials, checks, violations })
}

fn first_decrease(values: &[f64]) -> Option<usize> {
    values
        .windows(2)
        .position(|pair| pair[1] < pair[0] - 1e-12 * (1.0 + pair[0].abs()))
}

/// One instance of the Monte-Carlo versus closed-form comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementRecord {
    pub spec: GlmKind,
    pub instance: GlmInstance,
    pub closed_form: f64,
    pub enumerated: f64,
    pub mc: McEstimate,
}

impl AgreementRecord {
    /// `|MC - closed form|` in standard errors.
    pub fn z_closed_form(&self) -> f64 {
        z_score(self.mc.mean - self.closed_form, self.mc.std_error)
    }

    /// `|MC - exact expectation|` in standard errors.
    pub fn z_enumerated(&self) -> f64 {
        z_score(self.mc.mean - self.enumerated, self.mc.std_error)
    }

    /// Whether the closed form is known to equal the expectation here:
    /// any linear instance, or a single feature.
    pub fn closed_form_is_exact(&self) -> bool {
        self.spec == GlmKind::Linear || self.instance.w.len() == 1
    }
}

fn z_score(diff: f64, se: f64) -> f64 {
    if se > 0.0 {
        diff.abs() / se
    } else if diff.abs() <= 1e-12 {
        0.0
    } else {
        f64::INFINITY
    }
}

pub const AGREEMENT_TAUS: [f64; 3] = [0.25, 0.5, 0.75];
pub const AGREEMENT_CS: [f64; 3] = [0.0, 0.5, 1.0];

/// `instances` random problems (`p ≤ max_p`, entries in `[-2, 2]`), cycling
/// through `specs`; each gets a closed-form value, the exact `2^p`
/// expectation and an MC estimate from its own sub-stream.
pub fn mc_agreement_suite(
    specs: &[GlmSpec],
    instances: usize,
    draws: usize,
    max_p: usize,
    stream: &RngStream,
) -> Result<Vec<AgreementRecord>> {
    if specs.is_empty() || instances == 0 {
        return Err(Error::Parameter("need at least one spec and one instance".into()));
    }
    let mut rng = stream.child(0).generator();
    let mut out = Vec::with_capacity(instances);
    for k in 0..instances {
        let spec = &specs[k % specs.len()];
        let instance = GlmInstance::random(&mut rng, max_p, 2.0, &AGREEMENT_TAUS, &AGREEMENT_CS)?;
        let (w, x, p) = (&instance.w, &instance.x, &instance.params);
        let closed_form = shakeout_reg_exact(spec, w, x, p)?.pi;
        let enumerated = shakeout_reg_enumerated(spec, w, x, p)?;
        let mc = shakeout_reg_mc(spec, w, x, p, draws, &stream.child(1 + k as u64))?;
        out.push(AgreementRecord { spec: spec.kind, instance, closed_form, enumerated, mc });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn sk(tau: f64, c: f64) -> ShakeoutParams {
        ShakeoutParams::shakeout(tau, c).unwrap()
    }

    #[test]
    fn loss_examples() {
        let lin = GlmSpec::linear();
        let log = GlmSpec::logistic();
        assert_eq!(glm_loss(&lin, &[0.0, 0.0], &[1.0, 2.0], 3.0).unwrap(), 0.0);
        assert!((glm_loss(&log, &[0.0], &[5.0], 1.0).unwrap() - 2f64.ln()).abs() < 1e-15);
        let expected = -1.0 + (1.0 + 1f64.exp()).ln();
        assert!((glm_loss(&log, &[1.0], &[1.0], 1.0).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.3133).abs() < 1e-4);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-5;
        for spec in [GlmSpec::linear(), GlmSpec::logistic()] {
            for k in -20..=20 {
                let t = k as f64 * 0.37;
                let d1 = (spec.a(t + h) - spec.a(t - h)) / (2.0 * h);
                let d2 = (spec.a1(t + h) - spec.a1(t - h)) / (2.0 * h);
                assert!((d1 - spec.a1(t)).abs() < 1e-6, "{:?} a1 at {t}", spec.kind);
                assert!((d2 - spec.a2(t)).abs() < 1e-6, "{:?} a2 at {t}", spec.kind);
            }
        }
        let log = GlmSpec::logistic();
        for t in [-800.0, -3.0, 0.0, 2.0, 800.0] {
            assert!(log.a2(t) >= 0.0 && log.a2(t) <= 0.25);
            assert!(log.a(t).is_finite());
        }
    }

    #[test]
    fn zero_weights_zero_regularizer() {
        for spec in [GlmSpec::linear(), GlmSpec::logistic()] {
            let e = shakeout_reg_exact(&spec, &[0.0; 4], &[1.0, -2.0, 0.5, 3.0], &sk(0.4, 1.3)).unwrap();
            assert!(e.pi.abs() < 1e-12);
        }
    }

    #[test]
    fn single_weight_linear_value() {
        let e = shakeout_reg_exact(&GlmSpec::linear(), &[1.0], &[1.0], &sk(0.5, 0.0)).unwrap();
        assert!((e.pi - 0.5).abs() < 1e-15);
        let t = &e.per_feature[0];
        assert_eq!((t.q, t.theta_minus, t.theta_plus), (1.0, 0.0, 2.0));
    }

    #[test]
    fn logistic_asymptote_matches_bound() {
        let p = sk(0.3, 0.78);
        let e = shakeout_reg_exact(&GlmSpec::logistic(), &[1e3], &[1.0], &p).unwrap();
        let bound = logistic_single_weight_bound(&p, 1.0);
        assert!((bound - 0.3472).abs() < 1e-4, "bound {bound}");
        assert!((e.pi - bound).abs() < 1e-3);
    }

    #[test]
    fn non_bernoulli_kinds_rejected() {
        let g = ShakeoutParams::gaussian_dropout(0.5).unwrap();
        assert!(shakeout_reg_exact(&GlmSpec::linear(), &[1.0], &[1.0], &g).is_err());
        assert!(shakeout_reg_exact(&GlmSpec::linear(), &[1.0], &[1.0, 2.0], &sk(0.5, 0.0)).is_err());
    }

    #[test]
    fn linear_decomposition_example() {
        let t = reg_linear_closed_form(&[1.0, 0.0], &[1.0, 1.0], &sk(0.5, 1.0)).unwrap();
        assert_eq!((t.l0, t.l1, t.l2), (1.0, 1.0, 1.0));
        assert!((t.pi - 2.0).abs() < 1e-15);
        let z = reg_linear_closed_form(&[0.0, 0.0], &[1.0, 3.0], &sk(0.5, 1.0)).unwrap();
        assert_eq!((z.pi, z.l0, z.l1, z.l2), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn linear_dropout_is_pure_l2() {
        let (w, x) = ([0.3, -1.2, 2.0], [1.5, 0.5, -1.0]);
        let tau = 0.35;
        let t = reg_linear_closed_form(&w, &x, &ShakeoutParams::dropout(tau).unwrap()).unwrap();
        let l2: f64 = w.iter().zip(&x).map(|(a, b)| a * a * b * b).sum();
        assert!((t.pi - tau / (2.0 * (1.0 - tau)) * l2).abs() < 1e-14);
    }

    #[test]
    fn logistic_closed_form_is_stable() {
        let v = reg_logistic_closed_form(&[400.0, -400.0], &[2.0, 0.0], &sk(0.5, 1.0)).unwrap();
        assert!(v.is_finite());
        let e = shakeout_reg_exact(&GlmSpec::logistic(), &[400.0, -400.0], &[2.0, 0.0], &sk(0.5, 1.0))
            .unwrap();
        assert!((v - e.pi).abs() < 1e-10);
        let exact = shakeout_reg_exact(&GlmSpec::logistic(), &[1.0], &[1.0], &sk(0.5, 0.0)).unwrap();
        let closed = reg_logistic_closed_form(&[1.0], &[1.0], &sk(0.5, 0.0)).unwrap();
        assert!((exact.pi - closed).abs() < 1e-10);
    }

    #[test]
    fn quadratic_approximation() {
        let (w, x) = ([0.4, -0.7, 0.0], [1.0, 2.0, -0.5]);
        let p = sk(0.3, 0.6);
        let approx = reg_quadratic_approx(&GlmSpec::linear(), &w, &x, &p).unwrap();
        let lin = reg_linear_closed_form(&w, &x, &p).unwrap();
        assert!((approx - lin.pi).abs() <= 1e-15 * lin.pi);
        let zero = reg_quadratic_approx(&GlmSpec::logistic(), &[0.0, 0.0], &[1.0, 1.0], &p).unwrap();
        assert_eq!(zero, 0.0);
        // Taylor regime
        let (w, x) = ([0.004, -0.003], [1.0, 0.5]);
        let p = sk(0.5, 0.002);
        let approx = reg_quadratic_approx(&GlmSpec::logistic(), &w, &x, &p).unwrap();
        let exact = shakeout_reg_exact(&GlmSpec::logistic(), &w, &x, &p).unwrap().pi;
        assert!(((approx - exact) / exact).abs() < 0.05);
    }

    #[test]
    fn monte_carlo_agrees_where_closed_form_is_exact() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for i in 0..20 {
            let (spec, max_p) =
                if i % 2 == 0 { (GlmSpec::linear(), 8) } else { (GlmSpec::logistic(), 1) };
            let inst =
                GlmInstance::random(&mut rng, max_p, 2.0, &[0.25, 0.5, 0.75], &[0.0, 0.5, 1.0]).unwrap();
            let exact = shakeout_reg_exact(&spec, &inst.w, &inst.x, &inst.params).unwrap().pi;
            let mc = shakeout_reg_mc(&spec, &inst.w, &inst.x, &inst.params, 100_000, &RngStream::new(3, i))
                .unwrap();
            assert!(
                (mc.mean - exact).abs() < 4.0 * mc.std_error,
                "{:?}: mc {} ± {} vs {exact}",
                spec.kind,
                mc.mean,
                mc.std_error
            );
        }
    }

    #[test]
    fn monte_carlo_tracks_enumeration_not_closed_form_for_multi_feature_logistic() {
        let spec = GlmSpec::logistic();
        let (w, x) = ([1.5, -1.2, 0.9, 1.8], [1.7, 1.1, -1.9, 1.4]);
        let p = sk(0.5, 1.0);
        let enumerated = shakeout_reg_enumerated(&spec, &w, &x, &p).unwrap();
        let closed = shakeout_reg_exact(&spec, &w, &x, &p).unwrap().pi;
        let mc = shakeout_reg_mc(&spec, &w, &x, &p, 200_000, &RngStream::new(8, 0)).unwrap();
        assert!((mc.mean - enumerated).abs() < 4.0 * mc.std_error);
        assert!((closed - enumerated).abs() > 20.0 * mc.std_error);
    }

    #[test]
    fn enumeration_equals_closed_form_for_linear() {
        let spec = GlmSpec::linear();
        let (w, x) = ([0.5, -1.0, 0.0, 2.0, -0.3], [1.0, 0.4, 3.0, -1.1, 0.9]);
        let p = sk(0.6, 0.8);
        let a = shakeout_reg_enumerated(&spec, &w, &x, &p).unwrap();
        let b = shakeout_reg_exact(&spec, &w, &x, &p).unwrap().pi;
        assert!((a - b).abs() < 1e-12 * (1.0 + b));
    }

    #[test]
    fn monte_carlo_edge_cases() {
        let spec = GlmSpec::logistic();
        let mc = shakeout_reg_mc(&spec, &[0.0, 0.0], &[1.0, 2.0], &sk(0.5, 1.0), 10_000, &RngStream::new(1, 1))
            .unwrap();
        assert_eq!((mc.mean, mc.std_error), (0.0, 0.0));
        assert!(shakeout_reg_mc(&spec, &[1.0], &[1.0], &sk(0.5, 1.0), 100, &RngStream::new(1, 1)).is_err());

        let (w, x) = ([0.7, -1.1, 0.2], [1.2, 0.3, -2.0]);
        let tau = 0.3;
        let mc = shakeout_reg_mc(&GlmSpec::linear(), &w, &x, &sk(tau, 0.0), 200_000, &RngStream::new(2, 2))
            .unwrap();
        let l2: f64 = w.iter().zip(&x).map(|(a, b)| a * a * b * b).sum();
        assert!((mc.mean - tau / (2.0 * (1.0 - tau)) * l2).abs() < 4.0 * mc.std_error);
    }

    #[test]
    fn contour_symmetry_and_origin() {
        let spec = GlmSpec::logistic();
        let g = contour_grid(&spec, [1.0, 1.0], &sk(0.5, 1.0), (-1.0, 1.0), (-1.0, 1.0), 21).unwrap();
        assert_eq!(g.value_at(0.0, 0.0).unwrap(), 0.0);
        for i in 0..21 {
            for k in 0..21 {
                assert_eq!(g.pi[i][k], g.pi[k][i]);
            }
        }
        let d = contour_grid(&spec, [1.0, 1.0], &sk(0.5, 0.0), (-1.0, 1.0), (-1.0, 1.0), 21).unwrap();
        for i in 0..21 {
            assert_eq!(d.pi[i][10], d.pi[10][i]);
        }
        let csv = g.to_csv();
        assert!(csv.starts_with("w1,w2,pi\n"));
        assert_eq!(csv.lines().count(), 1 + 21 * 21);
        assert!(contour_grid(&spec, [1.0, 1.0], &sk(0.5, 1.0), (-1.0, 1.0), (-1.0, 1.0), 1).is_err());
    }

    #[test]
    fn propositions_hold_for_both_specs() {
        for (i, spec) in [GlmSpec::linear(), GlmSpec::logistic()].iter().enumerate() {
            let report = check_propositions(spec, 200, &RngStream::new(21, i as u64)).unwrap();
            assert!(report.passed(), "{:?}", report.violations.first());
            assert!(report.checks.iter().all(|&n| n > 0));
        }
        assert!(check_propositions(&GlmSpec::linear(), 0, &RngStream::new(0, 0)).is_err());
    }

    #[test]
    fn linear_monotone_in_c_at_half_tau() {
        let (w, x) = ([0.3, -0.2], [1.0, 2.0]);
        let vals: Vec<f64> = C_GRID
            .iter()
            .map(|&c| shakeout_reg_exact(&GlmSpec::linear(), &w, &x, &sk(0.5, c)).unwrap().pi)
            .collect();
        assert!(vals.windows(2).all(|p| p[1] >= p[0]));
    }

    #[test]
    fn vanishing_tau_vanishes() {
        let (w, x) = ([0.8, -1.5], [1.0, -0.7]);
        for spec in [GlmSpec::linear(), GlmSpec::logistic()] {
            let mut prev = f64::INFINITY;
            for tau in [1e-2, 1e-4, 1e-6, 1e-8] {
                let v = shakeout_reg_exact(&spec, &w, &x, &sk(tau, 1.0)).unwrap().pi;
                assert!(v < prev);
                prev = v;
            }
            assert!(prev < 1e-6);
        }
    }

    #[test]
    fn sharp_versus_smooth_at_origin() {
        let spec = GlmSpec::logistic();
        let (l, r) = one_sided_slopes_at_zero(&spec, 1.0, &sk(0.3, 0.78), 1e-7).unwrap();
        assert!(r > 0.1 && l < -0.1, "shakeout slopes {l} {r}");
        let (l, r) = one_sided_slopes_at_zero(&spec, 1.0, &ShakeoutParams::dropout(0.5).unwrap(), 1e-7)
            .unwrap();
        assert!(l.abs() < 1e-6 && r.abs() < 1e-6);
    }

    #[test]
    fn agreement_suite_linear() {
        let recs = mc_agreement_suite(&[GlmSpec::linear()], 6, 20_000, 4, &RngStream::new(3, 0)).unwrap();
        assert_eq!(recs.len(), 6);
        for r in &recs {
            assert!(r.closed_form_is_exact());
            assert!((r.closed_form - r.enumerated).abs() < 1e-9 * (1.0 + r.enumerated.abs()));
            assert!(r.z_enumerated() < 5.0);
        }
        assert!(mc_agreement_suite(&[], 1, 20_000, 4, &RngStream::new(3, 0)).is_err());
    }
}
