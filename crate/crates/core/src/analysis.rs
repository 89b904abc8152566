//! Weight diagnostics: histograms, sparsity, per-unit importance, magnitude
//! pruning and relative-accuracy-loss curves.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::Network;
use crate::tensor::Tensor;
use crate::training::sgd::accuracy;
use crate::training::Dataset;

pub const DEFAULT_BINS: usize = 201;
pub const DEFAULT_SPARSITY_EPS: f64 = 1e-3;
pub const DEFAULT_IMPORTANCE_THRESHOLD: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
    /// Counts divided by `in-range total × bin width`.
    pub density: Vec<f64>,
}

impl Histogram {
    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.counts.len() as f64
    }

    pub fn centers(&self) -> Vec<f64> {
        let w = self.bin_width();
        (0..self.counts.len()).map(|i| self.lo + (i as f64 + 0.5) * w).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_center,density\n");
        for (c, d) in self.centers().iter().zip(&self.density) {
            out.push_str(&format!("{c:.16e},{d:.16e}\n"));
        }
        out
    }
}

/// Density histogram over `range`, by default `[-max|w|, max|w|]` (`[-1, 1]`
/// when every weight is zero). Values outside the range are not counted; the
/// upper edge belongs to the last bin.
pub fn weight_histogram(w: &[f64], bins: usize, range: Option<(f64, f64)>) -> Result<Histogram> {
    if w.is_empty() {
        return Err(Error::Input("histogram of an empty weight set".into()));
    }
    if bins < 2 {
        return Err(Error::Parameter(format!("need at least 2 bins, got {bins}")));
    }
    let (lo, hi) = match range {
        Some(r) => r,
        None => {
            let m = w.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if m > 0.0 {
                (-m, m)
            } else {
                (-1.0, 1.0)
            }
        }
    };
    if !(lo < hi && lo.is_finite() && hi.is_finite()) {
        return Err(Error::Parameter(format!("invalid histogram range [{lo}, {hi}]")));
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in w {
        if v < lo || v > hi || v.is_nan() {
            continue;
        }
        let i = (((v - lo) / width) as usize).min(bins - 1);
        counts[i] += 1;
    }
    let total: usize = counts.iter().sum();
    let density = counts
        .iter()
        .map(|&c| if total == 0 { 0.0 } else { c as f64 / (total as f64 * width) })
        .collect();
    Ok(Histogram { lo, hi, counts, density })
}

/// Fraction of entries with `|w| < eps`.
pub fn sparsity_fraction(w: &[f64], eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::Parameter(format!("eps must be positive, got {eps}")));
    }
    if w.is_empty() {
        return Err(Error::Input("sparsity of an empty weight set".into()));
    }
    Ok(w.iter().filter(|v| v.abs() < eps).count() as f64 / w.len() as f64)
}

/// `max_i |W_ij|` for each input unit `j` of an `out × in` matrix.
pub fn unit_importance(w: &Tensor) -> Result<Tensor> {
    let (_, cols) = w.dims2()?;
    let mut imp = vec![0.0f64; cols];
    for row in w.data().chunks(cols) {
        for (m, v) in imp.iter_mut().zip(row) {
            *m = m.max(v.abs());
        }
    }
    Ok(Tensor::from_vec(imp))
}

/// Fraction of units whose importance is below `threshold × max importance`.
pub fn low_importance_fraction(importance: &Tensor, threshold: f64) -> f64 {
    let max = importance.max_abs();
    let cut = threshold * max;
    importance.data().iter().filter(|&&v| v < cut).count() as f64 / importance.len() as f64
}

fn check_selection(model: &Network, layers: &[usize]) -> Result<()> {
    for &i in layers {
        match model.layers.get(i) {
            Some(l) if l.is_parametric() => {}
            _ => return Err(Error::Parameter(format!("layer {i} has no weights to prune"))),
        }
    }
    Ok(())
}

/// Zeroes the `round(m · n)` smallest-magnitude weights across the selected
/// layers jointly (ties by layer then index order). Biases are kept.
pub fn prune_by_magnitude(model: &Network, layers: &[usize], m: f64) -> Result<Network> {
    if !(0.0..=1.0).contains(&m) {
        return Err(Error::Parameter(format!("pruning ratio {m} outside [0, 1]")));
    }
    check_selection(model, layers)?;
    let mut entries: Vec<(f64, usize, usize)> = Vec::new();
    for (pos, &li) in layers.iter().enumerate() {
        let (w, _) = model.layers[li].params().expect("checked");
        entries.extend(w.data().iter().enumerate().map(|(k, v)| (v.abs(), pos, k)));
    }
    let count = (m * entries.len() as f64).round() as usize;
    entries.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut zero: Vec<Vec<usize>> = vec![Vec::new(); layers.len()];
    for &(_, pos, k) in &entries[..count] {
        zero[pos].push(k);
    }
    let mut pruned = model.clone();
    for (pos, &li) in layers.iter().enumerate() {
        let idx = &zero[pos];
        pruned.layers[li].update(|w, _| {
            for &k in idx {
                w[k] = 0.0;
            }
        });
    }
    Ok(pruned)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub ratios: Vec<f64>,
    pub accuracies: Vec<f64>,
    pub ral: Vec<f64>,
}

impl PruneReport {
    pub fn from_accuracies(ratios: Vec<f64>, accuracies: Vec<f64>) -> Result<Self> {
        if ratios.len() != accuracies.len() || ratios.is_empty() {
            return Err(Error::Length(format!("{} ratios, {} accuracies", ratios.len(), accuracies.len())));
        }
        if ratios[0] != 0.0 || !ratios.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Parameter("ratios must start at 0 and strictly increase".into()));
        }
        let base = accuracies[0];
        if base <= 0.0 {
            return Err(Error::Degenerate("baseline accuracy is zero".into()));
        }
        let ral = accuracies.iter().map(|a| (base - a) / base).collect();
        Ok(Self { ratios, accuracies, ral })
    }

    pub fn ral_at(&self, ratio: f64) -> Option<f64> {
        self.ratios.iter().position(|&r| r == ratio).map(|i| self.ral[i])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("ratio,accuracy,ral\n");
        for ((r, a), l) in self.ratios.iter().zip(&self.accuracies).zip(&self.ral) {
            out.push_str(&format!("{r},{a:.16e},{l:.16e}\n"));
        }
        out
    }
}

/// Eval-mode accuracy after pruning at each ratio; `ratios[0]` must be 0.
pub fn ral_curve(model: &Network, layers: &[usize], ratios: &[f64], eval: &Dataset) -> Result<PruneReport> {
    if ratios.first() != Some(&0.0) {
        return Err(Error::Parameter("ratio list must start at 0".into()));
    }
    let mut accuracies = Vec::with_capacity(ratios.len());
    for &m in ratios {
        let mut pruned = prune_by_magnitude(model, layers, m)?;
        accuracies.push(accuracy(&mut pruned, eval)?);
    }
    PruneReport::from_accuracies(ratios.to_vec(), accuracies)
}

/// Summary statistics for one weight matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSummary {
    pub count: usize,
    pub max_abs: f64,
    pub sparsity: f64,
    pub sparsity_eps: f64,
    pub low_importance_fraction: f64,
}

pub fn summarize(w: &Tensor, eps: f64) -> Result<WeightSummary> {
    Ok(WeightSummary {
        count: w.len(),
        max_abs: w.max_abs(),
        sparsity: sparsity_fraction(w.data(), eps)?,
        sparsity_eps: eps,
        low_importance_fraction: low_importance_fraction(&unit_importance(w)?, DEFAULT_IMPORTANCE_THRESHOLD),
    })
}
