use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use serde::Serialize;
use shakeout::analysis::{
    low_importance_fraction, ral_curve, summarize, unit_importance, weight_histogram, DEFAULT_BINS,
    DEFAULT_IMPORTANCE_THRESHOLD, DEFAULT_SPARSITY_EPS,
};
use shakeout::glm::{contour_grid, fmt17};
use shakeout::training::checkpoint;
use shakeout::{Error, GlmKind, GlmSpec, Mnist, Network, ShakeoutParams, Tensor};

use crate::config::Defaults;
use crate::manifest::RunDir;
use crate::Outcome;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Hist,
    Sparsity,
    Importance,
    Ral,
    Contour,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AnalyzeArgs {
    /// Model written by `train`; not needed for contour mode.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Mode,
    /// Layer index; defaults to the last noise-bearing layer.
    #[arg(long)]
    pub layer: Option<usize>,
    #[arg(long)]
    pub bins: Option<usize>,
    /// Histogram range as `lo,hi`; defaults to the weights' own range.
    #[arg(long, value_delimiter = ',', num_args = 2, allow_negative_numbers = true)]
    pub range: Option<Vec<f64>>,
    #[arg(long)]
    pub eps: Option<f64>,
    /// Relative threshold for low-importance input units.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub ratios: Option<Vec<f64>>,
    #[arg(long, env = "SKO_DATA_DIR")]
    pub data_dir: Option<PathBuf>,
    /// Contour mode: linear or logistic.
    #[arg(long)]
    pub spec: Option<String>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub c: Option<f64>,
    /// Contour mode: the fixed two-feature input.
    #[arg(long, value_delimiter = ',', num_args = 2, allow_negative_numbers = true)]
    pub x: Option<Vec<f64>>,
    /// Contour mode: both weights span `[-extent, extent]`.
    #[arg(long)]
    pub extent: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, default_value = "out/analyze")]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct ImportanceSummary {
    layer: usize,
    inputs: usize,
    threshold: f64,
    low_importance_fraction: f64,
}

fn fill(args: &mut AnalyzeArgs, d: &Defaults) -> Result<()> {
    d.fill(&mut args.checkpoint, "checkpoint")?;
    d.fill(&mut args.layer, "layer")?;
    d.fill(&mut args.bins, "bins")?;
    d.fill(&mut args.range, "range")?;
    d.fill(&mut args.eps, "eps")?;
    d.fill(&mut args.threshold, "threshold")?;
    d.fill(&mut args.ratios, "ratios")?;
    d.fill(&mut args.data_dir, "data_dir")?;
    d.fill(&mut args.spec, "spec")?;
    d.fill(&mut args.tau, "tau")?;
    d.fill(&mut args.c, "c")?;
    d.fill(&mut args.x, "x")?;
    d.fill(&mut args.extent, "extent")?;
    d.fill(&mut args.steps, "steps")
}

pub fn run(mut args: AnalyzeArgs, defaults: &Defaults) -> Result<Outcome> {
    fill(&mut args, defaults)?;
    if args.mode == Mode::Contour {
        return contour(args);
    }
    let path = args
        .checkpoint
        .clone()
        .ok_or_else(|| Error::Input(format!("--checkpoint is required for {:?} mode", args.mode)))?;
    let model = checkpoint::load(&path).with_context(|| format!("reading checkpoint {}", path.display()))?;
    let layer = match args.layer {
        Some(l) => l,
        None => default_layer(&model)?,
    };
    args.layer = Some(layer);
    let weights = layer_weights(&model, layer)?.clone();

    match args.mode {
        Mode::Hist => {
            let bins = *args.bins.get_or_insert(DEFAULT_BINS);
            let range = match args.range.as_deref() {
                Some(&[lo, hi]) => Some((lo, hi)),
                _ => None,
            };
            let mut run = RunDir::create(&args.out, "analyze", &args, 0)?;
            let hist = weight_histogram(weights.data(), bins, range)?;
            run.write("histogram.csv", hist.to_csv().as_bytes())?;
            run.write_json("summary.json", &summarize(&weights, *args.eps.get_or_insert(DEFAULT_SPARSITY_EPS))?)?;
        }
        Mode::Sparsity => {
            let eps = *args.eps.get_or_insert(DEFAULT_SPARSITY_EPS);
            let mut run = RunDir::create(&args.out, "analyze", &args, 0)?;
            run.write_json("summary.json", &summarize(&weights, eps)?)?;
        }
        Mode::Importance => {
            let threshold = *args.threshold.get_or_insert(DEFAULT_IMPORTANCE_THRESHOLD);
            let mut run = RunDir::create(&args.out, "analyze", &args, 0)?;
            let imp = unit_importance(&weights)?;
            let mut csv = String::from("unit,importance\n");
            for (j, v) in imp.data().iter().enumerate() {
                csv.push_str(&format!("{j},{}\n", fmt17(*v)));
            }
            run.write("importance.csv", csv.as_bytes())?;
            run.write_json(
                "summary.json",
                &ImportanceSummary {
                    layer,
                    inputs: imp.len(),
                    threshold,
                    low_importance_fraction: low_importance_fraction(&imp, threshold),
                },
            )?;
        }
        Mode::Ral => {
            let ratios = args.ratios.get_or_insert_with(|| vec![0.0, 0.5, 0.9, 0.96]).clone();
            let dir = crate::train::data_dir(args.data_dir.clone())?;
            args.data_dir = Some(dir.clone());
            let mnist = Mnist::load(&dir).with_context(|| format!("loading MNIST from {}", dir.display()))?;
            let mut run = RunDir::create(&args.out, "analyze", &args, 0)?;
            let report = ral_curve(&model, &[layer], &ratios, &mnist.test)?;
            run.write("ral.csv", report.to_csv().as_bytes())?;
            run.write_json("ral.json", &report)?;
        }
        Mode::Contour => unreachable!("handled above"),
    }
    Ok(Outcome::Ok)
}

fn default_layer(model: &Network) -> Result<usize> {
    model
        .noisy_layers()
        .last()
        .or(model.parametric_layers().last())
        .copied()
        .ok_or_else(|| Error::Input("checkpoint has no parametric layers".into()).into())
}

fn layer_weights(model: &Network, layer: usize) -> Result<&Tensor> {
    let l = model
        .layers
        .get(layer)
        .ok_or_else(|| Error::Input(format!("layer {layer} out of range (model has {})", model.layers.len())))?;
    Ok(l.params().ok_or_else(|| Error::Input(format!("layer {layer} has no weights")))?.0)
}

fn contour(mut args: AnalyzeArgs) -> Result<Outcome> {
    let kind: GlmKind = args.spec.get_or_insert_with(|| "logistic".into()).parse()?;
    let params = ShakeoutParams::shakeout(*args.tau.get_or_insert(0.5), *args.c.get_or_insert(1.0))?;
    let x = args.x.get_or_insert_with(|| vec![1.0, 1.0]).clone();
    let [x1, x2] = x[..] else {
        return Err(Error::Parameter("--x needs exactly two values".into()).into());
    };
    let extent = *args.extent.get_or_insert(2.0);
    let steps = *args.steps.get_or_insert(41);
    if !(extent > 0.0) {
        return Err(Error::Parameter("--extent must be positive".into()).into());
    }
    let grid = contour_grid(&GlmSpec::from_kind(kind)?, [x1, x2], &params, (-extent, extent), (-extent, extent), steps)?;
    let mut run = RunDir::create(&args.out, "analyze", &args, 0)?;
    run.write("contour.csv", grid.to_csv().as_bytes())?;
    Ok(Outcome::Ok)
}
