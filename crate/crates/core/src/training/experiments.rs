//! MNIST experiment runners: noisy autoencoder and the two classifiers.

use serde::{Deserialize, Serialize};

use super::data::{subsample, Dataset, Mnist, Split};
use super::sgd::{
    accuracy, build_autoencoder, build_lenet, build_mlp, classification_error, reconstruction_loss, sgd_train,
    LrSchedule, Objective, TrainConfig, TrainLog,
};
use crate::error::{Error, Result};
use crate::layers::{FcLayer, Layer, Network};
use crate::noise::{NoiseKind, ShakeoutParams};
use crate::rng::RngStream;
use crate::tensor::Tensor;

const STREAM_SUBSAMPLE: u64 = 11;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderConfig {
    pub train_size: usize,
    pub hidden: usize,
    pub noise: ShakeoutParams,
    /// Multiplier on the encoder's Glorot bound.
    pub init_gain: f64,
    pub train: TrainConfig,
    pub probe: TrainConfig,
}

impl AutoencoderConfig {
    pub fn desk_scale(noise: ShakeoutParams, seed: u64) -> Self {
        Self {
            train_size: 2000,
            hidden: 64,
            noise,
            init_gain: 1.0,
            train: TrainConfig { epochs: 100, seed, lr: LrSchedule::constant(0.05), ..Default::default() },
            probe: TrainConfig { epochs: 30, seed, lr: LrSchedule::constant(0.05), ..Default::default() },
        }
    }
}

#[derive(Debug, Clone)]
pub struct AutoencoderResult {
    pub model: Network,
    /// First-layer weights, `hidden × inputs`.
    pub encoder_weights: Tensor,
    pub probe_accuracy: f64,
    pub reconstruction_loss: f64,
    pub log: TrainLog,
}

/// Sigmoid hidden activations of the trained encoder.
fn encode(model: &mut Network, ds: &Dataset) -> Result<Dataset> {
    let mut encoder = Network::new(model.layers[..2].to_vec());
    let idx: Vec<usize> = (0..ds.len()).collect();
    let mut data = Vec::new();
    for chunk in idx.chunks(1000) {
        let (x, _) = ds.batch(chunk, false)?;
        data.extend(encoder.predict(&x)?.into_data());
    }
    let h = data.len() / ds.len();
    Dataset::new(Tensor::new(vec![ds.len(), h], data)?, ds.labels.clone(), vec![h], ds.classes, ds.split)
}

pub fn run_autoencoder_experiment(mnist: &Mnist, cfg: &AutoencoderConfig) -> Result<AutoencoderResult> {
    let seed = cfg.train.seed;
    let train = subsample(&mnist.train, cfg.train_size, &RngStream::derive(seed, &[STREAM_SUBSAMPLE]))?;
    let mut model = build_autoencoder(train.features(), cfg.hidden, cfg.noise, cfg.init_gain, seed)?;
    let log = sgd_train(&mut model, &cfg.train, Objective::Reconstruct, &train, None)?;
    let encoder_weights = match &model.layers[0] {
        Layer::Fc(l) => l.weights().clone(),
        _ => unreachable!("autoencoder starts with an FC layer"),
    };

    let feats = encode(&mut model, &train)?;
    let test_feats = encode(&mut model, &mnist.test)?;
    let mut probe = linear_probe(cfg.hidden, train.classes)?;
    sgd_train(&mut probe, &cfg.probe, Objective::Classify, &feats, None)?;
    let probe_accuracy = accuracy(&mut probe, &test_feats)?;
    let reconstruction_loss = reconstruction_loss(&mut model, &mnist.test)?;
    Ok(AutoencoderResult { model, encoder_weights, probe_accuracy, reconstruction_loss, log })
}

/// Linear softmax classifier.
fn linear_probe(inputs: usize, classes: usize) -> Result<Network> {
    Ok(Network::new(vec![Layer::Fc(FcLayer::new(
        Tensor::zeros(&[classes, inputs]),
        Tensor::zeros(&[classes]),
        ShakeoutParams::none(),
    )?)]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arch {
    Fc4096,
    LenetVariant,
}

impl std::str::FromStr for Arch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fc4096" => Ok(Arch::Fc4096),
            "lenet" | "lenet-variant" => Ok(Arch::LenetVariant),
            _ => Err(Error::Parameter(format!("unknown architecture {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub arch: Arch,
    pub size: usize,
    pub kind: NoiseKind,
    /// τ candidates; ignored for kind none.
    pub taus: Vec<f64>,
    /// c candidates in units of `sqrt(1/size)`; shakeout only.
    pub c_multipliers: Vec<f64>,
    pub seeds: Vec<u64>,
    pub val_size: usize,
    /// Hidden width of the FC architecture.
    pub hidden: usize,
    pub train: TrainConfig,
}

impl ClassifierConfig {
    pub fn new(arch: Arch, size: usize, kind: NoiseKind) -> Self {
        Self {
            arch,
            size,
            kind,
            taus: vec![0.3, 0.5, 0.7],
            c_multipliers: vec![0.1, 0.3, 1.0, 3.0],
            seeds: (0..5).collect(),
            val_size: 10_000,
            hidden: 4096,
            train: TrainConfig { epochs: 50, lr: LrSchedule::constant(0.05), eval_every: 10, ..Default::default() },
        }
    }

    /// All noise settings on the selection grid.
    pub fn candidates(&self) -> Result<Vec<ShakeoutParams>> {
        let unit = (1.0 / self.size as f64).sqrt();
        let mut out = Vec::new();
        match self.kind {
            NoiseKind::None => out.push(ShakeoutParams::none()),
            NoiseKind::Dropout | NoiseKind::GaussianDropout => {
                for &tau in &self.taus {
                    out.push(ShakeoutParams::new(self.kind, tau, 0.0)?);
                }
            }
            NoiseKind::Shakeout => {
                for &tau in &self.taus {
                    for &m in &self.c_multipliers {
                        out.push(ShakeoutParams::shakeout(tau, m * unit)?);
                    }
                }
            }
        }
        if out.is_empty() {
            return Err(Error::Parameter("empty hyper-parameter grid".into()));
        }
        Ok(out)
    }

    pub fn build(&self, noise: ShakeoutParams, seed: u64, inputs: usize, classes: usize) -> Result<Network> {
        match self.arch {
            Arch::Fc4096 => build_mlp(inputs, self.hidden, classes, noise, seed),
            Arch::LenetVariant => build_lenet(noise, seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub noise: ShakeoutParams,
    pub val_error: f64,
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub model: Network,
    pub test_error: f64,
    pub log: TrainLog,
}

#[derive(Debug, Clone)]
pub struct ClassifierReport {
    pub config: ClassifierConfig,
    pub candidates: Vec<Candidate>,
    pub selected: ShakeoutParams,
    pub runs: Vec<SeedRun>,
}

impl ClassifierReport {
    pub fn test_errors(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.test_error).collect()
    }

    pub fn mean_error(&self) -> f64 {
        let e = self.test_errors();
        e.iter().sum::<f64>() / e.len() as f64
    }

    /// Sample standard deviation (0 for a single run).
    pub fn std_error(&self) -> f64 {
        let e = self.test_errors();
        if e.len() < 2 {
            return 0.0;
        }
        let m = self.mean_error();
        (e.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (e.len() - 1) as f64).sqrt()
    }
}

/// Training subset of `size` for a given seed, drawn from the pool only.
pub fn training_subset(pool: &Dataset, size: usize, seed: u64) -> Result<Dataset> {
    subsample(pool, size, &RngStream::derive(seed, &[STREAM_SUBSAMPLE]))
}

/// Picks the grid point with the lowest validation error (first on ties).
/// Refuses anything tagged as the test split.
pub fn select_hyperparameters(
    cfg: &ClassifierConfig,
    train: &Dataset,
    val: &Dataset,
    seed: u64,
) -> Result<(Vec<Candidate>, usize, Vec<(Network, TrainLog)>)> {
    if train.split == Split::Test || val.split == Split::Test {
        return Err(Error::Input("hyper-parameter selection must not see the test split".into()));
    }
    let mut candidates = Vec::new();
    let mut models = Vec::new();
    for noise in cfg.candidates()? {
        let mut net = cfg.build(noise, seed, train.features(), train.classes)?;
        let tc = TrainConfig { seed, ..cfg.train.clone() };
        let log = sgd_train(&mut net, &tc, Objective::Classify, train, None)?;
        let val_error = classification_error(&mut net, val)?;
        candidates.push(Candidate { noise, val_error });
        models.push((net, log));
    }
    let best = candidates
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.val_error.total_cmp(&b.1.val_error))
        .map(|(i, _)| i)
        .expect("non-empty grid");
    Ok((candidates, best, models))
}

/// Holds out `val_size` training images, selects (τ, c) on them with the
/// first seed, then reports test error for every seed.
pub fn run_classifier_experiment(mnist: &Mnist, cfg: &ClassifierConfig) -> Result<ClassifierReport> {
    let Some(&first) = cfg.seeds.first() else {
        return Err(Error::Parameter("at least one seed is required".into()));
    };
    let (pool, val) = mnist.holdout(cfg.val_size, 0)?;
    let train = training_subset(&pool, cfg.size, first)?;
    let (candidates, best, mut grid_models) = if cfg.candidates()?.len() > 1 {
        select_hyperparameters(cfg, &train, &val, first)?
    } else {
        (vec![Candidate { noise: cfg.candidates()?[0], val_error: f64::NAN }], 0, Vec::new())
    };
    let selected = candidates[best].noise;

    let mut runs = Vec::new();
    for &seed in &cfg.seeds {
        let (mut model, log) = if seed == first && !grid_models.is_empty() {
            grid_models.swap_remove(best)
        } else {
            let train = training_subset(&pool, cfg.size, seed)?;
            let mut net = cfg.build(selected, seed, train.features(), train.classes)?;
            let tc = TrainConfig { seed, ..cfg.train.clone() };
            let log = sgd_train(&mut net, &tc, Objective::Classify, &train, None)?;
            (net, log)
        };
        let test_error = classification_error(&mut model, &mnist.test)?;
        runs.push(SeedRun { seed, model, test_error, log });
    }
    Ok(ClassifierReport { config: cfg.clone(), candidates, selected, runs })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn c_grid_scales_with_size() {
        let cfg = ClassifierConfig { taus: vec![0.5], ..ClassifierConfig::new(Arch::Fc4096, 400, NoiseKind::Shakeout) };
        let c: Vec<f64> = cfg.candidates().unwrap().iter().map(|p| p.c).collect();
        for (a, e) in c.iter().zip([0.005, 0.015, 0.05, 0.15]) {
            assert!((a - e).abs() < 1e-15);
        }
        let cfg = ClassifierConfig::new(Arch::Fc4096, 400, NoiseKind::None);
        assert_eq!(cfg.candidates().unwrap(), vec![ShakeoutParams::none()]);
    }

    #[test]
    fn selection_refuses_test_split() {
        let images = Tensor::zeros(&[4, 2]);
        let mk = |split| Dataset::new(images.clone(), vec![0, 1, 0, 1], vec![2], 2, split).unwrap();
        let cfg = ClassifierConfig { hidden: 3, ..ClassifierConfig::new(Arch::Fc4096, 4, NoiseKind::Dropout) };
        let err = select_hyperparameters(&cfg, &mk(Split::Train), &mk(Split::Test), 0).unwrap_err();
        assert!(matches!(err, Error::Input(_)));
        assert!(select_hyperparameters(&cfg, &mk(Split::Train), &mk(Split::Val), 0).is_ok());
    }

    #[test]
    fn arch_names() {
        assert_eq!("fc4096".parse::<Arch>().unwrap(), Arch::Fc4096);
        assert_eq!("lenet".parse::<Arch>().unwrap(), Arch::LenetVariant);
        assert!("vgg".parse::<Arch>().is_err());
    }
}
