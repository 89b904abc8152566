use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Serialize;
use shakeout::analysis::{summarize, DEFAULT_IMPORTANCE_THRESHOLD, DEFAULT_SPARSITY_EPS};
use shakeout::training::checkpoint;
use shakeout::training::experiments::training_subset;
use shakeout::training::sgd::classification_error;
use shakeout::{
    run_autoencoder_experiment, sgd_train, Arch, AutoencoderConfig, ClassifierConfig, Error, LrSchedule, Mnist,
    NoiseKind, Objective, ShakeoutParams, TrainConfig,
};

use crate::config::Defaults;
use crate::manifest::RunDir;
use crate::Outcome;

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    /// fc4096, lenet or autoencoder.
    #[arg(long)]
    pub arch: Option<String>,
    /// shakeout, dropout, gaussian-dropout or none.
    #[arg(long)]
    pub noise: Option<String>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Shakeout c; defaults to sqrt(1/size) for classifiers and 1 for the autoencoder.
    #[arg(long)]
    pub c: Option<f64>,
    /// Training images drawn from the non-validation pool.
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Hidden width (fc4096 and autoencoder).
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Images held out of the training set for validation (classifiers).
    #[arg(long)]
    pub val_size: Option<usize>,
    /// Multiplier on the autoencoder encoder's initial weight bound.
    #[arg(long)]
    pub init_gain: Option<f64>,
    #[arg(long, env = "SKO_DATA_DIR")]
    pub data_dir: Option<PathBuf>,
    #[arg(long, default_value = "out/train")]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct ClassifierResult {
    arch: Arch,
    noise: ShakeoutParams,
    size: usize,
    seed: u64,
    final_val_error: Option<f64>,
    test_error: f64,
}

#[derive(Debug, Serialize)]
struct AutoencoderSummary {
    noise: ShakeoutParams,
    size: usize,
    seed: u64,
    probe_accuracy: f64,
    reconstruction_loss: f64,
    sparsity: f64,
    sparsity_eps: f64,
    low_importance_fraction: f64,
}

fn noise_params(kind: NoiseKind, tau: f64, c: f64, c_given: bool) -> Result<ShakeoutParams> {
    Ok(match kind {
        NoiseKind::Shakeout => ShakeoutParams::shakeout(tau, c)?,
        NoiseKind::Dropout | NoiseKind::GaussianDropout => {
            if c_given && c != 0.0 {
                eprintln!("warning: --c {c} is ignored for {kind}");
            }
            ShakeoutParams::new(kind, tau, 0.0)?
        }
        NoiseKind::None => ShakeoutParams::none(),
    })
}

pub fn data_dir(flag: Option<PathBuf>) -> Result<PathBuf> {
    flag.or_else(Mnist::default_dir).ok_or_else(|| {
        Error::Input("no MNIST directory: pass --data-dir or set SKO_DATA_DIR".into()).into()
    })
}

pub fn run(mut args: TrainArgs, defaults: &Defaults) -> Result<Outcome> {
    defaults.fill(&mut args.arch, "arch")?;
    defaults.fill(&mut args.noise, "noise")?;
    defaults.fill(&mut args.tau, "tau")?;
    defaults.fill(&mut args.c, "c")?;
    defaults.fill(&mut args.size, "size")?;
    defaults.fill(&mut args.seed, "seed")?;
    defaults.fill(&mut args.epochs, "epochs")?;
    defaults.fill(&mut args.lr, "lr")?;
    defaults.fill(&mut args.momentum, "momentum")?;
    defaults.fill(&mut args.batch_size, "batch_size")?;
    defaults.fill(&mut args.hidden, "hidden")?;
    defaults.fill(&mut args.val_size, "val_size")?;
    defaults.fill(&mut args.init_gain, "init_gain")?;
    defaults.fill(&mut args.data_dir, "data_dir")?;

    let arch = args.arch.get_or_insert_with(|| "fc4096".into()).clone();
    let autoencoder = arch == "autoencoder";
    let kind: NoiseKind = args.noise.get_or_insert_with(|| "shakeout".into()).parse()?;
    let c_given = args.c.is_some();
    let size = *args.size.get_or_insert(if autoencoder { 2000 } else { 500 });
    if size == 0 {
        bail!(Error::Parameter("--size must be positive".into()));
    }
    let tau = *args.tau.get_or_insert(0.5);
    let c = *args.c.get_or_insert(if autoencoder { 1.0 } else { (1.0 / size as f64).sqrt() });
    let noise = noise_params(kind, tau, c, c_given)?;
    let seed = *args.seed.get_or_insert(0);

    let dir = data_dir(args.data_dir.clone())?;
    args.data_dir = Some(dir.clone());
    let mnist = Mnist::load(&dir).with_context(|| format!("loading MNIST from {}", dir.display()))?;

    if autoencoder {
        let mut cfg = AutoencoderConfig::desk_scale(noise, seed);
        cfg.train_size = size;
        cfg.hidden = *args.hidden.get_or_insert(cfg.hidden);
        cfg.init_gain = *args.init_gain.get_or_insert(cfg.init_gain);
        apply_schedule(&mut cfg.train, &mut args);
        cfg.train.validate()?;
        let mut run = RunDir::create(&args.out, "train", &args, seed)?;
        let res = run_autoencoder_experiment(&mnist, &cfg)?;
        let summary = summarize(&res.encoder_weights, DEFAULT_SPARSITY_EPS)?;
        run.write("model.sko", &checkpoint::encode(&res.model))?;
        run.write("train_log.jsonl", res.log.to_json_lines().as_bytes())?;
        run.write_json(
            "result.json",
            &AutoencoderSummary {
                noise,
                size,
                seed,
                probe_accuracy: res.probe_accuracy,
                reconstruction_loss: res.reconstruction_loss,
                sparsity: summary.sparsity,
                sparsity_eps: DEFAULT_SPARSITY_EPS,
                low_importance_fraction: summary.low_importance_fraction,
            },
        )?;
        eprintln!(
            "autoencoder {}: probe accuracy {:.4}, sparsity {:.4}, low-importance fraction {:.4} (threshold {})",
            kind, res.probe_accuracy, summary.sparsity, summary.low_importance_fraction, DEFAULT_IMPORTANCE_THRESHOLD
        );
        return Ok(Outcome::Ok);
    }

    let arch: Arch = arch.parse()?;
    let mut cfg = ClassifierConfig::new(arch, size, kind);
    cfg.hidden = *args.hidden.get_or_insert(cfg.hidden);
    cfg.val_size = *args.val_size.get_or_insert(cfg.val_size);
    apply_schedule(&mut cfg.train, &mut args);
    cfg.train.seed = seed;
    cfg.train.validate()?;

    let mut run = RunDir::create(&args.out, "train", &args, seed)?;
    let (pool, val) = mnist.holdout(cfg.val_size, 0)?;
    let train = training_subset(&pool, size, seed)?;
    let mut net = cfg.build(noise, seed, train.features(), train.classes)?;
    let log = sgd_train(&mut net, &cfg.train, Objective::Classify, &train, Some(&val))?;
    let test_error = classification_error(&mut net, &mnist.test)?;
    run.write("model.sko", &checkpoint::encode(&net))?;
    run.write("train_log.jsonl", log.to_json_lines().as_bytes())?;
    let final_val_error = log.epochs.last().and_then(|e| e.val_error);
    run.write_json("result.json", &ClassifierResult { arch, noise, size, seed, final_val_error, test_error })?;
    eprintln!("{} {}: test error {test_error:.2}%", args.arch.as_deref().unwrap_or_default(), kind);
    Ok(Outcome::Ok)
}

/// Overrides the optimizer settings that were given and records the
/// effective values back into `args`.
fn apply_schedule(train: &mut TrainConfig, args: &mut TrainArgs) {
    if let Some(lr) = args.lr {
        train.lr = LrSchedule::constant(lr);
    }
    args.lr = Some(train.lr.initial);
    train.epochs = *args.epochs.get_or_insert(train.epochs);
    train.momentum = *args.momentum.get_or_insert(train.momentum);
    train.batch_size = *args.batch_size.get_or_insert(train.batch_size);
}
