//! Mini-batch SGD with momentum and the model builders used by the experiments.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use crate::error::{Error, Result};
use crate::layers::activation::{argmax_rows, softmax_xent, squared_error};
use crate::layers::{ConvGeometry, ConvLayer, FcLayer, ForwardMode, Layer, MaxPool, Network};
use crate::noise::ShakeoutParams;
use crate::rng::RngStream;
use crate::tensor::Tensor;

// top-level stream ids under the run seed
const STREAM_INIT: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_SWITCH: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial: f64,
    /// Epochs (0-based) at which the rate is multiplied by `factor`.
    pub decay_epochs: Vec<usize>,
    pub factor: f64,
}

impl LrSchedule {
    pub fn constant(lr: f64) -> Self {
        Self { initial: lr, decay_epochs: Vec::new(), factor: 1.0 }
    }

    pub fn at(&self, epoch: usize) -> f64 {
        let k = self.decay_epochs.iter().filter(|&&e| e <= epoch).count();
        self.initial * self.factor.powi(k as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// Softmax cross-entropy on class labels.
    Classify,
    /// Squared error against the input itself.
    Reconstruct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: LrSchedule,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Validation error is computed every `eval_every` epochs and on the last.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: LrSchedule::constant(0.01),
            momentum: 0.9,
            batch_size: 64,
            epochs: 10,
            seed: 0,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Parameter("batch size must be at least 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Parameter("eval_every must be at least 1".into()));
        }
        if !self.lr.decay_epochs.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Parameter("decay epochs must be strictly increasing".into()));
        }
        if !(self.lr.initial >= 0.0 && self.lr.initial.is_finite()) {
            return Err(Error::Parameter(format!("learning rate {}", self.lr.initial)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Parameter(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Percent; `None` on epochs without validation.
    pub val_error: Option<f64>,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn to_json_lines(&self) -> String {
        self.epochs
            .iter()
            .map(|r| serde_json::to_string(r).expect("plain record") + "\n")
            .collect()
    }
}

/// `U[-a, a]` with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(rng: &mut impl Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-a..=a)).collect()).expect("positive shape")
}

fn fc(rng: &mut impl Rng, inp: usize, out: usize, noise: ShakeoutParams) -> Result<Layer> {
    scaled_fc(rng, inp, out, noise, 1.0)
}

fn scaled_fc(rng: &mut impl Rng, inp: usize, out: usize, noise: ShakeoutParams, gain: f64) -> Result<Layer> {
    let w = glorot_uniform(rng, &[out, inp], inp, out).scale(gain);
    Ok(Layer::Fc(FcLayer::new(w, Tensor::zeros(&[out]), noise)?))
}

/// `in → hidden (ReLU) → classes`, noise on the hidden units feeding the output layer.
pub fn build_mlp(inputs: usize, hidden: usize, classes: usize, noise: ShakeoutParams, seed: u64) -> Result<Network> {
    let mut rng = RngStream::new(seed, STREAM_INIT).generator();
    Ok(Network::new(vec![
        fc(&mut rng, inputs, hidden, ShakeoutParams::none())?,
        Layer::relu(),
        fc(&mut rng, hidden, classes, noise)?,
    ]))
}

/// conv20(5×5) → ReLU → pool → conv50(5×5) → ReLU → pool → FC500 → ReLU → FC10
/// on 28×28 inputs, noise on the FC500 outputs.
pub fn build_lenet(noise: ShakeoutParams, seed: u64) -> Result<Network> {
    let mut rng = RngStream::new(seed, STREAM_INIT).generator();
    let conv = |rng: &mut rand_chacha::ChaCha8Rng, in_maps, hw, out| -> Result<Layer> {
        let g = ConvGeometry { in_maps, height: hw, width: hw, kernel: (5, 5), stride: 1, padding: 0 };
        let w = glorot_uniform(rng, &[out, in_maps, 5, 5], in_maps * 25, out * 25);
        Ok(Layer::Conv(ConvLayer::new(w, Tensor::zeros(&[out]), g, ShakeoutParams::none())?))
    };
    Ok(Network::new(vec![
        conv(&mut rng, 1, 28, 20)?,
        Layer::relu(),
        Layer::MaxPool(MaxPool::new(2, 2)?),
        conv(&mut rng, 20, 12, 50)?,
        Layer::relu(),
        Layer::MaxPool(MaxPool::new(2, 2)?),
        Layer::flatten(),
        fc(&mut rng, 800, 500, ShakeoutParams::none())?,
        Layer::relu(),
        fc(&mut rng, 500, 10, noise)?,
    ]))
}

/// `in → hidden → in`, sigmoid on both, noise on the input pixels. The
/// encoder's Glorot bound is multiplied by `encoder_gain`.
pub fn build_autoencoder(
    inputs: usize,
    hidden: usize,
    noise: ShakeoutParams,
    encoder_gain: f64,
    seed: u64,
) -> Result<Network> {
    let mut rng = RngStream::new(seed, STREAM_INIT).generator();
    Ok(Network::new(vec![
        scaled_fc(&mut rng, inputs, hidden, noise, encoder_gain)?,
        Layer::sigmoid(),
        fc(&mut rng, hidden, inputs, ShakeoutParams::none())?,
        Layer::sigmoid(),
    ]))
}

fn is_spatial(net: &Network) -> bool {
    matches!(net.layers.first(), Some(Layer::Conv(_)))
}

const EVAL_CHUNK: usize = 500;

/// Eval-mode classification error in percent.
pub fn classification_error(net: &mut Network, ds: &Dataset) -> Result<f64> {
    let spatial = is_spatial(net);
    let idx: Vec<usize> = (0..ds.len()).collect();
    let mut wrong = 0usize;
    for chunk in idx.chunks(EVAL_CHUNK) {
        let (x, labels) = ds.batch(chunk, spatial)?;
        let pred = argmax_rows(&net.predict(&x)?)?;
        wrong += pred.iter().zip(&labels).filter(|(p, l)| p != l).count();
    }
    Ok(100.0 * wrong as f64 / ds.len() as f64)
}

pub fn accuracy(net: &mut Network, ds: &Dataset) -> Result<f64> {
    Ok(1.0 - classification_error(net, ds)? / 100.0)
}

/// Mean eval-mode reconstruction loss.
pub fn reconstruction_loss(net: &mut Network, ds: &Dataset) -> Result<f64> {
    let idx: Vec<usize> = (0..ds.len()).collect();
    let mut total = 0.0;
    for chunk in idx.chunks(EVAL_CHUNK) {
        let (x, _) = ds.batch(chunk, false)?;
        let (loss, _) = squared_error(&net.predict(&x)?, &x)?;
        total += loss * chunk.len() as f64;
    }
    Ok(total / ds.len() as f64)
}

fn batch_loss(out: &Tensor, x: &Tensor, labels: &[usize], objective: Objective) -> Result<(f64, Tensor)> {
    match objective {
        Objective::Classify => softmax_xent(out, labels),
        Objective::Reconstruct => squared_error(out, x),
    }
}

/// Trains `net` in place. Iteration `(epoch, batch)` draws switches from the
/// stream `[seed] / switch / epoch / batch`, then per layer and per sample.
pub fn sgd_train(
    net: &mut Network,
    config: &TrainConfig,
    objective: Objective,
    train: &Dataset,
    val: Option<&Dataset>,
) -> Result<TrainLog> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Input("empty training set".into()));
    }
    let spatial = is_spatial(net);
    let mut velocity: Vec<Option<(Vec<f64>, Vec<f64>)>> = net
        .layers
        .iter()
        .map(|l| l.params().map(|(w, b)| (vec![0.0; w.len()], vec![0.0; b.len()])))
        .collect();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = TrainLog::default();
    for epoch in 0..config.epochs {
        let lr = config.lr.at(epoch);
        order.shuffle(&mut RngStream::derive(config.seed, &[STREAM_SHUFFLE, epoch as u64]).generator());
        let mut loss_sum = 0.0;
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let (x, labels) = train.batch(chunk, spatial)?;
            let stream = RngStream::derive(config.seed, &[STREAM_SWITCH, epoch as u64, bi as u64]);
            let out = net.forward(&x, ForwardMode::Train, &stream)?;
            let (loss, grad) = batch_loss(&out, &x, &labels, objective)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, loss });
            }
            loss_sum += loss * chunk.len() as f64;
            let grads = net.backward(&grad)?;
            for ((layer, g), v) in net.layers.iter_mut().zip(&grads).zip(&mut velocity) {
                let (Some(g), Some((vw, vb))) = (g, v.as_mut()) else { continue };
                let mu = config.momentum;
                layer.update(|w, b| {
                    for ((wi, vi), gi) in w.iter_mut().zip(vw.iter_mut()).zip(g.w.data()) {
                        *vi = mu * *vi - lr * gi;
                        *wi += *vi;
                    }
                    for ((bi, vi), gi) in b.iter_mut().zip(vb.iter_mut()).zip(g.b.data()) {
                        *vi = mu * *vi - lr * gi;
                        *bi += *vi;
                    }
                });
            }
        }
        let train_loss = loss_sum / train.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::Divergence { epoch, loss: train_loss });
        }
        let last = epoch + 1 == config.epochs;
        let val_error = match val {
            Some(v) if objective == Objective::Classify && (last || (epoch + 1) % config.eval_every == 0) => {
                Some(classification_error(net, v)?)
            }
            _ => None,
        };
        log.epochs.push(EpochRecord { epoch, train_loss, val_error, lr });
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::data::Split;

    /// Two Gaussian-ish blobs separated along the first axis.
    fn blobs(n: usize, seed: u64) -> Dataset {
        let mut rng = RngStream::new(seed, 0).generator();
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let l = i % 2;
            let centre = if l == 0 { -1.0 } else { 1.0 };
            data.push(centre + rng.gen_range(-0.5..0.5));
            data.push(rng.gen_range(-1.0..1.0));
            labels.push(l);
        }
        Dataset::new(Tensor::new(vec![n, 2], data).unwrap(), labels, vec![2], 2, Split::Train).unwrap()
    }

    fn config(lr: f64, epochs: usize) -> TrainConfig {
        TrainConfig { lr: LrSchedule::constant(lr), batch_size: 16, epochs, ..Default::default() }
    }

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let ds = blobs(64, 1);
        let mut net = build_mlp(2, 8, 2, ShakeoutParams::shakeout(0.5, 0.5).unwrap(), 3).unwrap();
        let before = net.clone();
        sgd_train(&mut net, &config(0.0, 2), Objective::Classify, &ds, None).unwrap();
        for (a, b) in net.layers.iter().zip(&before.layers) {
            assert_eq!(a.params(), b.params());
        }
    }

    #[test]
    fn separable_toy_is_learned() {
        let ds = blobs(200, 2);
        let mut net = build_mlp(2, 16, 2, ShakeoutParams::none(), 4).unwrap();
        let log = sgd_train(&mut net, &config(0.05, 30), Objective::Classify, &ds, Some(&ds)).unwrap();
        assert_eq!(log.epochs.last().unwrap().val_error, Some(0.0));
        let losses: Vec<f64> = log.epochs.iter().map(|r| r.train_loss).collect();
        for w in losses[3..].windows(2) {
            assert!(w[1] <= w[0] * 1.05, "{losses:?}");
        }
    }

    #[test]
    fn same_seed_same_log() {
        let ds = blobs(100, 3);
        let run = || {
            let mut net = build_mlp(2, 8, 2, ShakeoutParams::shakeout(0.4, 0.3).unwrap(), 7).unwrap();
            let log = sgd_train(&mut net, &config(0.05, 3), Objective::Classify, &ds, Some(&ds)).unwrap();
            (log.to_json_lines(), net)
        };
        let (a, na) = run();
        let (b, nb) = run();
        assert_eq!(a, b);
        assert_eq!(na, nb);
    }

    #[test]
    fn divergence_reports_epoch() {
        let ds = blobs(64, 4);
        let mut net = build_mlp(2, 8, 2, ShakeoutParams::none(), 1).unwrap();
        let err = sgd_train(&mut net, &config(1e200, 3), Objective::Classify, &ds, None).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
    }

    #[test]
    fn log_is_json_lines() {
        let ds = blobs(32, 5);
        let mut net = build_mlp(2, 4, 2, ShakeoutParams::none(), 1).unwrap();
        let mut cfg = config(0.01, 3);
        cfg.eval_every = 2;
        let log = sgd_train(&mut net, &cfg, Objective::Classify, &ds, Some(&ds)).unwrap();
        let lines: Vec<serde_json::Value> =
            log.to_json_lines().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 3);
        for key in ["epoch", "train_loss", "val_error", "lr"] {
            assert!(lines[0].get(key).is_some());
        }
        assert!(lines[0]["val_error"].is_null());
        assert!(lines[1]["val_error"].is_number());
        assert!(lines[2]["val_error"].is_number());
    }

    #[test]
    fn schedule_and_validation() {
        let s = LrSchedule { initial: 1.0, decay_epochs: vec![2, 5], factor: 0.1 };
        assert_eq!(s.at(0), 1.0);
        assert!((s.at(2) - 0.1).abs() < 1e-15);
        assert!((s.at(9) - 0.01).abs() < 1e-15);
        let mut cfg = TrainConfig { batch_size: 0, ..Default::default() };
        assert!(cfg.validate().is_err());
        cfg.batch_size = 4;
        cfg.lr.decay_epochs = vec![3, 3];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn builders_have_expected_shapes() {
        let noise = ShakeoutParams::shakeout(0.5, 0.1).unwrap();
        let mut lenet = build_lenet(noise, 0).unwrap();
        assert_eq!(lenet.noisy_layers(), vec![9]);
        let x = Tensor::zeros(&[2, 1, 28, 28]);
        assert_eq!(lenet.predict(&x).unwrap().shape(), &[2, 10]);
        let ae = build_autoencoder(784, 16, noise, 1.0, 0).unwrap();
        assert_eq!(ae.noisy_layers(), vec![0]);
    }

    #[test]
    fn autoencoder_loss_decreases() {
        let ds = blobs(64, 6);
        let mut net = build_autoencoder(2, 3, ShakeoutParams::none(), 1.0, 2).unwrap();
        let before = reconstruction_loss(&mut net, &ds).unwrap();
        sgd_train(&mut net, &config(0.1, 20), Objective::Reconstruct, &ds, None).unwrap();
        assert!(reconstruction_loss(&mut net, &ds).unwrap() < before);
    }
}
