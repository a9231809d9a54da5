//! Linear per-pixel scorer with a sigmoid, trained by minibatch gradient descent.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::data::{Features, Sample, SampleSet, N_FEATURES};
use crate::error::{Error, Result};
use crate::losses::{eval_flat, LossSpec};
use crate::mask::{confusion_counts, BinaryMask, ConfusionCounts};

/// Factor applied to the learning rate on a validation plateau.
pub const LR_DECAY: f64 = 5.0;

/// Fraction of the training images (the last ones by index) held out for validation.
pub const VALIDATION_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss: LossSpec,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub pretrain_epochs_ce: usize,
    /// Epochs without validation improvement before stopping.
    pub early_stop_patience: usize,
    /// Epochs without validation improvement before the learning rate drops.
    pub plateau_patience: usize,
    pub seed: u64,
    pub output_mask: Option<BinaryMask>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossSpec::ce(),
            learning_rate: 1.0,
            max_epochs: 150,
            batch_size: 8,
            pretrain_epochs_ce: 5,
            early_stop_patience: 15,
            plateau_patience: 3,
            seed: 0,
            output_mask: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "learning_rate",
                value: self.learning_rate,
                reason: "must be positive",
            });
        }
        let counts = [
            ("max_epochs", self.max_epochs),
            ("batch_size", self.batch_size),
            ("early_stop_patience", self.early_stop_patience),
            ("plateau_patience", self.plateau_patience),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidParameter {
                    name,
                    value: 0.0,
                    reason: "must be at least 1",
                });
            }
        }
        Ok(())
    }
}

/// Linear scorer on standardized features: `s = Σ w_k (f_k − m_k) / σ_k`.
/// The constant feature has `m = 0`, `σ = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Model {
    pub weights: Features,
    pub mean: Features,
    pub scale: Features,
}

#[inline]
fn sigmoid(s: f64) -> f64 {
    1.0 / (1.0 + (-s).exp())
}

impl Model {
    /// Small random weights and standardization statistics of `data`.
    pub fn init(seed: u64, data: &[Sample]) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 0.01).expect("valid normal");
        let mut weights = [0.0; N_FEATURES];
        for w in weights.iter_mut() {
            *w = normal.sample(&mut rng);
        }
        let (mean, scale) = feature_stats(data);
        Model {
            weights,
            mean,
            scale,
        }
    }

    #[inline]
    fn standardize(&self, f: &Features) -> Features {
        let mut z = [0.0; N_FEATURES];
        for k in 0..N_FEATURES {
            z[k] = (f[k] - self.mean[k]) / self.scale[k];
        }
        z
    }

    #[inline]
    fn score(&self, f: &Features) -> f64 {
        dot(&self.weights, &self.standardize(f))
    }

    pub fn probs(&self, sample: &Sample) -> Vec<f64> {
        sample
            .features
            .iter()
            .map(|f| sigmoid(self.score(f)))
            .collect()
    }

    /// Prediction at threshold 0.5.
    pub fn predict(&self, sample: &Sample) -> BinaryMask {
        let mut out = BinaryMask::zeros(sample.dims);
        for (i, f) in sample.features.iter().enumerate() {
            out.set(i, sigmoid(self.score(f)) > 0.5);
        }
        out
    }

    pub fn evaluate(&self, sample: &Sample) -> ConfusionCounts {
        confusion_counts(&sample.label, &self.predict(sample)).expect("same dims")
    }
}

/// Per-feature mean and standard deviation over all pixels. Constant
/// features are left as they are.
fn feature_stats(data: &[Sample]) -> (Features, Features) {
    let mut n = 0.0;
    let mut sum = [0.0; N_FEATURES];
    for f in data.iter().flat_map(|s| &s.features) {
        n += 1.0;
        for k in 0..N_FEATURES {
            sum[k] += f[k];
        }
    }
    let mean = sum.map(|v| v / n);
    let mut var = [0.0; N_FEATURES];
    for f in data.iter().flat_map(|s| &s.features) {
        for k in 0..N_FEATURES {
            var[k] += (f[k] - mean[k]).powi(2);
        }
    }
    let mut m = [0.0; N_FEATURES];
    let mut scale = [1.0; N_FEATURES];
    for k in 0..N_FEATURES {
        let sd = (var[k] / n).sqrt();
        if sd > 1e-12 * mean[k].abs().max(1.0) {
            m[k] = mean[k];
            scale[k] = sd;
        }
    }
    (m, scale)
}

#[inline]
fn dot(a: &Features, b: &Features) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Loss of one image and its gradient with respect to the weights.
fn image_loss_grad(model: &Model, loss: &LossSpec, s: &Sample) -> (f64, Features) {
    let p = model.probs(s);
    let ev = eval_flat(loss, s.label.data(), &p);
    let mut g = [0.0; N_FEATURES];
    for ((f, &pi), &gi) in s.features.iter().zip(&p).zip(&ev.gradient) {
        let ds = gi * pi * (1.0 - pi);
        if ds != 0.0 {
            let z = model.standardize(f);
            for k in 0..N_FEATURES {
                g[k] += ds * z[k];
            }
        }
    }
    (ev.value, g)
}

/// Mean per-image loss over a set.
pub fn mean_loss(model: &Model, loss: &LossSpec, set: &[Sample]) -> f64 {
    let total: f64 = set
        .iter()
        .map(|s| eval_flat(loss, s.label.data(), &model.probs(s)).value)
        .sum();
    total / set.len() as f64
}

fn check_finite(epoch: usize, value: f64, what: &str) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteLoss {
            epoch,
            detail: format!("{what} = {value}"),
        })
    }
}

/// One pass over `train` in a seeded random order.
fn epoch(
    model: &mut Model,
    loss: &LossSpec,
    train: &[Sample],
    batch_size: usize,
    lr: f64,
    rng: &mut ChaCha8Rng,
    index: usize,
) -> Result<()> {
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(rng);
    for batch in order.chunks(batch_size) {
        let mut grad = [0.0; N_FEATURES];
        for &i in batch {
            let (value, g) = image_loss_grad(model, loss, &train[i]);
            check_finite(index, value, "batch loss")?;
            for k in 0..N_FEATURES {
                grad[k] += g[k];
            }
        }
        let scale = lr / batch.len() as f64;
        for k in 0..N_FEATURES {
            check_finite(index, grad[k], "gradient")?;
            model.weights[k] -= scale * grad[k];
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Checkpoint with the lowest validation loss.
    pub model: Model,
    pub best_epoch: usize,
    /// Mean training loss after each epoch of the main phase.
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// Learning rate in effect during each epoch of the main phase.
    pub learning_rates: Vec<f64>,
}

/// Splits a training fold into (train, validation): the last 20% by index
/// validate. With fewer than 5 images the whole set serves as both.
pub fn split_validation(data: &[Sample]) -> (&[Sample], &[Sample]) {
    let n_val = (data.len() as f64 * VALIDATION_FRACTION).floor() as usize;
    if n_val == 0 {
        (data, data)
    } else {
        data.split_at(data.len() - n_val)
    }
}

fn prepare(data: &SampleSet, cfg: &TrainConfig) -> Result<Vec<Sample>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptySet);
    }
    match &cfg.output_mask {
        None => Ok(data.samples.clone()),
        Some(mask) => data
            .samples
            .iter()
            .map(|s| {
                if s.dims != mask.dims() {
                    return Err(Error::DimMismatch {
                        left: s.dims,
                        right: mask.dims(),
                    });
                }
                s.select(mask)
            })
            .collect(),
    }
}

/// Cross-entropy warm start: `cfg.pretrain_epochs_ce` epochs from a seeded
/// initialization, on the training part of `data`.
pub fn pretrain(data: &SampleSet, cfg: &TrainConfig) -> Result<Model> {
    let samples = prepare(data, cfg)?;
    let (train, _) = split_validation(&samples);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Model::init(cfg.seed, train);
    let ce = LossSpec::ce();
    for e in 0..cfg.pretrain_epochs_ce {
        epoch(&mut model, &ce, train, cfg.batch_size, cfg.learning_rate, &mut rng, e)?;
    }
    Ok(model)
}

/// Main phase with `cfg.loss`, starting from `start` with a fresh learning rate.
pub fn fine_tune(data: &SampleSet, cfg: &TrainConfig, start: Model) -> Result<TrainReport> {
    let samples = prepare(data, cfg)?;
    let (train, val) = split_validation(&samples);
    // a separate stream from the warm start
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_f17e_0000_0001);
    let mut model = start;
    let mut lr = cfg.learning_rate;

    let mut best = mean_loss(&model, &cfg.loss, val);
    check_finite(0, best, "validation loss")?;
    let mut report = TrainReport {
        model,
        best_epoch: 0,
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        learning_rates: Vec::new(),
    };
    let mut since_best = 0;
    let mut since_drop = 0;
    for e in 1..=cfg.max_epochs {
        report.learning_rates.push(lr);
        epoch(&mut model, &cfg.loss, train, cfg.batch_size, lr, &mut rng, e)?;
        let tl = mean_loss(&model, &cfg.loss, train);
        let vl = mean_loss(&model, &cfg.loss, val);
        check_finite(e, tl, "training loss")?;
        check_finite(e, vl, "validation loss")?;
        report.train_loss.push(tl);
        report.val_loss.push(vl);
        if vl < best {
            best = vl;
            report.model = model;
            report.best_epoch = e;
            since_best = 0;
            since_drop = 0;
        } else {
            since_best += 1;
            since_drop += 1;
            if since_best >= cfg.early_stop_patience {
                break;
            }
            if since_drop >= cfg.plateau_patience {
                lr /= LR_DECAY;
                since_drop = 0;
                log::debug!("epoch {e}: learning rate -> {lr}");
            }
        }
    }
    Ok(report)
}

pub fn train(data: &SampleSet, cfg: &TrainConfig) -> Result<TrainReport> {
    let start = pretrain(data, cfg)?;
    fine_tune(data, cfg, start)
}
