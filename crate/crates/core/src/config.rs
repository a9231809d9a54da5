//! Experiment configuration in a flat `key = value` text format.
//!
//! Blank lines and lines starting with `#` are ignored. Lists are
//! comma-separated. Unknown or repeated keys are errors.
//!
//! | key | meaning | default |
//! |-----|---------|---------|
//! | `n_images` | images in the synthetic set | 200 |
//! | `nx`, `ny` | image size | 64, 64 |
//! | `radius_min`, `radius_max` | ellipse radius range in pixels | 1.5, 12 |
//! | `fg_prior` | target foreground fraction | 0.02 |
//! | `noise_sigma` | additive Gaussian noise | 0.8 |
//! | `data_seed` | seed of the synthetic set | `seed` |
//! | `seed` | experiment seed (folds, initialization, bootstrap) | 0 |
//! | `losses` | arms of `train`, e.g. `CE, SOFT_DICE, WCE:0.9` | `CE, SOFT_DICE` |
//! | `alphas` | α values of the `sweep` arms `SOFT_TVERSKY:α:1−α` | 0.1, 0.2, …, 0.9 |
//! | `learning_rate` | initial step size | 1.0 |
//! | `max_epochs` | epoch limit after warm start | 150 |
//! | `batch_size` | images per step | 8 |
//! | `pretrain_epochs_ce` | cross-entropy warm-start epochs | 5 |
//! | `early_stop_patience` | epochs without improvement before stopping | 15 |
//! | `plateau_patience` | epochs without improvement before the step shrinks | 3 |
//! | `folds` | cross-validation folds | 5 |
//! | `n_resamples` | bootstrap resamples | 10000 |
//! | `size_bins` | object-size bins | 10 |
//! | `fgbg_ratios` | also run rectangle masking at these fg fractions | none |

use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::losses::LossSpec;
use crate::stats::DEFAULT_RESAMPLES;
use crate::toytrain::{SyntheticConfig, TrainConfig, DEFAULT_FOLDS};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: SyntheticConfig,
    /// Shared training settings; the loss and seed are set per arm and fold.
    pub train: TrainConfig,
    pub losses: Vec<LossSpec>,
    pub alphas: Vec<f64>,
    pub folds: usize,
    pub n_resamples: usize,
    pub size_bins: usize,
    pub fgbg_ratios: Vec<f64>,
    pub seed: u64,
    data_seed_set: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: SyntheticConfig::default(),
            train: TrainConfig::default(),
            losses: vec![LossSpec::ce(), LossSpec::soft_dice()],
            alphas: (1..=9).map(|k| k as f64 / 10.0).collect(),
            folds: DEFAULT_FOLDS,
            n_resamples: DEFAULT_RESAMPLES,
            size_bins: 10,
            fgbg_ratios: Vec::new(),
            seed: 0,
            data_seed_set: false,
        }
    }
}

impl ExperimentConfig {
    /// Replaces the experiment seed; the data seed follows unless set explicitly.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        if !self.data_seed_set {
            self.data.seed = seed;
        }
        self
    }
}

fn parse_value<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config {
        line,
        message: format!("invalid value {v:?} for {key}"),
    })
}

fn parse_list<T: FromStr>(line: usize, key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value(line, key, s))
        .collect()
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    let mut seen: Vec<String> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.trim();
        if content.is_empty() || content.starts_with('#') {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| Error::Config {
            line,
            message: format!("expected `key = value`, found {content:?}"),
        })?;
        let (key, v) = (key.trim(), value.trim());
        if seen.iter().any(|k| k == key) {
            return Err(Error::Config {
                line,
                message: format!("duplicate key {key}"),
            });
        }
        seen.push(key.to_string());
        match key {
            "n_images" => cfg.data.n_images = parse_value(line, key, v)?,
            "nx" => cfg.data.dims.0 = parse_value(line, key, v)?,
            "ny" => cfg.data.dims.1 = parse_value(line, key, v)?,
            "radius_min" => cfg.data.object_radius_range.0 = parse_value(line, key, v)?,
            "radius_max" => cfg.data.object_radius_range.1 = parse_value(line, key, v)?,
            "fg_prior" => cfg.data.fg_prior_target = parse_value(line, key, v)?,
            "noise_sigma" => cfg.data.noise_sigma = parse_value(line, key, v)?,
            "data_seed" => {
                cfg.data.seed = parse_value(line, key, v)?;
                cfg.data_seed_set = true;
            }
            "seed" => {
                cfg.seed = parse_value(line, key, v)?;
                if !cfg.data_seed_set {
                    cfg.data.seed = cfg.seed;
                }
            }
            "losses" => cfg.losses = parse_list(line, key, v)?,
            "alphas" => cfg.alphas = parse_list(line, key, v)?,
            "learning_rate" => cfg.train.learning_rate = parse_value(line, key, v)?,
            "max_epochs" => cfg.train.max_epochs = parse_value(line, key, v)?,
            "batch_size" => cfg.train.batch_size = parse_value(line, key, v)?,
            "pretrain_epochs_ce" => cfg.train.pretrain_epochs_ce = parse_value(line, key, v)?,
            "early_stop_patience" => cfg.train.early_stop_patience = parse_value(line, key, v)?,
            "plateau_patience" => cfg.train.plateau_patience = parse_value(line, key, v)?,
            "folds" => cfg.folds = parse_value(line, key, v)?,
            "n_resamples" => cfg.n_resamples = parse_value(line, key, v)?,
            "size_bins" => cfg.size_bins = parse_value(line, key, v)?,
            "fgbg_ratios" => cfg.fgbg_ratios = parse_list(line, key, v)?,
            _ => {
                return Err(Error::Config {
                    line,
                    message: format!("unknown key {key}"),
                })
            }
        }
        let empty_list = match key {
            "losses" => cfg.losses.is_empty(),
            "alphas" => cfg.alphas.is_empty(),
            _ => false,
        };
        if empty_list {
            return Err(Error::Config {
                line,
                message: format!("{key} must not be empty"),
            });
        }
        if key == "alphas" {
            if let Some(&a) = cfg.alphas.iter().find(|&&a| !(a > 0.0 && a < 1.0)) {
                return Err(Error::Config {
                    line,
                    message: format!("alpha {a} must lie in (0, 1)"),
                });
            }
        }
    }
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}
