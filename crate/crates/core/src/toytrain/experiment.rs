//! Cross-validated comparisons of losses on a sample set.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::data::{Features, SampleSet};
use super::train::{fine_tune, pretrain, Model, TrainConfig};
use crate::error::{Error, Result};
use crate::losses::LossSpec;
use crate::mask::ConfusionCounts;
use crate::metrics::{dice_counts, fbeta_counts, jaccard_counts};
use crate::stats::{derive_seed, rank_methods, ScoreVector, SignificanceMatrix};

pub const DEFAULT_FOLDS: usize = 5;

/// F-measure weights reported for the Tversky sweep.
pub const SWEEP_FBETAS: [f64; 4] = [0.5, 1.0, 1.5, 2.0];

const FOLD_STREAM: u64 = 0xf01d;

/// Discrete metric used to score held-out images.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Score {
    Dice,
    Jaccard,
    FBeta(f64),
}

impl Score {
    pub fn of(&self, c: &ConfusionCounts) -> f64 {
        match *self {
            Score::Dice => dice_counts(c),
            Score::Jaccard => jaccard_counts(c),
            Score::FBeta(b) => fbeta_counts(c, b),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmResult {
    pub loss: LossSpec,
    /// Held-out confusion counts, indexed by image.
    pub counts: Vec<ConfusionCounts>,
    /// Selected checkpoint per fold.
    pub weights: Vec<Features>,
}

impl ArmResult {
    pub fn name(&self) -> String {
        self.loss.to_string()
    }

    pub fn scores(&self, score: Score) -> Vec<f64> {
        self.counts.iter().map(|c| score.of(c)).collect()
    }

    pub fn mean(&self, score: Score) -> f64 {
        self.scores(score).iter().sum::<f64>() / self.counts.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub arms: Vec<ArmResult>,
    /// Fold in which each image was held out.
    pub folds: Vec<usize>,
    /// Ground-truth foreground count per image.
    pub sizes: Vec<u64>,
}

impl ExperimentResult {
    pub fn score_vectors(&self, score: Score) -> Vec<ScoreVector> {
        self.arms
            .iter()
            .map(|a| ScoreVector::new(a.name(), a.scores(score)))
            .collect()
    }

    pub fn significance(
        &self,
        score: Score,
        n_resamples: usize,
        seed: u64,
    ) -> Result<SignificanceMatrix> {
        rank_methods(&self.score_vectors(score), n_resamples, seed)
    }

    /// Arm indices ordered by decreasing mean score (stable on ties).
    pub fn ranking(&self, score: Score) -> Vec<usize> {
        let means: Vec<f64> = self.arms.iter().map(|a| a.mean(score)).collect();
        let mut order: Vec<usize> = (0..self.arms.len()).collect();
        order.sort_by(|&i, &j| means[j].total_cmp(&means[i]));
        order
    }

    pub fn dice_jaccard_rank_agree(&self) -> bool {
        self.ranking(Score::Dice) == self.ranking(Score::Jaccard)
    }

    pub fn arm(&self, loss: &LossSpec) -> Option<&ArmResult> {
        self.arms.iter().find(|a| a.loss == *loss)
    }
}

/// Seeded assignment of `n` images to `folds` folds of near-equal size.
pub fn assign_folds(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[FOLD_STREAM])));
    let mut out = vec![0; n];
    for (rank, &i) in perm.iter().enumerate() {
        out[i] = rank % folds;
    }
    out
}

/// Trains one model per loss in every fold and scores the held-out images
/// at threshold 0.5. Arms of a fold share the seed and the cross-entropy
/// warm start, so arms with equal losses are bit-identical.
pub fn run_loss_comparison(
    data: &SampleSet,
    losses: &[LossSpec],
    folds: usize,
    base: &TrainConfig,
    seed: u64,
) -> Result<ExperimentResult> {
    if folds < 2 {
        return Err(Error::InvalidParameter {
            name: "folds",
            value: folds as f64,
            reason: "need at least 2 folds",
        });
    }
    if data.len() < folds {
        return Err(Error::TooFewSamples {
            got: data.len(),
            need: folds,
        });
    }
    if losses.is_empty() {
        return Err(Error::EmptySet);
    }
    for l in losses {
        l.validate()?;
    }
    let fold_of = assign_folds(data.len(), folds, seed);
    let split = |k: usize, held_out: bool| -> Vec<usize> {
        (0..data.len())
            .filter(|&i| (fold_of[i] == k) == held_out)
            .collect()
    };
    let fold_cfg = |k: usize| TrainConfig {
        seed: derive_seed(seed, &[k as u64]),
        ..base.clone()
    };

    let starts: Vec<Model> = (0..folds)
        .into_par_iter()
        .map(|k| pretrain(&data.subset(&split(k, false)), &fold_cfg(k)))
        .collect::<Result<_>>()?;

    let jobs: Vec<(usize, usize)> = (0..folds)
        .flat_map(|k| (0..losses.len()).map(move |a| (k, a)))
        .collect();
    let trained: Vec<(usize, usize, Model)> = jobs
        .par_iter()
        .map(|&(k, a)| {
            let cfg = TrainConfig {
                loss: losses[a],
                ..fold_cfg(k)
            };
            let report = fine_tune(&data.subset(&split(k, false)), &cfg, starts[k])?;
            log::debug!(
                "fold {k} {}: best epoch {} of {}",
                losses[a],
                report.best_epoch,
                report.train_loss.len()
            );
            Ok((k, a, report.model))
        })
        .collect::<Result<_>>()?;

    let held_out: Vec<_> = (0..data.len())
        .map(|i| {
            base.output_mask
                .as_ref()
                .map_or(Ok(data.samples[i].clone()), |m| data.samples[i].select(m))
        })
        .collect::<Result<_>>()?;
    let mut arms: Vec<ArmResult> = losses
        .iter()
        .map(|&loss| ArmResult {
            loss,
            counts: vec![ConfusionCounts::default(); data.len()],
            weights: vec![[0.0; super::data::N_FEATURES]; folds],
        })
        .collect();
    for (k, a, model) in trained {
        arms[a].weights[k] = model.weights;
        for i in split(k, true) {
            arms[a].counts[i] = model.evaluate(&held_out[i]);
        }
    }
    Ok(ExperimentResult {
        arms,
        folds: fold_of,
        sizes: held_out.iter().map(|s| s.label.count() as u64).collect(),
    })
}

/// `SOFT_TVERSKY(α, 1−α)` for α = 0.1…0.9, then the α = β arms 0.75 and 1.0.
pub fn tversky_sweep_arms() -> Vec<LossSpec> {
    let mut arms: Vec<LossSpec> = (1..=9)
        .map(|k| LossSpec::tversky(k as f64 / 10.0, (10 - k) as f64 / 10.0))
        .collect();
    arms.push(LossSpec::tversky(0.75, 0.75));
    arms.push(LossSpec::tversky(1.0, 1.0));
    arms
}

pub fn run_tversky_sweep(
    data: &SampleSet,
    folds: usize,
    base: &TrainConfig,
    seed: u64,
) -> Result<ExperimentResult> {
    run_loss_comparison(data, &tversky_sweep_arms(), folds, base, seed)
}

/// Among the `α + β = 1` arms, the α with the highest mean F-beta
/// (smallest α on ties). `None` when no such arm exists.
pub fn best_alpha_for_fbeta(result: &ExperimentResult, beta: f64) -> Option<f64> {
    let mut best: Option<(f64, f64)> = None;
    for arm in &result.arms {
        if let LossSpec::SoftTversky { alpha, beta: b } = arm.loss {
            if ((alpha + b) - 1.0).abs() > 1e-9 {
                continue;
            }
            let m = arm.mean(Score::FBeta(beta));
            if best.map_or(true, |(_, bm)| m > bm) {
                best = Some((alpha, m));
            }
        }
    }
    best.map(|(a, _)| a)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SizeBin {
    /// Smallest and largest foreground count in the bin.
    pub lo: u64,
    pub hi: u64,
    pub n: usize,
    /// Mean Dice per arm, in arm order.
    pub mean_dice: Vec<f64>,
}

/// Mean Dice per arm within object-size quantile bins. Bin edges sit at
/// empirical percentiles of the foreground count; images of equal size
/// always share a bin, and bins left empty by ties are merged away.
pub fn stratify_by_size(result: &ExperimentResult, n_bins: usize) -> Result<Vec<SizeBin>> {
    let n = result.sizes.len();
    if n == 0 || result.arms.is_empty() {
        return Err(Error::EmptySet);
    }
    if n_bins == 0 {
        return Err(Error::InvalidParameter {
            name: "n_bins",
            value: 0.0,
            reason: "must be at least 1",
        });
    }
    let mut sorted = result.sizes.clone();
    sorted.sort_unstable();
    let edges: Vec<u64> = (1..n_bins).map(|k| sorted[k * n / n_bins]).collect();
    let bin_of = |s: u64| edges.iter().filter(|&&e| e <= s).count();

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_bins];
    for (i, &s) in result.sizes.iter().enumerate() {
        members[bin_of(s)].push(i);
    }
    let empty = members.iter().filter(|m| m.is_empty()).count();
    if empty > 0 {
        log::warn!("{empty} of {n_bins} size bins are empty because of tied sizes; merged");
    }
    let dice: Vec<Vec<f64>> = result.arms.iter().map(|a| a.scores(Score::Dice)).collect();
    Ok(members
        .into_iter()
        .filter(|m| !m.is_empty())
        .map(|m| SizeBin {
            lo: m.iter().map(|&i| result.sizes[i]).min().unwrap_or(0),
            hi: m.iter().map(|&i| result.sizes[i]).max().unwrap_or(0),
            n: m.len(),
            mean_dice: dice
                .iter()
                .map(|d| m.iter().map(|&i| d[i]).sum::<f64>() / m.len() as f64)
                .collect(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toytrain::data::{generate_dataset, SyntheticConfig};

    fn fake(sizes: Vec<u64>, arms: Vec<Vec<u64>>) -> ExperimentResult {
        // tp values encode Dice directly with |y| = |ŷ| = 100
        let arms = arms
            .into_iter()
            .enumerate()
            .map(|(k, tps)| ArmResult {
                loss: LossSpec::tversky(0.1 * (k + 1) as f64, 1.0 - 0.1 * (k + 1) as f64),
                counts: tps
                    .into_iter()
                    .map(|tp| ConfusionCounts::new(tp, 100 - tp, 100 - tp, 1000))
                    .collect(),
                weights: vec![],
            })
            .collect();
        ExperimentResult {
            folds: vec![0; sizes.len()],
            sizes,
            arms,
        }
    }

    #[test]
    fn folds_partition() {
        let f = assign_folds(23, 5, 9);
        let mut counts = [0; 5];
        for &k in &f {
            counts[k] += 1;
        }
        assert_eq!(counts, [5, 5, 5, 4, 4]);
        assert_eq!(f, assign_folds(23, 5, 9));
        assert_ne!(f, assign_folds(23, 5, 10));
    }

    #[test]
    fn sweep_arms() {
        let arms = tversky_sweep_arms();
        assert_eq!(arms.len(), 11);
        assert_eq!(arms[4], LossSpec::tversky(0.5, 0.5));
        assert_eq!(arms[6], LossSpec::tversky(0.7, 0.3));
    }

    #[test]
    fn stratify_equal_sizes_single_bin() {
        let r = fake(vec![50; 20], vec![(0..20).map(|i| 40 + i).collect()]);
        let bins = stratify_by_size(&r, 10).unwrap();
        assert_eq!(bins.len(), 1);
        assert!((bins[0].mean_dice[0] - r.arms[0].mean(Score::Dice)).abs() < 1e-15);
    }

    #[test]
    fn stratify_deciles() {
        let sizes: Vec<u64> = (0..100).map(|i| 10 + (i * 37) % 100).collect();
        let same: Vec<u64> = (0..100).map(|i| 50 + i % 30).collect();
        let r = fake(sizes, vec![same.clone(), same]);
        let bins = stratify_by_size(&r, 10).unwrap();
        assert_eq!(bins.len(), 10);
        assert!(bins.iter().all(|b| b.n == 10));
        assert!(bins.windows(2).all(|w| w[0].hi < w[1].lo));
        assert!(bins.iter().all(|b| b.mean_dice[0] == b.mean_dice[1]));
    }

    #[test]
    fn best_alpha_selection() {
        // arm 1 (α = 0.2) has the higher Dice everywhere
        let r = fake(vec![1, 2], vec![vec![50, 60], vec![70, 80]]);
        assert!((best_alpha_for_fbeta(&r, 1.0).unwrap() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn comparison_plumbing() {
        let data = generate_dataset(&SyntheticConfig {
            n_images: 12,
            dims: (24, 24),
            object_radius_range: (1.5, 5.0),
            fg_prior_target: 0.05,
            noise_sigma: 0.3,
            seed: 4,
        })
        .unwrap();
        let base = TrainConfig {
            max_epochs: 4,
            ..Default::default()
        };
        let r = run_loss_comparison(&data, &[LossSpec::soft_dice()], 3, &base, 1).unwrap();
        assert_eq!(r.arms.len(), 1);
        assert_eq!(r.arms[0].weights.len(), 3);
        assert!(r.arms[0].counts.iter().all(|c| c.d() == 576));

        let two = run_loss_comparison(
            &data,
            &[LossSpec::soft_dice(), LossSpec::tversky(0.5, 0.5)],
            3,
            &base,
            1,
        )
        .unwrap();
        assert_eq!(two.arms[0].counts, two.arms[1].counts);
        assert_eq!(two.arms[0].weights, two.arms[1].weights);
        assert_eq!(two.arms[0], r.arms[0]);

        assert!(run_loss_comparison(&data, &[LossSpec::ce()], 13, &base, 1).is_err());
    }
}
