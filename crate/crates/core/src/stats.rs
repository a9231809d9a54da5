//! Paired bootstrap significance tests and the top-ranked / inferior labels
//! derived from them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

pub const DEFAULT_RESAMPLES: usize = 10_000;
pub const MIN_RESAMPLES: usize = 1_000;
pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

const CHUNK: usize = 1_000;

/// Per-image scores of one method, aligned by image across methods.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    pub method: String,
    pub values: Vec<f64>,
}

impl ScoreVector {
    pub fn new(method: impl Into<String>, values: Vec<f64>) -> Self {
        ScoreVector {
            method: method.into(),
            values,
        }
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// SplitMix64 finalizer, used to derive independent stream seeds.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed derived from a parent seed and a sequence of stream identifiers.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(mix64(seed), |acc, &p| mix64(acc ^ mix64(p)))
}

/// One-sided paired bootstrap p-value for "a is superior to b": the fraction
/// of resamples whose mean difference `a − b` is at most 0.
pub fn bootstrap_pair_test(
    a: &ScoreVector,
    b: &ScoreVector,
    n_resamples: usize,
    seed: u64,
) -> Result<f64> {
    if a.values.len() != b.values.len() {
        return Err(Error::LengthMismatch(a.values.len(), b.values.len()));
    }
    let n = a.values.len();
    if n < 2 {
        return Err(Error::TooFewSamples { got: n, need: 2 });
    }
    if n_resamples < MIN_RESAMPLES {
        return Err(Error::TooFewSamples {
            got: n_resamples,
            need: MIN_RESAMPLES,
        });
    }
    let diffs: Vec<f64> = a.values.iter().zip(&b.values).map(|(x, y)| x - y).collect();
    let chunks = n_resamples.div_ceil(CHUNK);
    let hits: usize = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[chunk as u64]));
            let len = CHUNK.min(n_resamples - chunk * CHUNK);
            (0..len)
                .filter(|_| {
                    // the sign of the sum is the sign of the mean
                    let s: f64 = (0..n).map(|_| diffs[rng.gen_range(0..n)]).sum();
                    s <= 0.0
                })
                .count()
        })
        .sum();
    Ok(hits as f64 / n_resamples as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignificanceMatrix {
    pub methods: Vec<String>,
    pub means: Vec<f64>,
    /// `p[i][j]` tests method `i` superior to method `j`; the diagonal is 1.
    pub p: Vec<Vec<f64>>,
    /// Index of the highest-mean method (first on ties).
    pub best: usize,
    pub top_ranked: Vec<usize>,
    pub inferior_to_all: Vec<usize>,
}

impl SignificanceMatrix {
    pub fn is_top_ranked(&self, i: usize) -> bool {
        self.top_ranked.contains(&i)
    }

    pub fn is_inferior_to_all(&self, i: usize) -> bool {
        self.inferior_to_all.contains(&i)
    }

    pub fn index_of(&self, method: &str) -> Option<usize> {
        self.methods.iter().position(|m| m == method)
    }
}

pub fn rank_methods(
    scores: &[ScoreVector],
    n_resamples: usize,
    seed: u64,
) -> Result<SignificanceMatrix> {
    let k = scores.len();
    if k < 2 {
        return Err(Error::TooFewSamples { got: k, need: 2 });
    }
    let mut p = vec![vec![1.0; k]; k];
    for i in 0..k {
        for j in 0..k {
            if i != j {
                p[i][j] = bootstrap_pair_test(&scores[i], &scores[j], n_resamples, seed)?;
            }
        }
    }
    let means: Vec<f64> = scores.iter().map(ScoreVector::mean).collect();
    let mut best = 0;
    for (i, &m) in means.iter().enumerate() {
        if m > means[best] {
            best = i;
        }
    }
    let top_ranked = (0..k)
        .filter(|&i| i == best || p[best][i] >= SIGNIFICANCE_LEVEL)
        .collect();
    let inferior_to_all = (0..k)
        .filter(|&i| (0..k).all(|j| j == i || p[j][i] < SIGNIFICANCE_LEVEL))
        .collect();
    Ok(SignificanceMatrix {
        methods: scores.iter().map(|s| s.method.clone()).collect(),
        means,
        p,
        best,
        top_ranked,
        inferior_to_all,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sv(name: &str, v: Vec<f64>) -> ScoreVector {
        ScoreVector::new(name, v)
    }

    #[test]
    fn clear_gap_gives_zero() {
        let a = sv("a", vec![0.9; 100]);
        let b = sv("b", vec![0.1; 100]);
        assert_eq!(bootstrap_pair_test(&a, &b, 10_000, 7).unwrap(), 0.0);
        assert_eq!(bootstrap_pair_test(&b, &a, 10_000, 7).unwrap(), 1.0);
    }

    #[test]
    fn identical_vectors_never_significant() {
        let v: Vec<f64> = (0..50).map(|i| (i % 7) as f64 / 7.0).collect();
        let p = bootstrap_pair_test(&sv("a", v.clone()), &sv("b", v), 2_000, 1).unwrap();
        assert!(p >= SIGNIFICANCE_LEVEL);
    }

    #[test]
    fn noisy_equal_means_near_half() {
        let a: Vec<f64> = (0..200).map(|i| if i % 2 == 0 { 0.6 } else { 0.4 }).collect();
        let b: Vec<f64> = (0..200).map(|i| if i % 2 == 0 { 0.4 } else { 0.6 }).collect();
        let p = bootstrap_pair_test(&sv("a", a), &sv("b", b), 10_000, 3).unwrap();
        assert!((p - 0.5).abs() < 0.1, "p = {p}");
    }

    #[test]
    fn errors() {
        let a = sv("a", vec![0.5; 3]);
        assert!(matches!(
            bootstrap_pair_test(&a, &sv("b", vec![0.5; 4]), 1000, 0),
            Err(Error::LengthMismatch(3, 4))
        ));
        assert!(matches!(
            bootstrap_pair_test(&sv("a", vec![0.5]), &sv("b", vec![0.5]), 1000, 0),
            Err(Error::TooFewSamples { .. })
        ));
        assert!(bootstrap_pair_test(&a, &a, 999, 0).is_err());
        assert!(rank_methods(&[a], 1000, 0).is_err());
    }

    #[test]
    fn thread_count_independent() {
        let a: Vec<f64> = (0..40).map(|i| ((i * 37) % 11) as f64 / 11.0).collect();
        let b: Vec<f64> = (0..40).map(|i| ((i * 13) % 7) as f64 / 7.0).collect();
        let run = |t| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .unwrap()
                .install(|| bootstrap_pair_test(&sv("a", a.clone()), &sv("b", b.clone()), 5_500, 9))
                .unwrap()
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn ranking_labels() {
        let same = rank_methods(&[sv("x", vec![0.5, 0.6]), sv("y", vec![0.5, 0.6])], 1000, 0)
            .unwrap();
        assert_eq!(same.top_ranked, vec![0, 1]);
        assert!(same.inferior_to_all.is_empty());

        let pair = rank_methods(&[sv("lo", vec![0.1; 20]), sv("hi", vec![0.9; 20])], 1000, 0)
            .unwrap();
        assert_eq!(pair.best, 1);
        assert_eq!(pair.top_ranked, vec![1]);
        assert_eq!(pair.inferior_to_all, vec![0]);

        // two close losers: neither is inferior to the other
        let three = rank_methods(
            &[
                sv("a", vec![0.9; 30]),
                sv("b", (0..30).map(|i| 0.1 + 0.01 * (i % 3) as f64).collect()),
                sv("c", (0..30).map(|i| 0.1 + 0.01 * ((i + 1) % 3) as f64).collect()),
            ],
            2000,
            5,
        )
        .unwrap();
        assert_eq!(three.top_ranked, vec![0]);
        assert!(three.inferior_to_all.is_empty());
    }

    // Dyadic scores keep `(a + c) − (b + c)` exact.
    fn dyadic(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec((0u32..=32).prop_map(|k| k as f64 / 64.0), n)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn shift_invariant(
            (a, b) in (2usize..30).prop_flat_map(|n| (dyadic(n), dyadic(n))),
            c in (0u32..=16).prop_map(|k| k as f64 / 64.0),
            seed in any::<u64>(),
        ) {
            let p = bootstrap_pair_test(&sv("a", a.clone()), &sv("b", b.clone()), 1000, seed).unwrap();
            let shift = |v: &[f64]| v.iter().map(|x| x + c).collect::<Vec<_>>();
            let q = bootstrap_pair_test(&sv("a", shift(&a)), &sv("b", shift(&b)), 1000, seed).unwrap();
            prop_assert_eq!(p, q);
        }

        #[test]
        fn reversal_complements(
            (a, b) in (2usize..30).prop_flat_map(|n| (dyadic(n), dyadic(n))),
            seed in any::<u64>(),
        ) {
            let n = 2000;
            let pab = bootstrap_pair_test(&sv("a", a.clone()), &sv("b", b.clone()), n, seed).unwrap();
            let pba = bootstrap_pair_test(&sv("b", b), &sv("a", a), n, seed).unwrap();
            prop_assert!(pab + pba >= 1.0 - 2.0 / n as f64);
            prop_assert!((0.0..=1.0).contains(&pab));
        }

        #[test]
        fn best_is_top_ranked(
            vs in (2usize..12).prop_flat_map(|n| prop::collection::vec(dyadic(n), 2..5)),
            seed in any::<u64>(),
        ) {
            let scores: Vec<_> = vs.into_iter().enumerate()
                .map(|(i, v)| sv(&format!("m{i}"), v)).collect();
            let m = rank_methods(&scores, 1000, seed).unwrap();
            prop_assert!(m.is_top_ranked(m.best));
            let top = m.means.iter().cloned().fold(f64::MIN, f64::max);
            prop_assert_eq!(m.means[m.best], top);
        }
    }
}
