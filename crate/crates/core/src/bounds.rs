//! Absolute and relative approximation errors between pairs of similarities:
//! closed forms, exhaustive suprema over all mask pairs of a given size, and
//! the constructions used to show where no relative bound exists.
//!
//! A similarity `S` approximates `S'` absolutely with error `ε` when
//! `|S − S'| ≤ ε` for every pair, and relatively when
//! `S'/(1+ε) ≤ S ≤ S'(1+ε)`.

use std::cmp::Ordering;
use std::fmt;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mask::{
    confusion_counts, pair_count, pair_patterns, threshold, BinaryMask, ConfusionCounts, ProbMap,
};
use crate::metrics::{
    check_positive, dice_counts, hamming_counts, jaccard_counts, tversky_counts,
    weighted_hamming_counts,
};

/// Largest `d` accepted by [`brute_force_sup`].
pub const MAX_BRUTE_D: usize = 12;

/// Slack absorbing floating-point rounding when comparing against closed forms.
pub const BOUND_SLACK: f64 = 1e-12;

/// A similarity measure evaluated on confusion counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Similarity {
    Dice,
    Jaccard,
    Hamming,
    WeightedHamming { gamma: f64 },
    Tversky { alpha: f64, beta: f64 },
}

impl Similarity {
    pub fn eval(&self, c: &ConfusionCounts) -> f64 {
        match *self {
            Similarity::Dice => dice_counts(c),
            Similarity::Jaccard => jaccard_counts(c),
            Similarity::Hamming => hamming_counts(c),
            Similarity::WeightedHamming { gamma } => weighted_hamming_counts(c, gamma),
            Similarity::Tversky { alpha, beta } => tversky_counts(c, alpha, beta),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Similarity::WeightedHamming { gamma } if !(0.0..=1.0).contains(&gamma) => {
                Err(Error::InvalidParameter {
                    name: "gamma",
                    value: gamma,
                    reason: "must lie in [0, 1]",
                })
            }
            Similarity::Tversky { alpha, beta } => {
                check_positive("alpha", alpha)?;
                check_positive("beta", beta)
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Similarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Similarity::Dice => f.write_str("dice"),
            Similarity::Jaccard => f.write_str("jaccard"),
            Similarity::Hamming => f.write_str("hamming"),
            Similarity::WeightedHamming { gamma } => write!(f, "whamming:{gamma}"),
            Similarity::Tversky { alpha, beta } => write!(f, "tversky:{alpha}:{beta}"),
        }
    }
}

/// Absolute and relative approximation error. `rel` may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApproxBounds {
    pub abs: f64,
    pub rel: f64,
}

/// Dice and Jaccard approximate each other with absolute error `3 − 2√2`
/// and relative error 1.
pub fn dice_jaccard_bounds() -> ApproxBounds {
    ApproxBounds {
        abs: 3.0 - 2.0 * std::f64::consts::SQRT_2,
        rel: 1.0,
    }
}

/// Dice value at which `|D − D/(2−D)|` peaks: the root of `(2 − x)² = 2` in `[0, 1]`.
pub fn dice_jaccard_abs_maximizer() -> f64 {
    2.0 - std::f64::consts::SQRT_2
}

fn tversky_abs_term(w: f64) -> f64 {
    let s = (2.0 * w).sqrt();
    ((s - 1.0) / (s + 1.0)).abs()
}

/// Approximation errors between the Tversky index `T_{α,β}` and Dice.
pub fn tversky_dice_bounds(alpha: f64, beta: f64) -> Result<ApproxBounds> {
    check_positive("alpha", alpha)?;
    check_positive("beta", beta)?;
    let abs = tversky_abs_term(alpha).max(tversky_abs_term(beta));
    let rel = (2.0 * alpha)
        .max(2.0 * beta)
        .max(0.5 / alpha)
        .max(0.5 / beta)
        - 1.0;
    Ok(ApproxBounds { abs, rel })
}

/// Closed-form bounds for a pair, when one is known. Both notions of
/// approximation are symmetric, so the order of the pair does not matter.
pub fn closed_form(a: Similarity, b: Similarity) -> Option<ApproxBounds> {
    use Similarity::*;
    match (a, b) {
        (Dice, Jaccard) | (Jaccard, Dice) => Some(dice_jaccard_bounds()),
        (Dice, Tversky { alpha, beta }) | (Tversky { alpha, beta }, Dice) => {
            tversky_dice_bounds(alpha, beta).ok()
        }
        (Dice, Dice) | (Jaccard, Jaccard) | (Hamming, Hamming) => {
            Some(ApproxBounds { abs: 0.0, rel: 0.0 })
        }
        (Dice, Hamming)
        | (Hamming, Dice)
        | (Dice, WeightedHamming { .. })
        | (WeightedHamming { .. }, Dice) => Some(ApproxBounds {
            abs: 1.0,
            rel: f64::INFINITY,
        }),
        _ => None,
    }
}

/// Bounds on the Tversky–Dice errors for `α = β` over `[0.1, 3.0]` in steps
/// of 0.05: rows of `(α, abs, rel)`.
pub fn tversky_curve() -> Vec<(f64, f64, f64)> {
    (0..=58)
        .map(|k| {
            let alpha = (10 + 5 * k) as f64 / 100.0;
            let b = tversky_dice_bounds(alpha, alpha).expect("positive grid");
            (alpha, b.abs, b.rel)
        })
        .collect()
}

/// A mask pair attaining an empirical supremum.
#[derive(Debug, Clone, PartialEq)]
pub struct Witness {
    pub y: BinaryMask,
    pub yhat: BinaryMask,
    pub counts: ConfusionCounts,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub a: Similarity,
    pub b: Similarity,
    pub d: usize,
    pub closed_form: Option<ApproxBounds>,
    pub empirical_abs: f64,
    /// 0 when no pair has both similarities positive.
    pub empirical_rel: f64,
    pub abs_witness: Option<Witness>,
    pub rel_witness: Option<Witness>,
}

impl BoundReport {
    /// Empirical errors do not exceed the closed form (up to [`BOUND_SLACK`]).
    pub fn respects_closed_form(&self) -> bool {
        match self.closed_form {
            None => true,
            Some(cf) => {
                self.empirical_abs <= cf.abs + BOUND_SLACK
                    && (cf.rel.is_infinite() || self.empirical_rel <= cf.rel + BOUND_SLACK)
            }
        }
    }
}

/// Running maximum with a total order: larger value first, then the more
/// balanced pair (smaller `||y| − |ỹ||`), then the lexicographically smaller
/// pair. The order is total, so a parallel reduction is thread-count independent.
#[derive(Debug, Clone, Copy)]
struct Best {
    value: f64,
    imbalance: u64,
    index: u64,
}

impl Best {
    fn better_than(&self, other: &Best) -> bool {
        match self.value.total_cmp(&other.value) {
            Ordering::Greater => true,
            Ordering::Less => false,
            Ordering::Equal => (self.imbalance, self.index) < (other.imbalance, other.index),
        }
    }

    fn pick(a: Option<Best>, b: Option<Best>) -> Option<Best> {
        match (a, b) {
            (Some(x), Some(y)) => Some(if y.better_than(&x) { y } else { x }),
            (x, None) => x,
            (None, y) => y,
        }
    }

    fn offer(slot: &mut Option<Best>, cand: Best) {
        if slot.map_or(true, |cur| cand.better_than(&cur)) {
            *slot = Some(cand);
        }
    }
}

const CHUNK: u64 = 1 << 14;

/// Exhaustive suprema of `|A − B|` and `max(A/B, B/A) − 1` over all pairs of
/// `d`-pixel masks. Pairs with both masks empty are skipped; pairs where
/// either similarity is 0 are skipped for the ratio.
pub fn brute_force_sup(a: Similarity, b: Similarity, d: usize) -> Result<BoundReport> {
    if d > MAX_BRUTE_D {
        return Err(Error::DTooLarge { d, max: MAX_BRUTE_D });
    }
    if d == 0 {
        return Err(Error::InvalidDims(crate::mask::Dims::flat(0)));
    }
    a.validate()?;
    b.validate()?;

    let total = pair_count(d);
    let chunks = total.div_ceil(CHUNK);
    let (abs_best, rel_best) = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut abs_best: Option<Best> = None;
            let mut rel_best: Option<Best> = None;
            let end = ((chunk + 1) * CHUNK).min(total);
            for index in chunk * CHUNK..end {
                let (yb, hb) = pair_patterns(index, d);
                let c = ConfusionCounts::from_patterns(yb, hb, d);
                if c.union() == 0 {
                    continue;
                }
                let va = a.eval(&c);
                let vb = b.eval(&c);
                let imbalance = c.truth().abs_diff(c.predicted());
                Best::offer(
                    &mut abs_best,
                    Best {
                        value: (va - vb).abs(),
                        imbalance,
                        index,
                    },
                );
                if va > 0.0 && vb > 0.0 {
                    Best::offer(
                        &mut rel_best,
                        Best {
                            value: (va / vb).max(vb / va) - 1.0,
                            imbalance,
                            index,
                        },
                    );
                }
            }
            (abs_best, rel_best)
        })
        .reduce(
            || (None, None),
            |(a1, r1), (a2, r2)| (Best::pick(a1, a2), Best::pick(r1, r2)),
        );

    let witness = |best: Option<Best>| {
        best.map(|b| {
            let (yb, hb) = pair_patterns(b.index, d);
            Witness {
                y: BinaryMask::from_pattern(yb, d),
                yhat: BinaryMask::from_pattern(hb, d),
                counts: ConfusionCounts::from_patterns(yb, hb, d),
                value: b.value,
            }
        })
    };
    Ok(BoundReport {
        a,
        b,
        d,
        closed_form: closed_form(a, b),
        empirical_abs: abs_best.map_or(0.0, |b| b.value),
        empirical_rel: rel_best.map_or(0.0, |b| b.value),
        abs_witness: witness(abs_best),
        rel_witness: witness(rel_best),
    })
}

/// One member of the family `|y \ ỹ| = 0`, `|ỹ \ y| = a·d`, `|y ∩ ỹ| = a²·d`,
/// on which weighted Hamming cannot relatively approximate Dice.
#[derive(Debug, Clone, PartialEq)]
pub struct HammingWitness {
    /// `a` as the rational `num/den` actually used; `d = den²`.
    pub a_num: u64,
    pub a_den: u64,
    pub d: u64,
    pub counts: ConfusionCounts,
    pub dice: f64,
    /// Weight minimizing the approximation factor between `H_γ` and `D`.
    pub gamma: f64,
    pub weighted_hamming: f64,
    /// `H_γ / D` at the chosen `γ`.
    pub ratio: f64,
}

/// Best rational approximation `num/den` with `den ≤ max_den`, by continued fractions.
fn rational_approx(x: f64, max_den: u64) -> (u64, u64) {
    let (mut h0, mut h1) = (0u64, 1u64);
    let (mut k0, mut k1) = (1u64, 0u64);
    let mut r = x;
    loop {
        let a = r.floor();
        let ai = a as u64;
        let h2 = ai.saturating_mul(h1).saturating_add(h0);
        let k2 = ai.saturating_mul(k1).saturating_add(k0);
        if k2 > max_den {
            break;
        }
        (h0, h1, k0, k1) = (h1, h2, k1, k2);
        let frac = r - a;
        if frac.abs() < 1e-12 || (h1 as f64 / k1 as f64 - x).abs() < 1e-15 {
            break;
        }
        r = 1.0 / frac;
    }
    (h1, k1)
}

pub fn hamming_blowup_witness(a: f64) -> Result<HammingWitness> {
    let limit = (5.0f64.sqrt() - 1.0) / 2.0;
    if !(a > 0.0 && a < limit) {
        return Err(Error::OutOfRange {
            value: a,
            reason: "a must lie in (0, (√5 − 1)/2)",
        });
    }
    let (num, den) = rational_approx(a, 10_000);
    if num == 0 {
        return Err(Error::OutOfRange {
            value: a,
            reason: "a is too small to represent with denominator ≤ 10⁴",
        });
    }
    let d = den * den;
    let tp = num * num;
    let fp = num * den;
    let counts = ConfusionCounts::new(tp, fp, 0, d - tp - fp);
    let dice = dice_counts(&counts);

    // H_γ is affine in γ: try both ends and the point where it meets D.
    let h = |g: f64| weighted_hamming_counts(&counts, g);
    let factor = |v: f64| (v / dice).max(dice / v);
    let mut candidates = vec![0.0, 1.0];
    let (h0, h1) = (h(0.0), h(1.0));
    if h1 != h0 {
        let g = (dice - h0) / (h1 - h0);
        if (0.0..=1.0).contains(&g) {
            candidates.push(g);
        }
    }
    let gamma = candidates
        .into_iter()
        .min_by(|x, y| factor(h(*x)).total_cmp(&factor(h(*y))))
        .expect("nonempty");
    let weighted_hamming = h(gamma);
    Ok(HammingWitness {
        a_num: num,
        a_den: den,
        d,
        counts,
        dice,
        gamma,
        weighted_hamming,
        ratio: weighted_hamming / dice,
    })
}

/// A prediction to be scored with discrete Dice and Jaccard.
#[derive(Debug, Clone)]
pub enum Prediction {
    Binary(BinaryMask),
    /// Thresholded at 0.5 before scoring.
    Relaxed(ProbMap),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskCheck {
    /// `1 − D ≤ 1 − J` held on every sample.
    pub pointwise_ok: bool,
    /// `mean(1 − J) ≤ φ(mean(1 − D))` with `φ(x) = 2x/(1+x)`.
    pub jensen_ok: bool,
    pub dice_risk: f64,
    pub jaccard_risk: f64,
    pub jensen_bound: f64,
}

/// `φ(x) = 2x/(1+x)`, mapping a Dice loss to the Jaccard loss of the same pair.
pub fn phi(x: f64) -> f64 {
    2.0 * x / (1.0 + x)
}

pub fn risk_inequality_check(samples: &[(BinaryMask, Prediction)]) -> Result<RiskCheck> {
    if samples.is_empty() {
        return Err(Error::EmptySet);
    }
    let mut pointwise_ok = true;
    let mut dice_risk = 0.0;
    let mut jaccard_risk = 0.0;
    for (y, pred) in samples {
        let c = match pred {
            Prediction::Binary(m) => confusion_counts(y, m)?,
            Prediction::Relaxed(p) => confusion_counts(y, &threshold(p, 0.5)?)?,
        };
        let dl = 1.0 - dice_counts(&c);
        let jl = 1.0 - jaccard_counts(&c);
        pointwise_ok &= dl <= jl;
        dice_risk += dl;
        jaccard_risk += jl;
    }
    let n = samples.len() as f64;
    dice_risk /= n;
    jaccard_risk /= n;
    let jensen_bound = phi(dice_risk);
    Ok(RiskCheck {
        pointwise_ok,
        jensen_ok: jaccard_risk <= jensen_bound + BOUND_SLACK,
        dice_risk,
        jaccard_risk,
        jensen_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dice_jaccard_closed_form() {
        let b = dice_jaccard_bounds();
        assert!((b.abs - 0.171_572_875_253_809_9).abs() < 1e-15);
        assert_eq!(b.rel, 1.0);
        let x = dice_jaccard_abs_maximizer();
        assert!((x - 0.585_786_437_626_905).abs() < 1e-12);
        assert!(((2.0 - x).powi(2) - 2.0).abs() < 1e-12);
        // the maximizer attains the bound
        assert!((x - x / (2.0 - x) - b.abs).abs() < 1e-15);
    }

    #[test]
    fn tversky_closed_form_examples() {
        assert_eq!(
            tversky_dice_bounds(0.5, 0.5).unwrap(),
            ApproxBounds { abs: 0.0, rel: 0.0 }
        );
        let b = tversky_dice_bounds(1.0, 1.0).unwrap();
        let dj = dice_jaccard_bounds();
        assert!((b.abs - dj.abs).abs() < 1e-12);
        assert_eq!(b.rel, 1.0);
        let b = tversky_dice_bounds(2.0, 0.5).unwrap();
        assert!((b.abs - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(b.rel, 3.0);
        assert!(matches!(
            tversky_dice_bounds(0.0, 1.0),
            Err(Error::NonPositiveWeight { .. })
        ));
    }

    #[test]
    fn tversky_bounds_symmetric_and_increasing() {
        let grid: Vec<f64> = (1..=10).map(|k| k as f64 / 10.0).collect();
        for &a in &grid {
            for &b in &grid {
                assert_eq!(
                    tversky_dice_bounds(a, b).unwrap(),
                    tversky_dice_bounds(b, a).unwrap()
                );
            }
        }
        // along α = β, both errors grow with |α − 0.5| on either side
        let curve = tversky_curve();
        let at = |alpha: f64| {
            curve
                .iter()
                .find(|r| (r.0 - alpha).abs() < 1e-9)
                .copied()
                .unwrap()
        };
        assert_eq!((at(0.5).1, at(0.5).2), (0.0, 0.0));
        for w in curve.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            if lo.0 >= 0.5 {
                assert!(hi.1 > lo.1 && hi.2 > lo.2);
            } else if hi.0 <= 0.5 {
                assert!(hi.1 < lo.1 && hi.2 < lo.2);
            }
        }
        assert_eq!(curve.len(), 59);
        assert!((curve.last().unwrap().0 - 3.0).abs() < 1e-12);
    }

    #[test]
    fn brute_force_small_d() {
        let r = brute_force_sup(Similarity::Dice, Similarity::Jaccard, 1).unwrap();
        assert_eq!(r.empirical_abs, 0.0);

        let r = brute_force_sup(Similarity::Dice, Similarity::Jaccard, 5).unwrap();
        assert!((r.empirical_abs - (4.0 / 7.0 - 2.0 / 5.0)).abs() < 1e-15);
        let w = r.abs_witness.clone().unwrap();
        assert_eq!((w.counts.tp, w.counts.truth(), w.counts.predicted()), (2, 3, 4));
        assert!(r.respects_closed_form());

        for d in 1..=8 {
            let r = brute_force_sup(
                Similarity::Dice,
                Similarity::Tversky {
                    alpha: 0.5,
                    beta: 0.5,
                },
                d,
            )
            .unwrap();
            assert_eq!((r.empirical_abs, r.empirical_rel), (0.0, 0.0));
        }
        assert!(matches!(
            brute_force_sup(Similarity::Dice, Similarity::Jaccard, 13),
            Err(Error::DTooLarge { .. })
        ));
    }

    /// Independent oracle: enumerate masks pair by pair through the public
    /// mask API and the mask-level metrics.
    #[test]
    fn brute_force_matches_mask_enumeration() {
        use crate::mask::enumerate_mask_pairs;
        use crate::metrics::{dice, tversky};
        for d in 1..=4 {
            let mut abs = 0.0f64;
            let mut rel = 0.0f64;
            for (y, yhat) in enumerate_mask_pairs(d).unwrap() {
                if y.count() == 0 && yhat.count() == 0 {
                    continue;
                }
                let a = dice(&y, &yhat).unwrap();
                let b = tversky(&y, &yhat, 0.3, 0.8).unwrap();
                abs = abs.max((a - b).abs());
                if a > 0.0 && b > 0.0 {
                    rel = rel.max((a / b).max(b / a) - 1.0);
                }
            }
            let r = brute_force_sup(
                Similarity::Dice,
                Similarity::Tversky {
                    alpha: 0.3,
                    beta: 0.8,
                },
                d,
            )
            .unwrap();
            assert_eq!((r.empirical_abs, r.empirical_rel), (abs, rel));
        }
    }

    #[test]
    fn brute_force_is_thread_count_independent() {
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| {
                    brute_force_sup(
                        Similarity::Dice,
                        Similarity::Tversky {
                            alpha: 0.2,
                            beta: 0.9,
                        },
                        9,
                    )
                    .unwrap()
                })
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn hamming_witness_examples() {
        let w = hamming_blowup_witness(0.1).unwrap();
        assert_eq!(w.d, 100);
        assert_eq!((w.counts.fn_, w.counts.fp, w.counts.tp), (0, 10, 1));
        assert!((w.dice - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(w.gamma, 0.0);
        assert!((w.weighted_hamming - (1.0 - 10.0 / 99.0)).abs() < 1e-15);
        assert!(w.ratio >= 5.39);

        let w2 = hamming_blowup_witness(0.01).unwrap();
        assert_eq!(w2.d, 10_000);
        assert!(w2.ratio > 49.0);
        assert!(w.ratio < w2.ratio);

        assert!(hamming_blowup_witness(0.0).is_err());
        assert!(hamming_blowup_witness(0.7).is_err());
    }

    #[test]
    fn rational_approximation() {
        assert_eq!(rational_approx(0.1, 10_000), (1, 10));
        assert_eq!(rational_approx(0.005, 10_000), (1, 200));
        assert_eq!(rational_approx(0.375, 10_000), (3, 8));
        let (n, d) = rational_approx(std::f64::consts::FRAC_1_PI, 10_000);
        assert!((n as f64 / d as f64 - std::f64::consts::FRAC_1_PI).abs() < 1e-7);
    }

    #[test]
    fn risk_check_cases() {
        assert!(matches!(risk_inequality_check(&[]), Err(Error::EmptySet)));
        let y = BinaryMask::from_bits(&[1, 1, 0, 0]);
        let pred = Prediction::Binary(BinaryMask::from_bits(&[1, 0, 1, 0]));
        let r = risk_inequality_check(&[(y.clone(), pred)]).unwrap();
        assert!(r.pointwise_ok && r.jensen_ok);

        let perfect = Prediction::Relaxed(y.to_prob());
        let r = risk_inequality_check(&[(y.clone(), perfect)]).unwrap();
        assert_eq!((r.dice_risk, r.jaccard_risk), (0.0, 0.0));
        assert!(r.pointwise_ok && r.jensen_ok);
    }
}
