//! Differentiable surrogate losses with hand-derived gradients with respect
//! to the relaxed prediction `p ∈ [0, 1]^d`.
//!
//! Metric-sensitive losses (soft Dice, soft Jaccard, Lovász-Jaccard, soft
//! Tversky) are plain per-image sums. Cross-entropy losses are per-pixel means.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::mask::{confusion_counts, BinaryMask, ProbMap};
use crate::metrics::{
    dice_counts, hamming_counts, jaccard_counts, tversky_counts, weighted_hamming_counts,
};

pub const DEFAULT_CLAMP_EPS: f64 = 1e-7;

/// Denominator norm of the soft Dice loss: `‖y‖₁ + ‖p‖₁` or `‖y‖₂² + ‖p‖₂²`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormVariant {
    L1,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossSpec {
    /// Unweighted binary cross-entropy, per-pixel mean.
    CrossEntropy { clamp_eps: f64 },
    /// Cross-entropy with weight `gamma` on foreground and `1 − gamma` on background.
    WeightedCrossEntropy { gamma: f64, clamp_eps: f64 },
    SoftDice { norm: NormVariant },
    SoftJaccard,
    LovaszJaccard,
    /// `alpha` weighs false positives, `beta` false negatives.
    SoftTversky { alpha: f64, beta: f64 },
}

impl LossSpec {
    pub fn ce() -> Self {
        LossSpec::CrossEntropy {
            clamp_eps: DEFAULT_CLAMP_EPS,
        }
    }

    pub fn wce(gamma: f64) -> Self {
        LossSpec::WeightedCrossEntropy {
            gamma,
            clamp_eps: DEFAULT_CLAMP_EPS,
        }
    }

    /// Weighted cross-entropy balancing the classes for a foreground prior
    /// `p`: foreground weight `1/(2p)`, background weight `1/(2−2p)`,
    /// normalized to `gamma = fg / (fg + bg)`.
    pub fn wce_from_prior(prior: f64) -> Result<Self> {
        if !(prior > 0.0 && prior < 1.0) {
            return Err(Error::InvalidParameter {
                name: "prior",
                value: prior,
                reason: "foreground prior must lie in (0, 1)",
            });
        }
        let fg = 1.0 / (2.0 * prior);
        let bg = 1.0 / (2.0 - 2.0 * prior);
        Ok(LossSpec::wce(fg / (fg + bg)))
    }

    pub fn soft_dice() -> Self {
        LossSpec::SoftDice {
            norm: NormVariant::L1,
        }
    }

    pub fn soft_dice_l2() -> Self {
        LossSpec::SoftDice {
            norm: NormVariant::L2,
        }
    }

    pub fn tversky(alpha: f64, beta: f64) -> Self {
        LossSpec::SoftTversky { alpha, beta }
    }

    pub fn validate(&self) -> Result<()> {
        let check_eps = |eps: f64| {
            if eps > 0.0 && eps < 0.5 {
                Ok(())
            } else {
                Err(Error::InvalidParameter {
                    name: "clamp_eps",
                    value: eps,
                    reason: "must lie in (0, 0.5)",
                })
            }
        };
        match *self {
            LossSpec::CrossEntropy { clamp_eps } => check_eps(clamp_eps),
            LossSpec::WeightedCrossEntropy { gamma, clamp_eps } => {
                if !(0.0..=1.0).contains(&gamma) {
                    return Err(Error::InvalidParameter {
                        name: "gamma",
                        value: gamma,
                        reason: "must lie in [0, 1]",
                    });
                }
                check_eps(clamp_eps)
            }
            LossSpec::SoftTversky { alpha, beta } => {
                crate::metrics::check_positive("alpha", alpha)?;
                crate::metrics::check_positive("beta", beta)
            }
            LossSpec::SoftDice { .. } | LossSpec::SoftJaccard | LossSpec::LovaszJaccard => Ok(()),
        }
    }

    /// True for the surrogates of Dice, Jaccard and Tversky.
    pub fn is_metric_sensitive(&self) -> bool {
        !matches!(
            self,
            LossSpec::CrossEntropy { .. } | LossSpec::WeightedCrossEntropy { .. }
        )
    }

    /// Discrete loss `1 − S` that this surrogate relaxes, evaluated on a
    /// binary prediction.
    pub fn discrete_loss(&self, y: &BinaryMask, yhat: &BinaryMask) -> Result<f64> {
        let c = confusion_counts(y, yhat)?;
        Ok(1.0
            - match *self {
                LossSpec::CrossEntropy { .. } => hamming_counts(&c),
                LossSpec::WeightedCrossEntropy { gamma, .. } => weighted_hamming_counts(&c, gamma),
                LossSpec::SoftDice { .. } => dice_counts(&c),
                LossSpec::SoftJaccard | LossSpec::LovaszJaccard => jaccard_counts(&c),
                LossSpec::SoftTversky { alpha, beta } => tversky_counts(&c, alpha, beta),
            })
    }
}

impl fmt::Display for LossSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossSpec::CrossEntropy { .. } => f.write_str("CE"),
            LossSpec::WeightedCrossEntropy { gamma, .. } => write!(f, "WCE:{gamma}"),
            LossSpec::SoftDice {
                norm: NormVariant::L1,
            } => f.write_str("SOFT_DICE"),
            LossSpec::SoftDice {
                norm: NormVariant::L2,
            } => f.write_str("SOFT_DICE_L2"),
            LossSpec::SoftJaccard => f.write_str("SOFT_JACCARD"),
            LossSpec::LovaszJaccard => f.write_str("LOVASZ"),
            LossSpec::SoftTversky { alpha, beta } => write!(f, "SOFT_TVERSKY:{alpha}:{beta}"),
        }
    }
}

impl FromStr for LossSpec {
    type Err = Error;

    /// Parses the names produced by `Display`. Bare `WCE` has no weight and
    /// is rejected here; callers that know the foreground prior resolve it.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Usage(format!("unknown loss `{s}`"));
        let num = |v: &str| v.trim().parse::<f64>().map_err(|_| bad());
        let parts: Vec<&str> = s.trim().split(':').collect();
        let spec = match parts.as_slice() {
            ["CE"] => LossSpec::ce(),
            ["WCE", g] => LossSpec::wce(num(g)?),
            ["SOFT_DICE"] | ["SOFT_DICE_L1"] => LossSpec::soft_dice(),
            ["SOFT_DICE_L2"] => LossSpec::soft_dice_l2(),
            ["SOFT_JACCARD"] => LossSpec::SoftJaccard,
            ["LOVASZ"] | ["LOVASZ_JACCARD"] => LossSpec::LovaszJaccard,
            ["SOFT_TVERSKY", a, b] => LossSpec::tversky(num(a)?, num(b)?),
            _ => return Err(bad()),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Loss value and its gradient with respect to each `p_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    pub value: f64,
    pub gradient: Vec<f64>,
    /// Set when the surrogate's denominator vanished (`y` and `p` both zero);
    /// value and gradient are then reported as 0.
    pub degenerate: bool,
}

impl LossEval {
    fn degenerate(d: usize) -> Self {
        LossEval {
            value: 0.0,
            gradient: vec![0.0; d],
            degenerate: true,
        }
    }
}

pub fn eval_loss(spec: &LossSpec, y: &BinaryMask, p: &ProbMap) -> Result<LossEval> {
    if y.dims() != p.dims() {
        return Err(Error::DimMismatch {
            left: y.dims(),
            right: p.dims(),
        });
    }
    spec.validate()?;
    Ok(eval_flat(spec, y.data(), p.data()))
}

/// Unchecked evaluation on flat slices of equal length.
pub(crate) fn eval_flat(spec: &LossSpec, y: &[bool], p: &[f64]) -> LossEval {
    debug_assert_eq!(y.len(), p.len());
    match *spec {
        LossSpec::CrossEntropy { clamp_eps } => cross_entropy(y, p, 1.0, 1.0, clamp_eps),
        LossSpec::WeightedCrossEntropy { gamma, clamp_eps } => {
            cross_entropy(y, p, gamma, 1.0 - gamma, clamp_eps)
        }
        LossSpec::SoftDice { norm } => soft_dice(y, p, norm),
        LossSpec::SoftJaccard => soft_jaccard(y, p),
        LossSpec::LovaszJaccard => lovasz_jaccard(y, p),
        LossSpec::SoftTversky { alpha, beta } => soft_tversky(y, p, alpha, beta),
    }
}

#[inline]
fn ind(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Derivative of `1 − num/den` given the derivatives of `num` and `den`.
#[inline]
fn ratio_loss_grad(num: f64, den: f64, dnum: f64, dden: f64) -> f64 {
    -(dnum * den - num * dden) / (den * den)
}

fn cross_entropy(y: &[bool], p: &[f64], w_fg: f64, w_bg: f64, eps: f64) -> LossEval {
    let d = y.len() as f64;
    let lo = eps;
    let hi = 1.0 - eps;
    let mut value = 0.0;
    let mut gradient = Vec::with_capacity(y.len());
    for (&yi, &pi) in y.iter().zip(p) {
        let q = pi.clamp(lo, hi);
        let inside = pi >= lo && pi <= hi;
        if yi {
            value -= w_fg * q.ln();
            gradient.push(if inside { -w_fg / q / d } else { 0.0 });
        } else {
            value -= w_bg * (1.0 - q).ln();
            gradient.push(if inside { w_bg / (1.0 - q) / d } else { 0.0 });
        }
    }
    LossEval {
        value: value / d,
        gradient,
        degenerate: false,
    }
}

/// Soft overlap sums, accumulated in index order.
struct Overlap {
    /// `⟨y, p⟩`
    inter: f64,
    /// `⟨1 − y, p⟩`
    false_pos: f64,
    /// `⟨y, 1 − p⟩`
    false_neg: f64,
    /// `‖y‖₁`
    truth: f64,
    /// `‖p‖₁`
    pred: f64,
}

fn overlap_sums(y: &[bool], p: &[f64]) -> Overlap {
    let mut o = Overlap {
        inter: 0.0,
        false_pos: 0.0,
        false_neg: 0.0,
        truth: 0.0,
        pred: 0.0,
    };
    for (&yi, &pi) in y.iter().zip(p) {
        if yi {
            o.inter += pi;
            o.false_neg += 1.0 - pi;
            o.truth += 1.0;
        } else {
            o.false_pos += pi;
        }
        o.pred += pi;
    }
    o
}

/// `‖y‖₁ + ‖p‖₁` is evaluated as `2⟨y,p⟩ + ⟨1−y,p⟩ + ⟨y,1−p⟩`, which is exact
/// on binary predictions and matches soft Tversky at `α = β = ½` bit for bit.
fn soft_dice(y: &[bool], p: &[f64], norm: NormVariant) -> LossEval {
    let o = overlap_sums(y, p);
    let num = 2.0 * o.inter;
    let den = match norm {
        NormVariant::L1 => num + (o.false_pos + o.false_neg),
        NormVariant::L2 => o.truth + p.iter().map(|v| v * v).sum::<f64>(),
    };
    if den == 0.0 {
        return LossEval::degenerate(y.len());
    }
    let gradient = y
        .iter()
        .zip(p)
        .map(|(&yi, &pi)| {
            let dden = match norm {
                NormVariant::L1 => 1.0,
                NormVariant::L2 => 2.0 * pi,
            };
            ratio_loss_grad(num, den, 2.0 * ind(yi), dden)
        })
        .collect();
    LossEval {
        value: 1.0 - num / den,
        gradient,
        degenerate: false,
    }
}

fn soft_jaccard(y: &[bool], p: &[f64]) -> LossEval {
    let o = overlap_sums(y, p);
    let union = o.truth + o.pred - o.inter;
    if union == 0.0 {
        return LossEval::degenerate(y.len());
    }
    let gradient = y
        .iter()
        .map(|&yi| ratio_loss_grad(o.inter, union, ind(yi), 1.0 - ind(yi)))
        .collect();
    LossEval {
        value: 1.0 - o.inter / union,
        gradient,
        degenerate: false,
    }
}

fn soft_tversky(y: &[bool], p: &[f64], alpha: f64, beta: f64) -> LossEval {
    let o = overlap_sums(y, p);
    let den = o.inter + (alpha * o.false_pos + beta * o.false_neg);
    if den == 0.0 {
        return LossEval::degenerate(y.len());
    }
    let gradient = y
        .iter()
        .map(|&yi| {
            let dden = if yi { 1.0 - beta } else { alpha };
            ratio_loss_grad(o.inter, den, ind(yi), dden)
        })
        .collect();
    LossEval {
        value: 1.0 - o.inter / den,
        gradient,
        degenerate: false,
    }
}

/// Lovász extension of the Jaccard loss on per-pixel errors
/// `m_i = 1 − p_i` (foreground) or `p_i` (background).
fn lovasz_jaccard(y: &[bool], p: &[f64]) -> LossEval {
    let d = y.len();
    let errors: Vec<f64> = y
        .iter()
        .zip(p)
        .map(|(&yi, &pi)| if yi { 1.0 - pi } else { pi })
        .collect();
    let mut order: Vec<usize> = (0..d).collect();
    // stable: equal errors keep pixel-index order
    order.sort_by(|&a, &b| errors[b].total_cmp(&errors[a]));

    let truth = y.iter().filter(|&&b| b).count() as f64;
    let mut seen_fg = 0.0;
    let mut seen_bg = 0.0;
    let mut prev = 0.0;
    let mut value = 0.0;
    let mut gradient = vec![0.0; d];
    for &i in &order {
        if y[i] {
            seen_fg += 1.0;
        } else {
            seen_bg += 1.0;
        }
        let inter = truth - seen_fg;
        let union = truth + seen_bg;
        let jac_loss = if union > 0.0 { 1.0 - inter / union } else { 0.0 };
        let weight = jac_loss - prev;
        prev = jac_loss;
        value += errors[i] * weight;
        gradient[i] = if y[i] { -weight } else { weight };
    }
    LossEval {
        value,
        gradient,
        degenerate: false,
    }
}

/// Central finite differences `(L(p + h·e_i) − L(p − h·e_i)) / 2h`.
pub fn finite_diff_gradient(spec: &LossSpec, y: &BinaryMask, p: &ProbMap, h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::InvalidParameter {
            name: "h",
            value: h,
            reason: "step must be positive",
        });
    }
    if y.dims() != p.dims() {
        return Err(Error::DimMismatch {
            left: y.dims(),
            right: p.dims(),
        });
    }
    spec.validate()?;
    if let Some((index, &value)) = p
        .data()
        .iter()
        .enumerate()
        .find(|(_, &v)| v - h < 0.0 || v + h > 1.0)
    {
        return Err(Error::OutOfDomain { index, value, h });
    }
    Ok((0..p.len())
        .map(|i| {
            let up = eval_flat(spec, y.data(), p.perturbed(i, h).data()).value;
            let down = eval_flat(spec, y.data(), p.perturbed(i, -h).data()).value;
            (up - down) / (2.0 * h)
        })
        .collect())
}

/// Largest coordinate-wise discrepancy relative to the larger gradient's
/// infinity norm. Normwise scaling keeps coordinates whose true derivative
/// is exactly zero from dominating.
pub fn gradient_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VertexCheck {
    pub surrogate: f64,
    pub discrete: f64,
    pub equal: bool,
}

/// Compares a surrogate evaluated at a binary prediction with the discrete
/// loss it relaxes.
pub fn vertex_consistency_check(spec: &LossSpec, y: &BinaryMask, yhat: &BinaryMask) -> Result<VertexCheck> {
    let surrogate = eval_loss(spec, y, &yhat.to_prob())?.value;
    let discrete = spec.discrete_loss(y, yhat)?;
    Ok(VertexCheck {
        surrogate,
        discrete,
        equal: (surrogate - discrete).abs() < 1e-12,
    })
}
