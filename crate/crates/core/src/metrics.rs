//! Discrete overlap similarities between a ground-truth mask `y` and a
//! prediction `ỹ`, plus the auxiliary evaluation metrics reported next to them.
//!
//! Degenerate cases: when both masks are empty, Dice, Jaccard and Tversky
//! are 1. When exactly one is empty they are 0, which the formulas give
//! directly.

use std::fmt;

use crate::error::{Error, Result};
use crate::mask::{confusion_counts, BinaryMask, ConfusionCounts};

/// Dice score `2tp / (2tp + fp + fn)`.
pub fn dice_counts(c: &ConfusionCounts) -> f64 {
    let den = 2 * c.tp + c.fp + c.fn_;
    if den == 0 {
        return 1.0;
    }
    (2 * c.tp) as f64 / den as f64
}

/// Jaccard index `tp / (tp + fp + fn)`.
pub fn jaccard_counts(c: &ConfusionCounts) -> f64 {
    let den = c.union();
    if den == 0 {
        return 1.0;
    }
    c.tp as f64 / den as f64
}

/// Hamming similarity `1 − (fp + fn)/d`, evaluated as `(d − fp − fn)/d`
/// so it coincides bit-for-bit with pixel accuracy.
pub fn hamming_counts(c: &ConfusionCounts) -> f64 {
    (c.d() - c.sym_diff()) as f64 / c.d() as f64
}

/// Weighted Hamming similarity. A term whose class is absent (`|y| = 0` or
/// `|y| = d`) contributes nothing.
pub fn weighted_hamming_counts(c: &ConfusionCounts, gamma: f64) -> f64 {
    let pos = c.truth();
    let neg = c.d() - pos;
    let miss = if pos == 0 {
        0.0
    } else {
        gamma * c.fn_ as f64 / pos as f64
    };
    let false_alarm = if neg == 0 {
        0.0
    } else {
        (1.0 - gamma) * c.fp as f64 / neg as f64
    };
    1.0 - miss - false_alarm
}

/// Tversky index `tp / (tp + α·fp + β·fn)`; `α` weighs false positives.
pub fn tversky_counts(c: &ConfusionCounts, alpha: f64, beta: f64) -> f64 {
    if c.union() == 0 {
        return 1.0;
    }
    let tp = c.tp as f64;
    let den = tp + (alpha * c.fp as f64 + beta * c.fn_ as f64);
    if den == 0.0 {
        return 0.0;
    }
    tp / den
}

/// F-beta score `(1+b²)tp / ((1+b²)tp + b²·fn + fp)`; `b > 1` favours recall.
pub fn fbeta_counts(c: &ConfusionCounts, b: f64) -> f64 {
    let b2 = b * b;
    let tp = c.tp as f64;
    let den = (1.0 + b2) * tp + b2 * c.fn_ as f64 + c.fp as f64;
    if den == 0.0 {
        return 1.0;
    }
    (1.0 + b2) * tp / den
}

pub fn accuracy_counts(c: &ConfusionCounts) -> f64 {
    (c.tp + c.tn) as f64 / c.d() as f64
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidParameter {
            name: "gamma",
            value: gamma,
            reason: "must lie in [0, 1]",
        });
    }
    Ok(())
}

pub(crate) fn check_positive(name: &'static str, value: f64) -> Result<()> {
    if !(value > 0.0) || !value.is_finite() {
        return Err(Error::NonPositiveWeight { name, value });
    }
    Ok(())
}

pub fn dice(y: &BinaryMask, yhat: &BinaryMask) -> Result<f64> {
    Ok(dice_counts(&confusion_counts(y, yhat)?))
}

pub fn jaccard(y: &BinaryMask, yhat: &BinaryMask) -> Result<f64> {
    Ok(jaccard_counts(&confusion_counts(y, yhat)?))
}

pub fn hamming(y: &BinaryMask, yhat: &BinaryMask) -> Result<f64> {
    Ok(hamming_counts(&confusion_counts(y, yhat)?))
}

pub fn weighted_hamming(y: &BinaryMask, yhat: &BinaryMask, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    Ok(weighted_hamming_counts(&confusion_counts(y, yhat)?, gamma))
}

pub fn tversky(y: &BinaryMask, yhat: &BinaryMask, alpha: f64, beta: f64) -> Result<f64> {
    check_positive("alpha", alpha)?;
    check_positive("beta", beta)?;
    Ok(tversky_counts(&confusion_counts(y, yhat)?, alpha, beta))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Conversion {
    DiceToJaccard,
    JaccardToDice,
}

/// Monotone map between Dice and Jaccard: `J = D/(2−D)`, `D = 2J/(1+J)`.
pub fn dice_jaccard_convert(value: f64, direction: Conversion) -> f64 {
    match direction {
        Conversion::DiceToJaccard => value / (2.0 - value),
        Conversion::JaccardToDice => 2.0 * value / (1.0 + value),
    }
}

/// Metrics reported alongside the overlap scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AuxMetric {
    FBeta(f64),
    Accuracy,
    /// Exact symmetric Hausdorff distance between foreground pixel centers, in pixels.
    Hausdorff,
    /// Absolute volume difference in percent of the ground-truth volume.
    Avd,
}

impl fmt::Display for AuxMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AuxMetric::FBeta(b) => write!(f, "fbeta:{b}"),
            AuxMetric::Accuracy => f.write_str("accuracy"),
            AuxMetric::Hausdorff => f.write_str("hausdorff"),
            AuxMetric::Avd => f.write_str("avd"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricValue {
    pub name: String,
    pub value: f64,
    /// False when the metric is undefined for this pair (value is NaN).
    pub defined: bool,
}

impl MetricValue {
    pub fn defined(name: impl Into<String>, value: f64) -> Self {
        MetricValue {
            name: name.into(),
            value,
            defined: true,
        }
    }

    pub fn undefined(name: impl Into<String>) -> Self {
        MetricValue {
            name: name.into(),
            value: f64::NAN,
            defined: false,
        }
    }
}

pub fn auxiliary_metric(kind: AuxMetric, y: &BinaryMask, yhat: &BinaryMask) -> Result<MetricValue> {
    let c = confusion_counts(y, yhat)?;
    let name = kind.to_string();
    Ok(match kind {
        AuxMetric::FBeta(b) => {
            check_positive("beta", b)?;
            MetricValue::defined(name, fbeta_counts(&c, b))
        }
        AuxMetric::Accuracy => MetricValue::defined(name, accuracy_counts(&c)),
        AuxMetric::Hausdorff => match hausdorff(y, yhat) {
            Some(h) => MetricValue::defined(name, h),
            None => MetricValue::undefined(name),
        },
        AuxMetric::Avd => {
            let truth = c.truth();
            if truth == 0 {
                MetricValue::undefined(name)
            } else {
                let diff = (c.predicted() as f64 - truth as f64).abs();
                MetricValue::defined(name, 100.0 * diff / truth as f64)
            }
        }
    })
}

fn points(m: &BinaryMask) -> Vec<[f64; 3]> {
    let dims = m.dims();
    m.foreground()
        .map(|i| {
            let (x, y, z) = dims.coords(i);
            [x as f64, y as f64, z as f64]
        })
        .collect()
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Largest nearest-neighbour squared distance from `from` into `to`.
/// Early break: once a point has a neighbour closer than the running max it
/// cannot raise it.
fn directed_hausdorff2(from: &[[f64; 3]], to: &[[f64; 3]]) -> f64 {
    let mut cmax = 0.0f64;
    for a in from {
        let mut cmin = f64::INFINITY;
        for b in to {
            let d = dist2(a, b);
            if d < cmin {
                cmin = d;
                if cmin <= cmax {
                    break;
                }
            }
        }
        if cmin > cmax {
            cmax = cmin;
        }
    }
    cmax
}

/// `None` when either mask has no foreground. Dims must already match.
fn hausdorff(y: &BinaryMask, yhat: &BinaryMask) -> Option<f64> {
    let a = points(y);
    let b = points(yhat);
    if a.is_empty() || b.is_empty() {
        return None;
    }
    Some(
        directed_hausdorff2(&a, &b)
            .max(directed_hausdorff2(&b, &a))
            .sqrt(),
    )
}
