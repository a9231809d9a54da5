//! Restricting loss and evaluation to a rectangle around the object, sized so
//! the mean foreground fraction inside the rectangles hits a target.

use super::data::SampleSet;
use super::experiment::{run_loss_comparison, ExperimentResult};
use super::train::TrainConfig;
use crate::error::{Error, Result};
use crate::losses::LossSpec;
use crate::mask::{BinaryMask, Dims};

pub const FGBG_RATIOS: [f64; 6] = [0.05, 0.1, 0.2, 0.3, 0.4, 0.5];

#[derive(Debug, Clone, PartialEq)]
pub struct RectMasks {
    pub width: usize,
    pub height: usize,
    /// Mean over images of the foreground fraction inside the rectangle.
    pub mean_fg_fraction: f64,
    pub masks: Vec<BinaryMask>,
}

/// Bounding-box center of the largest 4-connected foreground component.
fn object_center(label: &BinaryMask) -> (f64, f64) {
    let dims = label.dims();
    let (nx, ny) = (dims.nx, dims.ny);
    let mut seen = vec![false; label.len()];
    let mut best: Option<(usize, (usize, usize, usize, usize))> = None;
    let mut stack = Vec::new();
    for start in label.foreground() {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut size = 0;
        let (mut x0, mut x1, mut y0, mut y1) = (nx, 0, ny, 0);
        while let Some(i) = stack.pop() {
            size += 1;
            let (x, y) = (i % nx, i / nx);
            (x0, x1, y0, y1) = (x0.min(x), x1.max(x), y0.min(y), y1.max(y));
            let mut push = |j: usize| {
                if label.get(j) && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                push(i - 1);
            }
            if x + 1 < nx {
                push(i + 1);
            }
            if y > 0 {
                push(i - nx);
            }
            if y + 1 < ny {
                push(i + nx);
            }
        }
        if best.map_or(true, |(s, _)| size > s) {
            best = Some((size, (x0, x1, y0, y1)));
        }
    }
    match best {
        Some((_, (x0, x1, y0, y1))) => ((x0 + x1) as f64 / 2.0, (y0 + y1) as f64 / 2.0),
        None => ((nx - 1) as f64 / 2.0, (ny - 1) as f64 / 2.0),
    }
}

/// Top-left corner of a `w × h` rectangle centered at `c`, shifted inside the image.
fn place(c: (f64, f64), w: usize, h: usize, nx: usize, ny: usize) -> (usize, usize) {
    let origin = |c: f64, len: usize, n: usize| {
        let o = (c - (len as f64 - 1.0) / 2.0).round().max(0.0) as usize;
        o.min(n - len)
    };
    (origin(c.0, w, nx), origin(c.1, h, ny))
}

fn rect(dims: Dims, corner: (usize, usize), w: usize, h: usize) -> BinaryMask {
    let mut m = BinaryMask::zeros(dims);
    for y in corner.1..corner.1 + h {
        for x in corner.0..corner.0 + w {
            m.set(y * dims.nx + x, true);
        }
    }
    m
}

/// Rectangle sizes with the image's aspect ratio, by increasing area. The
/// height is also offered one pixel taller than the rounded value to halve
/// the step between areas.
fn candidate_sizes(nx: usize, ny: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for w in 1..=nx {
        let h = ((w * ny) as f64 / nx as f64).round().clamp(1.0, ny as f64) as usize;
        out.push((w, h));
        if h < ny && w < nx {
            out.push((w, h + 1));
        }
    }
    out.sort_by_key(|&(w, h)| (w * h, w));
    out.dedup();
    out
}

/// Builds one rectangle per image, all the same size, with the size chosen
/// so the mean in-rectangle foreground fraction is closest to `target`.
pub fn fg_rectangle_masks(data: &SampleSet, target: f64) -> Result<RectMasks> {
    let first = data.samples.first().ok_or(Error::EmptySet)?;
    let dims = first.dims;
    if !dims.is_2d() || data.samples.iter().any(|s| s.dims != dims) {
        return Err(Error::InvalidDims(dims));
    }
    let (nx, ny) = (dims.nx, dims.ny);
    let centers: Vec<_> = data.samples.iter().map(|s| object_center(&s.label)).collect();

    let fraction = |w: usize, h: usize| {
        let total: f64 = data
            .samples
            .iter()
            .zip(&centers)
            .map(|(s, &c)| {
                let (x0, y0) = place(c, w, h, nx, ny);
                let mut fg = 0usize;
                for y in y0..y0 + h {
                    for x in x0..x0 + w {
                        fg += s.label.get(y * nx + x) as usize;
                    }
                }
                fg as f64 / (w * h) as f64
            })
            .sum();
        total / data.len() as f64
    };

    let scored: Vec<((usize, usize), f64)> = candidate_sizes(nx, ny)
        .into_iter()
        .map(|(w, h)| ((w, h), fraction(w, h)))
        .collect();
    let min = scored.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    let max = scored.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    if !(target >= min && target <= max) {
        return Err(Error::InfeasibleRatio { target, min, max });
    }
    let ((w, h), achieved) = scored
        .into_iter()
        .min_by(|a, b| (a.1 - target).abs().total_cmp(&(b.1 - target).abs()))
        .expect("nonempty candidates");
    let masks = centers
        .iter()
        .map(|&c| rect(dims, place(c, w, h, nx, ny), w, h))
        .collect();
    Ok(RectMasks {
        width: w,
        height: h,
        mean_fg_fraction: achieved,
        masks,
    })
}

/// Restricts every sample to its rectangle.
pub fn apply_masks(data: &SampleSet, masks: &RectMasks) -> Result<SampleSet> {
    Ok(SampleSet {
        samples: data
            .samples
            .iter()
            .zip(&masks.masks)
            .map(|(s, m)| s.select(m))
            .collect::<Result<_>>()?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FgBgResult {
    pub ratio: f64,
    pub rect: RectMasks,
    pub result: ExperimentResult,
}

pub fn run_fgbg_masking(
    data: &SampleSet,
    ratios: &[f64],
    losses: &[LossSpec],
    folds: usize,
    base: &TrainConfig,
    seed: u64,
) -> Result<Vec<FgBgResult>> {
    ratios
        .iter()
        .map(|&ratio| {
            let rect = fg_rectangle_masks(data, ratio)?;
            log::info!(
                "fg/bg target {ratio}: rectangle {}x{}, achieved {:.4}",
                rect.width,
                rect.height,
                rect.mean_fg_fraction
            );
            let masked = apply_masks(data, &rect)?;
            let result = run_loss_comparison(&masked, losses, folds, base, seed)?;
            Ok(FgBgResult {
                ratio,
                rect,
                result,
            })
        })
        .collect()
}
