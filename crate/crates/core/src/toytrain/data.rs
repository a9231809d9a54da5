//! Synthetic images: a few elliptical blobs on a noisy background.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};

use crate::error::{Error, Result};
use crate::mask::{BinaryMask, Dims};
use crate::stats::derive_seed;

pub const N_FEATURES: usize = 5;

/// Raw intensity, 3×3 box-smoothed intensity, normalized x, normalized y, 1.
pub type Features = [f64; N_FEATURES];

/// Log-scale spread of the per-image object area.
const SIZE_SPREAD: f64 = 0.6;

const SIZE_STREAM: u64 = u64::MAX;

/// Relative tolerance on the achieved foreground prior.
pub const PRIOR_TOLERANCE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub n_images: usize,
    pub dims: (usize, usize),
    pub object_radius_range: (f64, f64),
    pub fg_prior_target: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_images: 200,
            dims: (64, 64),
            object_radius_range: (1.5, 12.0),
            fg_prior_target: 0.02,
            noise_sigma: 0.8,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InfeasibleConfig(msg));
        let (nx, ny) = self.dims;
        let (rmin, rmax) = self.object_radius_range;
        if self.n_images == 0 {
            return bad("n_images must be at least 1".into());
        }
        if nx < 3 || ny < 3 {
            return bad(format!("dims {nx}x{ny} too small (need at least 3x3)"));
        }
        if !(rmin > 0.0 && rmin <= rmax) {
            return bad(format!("radius range ({rmin}, {rmax}) is empty"));
        }
        if 2.0 * rmax > nx.min(ny) as f64 - 1.0 {
            return bad(format!("radius {rmax} does not fit in {nx}x{ny}"));
        }
        if !(self.fg_prior_target > 0.0 && self.fg_prior_target < 1.0) {
            return bad(format!(
                "fg_prior_target {} outside (0, 1)",
                self.fg_prior_target
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma {} must be >= 0", self.noise_sigma));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub dims: Dims,
    pub features: Vec<Features>,
    pub label: BinaryMask,
}

impl Sample {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Keeps only the pixels set in `keep`, in index order.
    pub fn select(&self, keep: &BinaryMask) -> Result<Sample> {
        let label = self.label.select(keep)?;
        let features = self
            .features
            .iter()
            .zip(keep.data())
            .filter(|(_, &k)| k)
            .map(|(f, _)| *f)
            .collect();
        Ok(Sample {
            dims: label.dims(),
            features,
            label,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SampleSet {
    pub samples: Vec<Sample>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Mean over images of the foreground fraction.
    pub fn mean_fg_fraction(&self) -> f64 {
        let total: f64 = self
            .samples
            .iter()
            .map(|s| s.label.count() as f64 / s.len() as f64)
            .sum();
        total / self.len() as f64
    }

    pub fn subset(&self, indices: &[usize]) -> SampleSet {
        SampleSet {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }
}

/// 3×3 box mean with the window clipped at the border.
pub fn box3(values: &[f64], nx: usize, ny: usize) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    for y in 0..ny {
        for x in 0..nx {
            let mut sum = 0.0;
            let mut n = 0.0;
            for yy in y.saturating_sub(1)..=(y + 1).min(ny - 1) {
                for xx in x.saturating_sub(1)..=(x + 1).min(nx - 1) {
                    sum += values[yy * nx + xx];
                    n += 1.0;
                }
            }
            out[y * nx + x] = sum / n;
        }
    }
    out
}

/// Noise-free intensity of a label: the label blurred by a 3×3 box.
pub fn clean_intensity(label: &BinaryMask, nx: usize, ny: usize) -> Vec<f64> {
    box3(&label.to_f64(), nx, ny)
}

/// Assembles per-pixel features from an observed intensity image.
pub fn features_from_intensity(raw: &[f64], nx: usize, ny: usize) -> Vec<Features> {
    let smooth = box3(raw, nx, ny);
    (0..raw.len())
        .map(|i| {
            let (x, y) = (i % nx, i / nx);
            [
                raw[i],
                smooth[i],
                x as f64 / (nx - 1) as f64,
                y as f64 / (ny - 1) as f64,
                1.0,
            ]
        })
        .collect()
}

fn draw_label(cfg: &SyntheticConfig, size_factor: f64, rng: &mut ChaCha8Rng) -> BinaryMask {
    let (nx, ny) = cfg.dims;
    let (rmin, rmax) = cfg.object_radius_range;
    let dims = Dims::new(nx, ny, 1);
    let mut label = BinaryMask::zeros(dims);

    let area = cfg.fg_prior_target * (nx * ny) as f64 * size_factor;
    let k = rng.gen_range(1..=3usize);
    let shares: Vec<f64> = (0..k).map(|_| rng.gen_range(0.5..1.5)).collect();
    let share_sum: f64 = shares.iter().sum();

    let mut first_center = None;
    for share in shares {
        let a = area * share / share_sum;
        let aspect = rng.gen_range(-0.4f64..0.4).exp();
        let rx = (a / std::f64::consts::PI * aspect).sqrt().clamp(rmin, rmax);
        let ry = (a / std::f64::consts::PI / aspect).sqrt().clamp(rmin, rmax);
        let theta = rng.gen_range(0.0..std::f64::consts::PI);
        let (s, c) = theta.sin_cos();
        let ex = ((rx * c).powi(2) + (ry * s).powi(2)).sqrt();
        let ey = ((rx * s).powi(2) + (ry * c).powi(2)).sqrt();
        let place = |rng: &mut ChaCha8Rng, e: f64, n: usize| {
            let hi = n as f64 - 1.0 - e;
            if hi > e {
                rng.gen_range(e..hi)
            } else {
                (n as f64 - 1.0) / 2.0
            }
        };
        let cx = place(rng, ex, nx);
        let cy = place(rng, ey, ny);
        first_center.get_or_insert((cx, cy));

        let x0 = (cx - ex).floor().max(0.0) as usize;
        let x1 = ((cx + ex).ceil() as usize).min(nx - 1);
        let y0 = (cy - ey).floor().max(0.0) as usize;
        let y1 = ((cy + ey).ceil() as usize).min(ny - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                let u = (dx * c + dy * s) / rx;
                let v = (-dx * s + dy * c) / ry;
                if u * u + v * v <= 1.0 {
                    label.set(y * nx + x, true);
                }
            }
        }
    }
    if label.count() == 0 {
        let (cx, cy) = first_center.expect("at least one blob");
        label.set(cy.round() as usize * nx + cx.round() as usize, true);
    }
    label
}

/// Lognormal object-area multipliers, rescaled to mean exactly 1.
fn size_factors(cfg: &SyntheticConfig) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[SIZE_STREAM]));
    let dist = LogNormal::new(0.0, SIZE_SPREAD).expect("valid lognormal");
    let raw: Vec<f64> = (0..cfg.n_images).map(|_| dist.sample(&mut rng)).collect();
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    raw.into_iter().map(|f| f / mean).collect()
}

fn generate_image(cfg: &SyntheticConfig, index: usize, size_factor: f64) -> Sample {
    let (nx, ny) = cfg.dims;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[index as u64]));
    let label = draw_label(cfg, size_factor, &mut rng);
    let mut raw = clean_intensity(&label, nx, ny);
    if cfg.noise_sigma > 0.0 {
        for v in raw.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += cfg.noise_sigma * z;
        }
    }
    Sample {
        dims: label.dims(),
        features: features_from_intensity(&raw, nx, ny),
        label,
    }
}

pub fn generate_dataset(cfg: &SyntheticConfig) -> Result<SampleSet> {
    cfg.validate()?;
    let set = SampleSet {
        samples: size_factors(cfg)
            .into_iter()
            .enumerate()
            .map(|(i, f)| generate_image(cfg, i, f))
            .collect(),
    };
    let achieved = set.mean_fg_fraction();
    let rel = (achieved - cfg.fg_prior_target).abs() / cfg.fg_prior_target;
    if rel > PRIOR_TOLERANCE {
        return Err(Error::InfeasibleConfig(format!(
            "achieved foreground prior {achieved:.5} is more than {:.0}% from the target {}",
            PRIOR_TOLERANCE * 100.0,
            cfg.fg_prior_target
        )));
    }
    Ok(set)
}
