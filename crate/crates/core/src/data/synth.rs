//! Layered synthetic B-scan-like images with exact ground truth.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{boundaries_to_labels, BoundarySet, LabeledDataset, LabeledSample, UnlabeledDataset, UnlabeledSample};
use crate::error::{bail, Result};
use crate::rng::{derive_seed, rng_from_seed, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    /// Number of sinusoidal components in each boundary curve.
    pub boundary_smoothness: usize,
    /// Mean intensity per class; index 0 is the background.
    pub layer_intensity_means: Vec<f64>,
    pub noise_std: f64,
    /// Relative contrast and noise spread applied to unlabeled images only.
    pub contrast_jitter: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            num_classes: 4,
            boundary_smoothness: 3,
            layer_intensity_means: vec![0.15, 0.7, 0.4, 0.55],
            noise_std: 0.15,
            contrast_jitter: 0.3,
            seed: 0,
        }
    }
}

/// Smallest layer thickness the generator produces, in pixels.
pub const MIN_LAYER_THICKNESS: f64 = 2.0;

impl SynthConfig {
    /// `size_multiple` is the model's required spatial divisor.
    pub fn validate(&self, size_multiple: usize) -> Result<()> {
        if self.num_classes < 2 || self.num_classes > 256 {
            bail!(Config, "num_classes must be in [2, 256], got {}", self.num_classes);
        }
        if self.height == 0 || self.width == 0 || self.height % size_multiple != 0 || self.width % size_multiple != 0 {
            bail!(Config, "image size {}x{} must be a positive multiple of {}", self.height, self.width, size_multiple);
        }
        let needed = (MIN_LAYER_THICKNESS as usize) * (self.num_classes - 1) + 4;
        if self.height < needed {
            bail!(Config, "height {} too small for {} layers of {} px", self.height, self.num_classes - 1, MIN_LAYER_THICKNESS);
        }
        if self.layer_intensity_means.len() != self.num_classes {
            bail!(Config, "{} intensity means for {} classes", self.layer_intensity_means.len(), self.num_classes);
        }
        if self.layer_intensity_means.iter().any(|m| !(0.0..=1.0).contains(m)) {
            bail!(Config, "intensity means must lie in [0, 1]");
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) || !(0.0..1.0).contains(&self.contrast_jitter) {
            bail!(Config, "noise_std must be >= 0 and contrast_jitter in [0, 1)");
        }
        if self.boundary_smoothness == 0 {
            bail!(Config, "boundary_smoothness must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
    Unlabeled,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "val",
            Split::Unlabeled => "unlabeled",
            Split::Test => "test",
        }
    }

    fn tag(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Validation => 2,
            Split::Unlabeled => 3,
            Split::Test => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSplits {
    pub train: LabeledDataset,
    pub validation: LabeledDataset,
    pub unlabeled: UnlabeledDataset,
    pub test: LabeledDataset,
}

/// Generates the four splits; every image depends only on
/// `(cfg, split, index)`.
pub fn generate_synthetic_dataset(
    cfg: &SynthConfig,
    size_multiple: usize,
    n_labeled: usize,
    n_validation: usize,
    n_unlabeled: usize,
    n_test: usize,
) -> Result<SyntheticSplits> {
    cfg.validate(size_multiple)?;
    if n_labeled == 0 {
        bail!(Config, "n_labeled must be at least 1");
    }
    let labeled = |split: Split, n: usize| -> Result<LabeledDataset> {
        let samples = (0..n).map(|i| generate_sample(cfg, split, i).map(|(_, s)| s)).collect::<Result<_>>()?;
        Ok(LabeledDataset { samples })
    };
    let unlabeled = (0..n_unlabeled)
        .map(|i| generate_sample(cfg, Split::Unlabeled, i).map(|(_, s)| UnlabeledSample { id: s.id, image: s.image }))
        .collect::<Result<_>>()?;
    Ok(SyntheticSplits {
        train: labeled(Split::Train, n_labeled)?,
        validation: labeled(Split::Validation, n_validation)?,
        unlabeled: UnlabeledDataset { samples: unlabeled },
        test: labeled(Split::Test, n_test)?,
    })
}

/// One image, its boundaries and labels.
pub fn generate_sample(cfg: &SynthConfig, split: Split, index: usize) -> Result<(BoundarySet, LabeledSample)> {
    let mut rng = rng_from_seed(derive_seed(cfg.seed, (split.tag() << 32) | index as u64));
    let boundaries = random_boundaries(cfg, &mut rng)?;
    let labels = boundaries_to_labels(&boundaries, cfg.height)?;
    let (contrast, noise_std) = if split == Split::Unlabeled && cfg.contrast_jitter > 0.0 {
        let j = cfg.contrast_jitter;
        (1.0 + j * rng.random_range(-1.0..=1.0), cfg.noise_std * (1.0 + j * rng.random::<f64>()))
    } else {
        (1.0, cfg.noise_std)
    };
    let noise = Normal::new(0.0, noise_std.max(0.0)).map_err(|e| crate::Error::Config(format!("{e}")))?;
    let image = labels.map(|&c| {
        let mean = 0.5 + (cfg.layer_intensity_means[c as usize] - 0.5) * contrast;
        let n = if noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
        (mean + n).clamp(0.0, 1.0) as f32
    });
    let id = format!("{}-{:04}", split.name(), index);
    Ok((boundaries, LabeledSample { id, image, labels }))
}

fn random_boundaries(cfg: &SynthConfig, rng: &mut Rng) -> Result<BoundarySet> {
    let (h, w) = (cfg.height as f64, cfg.width);
    let count = cfg.num_classes;
    let top = rng.random_range(0.15..0.25) * h;
    let span = rng.random_range(0.5..0.62) * h;
    let raw: Vec<f64> = (1..count).map(|_| rng.random_range(0.5..1.5)).collect();
    let total: f64 = raw.iter().sum();
    let mut base = vec![top];
    for r in &raw {
        base.push(base.last().copied().unwrap_or(top) + span * r / total);
    }
    let global = Undulation::random(cfg.boundary_smoothness, 0.05 * h, rng);
    let local: Vec<Undulation> = (0..count).map(|_| Undulation::random(cfg.boundary_smoothness, 0.015 * h, rng)).collect();
    let mut curves = vec![vec![0.0; w]; count];
    let mut column = vec![0.0; count];
    for x in 0..w {
        let u = x as f64 / w as f64;
        for k in 0..count {
            column[k] = base[k] + global.at(u) + local[k].at(u);
        }
        column.sort_by(f64::total_cmp);
        column[0] = column[0].max(1.0);
        for k in 1..count {
            column[k] = column[k].max(column[k - 1] + MIN_LAYER_THICKNESS);
        }
        if column[count - 1] > h - 1.0 {
            column[count - 1] = h - 1.0;
            for k in (0..count - 1).rev() {
                column[k] = column[k].min(column[k + 1] - MIN_LAYER_THICKNESS);
            }
        }
        for k in 0..count {
            curves[k][x] = column[k];
        }
    }
    BoundarySet::new(curves, cfg.height)
}

/// Sum of low-frequency sinusoids; component `j` has amplitude up to `amp / j`.
struct Undulation {
    terms: Vec<(f64, f64, f64)>,
}

impl Undulation {
    fn random(components: usize, amp: f64, rng: &mut Rng) -> Self {
        let terms = (1..=components)
            .map(|j| (rng.random::<f64>() * amp / j as f64, j as f64, rng.random::<f64>() * core::f64::consts::TAU))
            .collect();
        Self { terms }
    }

    fn at(&self, u: f64) -> f64 {
        self.terms.iter().map(|&(a, f, phase)| a * libm::sin(core::f64::consts::TAU * f * u + phase)).sum()
    }
}
