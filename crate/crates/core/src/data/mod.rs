//! Labeled and unlabeled datasets, boundary-to-region conversion, seeded
//! minibatch sampling and the synthetic layered-image generator.

mod boundary;
mod sampler;
mod synth;

use alloc::string::String;
use alloc::vec::Vec;

pub use boundary::{boundaries_to_labels, round_half_up, BoundarySet};
pub use sampler::EpochSampler;
pub use synth::{generate_sample, generate_synthetic_dataset, Split, SynthConfig, SyntheticSplits, MIN_LAYER_THICKNESS};

use crate::error::{bail, Result};
use crate::grid::{Grid, LabelMap};
use crate::inference::ImageSource;

/// An image with its per-pixel class map.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub id: String,
    /// Intensities normalized to `[0, 1]`.
    pub image: Grid<f32>,
    pub labels: LabelMap,
}

impl LabeledSample {
    pub fn new(id: impl Into<String>, image: Grid<f32>, labels: LabelMap, num_classes: usize) -> Result<Self> {
        let sample = Self { id: id.into(), image, labels };
        sample.validate(num_classes)?;
        Ok(sample)
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.image.shape() != self.labels.shape() {
            bail!(Shape, "sample {}: image {:?} vs labels {:?}", self.id, self.image.shape(), self.labels.shape());
        }
        check_intensities(&self.id, &self.image)?;
        if let Some(&c) = self.labels.as_slice().iter().find(|&&c| c as usize >= num_classes) {
            bail!(InvalidInput, "sample {}: label {} outside [0, {})", self.id, c, num_classes);
        }
        Ok(())
    }
}

fn check_intensities(id: &str, image: &Grid<f32>) -> Result<()> {
    if image.as_slice().iter().any(|v| !(0.0..=1.0).contains(v)) {
        bail!(InvalidInput, "sample {}: intensities must be normalized to [0, 1]", id);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledSample {
    pub id: String,
    pub image: Grid<f32>,
}

impl UnlabeledSample {
    pub fn new(id: impl Into<String>, image: Grid<f32>) -> Result<Self> {
        let id = id.into();
        check_intensities(&id, &image)?;
        Ok(Self { id, image })
    }
}

impl ImageSource for UnlabeledSample {
    fn id(&self) -> &str {
        &self.id
    }
    fn image(&self) -> &Grid<f32> {
        &self.image
    }
}

impl ImageSource for LabeledSample {
    fn id(&self) -> &str {
        &self.id
    }
    fn image(&self) -> &Grid<f32> {
        &self.image
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledDataset {
    pub samples: Vec<LabeledSample>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct UnlabeledDataset {
    pub samples: Vec<UnlabeledSample>,
}

impl LabeledDataset {
    pub fn new(samples: Vec<LabeledSample>, num_classes: usize) -> Result<Self> {
        let ds = Self { samples };
        ds.validate(num_classes)?;
        Ok(ds)
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        self.samples.iter().try_for_each(|s| s.validate(num_classes))?;
        check_uniform_shape(self.samples.iter().map(|s| s.image.shape()))
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<LabelMap> {
        self.samples.iter().map(|s| s.labels.clone()).collect()
    }

    /// First `n` samples (used for labeled-size sweeps).
    pub fn truncated(&self, n: usize) -> Self {
        Self { samples: self.samples.iter().take(n).cloned().collect() }
    }
}

impl UnlabeledDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        self.samples.iter().try_for_each(|s| check_intensities(&s.id, &s.image))?;
        check_uniform_shape(self.samples.iter().map(|s| s.image.shape()))
    }
}

fn check_uniform_shape(mut shapes: impl Iterator<Item = (usize, usize)>) -> Result<()> {
    if let Some(first) = shapes.next() {
        if let Some(other) = shapes.find(|s| *s != first) {
            bail!(Shape, "dataset mixes image sizes {:?} and {:?}", first, other);
        }
    }
    Ok(())
}
