//! Monte Carlo dropout inference: averaged scores, entropy and confidence.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::grid::{Grid, ScoreMap};
use crate::model::{scores_from_logits, SegmentationModel};
use crate::rng::{derive_seed, hash_str};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    /// Number of stochastic forward passes `K`.
    pub num_passes: usize,
    /// Confidence sharpness `alpha` in `exp(-alpha * u)`.
    pub alpha: f64,
    pub base_seed: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self { num_passes: 10, alpha: 2.0, base_seed: 0 }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_passes == 0 {
            bail!(Config, "num_passes must be at least 1");
        }
        check_alpha(self.alpha)
    }

    /// Dropout seed of pass `k`.
    pub fn pass_seed(&self, k: usize) -> u64 {
        derive_seed(self.base_seed, k as u64)
    }

    /// The configuration used for one image: the base seed is mixed with the
    /// image id so a soft label does not depend on when it is computed.
    pub fn for_image(&self, image_id: &str) -> McConfig {
        McConfig { base_seed: derive_seed(self.base_seed, hash_str(image_id)), ..*self }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        bail!(Config, "alpha must be a finite non-negative number, got {}", alpha);
    }
    Ok(())
}

/// Per-pixel predictive entropy in nats, in `[0, ln C]`.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyMap(pub Grid<f64>);

/// Per-pixel soft-label confidence `exp(-alpha * u)`, in `(0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMap(pub Grid<f64>);

impl UncertaintyMap {
    pub fn mean(&self) -> f64 {
        mean(self.0.as_slice())
    }
}

impl ConfidenceMap {
    pub fn ones(height: usize, width: usize) -> Self {
        Self(Grid::filled(height, width, 1.0))
    }

    pub fn mean(&self) -> f64 {
        mean(self.0.as_slice())
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Teacher output for one unlabeled image.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabelRecord {
    pub soft_label: ScoreMap,
    pub uncertainty: UncertaintyMap,
    pub confidence: ConfidenceMap,
    pub source_image_id: String,
    pub teacher_checkpoint_id: String,
    pub mc_config: McConfig,
}

impl SoftLabelRecord {
    pub fn validate(&self) -> Result<()> {
        let shape = self.soft_label.spatial_shape();
        if self.uncertainty.0.shape() != shape || self.confidence.0.shape() != shape {
            bail!(Shape, "soft label, uncertainty and confidence grids differ in size");
        }
        if self.source_image_id.is_empty() || self.teacher_checkpoint_id.is_empty() {
            bail!(InvalidInput, "soft-label provenance identifiers must be non-empty");
        }
        Ok(())
    }
}

/// `(1/K) * sum_k y^k` over `K` dropout-active passes; pass `k` uses
/// [`McConfig::pass_seed`]; see [`SegmentationModel::logits`] for batch norm.
/// With a zero dropout rate every pass is identical and only one is run, so
/// the result equals the deterministic forward pass exactly.
pub fn mc_mean_prediction(model: &SegmentationModel, image: &Tensor, mc: &McConfig) -> Result<Vec<ScoreMap>> {
    mc.validate()?;
    if model.config().dropout_rate == 0.0 {
        return Ok(scores_from_logits(&model.logits(image, None)?));
    }
    let mut sums: Option<Vec<Vec<f64>>> = None;
    for k in 0..mc.num_passes {
        let logits = model.logits(image, Some(mc.pass_seed(k)))?;
        let pass = scores_from_logits(&logits);
        match &mut sums {
            None => sums = Some(pass.into_iter().map(ScoreMap::into_vec).collect()),
            Some(acc) => {
                for (a, s) in acc.iter_mut().zip(pass) {
                    a.iter_mut().zip(s.as_slice()).for_each(|(x, y)| *x += *y);
                }
            }
        }
    }
    let k = mc.num_passes as f64;
    let (h, w, c) = (image.h, image.w, model.num_classes());
    sums.expect("num_passes >= 1")
        .into_iter()
        .map(|mut v| {
            v.iter_mut().for_each(|x| *x /= k);
            ScoreMap::from_raw(h, w, c, v)
        })
        .collect()
}

/// Shannon entropy (natural log) of each pixel; `0 * ln 0` counts as 0.
pub fn entropy_map(scores: &ScoreMap) -> UncertaintyMap {
    let values = scores
        .pixels()
        .map(|px| {
            let h = -px.iter().filter(|&&p| p > 0.0).map(|&p| p * libm::log(p)).sum::<f64>();
            // rounding can leave tiny negatives for one-hot pixels
            h.max(0.0)
        })
        .collect();
    UncertaintyMap(Grid::from_vec(scores.height(), scores.width(), values).expect("one value per pixel"))
}

/// Elementwise `exp(-alpha * u)`.
pub fn confidence_map(u: &UncertaintyMap, alpha: f64) -> Result<ConfidenceMap> {
    check_alpha(alpha)?;
    Ok(ConfidenceMap(u.0.map(|&v| if alpha == 0.0 { 1.0 } else { libm::exp(-alpha * v) })))
}

/// Unlabeled image with an id, the unit the teacher labels.
pub trait ImageSource {
    fn id(&self) -> &str;
    fn image(&self) -> &Grid<f32>;
}

/// Runs the teacher over `images`: MC mean, entropy, then confidence.
///
/// Image `i` uses `mc.for_image(id_i)`, so records are identical whether they
/// are produced one minibatch at a time or precomputed for the whole set.
pub fn generate_soft_labels<I: ImageSource>(
    teacher: &SegmentationModel,
    teacher_checkpoint_id: &str,
    images: &[I],
    mc: &McConfig,
) -> Result<Vec<SoftLabelRecord>> {
    mc.validate()?;
    if teacher_checkpoint_id.is_empty() {
        bail!(InvalidInput, "teacher checkpoint id must be non-empty");
    }
    images
        .iter()
        .map(|item| {
            let per_image = mc.for_image(item.id());
            let x = Tensor::from_images([item.image()])?;
            let soft_label = mc_mean_prediction(teacher, &x, &per_image)?.swap_remove(0);
            let uncertainty = entropy_map(&soft_label);
            let confidence = confidence_map(&uncertainty, mc.alpha)?;
            let record = SoftLabelRecord {
                soft_label,
                uncertainty,
                confidence,
                source_image_id: item.id().into(),
                teacher_checkpoint_id: teacher_checkpoint_id.into(),
                mc_config: per_image,
            };
            record.validate()?;
            Ok(record)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn pixel_entropy(p: &[f64]) -> f64 {
        entropy_map(&ScoreMap::new(1, 1, p.len(), p.to_vec()).unwrap()).0.at(0, 0)
    }

    #[test]
    fn entropy_analytic_values() {
        let mut hot = vec![0.0; 9];
        hot[0] = 1.0;
        assert_eq!(pixel_entropy(&hot), 0.0);
        assert!((pixel_entropy(&[1.0 / 9.0; 9]) - libm::log(9.0)).abs() < 1e-9);
        let mut split = vec![0.0; 9];
        split[0] = 0.5;
        split[1] = 0.5;
        assert!((pixel_entropy(&split) - core::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn confidence_analytic_values() {
        let u = UncertaintyMap(Grid::from_vec(1, 3, vec![0.0, libm::log(9.0), 5.0]).unwrap());
        let w = confidence_map(&u, 2.0).unwrap();
        assert_eq!(w.0.at(0, 0), 1.0);
        assert!((w.0.at(0, 1) - 1.0 / 81.0).abs() < 1e-12);
        assert!(confidence_map(&u, 0.0).unwrap().0.as_slice().iter().all(|&v| v == 1.0));
        assert!(confidence_map(&u, -1.0).is_err());
        assert!(confidence_map(&u, f64::NAN).is_err());
    }

    #[test]
    fn mc_config_validation() {
        assert!(McConfig { num_passes: 0, ..McConfig::default() }.validate().is_err());
        assert!(McConfig { alpha: -0.5, ..McConfig::default() }.validate().is_err());
        let mc = McConfig::default();
        assert_ne!(mc.pass_seed(0), mc.pass_seed(1));
        assert_ne!(mc.for_image("a").base_seed, mc.for_image("b").base_seed);
    }
}
