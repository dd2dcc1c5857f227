//! Training objectives.
//!
//! * labeled: class-weighted categorical cross-entropy, averaged over pixels
//!   and images;
//! * unlabeled: confidence-weighted cross-entropy against the teacher's
//!   argmax regions, with per-class weights `zeta_c = 1 / sum(omega)` that
//!   switch off classes whose confident mass does not exceed `P`;
//! * semi-supervised: their sum.
//!
//! Probabilities inside logarithms are clamped to `[LOG_CLAMP_MIN, 1]`.
//! Gradient functions return `d loss / d probability` per image in the
//! score-map layout; chain through [`crate::nn::softmax_backward`] to reach
//! the logits.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::grid::{LabelMap, ScoreMap};
use crate::inference::{ConfidenceMap, SoftLabelRecord};

pub const LOG_CLAMP_MIN: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// `P`: a class contributes only when its confident mass exceeds this.
    pub min_class_mass: f64,
    /// Per-class cross-entropy weights for labeled terms. Empty means
    /// "inverse class frequency of the labeled training set".
    pub teacher_class_weights: Vec<f64>,
    /// Coefficient on the unlabeled term (plain sum when 1).
    pub unlabeled_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { min_class_mass: 50.0, teacher_class_weights: Vec::new(), unlabeled_weight: 1.0 }
    }
}

impl LossConfig {
    pub fn validate(&self, classes: usize) -> Result<()> {
        if !(self.min_class_mass >= 0.0 && self.min_class_mass.is_finite()) {
            bail!(Config, "min_class_mass must be finite and non-negative, got {}", self.min_class_mass);
        }
        if !self.teacher_class_weights.is_empty() {
            if self.teacher_class_weights.len() != classes {
                bail!(Config, "{} class weights given for {} classes", self.teacher_class_weights.len(), classes);
            }
            if self.teacher_class_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
                bail!(Config, "class weights must be finite and non-negative");
            }
        }
        if !(self.unlabeled_weight >= 0.0 && self.unlabeled_weight.is_finite()) {
            bail!(Config, "unlabeled_weight must be finite and non-negative");
        }
        Ok(())
    }
}

/// Per-class confident pixel mass `sum_{t in Z_c} omega_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassRegionMass(pub Vec<f64>);

#[inline]
fn clamped_log(p: f64) -> f64 {
    libm::log(p.clamp(LOG_CLAMP_MIN, 1.0))
}

#[inline]
fn clamped_log_grad(p: f64) -> f64 {
    if (LOG_CLAMP_MIN..=1.0).contains(&p) {
        1.0 / p
    } else {
        0.0
    }
}

fn check_scores_labels(scores: &[ScoreMap], labels: &[LabelMap], class_weights: &[f64]) -> Result<usize> {
    if scores.is_empty() || scores.len() != labels.len() {
        bail!(Shape, "{} score maps for {} label maps", scores.len(), labels.len());
    }
    let classes = scores[0].classes();
    if class_weights.len() != classes {
        bail!(Shape, "{} class weights for {} classes", class_weights.len(), classes);
    }
    for (s, l) in scores.iter().zip(labels) {
        if s.classes() != classes || s.spatial_shape() != l.shape() {
            bail!(Shape, "score map {:?}x{} does not match label map {:?}", s.spatial_shape(), s.classes(), l.shape());
        }
        if let Some(&bad) = l.as_slice().iter().find(|&&c| c as usize >= classes) {
            bail!(InvalidInput, "label {} out of range for {} classes", bad, classes);
        }
    }
    Ok(classes)
}

/// Mean over pixels (and images) of `-w_y * log p_y`.
pub fn labeled_loss(scores: &[ScoreMap], labels: &[LabelMap], class_weights: &[f64]) -> Result<f64> {
    check_scores_labels(scores, labels, class_weights)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for (s, l) in scores.iter().zip(labels) {
        for (px, &y) in s.pixels().zip(l.as_slice()) {
            total -= class_weights[y as usize] * clamped_log(px[y as usize]);
        }
        count += l.len();
    }
    Ok(total / count as f64)
}

/// [`labeled_loss`] and its gradient with respect to every score.
pub fn labeled_loss_grad(scores: &[ScoreMap], labels: &[LabelMap], class_weights: &[f64]) -> Result<(f64, Vec<Vec<f64>>)> {
    let classes = check_scores_labels(scores, labels, class_weights)?;
    let count: usize = labels.iter().map(|l| l.len()).sum();
    let inv = 1.0 / count as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(scores.len());
    for (s, l) in scores.iter().zip(labels) {
        let mut g = vec![0.0; s.as_slice().len()];
        for (t, (px, &y)) in s.pixels().zip(l.as_slice()).enumerate() {
            let (w, p) = (class_weights[y as usize], px[y as usize]);
            total -= w * clamped_log(p);
            g[t * classes + y as usize] = -w * clamped_log_grad(p) * inv;
        }
        grads.push(g);
    }
    Ok((total * inv, grads))
}

/// Converts a one-hot probability map into class indices; any pixel that is
/// not exactly one-hot is an error.
pub fn one_hot_to_labels(one_hot: &ScoreMap) -> Result<LabelMap> {
    for (t, px) in one_hot.pixels().enumerate() {
        let ones = px.iter().filter(|&&v| v == 1.0).count();
        let zeros = px.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || zeros != px.len() - 1 {
            bail!(InvalidInput, "label pixel {} is not one-hot", t);
        }
    }
    Ok(one_hot.argmax())
}

/// Assigns each pixel to the teacher's most probable class (lowest index on
/// ties).
pub fn class_region_partition(soft_label: &ScoreMap) -> LabelMap {
    soft_label.argmax()
}

pub fn class_region_mass(partition: &LabelMap, confidence: &ConfidenceMap, classes: usize) -> Result<ClassRegionMass> {
    if partition.shape() != confidence.0.shape() {
        bail!(Shape, "partition {:?} vs confidence {:?}", partition.shape(), confidence.0.shape());
    }
    let mut mass = vec![0.0; classes];
    for (&c, &w) in partition.as_slice().iter().zip(confidence.0.as_slice()) {
        if c as usize >= classes {
            bail!(InvalidInput, "class {} out of range", c);
        }
        mass[c as usize] += w;
    }
    Ok(ClassRegionMass(mass))
}

/// `zeta_c = 1 / mass_c` when `mass_c > P`, otherwise 0.
pub fn zeta_weights(mass: &ClassRegionMass, min_class_mass: f64) -> Vec<f64> {
    mass.0.iter().map(|&m| if m > min_class_mass { 1.0 / m } else { 0.0 }).collect()
}

fn check_records(scores: &[ScoreMap], records: &[SoftLabelRecord]) -> Result<usize> {
    if scores.len() != records.len() {
        bail!(Shape, "{} score maps for {} soft-label records", scores.len(), records.len());
    }
    let Some(first) = scores.first() else { return Ok(0) };
    let classes = first.classes();
    for (s, r) in scores.iter().zip(records) {
        r.validate()?;
        if s.classes() != classes || r.soft_label.classes() != classes || s.spatial_shape() != r.soft_label.spatial_shape() {
            bail!(Shape, "student scores {:?}x{} vs soft label {:?}x{}", s.spatial_shape(), s.classes(), r.soft_label.spatial_shape(), r.soft_label.classes());
        }
    }
    Ok(classes)
}

/// Per-image `(partition, zeta)` pair derived from the teacher record.
fn regions_and_zeta(record: &SoftLabelRecord, classes: usize, min_class_mass: f64) -> Result<(LabelMap, Vec<f64>)> {
    let partition = class_region_partition(&record.soft_label);
    let mass = class_region_mass(&partition, &record.confidence, classes)?;
    Ok((partition, zeta_weights(&mass, min_class_mass)))
}

/// `sum_images sum_c zeta_c sum_{t in Z_c} -omega_t log s_c^t`, where regions
/// and confidences come from the teacher record and `s` is the student.
pub fn unlabeled_loss(scores: &[ScoreMap], records: &[SoftLabelRecord], config: &LossConfig) -> Result<f64> {
    Ok(unlabeled_loss_grad(scores, records, config)?.0)
}

/// [`unlabeled_loss`] and its gradient with respect to every student score.
pub fn unlabeled_loss_grad(scores: &[ScoreMap], records: &[SoftLabelRecord], config: &LossConfig) -> Result<(f64, Vec<Vec<f64>>)> {
    let classes = check_records(scores, records)?;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(scores.len());
    for (s, r) in scores.iter().zip(records) {
        let (partition, zeta) = regions_and_zeta(r, classes, config.min_class_mass)?;
        let mut g = vec![0.0; s.as_slice().len()];
        for (t, ((px, &c), &w)) in s.pixels().zip(partition.as_slice()).zip(r.confidence.0.as_slice()).enumerate() {
            let z = zeta[c as usize];
            if z == 0.0 {
                continue;
            }
            let p = px[c as usize];
            total -= z * w * clamped_log(p);
            g[t * classes + c as usize] = -z * w * clamped_log_grad(p);
        }
        grads.push(g);
    }
    Ok((total, grads))
}

/// `L_lab + L_unlab`.
pub fn semi_supervised_loss(labeled: f64, unlabeled: f64) -> Result<f64> {
    if !labeled.is_finite() || !unlabeled.is_finite() {
        bail!(InvalidInput, "loss terms must be finite, got {} and {}", labeled, unlabeled);
    }
    Ok(labeled + unlabeled)
}

/// Inverse class frequency over `labels`, normalized to mean one over the
/// classes that occur; absent classes get weight zero.
pub fn inverse_frequency_weights(labels: &[LabelMap], classes: usize) -> Result<Vec<f64>> {
    let mut counts = vec![0usize; classes];
    for l in labels {
        for &c in l.as_slice() {
            if c as usize >= classes {
                bail!(InvalidInput, "label {} out of range for {} classes", c, classes);
            }
            counts[c as usize] += 1;
        }
    }
    let inv: Vec<f64> = counts.iter().map(|&n| if n == 0 { 0.0 } else { 1.0 / n as f64 }).collect();
    let present = counts.iter().filter(|&&n| n > 0).count();
    if present == 0 {
        bail!(EmptyDataset, "no labeled pixels to compute class weights from");
    }
    let mean = inv.iter().sum::<f64>() / present as f64;
    Ok(inv.iter().map(|w| w / mean).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::inference::UncertaintyMap;
    use alloc::string::ToString;

    fn record(soft: ScoreMap, omega: Vec<f64>) -> SoftLabelRecord {
        let (h, w) = soft.spatial_shape();
        SoftLabelRecord {
            uncertainty: UncertaintyMap(Grid::filled(h, w, 0.0)),
            confidence: ConfidenceMap(Grid::from_vec(h, w, omega).unwrap()),
            soft_label: soft,
            source_image_id: "img".to_string(),
            teacher_checkpoint_id: "teacher".to_string(),
            mc_config: Default::default(),
        }
    }

    #[test]
    fn labeled_analytic_and_linear_in_weights() {
        let s = ScoreMap::new(1, 1, 2, vec![0.5, 0.5]).unwrap();
        let l = Grid::from_vec(1, 1, vec![0u8]).unwrap();
        let loss = labeled_loss(&[s.clone()], &[l.clone()], &[1.0, 1.0]).unwrap();
        assert!((loss - core::f64::consts::LN_2).abs() < 1e-12);
        let one = labeled_loss(&[s.clone()], &[l.clone()], &[1.0, 0.0]).unwrap();
        let two = labeled_loss(&[s], &[l], &[2.0, 0.0]).unwrap();
        assert_eq!(two, 2.0 * one);
    }

    #[test]
    fn labeled_perfect_prediction_is_zero() {
        let l = Grid::from_vec(2, 2, vec![0u8, 1, 2, 1]).unwrap();
        let s = ScoreMap::one_hot(&l, 3).unwrap();
        assert!(labeled_loss(&[s], &[l], &[1.0; 3]).unwrap() <= 1e-12);
    }

    #[test]
    fn labeled_errors() {
        let s = ScoreMap::uniform(2, 2, 3);
        let l = Grid::filled(2, 3, 0u8);
        assert!(labeled_loss(&[s.clone()], &[l], &[1.0; 3]).is_err());
        let bad = Grid::filled(2, 2, 5u8);
        assert!(labeled_loss(&[s.clone()], &[bad], &[1.0; 3]).is_err());
        assert!(labeled_loss(&[s], &[Grid::filled(2, 2, 0u8)], &[1.0; 2]).is_err());
        let soft = ScoreMap::new(1, 1, 2, vec![0.3, 0.7]).unwrap();
        assert!(one_hot_to_labels(&soft).is_err());
    }

    #[test]
    fn zeta_examples() {
        let z = zeta_weights(&ClassRegionMass(vec![100.0, 40.0, 50.0, 50.000001]), 50.0);
        assert_eq!(z[0], 0.01);
        assert_eq!(z[1], 0.0);
        assert_eq!(z[2], 0.0);
        assert!(z[3] > 0.0);
    }

    #[test]
    fn partition_tie_break() {
        let s = ScoreMap::new(1, 1, 3, vec![0.4, 0.4, 0.2]).unwrap();
        assert_eq!(class_region_partition(&s).at(0, 0), 0);
    }

    #[test]
    fn unlabeled_examples() {
        // 100 px of class 0, student gives 0.5 to it everywhere
        let soft = ScoreMap::one_hot(&Grid::filled(10, 10, 0u8), 2).unwrap();
        let student = ScoreMap::uniform(10, 10, 2);
        let cfg = LossConfig::default();
        let loss = unlabeled_loss(&[student.clone()], &[record(soft.clone(), vec![1.0; 100])], &cfg).unwrap();
        assert!((loss - core::f64::consts::LN_2).abs() < 1e-12);
        // omega = 0: every class is gated out
        assert_eq!(unlabeled_loss(&[student], &[record(soft.clone(), vec![0.0; 100])], &cfg).unwrap(), 0.0);
        // perfect student
        assert!(unlabeled_loss(&[soft.clone()], &[record(soft, vec![1.0; 100])], &cfg).unwrap() <= 1e-12);
    }

    #[test]
    fn semi_supervised_sum() {
        assert_eq!(semi_supervised_loss(0.7, 0.3).unwrap(), 1.0);
        assert_eq!(semi_supervised_loss(0.25, 0.0).unwrap(), 0.25);
        assert!(semi_supervised_loss(f64::NAN, 0.0).is_err());
        assert!(semi_supervised_loss(0.0, f64::INFINITY).is_err());
    }

    #[test]
    fn inverse_frequency() {
        let l = Grid::from_vec(1, 4, vec![0u8, 0, 0, 1]).unwrap();
        let w = inverse_frequency_weights(&[l], 3).unwrap();
        // 1/3 and 1 -> mean 2/3 over the two present classes
        assert!((w[0] - 0.5).abs() < 1e-12 && (w[1] - 1.5).abs() < 1e-12 && w[2] == 0.0);
    }
}
