//! Dice scores, confident-subset evaluation and precision-recall curves.
//!
//! Dice conventions: both sets empty gives 1 (class correctly absent), one
//! empty gives 0. Dice is computed per image and class, then averaged over
//! images; the headline mean covers the foreground classes `1..C` only.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::LabeledDataset;
use crate::error::{bail, Result};
use crate::grid::{Grid, LabelMap};
use crate::inference::{confidence_map, entropy_map, mc_mean_prediction, ConfidenceMap, McConfig};
use crate::model::SegmentationModel;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Overlap {
    pub intersection: u64,
    pub predicted: u64,
    pub truth: u64,
}

impl Overlap {
    pub fn dice(&self) -> f64 {
        let denom = self.predicted + self.truth;
        if denom == 0 {
            1.0
        } else {
            2.0 * self.intersection as f64 / denom as f64
        }
    }
}

/// Counts for one class, restricted to pixels where `mask` is true.
pub fn class_overlap(pred: &LabelMap, gt: &LabelMap, class: u8, mask: Option<&[bool]>) -> Result<Overlap> {
    if pred.shape() != gt.shape() {
        bail!(Shape, "prediction {:?} vs ground truth {:?}", pred.shape(), gt.shape());
    }
    if let Some(m) = mask {
        if m.len() != pred.len() {
            bail!(Shape, "mask has {} entries for {} pixels", m.len(), pred.len());
        }
    }
    let mut o = Overlap::default();
    for (t, (&p, &g)) in pred.as_slice().iter().zip(gt.as_slice()).enumerate() {
        if mask.is_some_and(|m| !m[t]) {
            continue;
        }
        let (a, b) = (p == class, g == class);
        o.predicted += a as u64;
        o.truth += b as u64;
        o.intersection += (a && b) as u64;
    }
    Ok(o)
}

/// `2|A ∩ B| / (|A| + |B|)` for one class.
pub fn dice(pred: &LabelMap, gt: &LabelMap, class: u8) -> Result<f64> {
    Ok(class_overlap(pred, gt, class, None)?.dice())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiceReport {
    /// Mean over images, per class (index 0 is background).
    pub per_class_dice: Vec<f64>,
    /// Sample standard deviation over images, per class.
    pub per_class_std: Vec<f64>,
    /// Ground-truth pixels per class over the evaluated pixels.
    pub per_class_support: Vec<u64>,
    /// Mean of the foreground per-class means.
    pub mean_dice: f64,
    /// Standard deviation over images of the per-image foreground mean.
    pub mean_dice_std: f64,
    pub num_images: usize,
    /// Fraction of pixels kept by a confidence threshold, when one was used.
    pub confident_fraction: Option<f64>,
    /// Set when some image kept no pixels at all.
    pub degenerate: bool,
    pub provenance: String,
}

/// Aggregates per-image Dice over a set of predictions.
pub fn dice_report(preds: &[LabelMap], gts: &[LabelMap], classes: usize, masks: Option<&[Vec<bool>]>) -> Result<DiceReport> {
    if preds.is_empty() {
        bail!(EmptyDataset, "no images to evaluate");
    }
    if preds.len() != gts.len() || masks.is_some_and(|m| m.len() != preds.len()) {
        bail!(Shape, "predictions, ground truths and masks differ in count");
    }
    if classes < 2 || classes > 256 {
        bail!(Config, "cannot report Dice for {} classes", classes);
    }
    let n = preds.len();
    let mut per_image = vec![vec![0.0; classes]; n];
    let mut support = vec![0u64; classes];
    let (mut kept, mut total) = (0u64, 0u64);
    let mut degenerate = false;
    for i in 0..n {
        let mask = masks.map(|m| m[i].as_slice());
        for c in 0..classes {
            let o = class_overlap(&preds[i], &gts[i], c as u8, mask)?;
            per_image[i][c] = o.dice();
            support[c] += o.truth;
        }
        let k = mask.map_or(preds[i].len() as u64, |m| m.iter().filter(|&&b| b).count() as u64);
        degenerate |= k == 0;
        kept += k;
        total += preds[i].len() as u64;
    }
    let per_class_dice: Vec<f64> = (0..classes).map(|c| mean(per_image.iter().map(|d| d[c]))).collect();
    let per_class_std = (0..classes).map(|c| sample_std(per_image.iter().map(|d| d[c]))).collect();
    let fg_means: Vec<f64> = per_image.iter().map(|d| mean(d[1..].iter().copied())).collect();
    Ok(DiceReport {
        mean_dice: mean(per_class_dice[1..].iter().copied()),
        mean_dice_std: sample_std(fg_means.iter().copied()),
        per_class_dice,
        per_class_std,
        per_class_support: support,
        num_images: n,
        confident_fraction: masks.map(|_| kept as f64 / total as f64),
        degenerate,
        provenance: String::new(),
    })
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn sample_std(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count();
    if n < 2 {
        return 0.0;
    }
    let m = mean(values.clone());
    libm::sqrt(values.map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64)
}

/// Deterministic (dropout off) argmax prediction for every test image.
pub fn predict_labels(model: &SegmentationModel, test: &LabeledDataset) -> Result<Vec<LabelMap>> {
    test.samples.iter().map(|s| Ok(model.predict(&s.image, false, 0)?.argmax())).collect()
}

pub fn evaluate_model(model: &SegmentationModel, test: &LabeledDataset) -> Result<DiceReport> {
    if test.is_empty() {
        bail!(EmptyDataset, "test set is empty");
    }
    let preds = predict_labels(model, test)?;
    let mut report = dice_report(&preds, &test.labels(), model.num_classes(), None)?;
    report.provenance = "deterministic forward, argmax".into();
    Ok(report)
}

/// Where the per-pixel confidence used for gating comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum ConfidenceSource {
    /// MC-dropout passes of the evaluated model itself.
    ModelMc(McConfig),
    /// One precomputed map per test image (for example a teacher's).
    Provided(Vec<ConfidenceMap>),
}

/// Per-pixel confidence of `model` on `image` via MC dropout.
pub fn model_confidence(model: &SegmentationModel, image: &Grid<f32>, mc: &McConfig) -> Result<ConfidenceMap> {
    let x = Tensor::from_images([image])?;
    let mean = mc_mean_prediction(model, &x, mc)?.swap_remove(0);
    confidence_map(&entropy_map(&mean), mc.alpha)
}

/// Dice restricted to pixels whose confidence exceeds `threshold`.
pub fn confident_subset_report(
    model: &SegmentationModel,
    test: &LabeledDataset,
    source: &ConfidenceSource,
    threshold: f64,
) -> Result<DiceReport> {
    if test.is_empty() {
        bail!(EmptyDataset, "test set is empty");
    }
    let maps: Vec<ConfidenceMap> = match source {
        ConfidenceSource::Provided(maps) => {
            if maps.len() != test.len() {
                bail!(InvalidInput, "{} confidence maps for {} test images", maps.len(), test.len());
            }
            maps.clone()
        }
        ConfidenceSource::ModelMc(mc) => test
            .samples
            .iter()
            .map(|s| model_confidence(model, &s.image, &mc.for_image(&s.id)))
            .collect::<Result<_>>()?,
    };
    let masks: Vec<Vec<bool>> = maps.iter().map(|m| m.0.as_slice().iter().map(|&w| w > threshold).collect()).collect();
    let preds = predict_labels(model, test)?;
    let mut report = dice_report(&preds, &test.labels(), model.num_classes(), Some(&masks))?;
    report.provenance = match source {
        ConfidenceSource::ModelMc(mc) => alloc::format!(
            "deterministic forward, argmax; pixels with model MC-dropout confidence > {threshold} (K={}, alpha={})",
            mc.num_passes,
            mc.alpha
        ),
        ConfidenceSource::Provided(_) => alloc::format!("deterministic forward, argmax; pixels with provided confidence > {threshold}"),
    };
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    /// Descending.
    pub thresholds: Vec<f64>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
}

/// Precision and recall at `num_thresholds` evenly spaced thresholds from 1
/// down to 0; a pixel is predicted positive when `score >= threshold`.
/// Precision with no predicted positives is reported as 1.
pub fn precision_recall_curve(scores: &[f64], truth: &[bool], num_thresholds: usize) -> Result<PrCurve> {
    if scores.len() != truth.len() {
        bail!(Shape, "{} scores for {} ground-truth pixels", scores.len(), truth.len());
    }
    if num_thresholds < 2 {
        bail!(Config, "need at least two thresholds");
    }
    if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        bail!(InvalidInput, "score {} outside [0, 1]", s);
    }
    let positives = truth.iter().filter(|&&t| t).count();
    if positives == 0 {
        bail!(InvalidInput, "ground truth has no positive pixels; recall is undefined");
    }
    let mut order: Vec<(f64, bool)> = scores.iter().copied().zip(truth.iter().copied()).collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut cum_tp = Vec::with_capacity(order.len() + 1);
    cum_tp.push(0usize);
    for &(_, t) in &order {
        cum_tp.push(cum_tp.last().copied().unwrap_or(0) + t as usize);
    }
    let mut curve = PrCurve { thresholds: Vec::new(), precision: Vec::new(), recall: Vec::new() };
    for i in 0..num_thresholds {
        let threshold = 1.0 - i as f64 / (num_thresholds - 1) as f64;
        let predicted = order.partition_point(|&(s, _)| s >= threshold);
        let tp = cum_tp[predicted];
        curve.thresholds.push(threshold);
        curve.precision.push(if predicted == 0 { 1.0 } else { tp as f64 / predicted as f64 });
        curve.recall.push(tp as f64 / positives as f64);
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dice_examples() {
        let a = Grid::from_fn(4, 5, |y, _| (y < 2) as u8);
        assert_eq!(dice(&a, &a, 1).unwrap(), 1.0);
        let b = a.map(|&v| 1 - v);
        assert_eq!(dice(&a, &b, 1).unwrap(), 0.0);
        // both empty
        assert_eq!(dice(&a, &a, 7).unwrap(), 1.0);
        assert!(dice(&a, &Grid::filled(5, 4, 0), 1).is_err());
    }

    #[test]
    fn report_means_exclude_background() {
        let gt = Grid::from_vec(1, 4, alloc::vec![0u8, 1, 2, 2]).unwrap();
        let pred = Grid::from_vec(1, 4, alloc::vec![1u8, 1, 2, 2]).unwrap();
        let r = dice_report(&[pred], &[gt], 3, None).unwrap();
        assert_eq!(r.per_class_dice[0], 0.0);
        assert!((r.per_class_dice[1] - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.per_class_dice[2], 1.0);
        assert!((r.mean_dice - (2.0 / 3.0 + 1.0) / 2.0).abs() < 1e-12);
        assert_eq!(r.per_class_support, alloc::vec![1, 1, 2]);
    }

    #[test]
    fn empty_mask_is_degenerate() {
        let gt = Grid::from_vec(1, 2, alloc::vec![0u8, 1]).unwrap();
        let r = dice_report(&[gt.clone()], &[gt], 2, Some(&[alloc::vec![false, false]])).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.confident_fraction, Some(0.0));
        assert!(r.per_class_dice.iter().all(|&d| d == 1.0));
    }

    #[test]
    fn pr_curve_examples() {
        let truth = [true, false, true, false, false];
        let exact: Vec<f64> = truth.iter().map(|&t| t as u8 as f64).collect();
        let c = precision_recall_curve(&exact, &truth, 11).unwrap();
        assert!(c.precision.iter().zip(&c.recall).any(|(p, r)| *p == 1.0 && *r == 1.0));
        let flat = precision_recall_curve(&[0.5; 5], &truth, 11).unwrap();
        for ((t, p), r) in flat.thresholds.iter().zip(&flat.precision).zip(&flat.recall) {
            if *t <= 0.5 {
                assert!((*p - 0.4).abs() < 1e-12 && *r == 1.0);
            } else {
                assert_eq!(*r, 0.0);
            }
        }
        assert!(precision_recall_curve(&[0.5; 5], &[false; 5], 11).is_err());
        assert!(precision_recall_curve(&[1.5; 5], &truth, 11).is_err());
    }
}
