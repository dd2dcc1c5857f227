//! Teacher and student training loops.
//!
//! Both loops share one implementation. Each iteration draws a labeled
//! minibatch (augmented) and, for a student, an unlabeled minibatch whose
//! soft labels come from the frozen teacher; the labeled and unlabeled
//! losses are back-propagated and a single Adam step is taken. Every random
//! choice in iteration `i` is seeded from `(seed, i)`, so a run resumed from
//! a saved [`TrainSession`] continues exactly where it stopped.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::augment::{augment, AugmentationConfig};
use crate::data::{EpochSampler, LabeledDataset, UnlabeledDataset, UnlabeledSample};
use crate::error::{bail, Error, Result};
use crate::grid::ScoreMap;
use crate::inference::{generate_soft_labels, McConfig, SoftLabelRecord};
use crate::losses::{inverse_frequency_weights, labeled_loss, labeled_loss_grad, unlabeled_loss_grad, LossConfig};
use crate::model::{scores_from_logits, training_dropout_seed, ModelConfig, SegmentationModel};
use crate::nn::softmax_backward;
use crate::optim::{Adam, AdamConfig};
use crate::rng::derive_seed;
use crate::tensor::Tensor;

const INIT_STREAM: u64 = 0x1417;
const LABELED_SAMPLER_STREAM: u64 = 0x5a11;
const UNLABELED_SAMPLER_STREAM: u64 = 0x5a12;
const AUGMENT_STREAM: u64 = 0xa119;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_iterations: u64,
    pub initial_learning_rate: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_at_iteration: u64,
    pub labeled_batch: usize,
    pub unlabeled_batch: usize,
    pub adam: AdamConfig,
    pub validation_interval: u64,
    /// Validation checks without improvement before stopping; 0 disables
    /// early stopping.
    pub early_stop_patience: u32,
    /// Smallest validation-loss decrease that counts as an improvement.
    pub min_improvement: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_iterations: 40_000,
            initial_learning_rate: 1e-5,
            lr_decay_factor: 0.1,
            lr_decay_at_iteration: 10_000,
            labeled_batch: 1,
            unlabeled_batch: 1,
            adam: AdamConfig::default(),
            validation_interval: 500,
            early_stop_patience: 10,
            min_improvement: 1e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 || self.validation_interval == 0 || self.lr_decay_at_iteration == 0 {
            bail!(Config, "max_iterations, validation_interval and lr_decay_at_iteration must be positive");
        }
        if !(self.initial_learning_rate > 0.0 && self.initial_learning_rate.is_finite()) {
            bail!(Config, "initial_learning_rate must be positive");
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            bail!(Config, "lr_decay_factor must be in (0, 1], got {}", self.lr_decay_factor);
        }
        if self.labeled_batch == 0 || self.unlabeled_batch == 0 {
            bail!(Config, "batch sizes must be at least 1");
        }
        Ok(())
    }

    /// Step schedule: the initial rate before the decay point, scaled by the
    /// decay factor from then on.
    pub fn learning_rate(&self, iteration: u64) -> f64 {
        if iteration < self.lr_decay_at_iteration {
            self.initial_learning_rate
        } else {
            self.initial_learning_rate * self.lr_decay_factor
        }
    }
}

/// One row per validation check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    /// Completed iterations.
    pub iteration: u64,
    pub learning_rate: f64,
    /// Mean of the per-iteration terms since the previous row.
    pub labeled_loss: f64,
    pub unlabeled_loss: f64,
    pub total_loss: f64,
    pub validation_loss: f64,
    pub elapsed_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub iteration: u64,
    pub learning_rate: f64,
    pub best_validation_loss: f64,
    pub best_iteration: u64,
    pub checks_without_improvement: u32,
    pub stopped_early: bool,
    pub labeled_batches: u64,
    pub unlabeled_batches: u64,
    pub parameter_updates: u64,
    pub history: Vec<MetricsRow>,
}

impl TrainState {
    fn new(cfg: &TrainConfig) -> Self {
        Self {
            iteration: 0,
            learning_rate: cfg.learning_rate(0),
            best_validation_loss: f64::INFINITY,
            best_iteration: 0,
            checks_without_improvement: 0,
            stopped_early: false,
            labeled_batches: 0,
            unlabeled_batches: 0,
            parameter_updates: 0,
            history: Vec::new(),
        }
    }
}

/// Everything needed to continue a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSession {
    pub model: SegmentationModel,
    pub best_model: SegmentationModel,
    pub optimizer: Adam,
    pub state: TrainState,
}

impl TrainSession {
    pub fn new(model_cfg: &ModelConfig, train_cfg: &TrainConfig) -> Result<Self> {
        train_cfg.validate()?;
        let mut model = SegmentationModel::new(model_cfg.clone(), derive_seed(train_cfg.seed, INIT_STREAM))?;
        let optimizer = Adam::new(train_cfg.adam, &mut model);
        Ok(Self { best_model: model.clone(), model, optimizer, state: TrainState::new(train_cfg) })
    }

    pub fn is_finished(&self, cfg: &TrainConfig) -> bool {
        self.state.stopped_early || self.state.iteration >= cfg.max_iterations
    }
}

/// Soft labels for the unlabeled set.
#[derive(Clone, Copy)]
pub enum SoftLabels<'a> {
    /// No unlabeled term (fully supervised).
    None,
    /// Computed from the frozen teacher for each sampled minibatch.
    Online { teacher: &'a SegmentationModel, teacher_id: &'a str, mc: McConfig },
    /// Precomputed, aligned index-by-index with the unlabeled set.
    Cached(&'a [SoftLabelRecord]),
}

pub struct TrainInputs<'a> {
    pub labeled: &'a LabeledDataset,
    pub validation: &'a LabeledDataset,
    pub unlabeled: &'a UnlabeledDataset,
    pub soft_labels: SoftLabels<'a>,
    /// Cross-entropy weights for the labeled term.
    pub class_weights: Vec<f64>,
    pub loss: &'a LossConfig,
    pub augmentation: &'a AugmentationConfig,
}

pub trait TrainObserver {
    fn elapsed_seconds(&mut self) -> f64 {
        0.0
    }

    /// Called after every validation check; `improved` says whether the best
    /// model was just replaced.
    fn on_validation(&mut self, _session: &TrainSession, _row: &MetricsRow, _improved: bool) -> Result<()> {
        Ok(())
    }
}

/// Observer that does nothing.
pub struct Silent;

impl TrainObserver for Silent {}

/// Labeled cross-entropy weights: the configured ones, or inverse class
/// frequency of `labeled`.
pub fn resolve_class_weights(loss: &LossConfig, labeled: &LabeledDataset, classes: usize) -> Result<Vec<f64>> {
    loss.validate(classes)?;
    if loss.teacher_class_weights.is_empty() {
        inverse_frequency_weights(&labeled.labels(), classes)
    } else {
        Ok(loss.teacher_class_weights.clone())
    }
}

/// Mean unweighted labeled loss over `validation`, dropout off.
pub fn validation_loss(model: &SegmentationModel, validation: &LabeledDataset) -> Result<f64> {
    if validation.is_empty() {
        bail!(EmptyDataset, "validation set is empty");
    }
    let weights = vec![1.0; model.num_classes()];
    let mut total = 0.0;
    for s in &validation.samples {
        let scores = model.predict(&s.image, false, 0)?;
        total += labeled_loss(&[scores], &[s.labels.clone()], &weights)?;
    }
    Ok(total / validation.len() as f64)
}

fn logit_gradient(scores: &[ScoreMap], dprobs: &[Vec<f64>], like: &Tensor, scale: f64) -> Tensor {
    let mut out = Tensor::zeros(like.n, like.c, like.h, like.w);
    let p = like.plane_len();
    for (i, (s, g)) in scores.iter().zip(dprobs).enumerate() {
        let dz = softmax_backward(s.as_slice(), g, like.c);
        let dst = out.sample_mut(i);
        for t in 0..p {
            for k in 0..like.c {
                dst[k * p + t] = (dz[t * like.c + k] * scale) as f32;
            }
        }
    }
    out
}

fn check_inputs(inputs: &TrainInputs<'_>, classes: usize) -> Result<()> {
    if inputs.labeled.is_empty() {
        bail!(EmptyDataset, "labeled training set is empty");
    }
    if inputs.validation.is_empty() {
        bail!(EmptyDataset, "validation set is empty");
    }
    inputs.labeled.validate(classes)?;
    inputs.validation.validate(classes)?;
    inputs.unlabeled.validate()?;
    inputs.loss.validate(classes)?;
    inputs.augmentation.validate()?;
    if inputs.class_weights.len() != classes {
        bail!(Config, "{} class weights for {} classes", inputs.class_weights.len(), classes);
    }
    match inputs.soft_labels {
        SoftLabels::Cached(records) if records.len() != inputs.unlabeled.len() => {
            bail!(InvalidInput, "{} cached soft labels for {} unlabeled images", records.len(), inputs.unlabeled.len())
        }
        SoftLabels::Cached(records) => {
            for (r, s) in records.iter().zip(&inputs.unlabeled.samples) {
                if r.source_image_id != s.id {
                    bail!(InvalidInput, "soft label for {} is aligned with image {}", r.source_image_id, s.id);
                }
            }
        }
        SoftLabels::Online { teacher, mc, .. } => {
            mc.validate()?;
            if teacher.num_classes() != classes {
                bail!(Config, "teacher predicts {} classes, student {}", teacher.num_classes(), classes);
            }
        }
        SoftLabels::None => {}
    }
    Ok(())
}

#[derive(Default)]
struct Running {
    labeled: f64,
    unlabeled: f64,
    count: u64,
}

/// Runs iterations until `max_iterations` or early stopping.
pub fn run(session: &mut TrainSession, inputs: &TrainInputs<'_>, cfg: &TrainConfig, observer: &mut dyn TrainObserver) -> Result<()> {
    cfg.validate()?;
    let classes = session.model.num_classes();
    check_inputs(inputs, classes)?;
    let use_unlabeled = !inputs.unlabeled.is_empty() && !matches!(inputs.soft_labels, SoftLabels::None);
    let start = session.state.iteration;
    let mut labeled_sampler =
        EpochSampler::starting_at(inputs.labeled.len(), derive_seed(cfg.seed, LABELED_SAMPLER_STREAM), start * cfg.labeled_batch as u64);
    let mut unlabeled_sampler = EpochSampler::starting_at(
        inputs.unlabeled.len(),
        derive_seed(cfg.seed, UNLABELED_SAMPLER_STREAM),
        if use_unlabeled { start * cfg.unlabeled_batch as u64 } else { 0 },
    );
    let mut running = Running::default();
    while !session.is_finished(cfg) {
        let iteration = session.state.iteration;
        let lr = cfg.learning_rate(iteration);

        let batch = labeled_sampler.next_batch(cfg.labeled_batch);
        let mut images = Vec::with_capacity(batch.len());
        let mut labels = Vec::with_capacity(batch.len());
        for (slot, &idx) in batch.iter().enumerate() {
            let s = &inputs.labeled.samples[idx];
            let seed = derive_seed(derive_seed(cfg.seed, AUGMENT_STREAM), (iteration << 16) | slot as u64);
            let (img, lab) = augment(&s.image, &s.labels, inputs.augmentation, seed)?;
            images.push(img);
            labels.push(lab);
        }
        let x = Tensor::from_images(&images)?;
        let (logits, cache) = session.model.forward_train(&x, Some(training_dropout_seed(cfg.seed, iteration, 0)))?;
        let scores = scores_from_logits(&logits);
        let (l_lab, dprobs) = labeled_loss_grad(&scores, &labels, &inputs.class_weights)?;
        if !l_lab.is_finite() {
            return Err(Error::Diverged { iteration, what: "labeled loss".into() });
        }
        session.model.backward(cache, &logit_gradient(&scores, &dprobs, &logits, 1.0));
        session.state.labeled_batches += 1;

        let mut l_unlab = 0.0;
        if use_unlabeled {
            let batch = unlabeled_sampler.next_batch(cfg.unlabeled_batch);
            let records: Vec<SoftLabelRecord> = match inputs.soft_labels {
                SoftLabels::Cached(all) => batch.iter().map(|&i| all[i].clone()).collect(),
                SoftLabels::Online { teacher, teacher_id, mc } => {
                    let items: Vec<UnlabeledSample> = batch.iter().map(|&i| inputs.unlabeled.samples[i].clone()).collect();
                    generate_soft_labels(teacher, teacher_id, &items, &mc)?
                }
                SoftLabels::None => unreachable!("checked above"),
            };
            let x = Tensor::from_images(batch.iter().map(|&i| &inputs.unlabeled.samples[i].image))?;
            let (logits, cache) = session.model.forward_train(&x, Some(training_dropout_seed(cfg.seed, iteration, 1)))?;
            let scores = scores_from_logits(&logits);
            let (loss, dprobs) = unlabeled_loss_grad(&scores, &records, inputs.loss)?;
            l_unlab = loss * inputs.loss.unlabeled_weight;
            if !l_unlab.is_finite() {
                return Err(Error::Diverged { iteration, what: "unlabeled loss".into() });
            }
            session.model.backward(cache, &logit_gradient(&scores, &dprobs, &logits, inputs.loss.unlabeled_weight));
            session.state.unlabeled_batches += 1;
        }

        session.optimizer.step(&mut session.model, lr)?;
        let mut finite = true;
        session.model.for_each_param(&mut |p| finite &= p.value.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::Diverged { iteration, what: "a parameter".into() });
        }
        session.state.parameter_updates += 1;
        session.state.iteration += 1;
        session.state.learning_rate = lr;
        running.labeled += l_lab;
        running.unlabeled += l_unlab;
        running.count += 1;

        let done = session.state.iteration;
        if done % cfg.validation_interval == 0 || done == cfg.max_iterations {
            let validation = validation_loss(&session.model, inputs.validation)?;
            if !validation.is_finite() {
                return Err(Error::Diverged { iteration, what: "validation loss".into() });
            }
            let n = running.count.max(1) as f64;
            let row = MetricsRow {
                iteration: done,
                learning_rate: lr,
                labeled_loss: running.labeled / n,
                unlabeled_loss: running.unlabeled / n,
                total_loss: (running.labeled + running.unlabeled) / n,
                validation_loss: validation,
                elapsed_seconds: observer.elapsed_seconds(),
            };
            running = Running::default();
            let state = &mut session.state;
            let improved = validation < state.best_validation_loss - cfg.min_improvement || state.best_validation_loss.is_infinite();
            if improved {
                state.best_validation_loss = validation;
                state.best_iteration = done;
                state.checks_without_improvement = 0;
                session.best_model = session.model.clone();
            } else {
                state.checks_without_improvement += 1;
                if cfg.early_stop_patience > 0 && state.checks_without_improvement >= cfg.early_stop_patience {
                    state.stopped_early = true;
                }
            }
            state.history.push(row.clone());
            observer.on_validation(session, &row, improved)?;
        }
    }
    Ok(())
}

/// Trains a model on labeled data only, with class-weighted cross-entropy.
/// Returns the best-validation model and the final state.
pub fn train_teacher(
    labeled: &LabeledDataset,
    validation: &LabeledDataset,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    loss: &LossConfig,
    augmentation: &AugmentationConfig,
    observer: &mut dyn TrainObserver,
) -> Result<(SegmentationModel, TrainState)> {
    if labeled.is_empty() {
        bail!(EmptyDataset, "labeled training set is empty");
    }
    let class_weights = resolve_class_weights(loss, labeled, model_cfg.num_classes)?;
    let unlabeled = UnlabeledDataset::default();
    let inputs = TrainInputs { labeled, validation, unlabeled: &unlabeled, soft_labels: SoftLabels::None, class_weights, loss, augmentation };
    let mut session = TrainSession::new(model_cfg, train_cfg)?;
    run(&mut session, &inputs, train_cfg, observer)?;
    Ok((session.best_model, session.state))
}

/// How the student obtains soft labels from the teacher.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SoftLabelMode {
    Online,
    Precomputed,
}

#[allow(clippy::too_many_arguments)]
pub fn train_student(
    teacher: &SegmentationModel,
    teacher_id: &str,
    labeled: &LabeledDataset,
    validation: &LabeledDataset,
    unlabeled: &UnlabeledDataset,
    model_cfg: &ModelConfig,
    mc: &McConfig,
    train_cfg: &TrainConfig,
    loss: &LossConfig,
    augmentation: &AugmentationConfig,
    mode: SoftLabelMode,
    observer: &mut dyn TrainObserver,
) -> Result<(SegmentationModel, TrainState)> {
    if labeled.is_empty() {
        bail!(EmptyDataset, "labeled training set is empty");
    }
    let class_weights = resolve_class_weights(loss, labeled, model_cfg.num_classes)?;
    let cached: Vec<SoftLabelRecord>;
    let soft_labels = match mode {
        SoftLabelMode::Online => SoftLabels::Online { teacher, teacher_id, mc: *mc },
        SoftLabelMode::Precomputed => {
            cached = generate_soft_labels(teacher, teacher_id, &unlabeled.samples, mc)?;
            SoftLabels::Cached(&cached)
        }
    };
    let inputs = TrainInputs { labeled, validation, unlabeled, soft_labels, class_weights, loss, augmentation };
    let mut session = TrainSession::new(model_cfg, train_cfg)?;
    run(&mut session, &inputs, train_cfg, observer)?;
    Ok((session.best_model, session.state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic_dataset, SynthConfig, SyntheticSplits};
    use crate::nn::Slot;

    fn tiny_model() -> ModelConfig {
        ModelConfig { num_classes: 3, units_per_block: 1, filters_per_unit: 3, num_encoder_blocks: 1, dropout_rate: 0.2, input_channels: 1 }
    }

    fn tiny_data() -> SyntheticSplits {
        let cfg = SynthConfig {
            height: 16,
            width: 16,
            num_classes: 3,
            layer_intensity_means: vec![0.1, 0.8, 0.45],
            noise_std: 0.05,
            ..SynthConfig::default()
        };
        generate_synthetic_dataset(&cfg, 2, 3, 2, 4, 2).unwrap()
    }

    fn tiny_train(iterations: u64) -> TrainConfig {
        TrainConfig { max_iterations: iterations, initial_learning_rate: 1e-2, validation_interval: 2, seed: 5, ..TrainConfig::default() }
    }

    fn loss_cfg() -> LossConfig {
        LossConfig { min_class_mass: 1.0, ..LossConfig::default() }
    }

    fn mc() -> McConfig {
        McConfig { num_passes: 3, ..McConfig::default() }
    }

    fn teacher(d: &SyntheticSplits) -> SegmentationModel {
        train_teacher(&d.train, &d.validation, &tiny_model(), &tiny_train(4), &loss_cfg(), &AugmentationConfig::default(), &mut Silent).unwrap().0
    }

    #[test]
    fn step_schedule() {
        let cfg = TrainConfig { initial_learning_rate: 1e-3, lr_decay_factor: 0.1, lr_decay_at_iteration: 10, ..TrainConfig::default() };
        assert_eq!(cfg.learning_rate(0), 1e-3);
        assert_eq!(cfg.learning_rate(9), 1e-3);
        assert!((cfg.learning_rate(10) - 1e-4).abs() < 1e-18);
        assert!((cfg.learning_rate(100_000) - 1e-4).abs() < 1e-18);
    }

    #[test]
    fn rejects_bad_config() {
        for cfg in [
            TrainConfig { max_iterations: 0, ..TrainConfig::default() },
            TrainConfig { initial_learning_rate: -1.0, ..TrainConfig::default() },
            TrainConfig { lr_decay_factor: 0.0, ..TrainConfig::default() },
            TrainConfig { labeled_batch: 0, ..TrainConfig::default() },
        ] {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn uniform_output_has_log_c_validation_loss() {
        let d = tiny_data();
        let mut model = SegmentationModel::new(tiny_model(), 1).unwrap();
        model.visit(&mut |name, slot| {
            if let (true, Slot::Param(p)) = (name.starts_with("head."), slot) {
                p.value.iter_mut().for_each(|v| *v = 0.0);
            }
        });
        let v = validation_loss(&model, &d.validation).unwrap();
        assert!((v - libm::log(3.0)).abs() < 1e-9, "{v}");
        let empty = LabeledDataset::default();
        assert!(matches!(validation_loss(&model, &empty), Err(Error::EmptyDataset(_))));
    }

    #[test]
    fn counters_match_iterations() {
        let d = tiny_data();
        let (_, state) =
            train_teacher(&d.train, &d.validation, &tiny_model(), &tiny_train(5), &loss_cfg(), &AugmentationConfig::default(), &mut Silent)
                .unwrap();
        assert_eq!((state.iteration, state.labeled_batches, state.unlabeled_batches, state.parameter_updates), (5, 5, 0, 5));
        assert_eq!(state.history.iter().map(|r| r.iteration).collect::<Vec<_>>(), vec![2, 4, 5]);

        let t = teacher(&d);
        let (_, state) = train_student(
            &t,
            "t",
            &d.train,
            &d.validation,
            &d.unlabeled,
            &tiny_model(),
            &mc(),
            &tiny_train(3),
            &loss_cfg(),
            &AugmentationConfig::default(),
            SoftLabelMode::Online,
            &mut Silent,
        )
        .unwrap();
        assert_eq!((state.labeled_batches, state.unlabeled_batches, state.parameter_updates), (3, 3, 3));
    }

    #[test]
    fn runs_are_reproducible_and_modes_agree() {
        let d = tiny_data();
        let t = teacher(&d);
        let student = |mode| {
            train_student(
                &t,
                "t",
                &d.train,
                &d.validation,
                &d.unlabeled,
                &tiny_model(),
                &mc(),
                &tiny_train(4),
                &loss_cfg(),
                &AugmentationConfig::default(),
                mode,
                &mut Silent,
            )
            .unwrap()
        };
        let (a, sa) = student(SoftLabelMode::Online);
        let (b, sb) = student(SoftLabelMode::Online);
        let (c, _) = student(SoftLabelMode::Precomputed);
        assert_eq!(a, b);
        assert_eq!(sa, sb);
        assert_eq!(a, c);
    }

    #[test]
    fn student_without_unlabeled_data_matches_teacher_run() {
        let d = tiny_data();
        let t = teacher(&d);
        let (s, state) = train_student(
            &t,
            "t",
            &d.train,
            &d.validation,
            &UnlabeledDataset::default(),
            &tiny_model(),
            &mc(),
            &tiny_train(4),
            &loss_cfg(),
            &AugmentationConfig::default(),
            SoftLabelMode::Online,
            &mut Silent,
        )
        .unwrap();
        assert_eq!(state.unlabeled_batches, 0);
        assert_eq!(s, t);
    }

    #[test]
    fn resume_continues_bit_exactly() {
        let d = tiny_data();
        let weights = resolve_class_weights(&loss_cfg(), &d.train, 3).unwrap();
        let t = teacher(&d);
        let inputs = TrainInputs {
            labeled: &d.train,
            validation: &d.validation,
            unlabeled: &d.unlabeled,
            soft_labels: SoftLabels::Online { teacher: &t, teacher_id: "t", mc: mc() },
            class_weights: weights,
            loss: &loss_cfg(),
            augmentation: &AugmentationConfig::default(),
        };
        let full_cfg = tiny_train(6);
        let mut full = TrainSession::new(&tiny_model(), &full_cfg).unwrap();
        run(&mut full, &inputs, &full_cfg, &mut Silent).unwrap();

        let mut part = TrainSession::new(&tiny_model(), &full_cfg).unwrap();
        run(&mut part, &inputs, &tiny_train(4), &mut Silent).unwrap();
        let mut resumed = part.clone();
        run(&mut resumed, &inputs, &full_cfg, &mut Silent).unwrap();
        assert_eq!(resumed, full);
    }

    #[test]
    fn overfits_a_tiny_set() {
        let d = tiny_data();
        let cfg = TrainConfig { max_iterations: 150, validation_interval: 50, early_stop_patience: 0, ..tiny_train(0) };
        let (_, state) = train_teacher(&d.train, &d.validation, &tiny_model(), &cfg, &loss_cfg(), &AugmentationConfig::none(), &mut Silent).unwrap();
        let first = state.history.first().unwrap();
        let last = state.history.last().unwrap();
        assert!(last.labeled_loss < 0.7 * first.labeled_loss, "{:?}", state.history);
        assert!(state.best_validation_loss < libm::log(3.0));
    }

    #[test]
    fn stops_when_validation_stalls() {
        let d = tiny_data();
        let cfg = TrainConfig { initial_learning_rate: 1e-12, early_stop_patience: 2, min_improvement: 1e-3, ..tiny_train(100) };
        let (_, state) = train_teacher(&d.train, &d.validation, &tiny_model(), &cfg, &loss_cfg(), &AugmentationConfig::none(), &mut Silent).unwrap();
        assert!(state.stopped_early);
        assert_eq!(state.iteration, 6);
        assert_eq!(state.best_iteration, 2);
    }

    #[test]
    fn reports_divergence() {
        let d = tiny_data();
        let cfg = TrainConfig { initial_learning_rate: 1e39, ..tiny_train(50) };
        let err = train_teacher(&d.train, &d.validation, &tiny_model(), &cfg, &loss_cfg(), &AugmentationConfig::none(), &mut Silent).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }), "{err:?}");
    }

    #[test]
    fn empty_labeled_set_is_rejected() {
        let d = tiny_data();
        let err = train_teacher(
            &LabeledDataset::default(),
            &d.validation,
            &tiny_model(),
            &tiny_train(2),
            &loss_cfg(),
            &AugmentationConfig::none(),
            &mut Silent,
        )
        .unwrap_err();
        assert!(matches!(err, Error::EmptyDataset(_)));
    }
}
