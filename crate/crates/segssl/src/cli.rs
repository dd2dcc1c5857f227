//! The `segssl` command line.
//!
//! Output layout under `--out` (default `runs/`):
//!
//! ```text
//! data/                 synth-data (manifest.toml, images/, labels/, boundaries/)
//! teacher/  student/    best.usls, last.usls, metrics.csv, run_config.toml
//! student/soft_labels/  teacher outputs when soft_labels = "precomputed"
//! eval/                 dice.csv, dice_confident.csv, pr.csv, pr.png, overlays/
//! infer/                <image>_labels.png, <image>_overlay.png
//! sweep/                sweep.csv, alpha_<a>/
//! ```

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use segssl_core::eval::{
    confident_subset_report, evaluate_model, precision_recall_curve, predict_labels, ConfidenceSource,
};
use segssl_core::inference::{entropy_map, generate_soft_labels, mc_mean_prediction};
use segssl_core::training::{self, resolve_class_weights, SoftLabelMode, SoftLabels, TrainConfig, TrainInputs, TrainSession};
use segssl_core::data::{LabeledDataset, UnlabeledDataset};
use segssl_core::{Grid, ModelConfig, SegmentationModel, Tensor, UncertaintyMap};

use crate::checkpoint::{self, load_model, load_session};
use crate::config::{Overrides, RunConfig};
use crate::dataset::{self, Dataset};
use crate::reports::{self, RunRecorder, SweepRow, BEST_CHECKPOINT, LAST_CHECKPOINT};
use crate::{raster, render, softlabels};

#[derive(Debug, Parser)]
#[command(name = "segssl", version, about = "Student-teacher semi-supervised segmentation with MC-dropout confidence")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration (TOML); flags below override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Confidence sharpness; 0 gives plain pseudo-labelling.
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// Monte Carlo dropout passes per image.
    #[arg(long = "num-passes", global = true)]
    pub num_passes: Option<usize>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides the teacher and student iteration budgets.
    #[arg(long, global = true)]
    pub iterations: Option<u64>,
    /// Suppress per-validation progress lines.
    #[arg(long, short, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic layered-image dataset.
    SynthData {
        /// Dataset directory [default: <out>/data].
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train the teacher on labeled images.
    TrainTeacher {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Continue from <out>/teacher/last.usls.
        #[arg(long)]
        resume: bool,
    },
    /// Train the student with teacher soft labels on unlabeled images.
    TrainStudent {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Teacher checkpoint [default: <out>/teacher/best.usls].
        #[arg(long)]
        teacher: Option<PathBuf>,
        #[arg(long)]
        resume: bool,
    },
    /// Dice, confident-subset Dice, precision-recall and overlays.
    Evaluate {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Model to evaluate [default: <out>/student/best.usls].
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Labeled split: train, val or test.
        #[arg(long, default_value = "test")]
        split: String,
        /// Whose MC-dropout confidence gates the confident subset.
        #[arg(long, value_enum, default_value_t = ConfidenceArg::Model)]
        confidence: ConfidenceArg,
        /// Teacher checkpoint for `--confidence teacher` [default: <out>/teacher/best.usls].
        #[arg(long)]
        teacher: Option<PathBuf>,
    },
    /// Label maps and uncertainty overlays for individual images.
    Infer {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long = "image", required = true, num_args = 1..)]
        images: Vec<PathBuf>,
    },
    /// Train one student per alpha and report validation Dice.
    SweepAlpha {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        teacher: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
        alphas: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ConfidenceArg {
    /// The evaluated model's own MC-dropout passes.
    Model,
    /// The teacher's MC-dropout passes on the evaluated images.
    Teacher,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> anyhow::Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    execute(Cli::try_parse_from(args)?)
}

pub fn execute(cli: Cli) -> anyhow::Result<()> {
    let c = &cli.common;
    let overrides =
        Overrides { seed: c.seed, alpha: c.alpha, num_passes: c.num_passes, out: c.out.clone(), iterations: c.iterations };
    let cfg = RunConfig::resolve(c.config.as_deref(), &overrides).context("resolving configuration")?;
    let quiet = c.quiet;
    let data_dir = |d: &Option<PathBuf>| d.clone().unwrap_or_else(|| cfg.out.join("data"));
    let teacher_ckpt = |t: &Option<PathBuf>| t.clone().unwrap_or_else(|| cfg.out.join("teacher").join(BEST_CHECKPOINT));
    match &cli.command {
        Command::SynthData { data } => synth_data(&cfg, &data_dir(data)),
        Command::TrainTeacher { data, resume } => train_teacher(&cfg, &data_dir(data), *resume, quiet),
        Command::TrainStudent { data, teacher, resume } => {
            train_student(&cfg, &data_dir(data), &teacher_ckpt(teacher), &cfg.out.join("student"), *resume, quiet).map(|_| ())
        }
        Command::Evaluate { data, checkpoint, split, confidence, teacher } => {
            let ckpt = checkpoint.clone().unwrap_or_else(|| cfg.out.join("student").join(BEST_CHECKPOINT));
            let teacher = (*confidence == ConfidenceArg::Teacher).then(|| teacher_ckpt(teacher));
            evaluate(&cfg, &data_dir(data), &ckpt, split, teacher.as_deref())
        }
        Command::Infer { checkpoint, images } => {
            let ckpt = checkpoint.clone().unwrap_or_else(|| cfg.out.join("student").join(BEST_CHECKPOINT));
            infer(&cfg, &ckpt, images)
        }
        Command::SweepAlpha { data, teacher, alphas } => sweep_alpha(&cfg, &data_dir(data), &teacher_ckpt(teacher), alphas, quiet),
    }
}

fn synth_data(cfg: &RunConfig, dir: &Path) -> anyhow::Result<()> {
    ensure!(
        cfg.synth.num_classes == cfg.model.num_classes,
        "synth.num_classes ({}) differs from model.num_classes ({})",
        cfg.synth.num_classes,
        cfg.model.num_classes
    );
    let manifest = dataset::write_synthetic(dir, &cfg.synth, cfg.model.size_multiple(), &cfg.splits)?;
    cfg.record(dir)?;
    println!("wrote {} samples to {}", manifest.samples.len(), dir.display());
    Ok(())
}

fn load_data(cfg: &RunConfig, dir: &Path) -> anyhow::Result<Dataset> {
    let data = dataset::load(dir).with_context(|| format!("loading dataset {}", dir.display()))?;
    check_classes(data.num_classes, &cfg.model, "configured model")?;
    ensure!(!data.train.is_empty(), "dataset {} has no labeled training images", dir.display());
    ensure!(!data.validation.is_empty(), "dataset {} has no validation images", dir.display());
    let first = &data.train.samples[0].image;
    cfg.model.check_input(1, first.height(), first.width())?;
    Ok(data)
}

fn check_classes(data_classes: usize, model: &ModelConfig, what: &str) -> anyhow::Result<()> {
    ensure!(
        data_classes == model.num_classes,
        "dataset has {} classes but the {what} predicts {}",
        data_classes,
        model.num_classes
    );
    Ok(())
}

/// Runs (or resumes) a training session writing into `dir`.
fn train_into(
    dir: &Path,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    inputs: &TrainInputs<'_>,
    resume: bool,
    quiet: bool,
) -> anyhow::Result<TrainSession> {
    let mut session = if resume {
        let path = dir.join(LAST_CHECKPOINT);
        let session = load_session(&path).with_context(|| format!("resuming from {}", path.display()))?;
        ensure!(session.model.config() == model_cfg, "{} was trained with a different model configuration", path.display());
        session
    } else {
        TrainSession::new(model_cfg, train_cfg)?
    };
    let elapsed = session.state.history.last().map_or(0.0, |r| r.elapsed_seconds);
    let mut recorder = RunRecorder::new(dir, elapsed, quiet)?;
    training::run(&mut session, inputs, train_cfg, &mut recorder)?;
    Ok(session)
}

fn train_teacher(cfg: &RunConfig, data_dir: &Path, resume: bool, quiet: bool) -> anyhow::Result<()> {
    let data = load_data(cfg, data_dir)?;
    let dir = cfg.out.join("teacher");
    cfg.record(&dir)?;
    let unlabeled = UnlabeledDataset::default();
    let inputs = TrainInputs {
        labeled: &data.train,
        validation: &data.validation,
        unlabeled: &unlabeled,
        soft_labels: SoftLabels::None,
        class_weights: resolve_class_weights(&cfg.loss, &data.train, cfg.model.num_classes)?,
        loss: &cfg.loss,
        augmentation: &cfg.augmentation,
    };
    let session = train_into(&dir, &cfg.model, &cfg.teacher, &inputs, resume, quiet)?;
    report_done("teacher", &dir, &session);
    Ok(())
}

fn report_done(name: &str, dir: &Path, session: &TrainSession) {
    let s = &session.state;
    println!(
        "{name}: {} iterations{}, best validation loss {:.5} at iteration {}; checkpoint {}",
        s.iteration,
        if s.stopped_early { " (stopped early)" } else { "" },
        s.best_validation_loss,
        s.best_iteration,
        dir.join(BEST_CHECKPOINT).display()
    );
}

fn load_teacher(path: &Path, model: &ModelConfig) -> anyhow::Result<checkpoint::Checkpoint> {
    let teacher = load_model(path).with_context(|| format!("loading teacher {}", path.display()))?;
    ensure!(
        teacher.model.num_classes() == model.num_classes,
        "teacher predicts {} classes but the student is configured for {}",
        teacher.model.num_classes(),
        model.num_classes
    );
    Ok(teacher)
}

/// Trains a student into `dir` and returns its best model.
fn train_student(
    cfg: &RunConfig,
    data_dir: &Path,
    teacher_path: &Path,
    dir: &Path,
    resume: bool,
    quiet: bool,
) -> anyhow::Result<SegmentationModel> {
    let data = load_data(cfg, data_dir)?;
    let teacher = load_teacher(teacher_path, &cfg.model)?;
    cfg.record(dir)?;
    let cached;
    let soft_labels = match cfg.soft_labels {
        SoftLabelMode::Online => SoftLabels::Online { teacher: &teacher.model, teacher_id: &teacher.id, mc: cfg.mc },
        SoftLabelMode::Precomputed => {
            cached = generate_soft_labels(&teacher.model, &teacher.id, &data.unlabeled.samples, &cfg.mc)?;
            softlabels::save_records(&dir.join("soft_labels"), &cached)?;
            SoftLabels::Cached(&cached)
        }
    };
    let inputs = TrainInputs {
        labeled: &data.train,
        validation: &data.validation,
        unlabeled: &data.unlabeled,
        soft_labels,
        class_weights: resolve_class_weights(&cfg.loss, &data.train, cfg.model.num_classes)?,
        loss: &cfg.loss,
        augmentation: &cfg.augmentation,
    };
    let session = train_into(dir, &cfg.model, &cfg.student, &inputs, resume, quiet)?;
    report_done("student", dir, &session);
    Ok(session.best_model)
}

fn evaluate(cfg: &RunConfig, data_dir: &Path, ckpt: &Path, split: &str, teacher: Option<&Path>) -> anyhow::Result<()> {
    // Everything is loaded and checked before the first file is written.
    let model = load_model(ckpt).with_context(|| format!("loading {}", ckpt.display()))?.model;
    let data = dataset::load(data_dir).with_context(|| format!("loading dataset {}", data_dir.display()))?;
    check_classes(data.num_classes, model.config(), "checkpoint")?;
    let set = data.labeled_split(split)?;
    ensure!(!set.is_empty(), "split {split} is empty");
    let (h, w) = set.samples[0].image.shape();
    model.config().check_input(1, h, w).with_context(|| format!("checkpoint {} cannot segment {h}x{w} images", ckpt.display()))?;
    let e = &cfg.evaluation;
    ensure!(e.pr_class < model.num_classes(), "pr_class {} out of range", e.pr_class);
    let source = match teacher {
        None => ConfidenceSource::ModelMc(cfg.mc),
        Some(path) => {
            let t = load_teacher(path, model.config())?;
            let records = generate_soft_labels(&t.model, &t.id, &set.samples, &cfg.mc)?;
            ConfidenceSource::Provided(records.into_iter().map(|r| r.confidence).collect())
        }
    };

    let full = evaluate_model(&model, set)?;
    let confident = confident_subset_report(&model, set, &source, e.confidence_threshold)?;
    let curve = pr_curve(&model, set, e.pr_class, e.pr_thresholds)?;

    let dir = cfg.out.join("eval");
    cfg.record(&dir)?;
    reports::write_dice_report(&dir.join("dice.csv"), &full)?;
    reports::write_dice_report(&dir.join("dice_confident.csv"), &confident)?;
    reports::write_pr_curve(&dir.join("pr.csv"), &curve)?;
    render::write_pr_plot(&dir.join("pr.png"), &curve, 320)?;
    let preds = predict_labels(&model, set)?;
    for (s, pred) in set.samples.iter().zip(&preds).take(e.overlays) {
        let u = uncertainty(&model, &s.image, &cfg.mc.for_image(&s.id))?;
        render::write_overlay(&dir.join("overlays").join(format!("{}.png", s.id)), &s.image, Some(&s.labels), pred, &u, model.num_classes())?;
    }
    println!("split {split}: {} images", full.num_images);
    println!("mean Dice (foreground) {:.4} ± {:.4}", full.mean_dice, full.mean_dice_std);
    println!(
        "confident-subset Dice {:.4} ± {:.4} on {:.1}% of pixels ({})",
        confident.mean_dice,
        confident.mean_dice_std,
        100.0 * confident.confident_fraction.unwrap_or(0.0),
        confident.provenance
    );
    println!("reports in {}", dir.display());
    Ok(())
}

fn pr_curve(model: &SegmentationModel, set: &LabeledDataset, class: usize, thresholds: usize) -> anyhow::Result<segssl_core::eval::PrCurve> {
    let mut scores = Vec::new();
    let mut truth = Vec::new();
    for s in &set.samples {
        scores.extend_from_slice(model.predict(&s.image, false, 0)?.class_plane(class).as_slice());
        truth.extend(s.labels.as_slice().iter().map(|&c| c as usize == class));
    }
    Ok(precision_recall_curve(&scores, &truth, thresholds)?)
}

fn uncertainty(model: &SegmentationModel, image: &Grid<f32>, mc: &segssl_core::McConfig) -> anyhow::Result<UncertaintyMap> {
    let x = Tensor::from_images([image])?;
    Ok(entropy_map(&mc_mean_prediction(model, &x, mc)?.swap_remove(0)))
}

fn infer(cfg: &RunConfig, ckpt: &Path, images: &[PathBuf]) -> anyhow::Result<()> {
    let model = load_model(ckpt).with_context(|| format!("loading {}", ckpt.display()))?.model;
    let mut loaded = Vec::with_capacity(images.len());
    for path in images {
        let image = raster::read_intensity(path)?;
        model
            .config()
            .check_input(1, image.height(), image.width())
            .with_context(|| format!("{} does not fit checkpoint {}", path.display(), ckpt.display()))?;
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into());
        if loaded.iter().any(|(s, _)| s == &stem) {
            bail!("two inputs share the name {stem}");
        }
        loaded.push((stem, image));
    }
    let dir = cfg.out.join("infer");
    cfg.record(&dir)?;
    for (stem, image) in &loaded {
        let labels = model.predict(image, false, 0)?.argmax();
        let u = uncertainty(&model, image, &cfg.mc.for_image(stem))?;
        raster::write_labels(&dir.join(format!("{stem}_labels.png")), &labels)?;
        render::write_overlay(&dir.join(format!("{stem}_overlay.png")), image, None, &labels, &u, model.num_classes())?;
        println!("{stem}: mean uncertainty {:.4}", u.mean());
    }
    Ok(())
}

fn sweep_alpha(cfg: &RunConfig, data_dir: &Path, teacher: &Path, alphas: &[f64], quiet: bool) -> anyhow::Result<()> {
    ensure!(!alphas.is_empty(), "no alpha values given");
    for &a in alphas {
        ensure!(a.is_finite() && a >= 0.0, "alpha must be finite and non-negative, got {a}");
    }
    let data = load_data(cfg, data_dir)?;
    let root = cfg.out.join("sweep");
    cfg.record(&root)?;
    let mut rows = Vec::new();
    for &alpha in alphas {
        let mut run = cfg.clone();
        run.mc.alpha = alpha;
        let best = train_student(&run, data_dir, teacher, &root.join(format!("alpha_{alpha}")), false, quiet)?;
        let dice = evaluate_model(&best, &data.validation)?.mean_dice;
        println!("alpha {alpha}: validation Dice {dice:.4}");
        rows.push(SweepRow { alpha, seed: run.seed, validation_dice: dice });
    }
    reports::write_sweep(&root.join("sweep.csv"), &rows)?;
    if let Some(i) = reports::best_alpha(&rows) {
        println!("best alpha {} (validation Dice {:.4})", rows[i].alpha, rows[i].validation_dice);
    }
    Ok(())
}
