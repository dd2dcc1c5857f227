use std::path::{Path, PathBuf};

use segssl::checkpoint::{load_model, load_session};
use segssl::config::RunConfig;
use segssl::reports::read_csv_table;
use segssl::softlabels::load_record;

const TOY: &str = r#"
seed = 2

[model]
num_classes = 3
units_per_block = 2
filters_per_unit = 4
num_encoder_blocks = 2

[mc]
num_passes = 3

[loss]
min_class_mass = 4.0

[teacher]
max_iterations = 20
initial_learning_rate = 0.003
validation_interval = 10

[student]
max_iterations = 20
initial_learning_rate = 0.003
validation_interval = 10

[synth]
height = 16
width = 16
num_classes = 3
layer_intensity_means = [0.1, 0.8, 0.45]
noise_std = 0.05

[splits]
n_labeled = 3
n_validation = 2
n_unlabeled = 4
n_test = 2
"#;

struct Run {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
}

impl Run {
    fn new(extra: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let config = root.join("toy.toml");
        std::fs::write(&config, format!("{extra}\n{TOY}")).unwrap();
        Self { _dir: dir, root, config }
    }

    fn out(&self) -> PathBuf {
        self.root.join("out")
    }

    fn try_run(&self, args: &[&str]) -> anyhow::Result<()> {
        let out = self.out();
        let mut full = vec!["segssl", "-q", "--config", self.config.to_str().unwrap(), "--out", out.to_str().unwrap()];
        full.extend_from_slice(args);
        segssl::cli::run(full)
    }

    fn run(&self, args: &[&str]) {
        self.try_run(args).unwrap();
    }
}

fn rows(path: &Path) -> Vec<Vec<String>> {
    read_csv_table(path).unwrap().1
}

#[test]
fn synth_data_is_deterministic() {
    let run = Run::new("");
    run.run(&["synth-data"]);
    run.run(&["synth-data", "--data", run.root.join("again").to_str().unwrap()]);
    let a = std::fs::read_to_string(run.out().join("data/manifest.toml")).unwrap();
    let b = std::fs::read_to_string(run.root.join("again/manifest.toml")).unwrap();
    assert_eq!(a, b);
    for f in ["images/train-0001.png", "labels/test-0000.png", "boundaries/val-0001.csv", "images/unlabeled-0003.png"] {
        assert_eq!(std::fs::read(run.out().join("data").join(f)).unwrap(), std::fs::read(run.root.join("again").join(f)).unwrap(), "{f}");
    }
    assert!(a.contains("split = \"unlabeled\""));
    assert!(run.out().join("data/run_config.toml").exists());
}

#[test]
fn synth_data_rejects_zero_labeled() {
    let run = Run::new("");
    std::fs::write(&run.config, TOY.replace("n_labeled = 3", "n_labeled = 0")).unwrap();
    assert!(run.try_run(&["synth-data"]).is_err());
}

#[test]
fn pipeline_writes_checkpoints_reports_and_configs() {
    let run = Run::new("");
    run.run(&["synth-data"]);
    run.run(&["train-teacher"]);
    run.run(&["train-student"]);
    run.run(&["evaluate"]);
    let out = run.out();
    for stage in ["teacher", "student"] {
        for f in ["best.usls", "last.usls", "metrics.csv", "run_config.toml"] {
            assert!(out.join(stage).join(f).exists(), "{stage}/{f}");
        }
        assert_eq!(rows(&out.join(stage).join("metrics.csv")).len(), 2);
    }
    let student = load_model(&out.join("student/best.usls")).unwrap();
    assert_eq!(student.model.num_classes(), 3);
    let dice = rows(&out.join("eval/dice.csv"));
    assert_eq!(dice.len(), 4);
    assert_eq!(dice[3][0], "mean");
    assert!(!rows(&out.join("eval/dice_confident.csv"))[0][5].is_empty());
    assert_eq!(rows(&out.join("eval/pr.csv")).len(), 101);
    assert!(out.join("eval/pr.png").exists());
    assert!(out.join("eval/overlays/test-0000.png").exists());
}

#[test]
fn alpha_zero_gives_unit_confidence_soft_labels() {
    let run = Run::new("soft_labels = \"precomputed\"");
    run.run(&["synth-data"]);
    run.run(&["train-teacher"]);
    run.run(&["--alpha", "0", "train-student"]);
    let recorded = RunConfig::load(&run.out().join("student/run_config.toml")).unwrap();
    assert_eq!(recorded.mc.alpha, 0.0);
    let teacher = load_model(&run.out().join("teacher/best.usls")).unwrap();
    for i in 0..4 {
        let r = load_record(&run.out().join("student/soft_labels"), &format!("unlabeled-{i:04}")).unwrap();
        assert!(r.confidence.0.as_slice().iter().all(|&w| w == 1.0));
        assert!(r.uncertainty.0.as_slice().iter().any(|&u| u > 0.0));
        assert_eq!(r.teacher_checkpoint_id, teacher.id);
    }
}

#[test]
fn precomputed_and_online_students_match() {
    let online = Run::new("");
    online.run(&["synth-data"]);
    online.run(&["train-teacher"]);
    online.run(&["train-student"]);
    let pre = Run::new("soft_labels = \"precomputed\"");
    pre.run(&["synth-data"]);
    pre.run(&["train-teacher"]);
    pre.run(&["train-student"]);
    let a = load_model(&online.out().join("student/best.usls")).unwrap();
    let b = load_model(&pre.out().join("student/best.usls")).unwrap();
    assert_eq!(a.id, b.id);
}

#[test]
fn resume_continues_the_iteration_count() {
    let run = Run::new("");
    run.run(&["synth-data"]);
    run.run(&["--iterations", "10", "train-teacher"]);
    assert_eq!(load_session(&run.out().join("teacher/last.usls")).unwrap().state.iteration, 10);
    run.run(&["train-teacher", "--resume"]);
    let resumed = load_session(&run.out().join("teacher/last.usls")).unwrap();
    assert_eq!(resumed.state.iteration, 20);
    assert_eq!(resumed.state.history.len(), 2);

    let straight = Run::new("");
    straight.run(&["synth-data"]);
    straight.run(&["train-teacher"]);
    let a = load_model(&run.out().join("teacher/best.usls")).unwrap();
    let b = load_model(&straight.out().join("teacher/best.usls")).unwrap();
    assert_eq!(a.id, b.id);
}

#[test]
fn resume_without_a_session_fails() {
    let run = Run::new("");
    run.run(&["synth-data"]);
    assert!(run.try_run(&["train-teacher", "--resume"]).is_err());
}

#[test]
fn converged_toy_run_segments_its_training_set() {
    let run = Run::new("");
    run.run(&["synth-data"]);
    run.run(&["--iterations", "400", "train-teacher"]);
    let teacher = run.out().join("teacher/best.usls");
    run.run(&["evaluate", "--split", "train", "--checkpoint", teacher.to_str().unwrap()]);
    let dice = rows(&run.out().join("eval/dice.csv"));
    let mean: f64 = dice[3][1].parse().unwrap();
    assert!(mean > 0.9, "training-set Dice {mean}");
}

#[test]
fn evaluate_with_teacher_confidence_names_its_source() {
    let run = Run::new("");
    run.run(&["synth-data"]);
    run.run(&["train-teacher"]);
    let teacher = run.out().join("teacher/best.usls");
    run.run(&["evaluate", "--checkpoint", teacher.to_str().unwrap(), "--confidence", "teacher"]);
    let conf = rows(&run.out().join("eval/dice_confident.csv"));
    assert!(conf[0][6].contains("provided confidence"), "{}", conf[0][6]);
}

#[test]
fn checkpoint_and_data_mismatch_is_an_error_without_output() {
    let run = Run::new("");
    run.run(&["synth-data"]);
    run.run(&["train-teacher"]);
    let teacher = run.out().join("teacher/best.usls");
    // Same images, but the dataset now claims four classes.
    let manifest = run.out().join("data/manifest.toml");
    let text = std::fs::read_to_string(&manifest).unwrap().replacen("num_classes = 3", "num_classes = 4", 1);
    std::fs::write(&manifest, text).unwrap();
    assert!(run.try_run(&["evaluate", "--checkpoint", teacher.to_str().unwrap()]).is_err());
    assert!(!run.out().join("eval").exists());
}

#[test]
fn infer_writes_one_set_per_image_and_checks_shapes_first() {
    let run = Run::new("");
    run.run(&["synth-data"]);
    run.run(&["train-teacher"]);
    let teacher = run.out().join("teacher/best.usls");
    let images: Vec<String> =
        ["test-0000", "unlabeled-0002"].iter().map(|s| run.out().join(format!("data/images/{s}.png")).to_str().unwrap().to_string()).collect();

    let odd = run.root.join("odd.png");
    segssl::raster::write_intensity(&odd, &segssl_core::Grid::filled(18, 16, 0.5f32)).unwrap();
    let bad = run.try_run(&["infer", "--checkpoint", teacher.to_str().unwrap(), "--image", &images[0], odd.to_str().unwrap()]);
    assert!(bad.is_err());
    assert!(!run.out().join("infer").exists());

    run.run(&["infer", "--checkpoint", teacher.to_str().unwrap(), "--image", &images[0], &images[1]]);
    for s in ["test-0000", "unlabeled-0002"] {
        let labels = segssl::raster::read_labels(&run.out().join(format!("infer/{s}_labels.png")), 3).unwrap();
        assert_eq!(labels.shape(), (16, 16));
        assert!(run.out().join(format!("infer/{s}_overlay.png")).exists());
    }
}

#[test]
fn train_student_without_teacher_fails() {
    let run = Run::new("");
    run.run(&["synth-data"]);
    assert!(run.try_run(&["train-student"]).is_err());
}

#[test]
fn sweep_alpha_rows_and_best() {
    let run = Run::new("");
    run.run(&["synth-data"]);
    run.run(&["train-teacher"]);
    run.run(&["--iterations", "10", "sweep-alpha", "--alphas", "0"]);
    let single = rows(&run.out().join("sweep/sweep.csv"));
    assert_eq!(single.len(), 1);
    assert_eq!((single[0][0].as_str(), single[0][3].as_str()), ("0", "true"));

    run.run(&["--iterations", "10", "sweep-alpha", "--alphas", "0,1,2,4"]);
    let four = rows(&run.out().join("sweep/sweep.csv"));
    assert_eq!(four.iter().map(|r| r[0].as_str()).collect::<Vec<_>>(), ["0", "1", "2", "4"]);
    assert!(four.iter().all(|r| r[1] == "2"));
    assert_eq!(four.iter().filter(|r| r[3] == "true").count(), 1);
    let best = four.iter().find(|r| r[3] == "true").unwrap();
    let best_dice: f64 = best[2].parse().unwrap();
    let best_alpha: f64 = best[0].parse().unwrap();
    for r in &four {
        let (a, d): (f64, f64) = (r[0].parse().unwrap(), r[2].parse().unwrap());
        assert!(d < best_dice || (d == best_dice && a >= best_alpha));
    }
    assert!(run.out().join("sweep/alpha_4/best.usls").exists());
}
