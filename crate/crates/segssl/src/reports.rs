//! CSV reports and the training observer that writes metrics and
//! checkpoints as a run progresses.

use std::path::{Path, PathBuf};
use std::time::Instant;

use segssl_core::eval::{DiceReport, PrCurve};
use segssl_core::training::{MetricsRow, TrainObserver, TrainSession};

use crate::checkpoint;
use crate::error::{format_error, Error, IoContext, Result};

pub const METRICS_FILE: &str = "metrics.csv";
pub const BEST_CHECKPOINT: &str = "best.usls";
pub const LAST_CHECKPOINT: &str = "last.usls";

const METRICS_HEADER: [&str; 7] =
    ["iteration", "learning_rate", "labeled_loss", "unlabeled_loss", "total_loss", "validation_loss", "elapsed_seconds"];

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).at(parent)?;
    }
    csv::Writer::from_path(path).map_err(|e| format_error(path, e))
}

fn finish(mut w: csv::Writer<std::fs::File>, path: &Path) -> Result<()> {
    w.flush().at(path)
}

/// Floats are written with Rust's shortest round-trip formatting.
pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let err = |e| format_error(path, e);
    w.write_record(METRICS_HEADER).map_err(err)?;
    for r in rows {
        w.write_record([
            r.iteration.to_string(),
            r.learning_rate.to_string(),
            r.labeled_loss.to_string(),
            r.unlabeled_loss.to_string(),
            r.total_loss.to_string(),
            r.validation_loss.to_string(),
            format!("{:.3}", r.elapsed_seconds),
        ])
        .map_err(err)?;
    }
    finish(w, path)
}

/// Reads any of the report CSVs back as a header and string rows.
pub fn read_csv_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| format_error(path, e))?;
    let header = r.headers().map_err(|e| format_error(path, e))?.iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|row| row.map(|row| row.iter().map(String::from).collect()).map_err(|e| format_error(path, e)))
        .collect::<Result<_>>()?;
    Ok((header, rows))
}

/// Observer that keeps `dir/metrics.csv` current and checkpoints after every
/// validation check: `best.usls` holds the best model so far, `last.usls`
/// the full session for resuming.
pub struct RunRecorder {
    dir: PathBuf,
    started: Instant,
    elapsed_before: f64,
    quiet: bool,
}

impl RunRecorder {
    /// `elapsed_before` is the wall time already spent in a resumed run.
    pub fn new(dir: &Path, elapsed_before: f64, quiet: bool) -> Result<Self> {
        std::fs::create_dir_all(dir).at(dir)?;
        Ok(Self { dir: dir.to_path_buf(), started: Instant::now(), elapsed_before, quiet })
    }

    pub fn best_path(&self) -> PathBuf {
        self.dir.join(BEST_CHECKPOINT)
    }

    pub fn last_path(&self) -> PathBuf {
        self.dir.join(LAST_CHECKPOINT)
    }

    fn record(&mut self, session: &TrainSession, row: &MetricsRow, improved: bool) -> Result<()> {
        write_metrics(&self.dir.join(METRICS_FILE), &session.state.history)?;
        if improved {
            checkpoint::save_model(&self.best_path(), &session.best_model)?;
        }
        checkpoint::save_session(&self.last_path(), session)?;
        if !self.quiet {
            eprintln!(
                "iter {:>6}  lr {:.1e}  loss {:.4} (lab {:.4}, unlab {:.4})  val {:.4}{}",
                row.iteration,
                row.learning_rate,
                row.total_loss,
                row.labeled_loss,
                row.unlabeled_loss,
                row.validation_loss,
                if improved { "  *" } else { "" }
            );
        }
        Ok(())
    }
}

impl TrainObserver for RunRecorder {
    fn elapsed_seconds(&mut self) -> f64 {
        self.elapsed_before + self.started.elapsed().as_secs_f64()
    }

    fn on_validation(&mut self, session: &TrainSession, row: &MetricsRow, improved: bool) -> segssl_core::Result<()> {
        self.record(session, row, improved).map_err(|e| segssl_core::Error::External(e.to_string()))
    }
}

/// One row per class plus a `mean` row over the foreground classes.
pub fn write_dice_report(path: &Path, report: &DiceReport) -> Result<()> {
    let mut w = csv_writer(path)?;
    let err = |e| format_error(path, e);
    w.write_record(["class", "dice_mean", "dice_std", "support", "num_images", "confident_fraction", "provenance"]).map_err(err)?;
    let fraction = report.confident_fraction.map_or(String::new(), |f| f.to_string());
    for c in 0..report.per_class_dice.len() {
        w.write_record([
            c.to_string(),
            report.per_class_dice[c].to_string(),
            report.per_class_std[c].to_string(),
            report.per_class_support[c].to_string(),
            report.num_images.to_string(),
            fraction.clone(),
            report.provenance.clone(),
        ])
        .map_err(err)?;
    }
    let support: u64 = report.per_class_support[1..].iter().sum();
    let mut provenance = report.provenance.clone();
    if report.degenerate {
        provenance.push_str("; some images kept no pixels");
    }
    w.write_record([
        "mean".to_string(),
        report.mean_dice.to_string(),
        report.mean_dice_std.to_string(),
        support.to_string(),
        report.num_images.to_string(),
        fraction,
        provenance,
    ])
    .map_err(err)?;
    finish(w, path)
}

pub fn write_pr_curve(path: &Path, curve: &PrCurve) -> Result<()> {
    let mut w = csv_writer(path)?;
    let err = |e| format_error(path, e);
    w.write_record(["threshold", "precision", "recall"]).map_err(err)?;
    for i in 0..curve.thresholds.len() {
        w.write_record([curve.thresholds[i].to_string(), curve.precision[i].to_string(), curve.recall[i].to_string()])
            .map_err(err)?;
    }
    finish(w, path)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub alpha: f64,
    pub seed: u64,
    pub validation_dice: f64,
}

/// Index of the best row: highest validation Dice, ties to the lowest alpha.
pub fn best_alpha(rows: &[SweepRow]) -> Option<usize> {
    (0..rows.len()).reduce(|best, i| {
        let (a, b) = (&rows[i], &rows[best]);
        if a.validation_dice > b.validation_dice || (a.validation_dice == b.validation_dice && a.alpha < b.alpha) {
            i
        } else {
            best
        }
    })
}

pub fn write_sweep(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let best = best_alpha(rows).ok_or_else(|| Error::Invalid("alpha sweep has no rows".into()))?;
    let mut w = csv_writer(path)?;
    let err = |e| format_error(path, e);
    w.write_record(["alpha", "seed", "validation_dice", "best"]).map_err(err)?;
    for (i, r) in rows.iter().enumerate() {
        w.write_record([r.alpha.to_string(), r.seed.to_string(), r.validation_dice.to_string(), (i == best).to_string()])
            .map_err(err)?;
    }
    finish(w, path)
}
