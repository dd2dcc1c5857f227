//! Run configuration: every tunable of a command in one TOML document.
//!
//! Resolution order is command-line flags, then the config file, then
//! defaults. The top-level `seed` drives every random stream: on resolution
//! it is copied into the generator, both training configs and the MC
//! configuration, and the resolved document is written next to the outputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use segssl_core::augment::AugmentationConfig;
use segssl_core::data::SynthConfig;
use segssl_core::losses::LossConfig;
use segssl_core::training::{SoftLabelMode, TrainConfig};
use segssl_core::{McConfig, ModelConfig};

use crate::error::{format_error, Error, IoContext, Result};

pub const RESOLVED_CONFIG_FILE: &str = "run_config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSizes {
    pub n_labeled: usize,
    pub n_validation: usize,
    pub n_unlabeled: usize,
    pub n_test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        Self { n_labeled: 20, n_validation: 10, n_unlabeled: 200, n_test: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Pixels with confidence above this form the confident subset.
    pub confidence_threshold: f64,
    /// Class whose precision-recall curve is exported.
    pub pr_class: usize,
    pub pr_thresholds: usize,
    /// Number of test images rendered as overlay panels.
    pub overlays: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { confidence_threshold: 0.5, pr_class: 1, pr_thresholds: 101, overlays: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub model: ModelConfig,
    pub mc: McConfig,
    pub loss: LossConfig,
    pub teacher: TrainConfig,
    pub student: TrainConfig,
    pub soft_labels: SoftLabelMode,
    pub augmentation: AugmentationConfig,
    pub synth: SynthConfig,
    pub splits: SplitSizes,
    pub evaluation: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let synth = SynthConfig::default();
        Self {
            seed: 0,
            out: PathBuf::from("runs"),
            model: ModelConfig { num_classes: synth.num_classes, ..ModelConfig::default() },
            mc: McConfig::default(),
            loss: LossConfig::default(),
            teacher: TrainConfig::default(),
            student: TrainConfig::default(),
            soft_labels: SoftLabelMode::Online,
            augmentation: AugmentationConfig::default(),
            synth,
            splits: SplitSizes::default(),
            evaluation: EvalConfig::default(),
        }
    }
}

/// Values given on the command line; `None` leaves the file or default.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub alpha: Option<f64>,
    pub num_passes: Option<usize>,
    pub out: Option<PathBuf>,
    /// Caps both training budgets (short runs).
    pub iterations: Option<u64>,
}

impl RunConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| format_error(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path).at(path)?, path)
    }

    pub fn resolve(file: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match file {
            Some(path) => Self::load(path)?,
            None => Self::default(),
        };
        if let Some(seed) = overrides.seed {
            cfg.seed = seed;
        }
        if let Some(alpha) = overrides.alpha {
            cfg.mc.alpha = alpha;
        }
        if let Some(k) = overrides.num_passes {
            cfg.mc.num_passes = k;
        }
        if let Some(out) = &overrides.out {
            cfg.out = out.clone();
        }
        if let Some(n) = overrides.iterations {
            cfg.teacher.max_iterations = n;
            cfg.student.max_iterations = n;
        }
        cfg.synth.seed = cfg.seed;
        cfg.teacher.seed = cfg.seed;
        cfg.student.seed = cfg.seed;
        cfg.mc.base_seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seed > i64::MAX as u64 {
            return Err(Error::Invalid(format!("seed {} does not fit in a signed 64-bit integer", self.seed)));
        }
        self.model.validate()?;
        self.mc.validate()?;
        self.loss.validate(self.model.num_classes)?;
        self.teacher.validate()?;
        self.student.validate()?;
        self.augmentation.validate()?;
        let e = &self.evaluation;
        if !(0.0..=1.0).contains(&e.confidence_threshold) || e.pr_class >= self.model.num_classes || e.pr_thresholds < 2 {
            return Err(Error::Invalid("evaluation: threshold must be in [0, 1], pr_class < num_classes, pr_thresholds >= 2".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Writes the resolved configuration as `dir/run_config.toml`.
    pub fn record(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).at(dir)?;
        let path = dir.join(RESOLVED_CONFIG_FILE);
        std::fs::write(&path, self.to_toml()).at(&path)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_override_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "seed = 5\n[mc]\nalpha = 1.0\nnum_passes = 4\n[teacher]\nmax_iterations = 7\n").unwrap();
        let from_file = RunConfig::resolve(Some(&path), &Overrides::default()).unwrap();
        assert_eq!((from_file.seed, from_file.mc.alpha, from_file.mc.num_passes), (5, 1.0, 4));
        assert_eq!(from_file.teacher.max_iterations, 7);
        assert_eq!(from_file.student.max_iterations, TrainConfig::default().max_iterations);
        assert_eq!((from_file.teacher.seed, from_file.mc.base_seed, from_file.synth.seed), (5, 5, 5));

        let flags = Overrides { seed: Some(9), alpha: Some(0.0), num_passes: None, out: Some("o".into()), iterations: None };
        let both = RunConfig::resolve(Some(&path), &flags).unwrap();
        assert_eq!((both.seed, both.mc.alpha, both.mc.num_passes, both.out.clone()), (9, 0.0, 4, PathBuf::from("o")));

        let recorded = both.record(dir.path()).unwrap();
        assert_eq!(RunConfig::resolve(Some(&recorded), &Overrides::default()).unwrap(), both);
    }

    #[test]
    fn rejects_bad_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "[mc]\nalpha = -1.0\n").unwrap();
        assert!(RunConfig::resolve(Some(&path), &Overrides::default()).is_err());
        std::fs::write(&path, "unknown_key = 1\n").unwrap();
        assert!(RunConfig::resolve(Some(&path), &Overrides::default()).is_err());
        assert!(RunConfig::resolve(None, &Overrides { seed: Some(u64::MAX), ..Overrides::default() }).is_err());
    }
}
