//! Datasets on disk: a TOML manifest next to image, label and boundary files.
//!
//! ```toml
//! num_classes = 4
//!
//! [generator]            # present for synthetic datasets
//! height = 64
//! ...
//!
//! [[samples]]
//! id = "train-0000"
//! split = "train"        # train | val | unlabeled | test
//! image = "images/train-0000.png"
//! labels = "labels/train-0000.png"            # optional
//! boundaries = "boundaries/train-0000.csv"    # optional
//! ```
//!
//! Paths are relative to the manifest's directory. Labeled splits need a
//! label map or a boundary file (converted with the half-open row rule);
//! when both exist the label map is used.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use segssl_core::data::{
    boundaries_to_labels, generate_sample, LabeledDataset, LabeledSample, Split, SynthConfig, UnlabeledDataset, UnlabeledSample,
};

use crate::config::SplitSizes;
use crate::error::{format_error, Error, IoContext, Result};
use crate::raster;

pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub split: String,
    pub image: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundaries: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub num_classes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<SynthConfig>,
    pub samples: Vec<ManifestEntry>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub num_classes: usize,
    pub train: LabeledDataset,
    pub validation: LabeledDataset,
    pub unlabeled: UnlabeledDataset,
    pub test: LabeledDataset,
}

impl Dataset {
    pub fn labeled_split(&self, name: &str) -> Result<&LabeledDataset> {
        match name {
            "train" => Ok(&self.train),
            "val" => Ok(&self.validation),
            "test" => Ok(&self.test),
            other => Err(Error::Invalid(format!("unknown labeled split {other:?} (expected train, val or test)"))),
        }
    }
}

/// Generates a synthetic dataset into `dir` and returns its manifest.
pub fn write_synthetic(dir: &Path, synth: &SynthConfig, size_multiple: usize, sizes: &SplitSizes) -> Result<Manifest> {
    synth.validate(size_multiple)?;
    if sizes.n_labeled == 0 {
        return Err(Error::Invalid("n_labeled must be at least 1".into()));
    }
    let mut samples = Vec::new();
    let plan = [
        (Split::Train, sizes.n_labeled),
        (Split::Validation, sizes.n_validation),
        (Split::Unlabeled, sizes.n_unlabeled),
        (Split::Test, sizes.n_test),
    ];
    for (split, n) in plan {
        for i in 0..n {
            let (boundaries, sample) = generate_sample(synth, split, i)?;
            let image = PathBuf::from("images").join(format!("{}.png", sample.id));
            raster::write_intensity(&dir.join(&image), &sample.image)?;
            let mut entry = ManifestEntry { id: sample.id.clone(), split: split.name().into(), image, labels: None, boundaries: None };
            if split != Split::Unlabeled {
                let labels = PathBuf::from("labels").join(format!("{}.png", sample.id));
                raster::write_labels(&dir.join(&labels), &sample.labels)?;
                let b = PathBuf::from("boundaries").join(format!("{}.csv", sample.id));
                std::fs::create_dir_all(dir.join("boundaries")).at(dir)?;
                raster::write_boundaries(&dir.join(&b), &boundaries)?;
                entry.labels = Some(labels);
                entry.boundaries = Some(b);
            }
            samples.push(entry);
        }
    }
    let manifest = Manifest { num_classes: synth.num_classes, generator: Some(synth.clone()), samples };
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, toml::to_string(&manifest).expect("manifest serializes")).at(&path)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).at(&path)?;
    toml::from_str(&text).map_err(|e| format_error(&path, e))
}

pub fn load(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;
    let c = manifest.num_classes;
    let mut data = Dataset {
        num_classes: c,
        train: LabeledDataset::default(),
        validation: LabeledDataset::default(),
        unlabeled: UnlabeledDataset::default(),
        test: LabeledDataset::default(),
    };
    for e in &manifest.samples {
        let image = raster::read_intensity(&dir.join(&e.image))?;
        if e.split == "unlabeled" {
            data.unlabeled.samples.push(UnlabeledSample::new(e.id.clone(), image)?);
            continue;
        }
        let labels = match (&e.labels, &e.boundaries) {
            (Some(l), _) => raster::read_labels(&dir.join(l), c)?,
            (None, Some(b)) => {
                let path = dir.join(b);
                let set = raster::read_boundaries(&path, image.height())?;
                if set.num_classes() != c {
                    return Err(format_error(&path, format!("{} curves for {c} classes", set.num_classes())));
                }
                boundaries_to_labels(&set, image.height())?
            }
            (None, None) => return Err(Error::Invalid(format!("sample {} in split {} has no labels", e.id, e.split))),
        };
        let sample = LabeledSample::new(e.id.clone(), image, labels, c)?;
        match e.split.as_str() {
            "train" => data.train.samples.push(sample),
            "val" => data.validation.samples.push(sample),
            "test" => data.test.samples.push(sample),
            other => return Err(Error::Invalid(format!("sample {}: unknown split {other:?}", e.id))),
        }
    }
    data.train.validate(c)?;
    data.validation.validate(c)?;
    data.test.validate(c)?;
    data.unlabeled.validate()?;
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let synth = SynthConfig { height: 16, width: 16, ..SynthConfig::default() };
        let sizes = SplitSizes { n_labeled: 2, n_validation: 1, n_unlabeled: 2, n_test: 1 };
        let manifest = write_synthetic(dir.path(), &synth, 4, &sizes).unwrap();
        assert_eq!(manifest.samples.len(), 6);
        assert_eq!(read_manifest(dir.path()).unwrap(), manifest);
        let data = load(dir.path()).unwrap();
        assert_eq!((data.train.len(), data.validation.len(), data.unlabeled.len(), data.test.len()), (2, 1, 2, 1));
        let (_, original) = generate_sample(&synth, Split::Train, 1).unwrap();
        assert_eq!(data.train.samples[1].labels, original.labels);
        for (a, b) in data.train.samples[1].image.as_slice().iter().zip(original.image.as_slice()) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn boundaries_stand_in_for_label_maps() {
        let dir = tempfile::tempdir().unwrap();
        let synth = SynthConfig { height: 16, width: 16, ..SynthConfig::default() };
        let sizes = SplitSizes { n_labeled: 1, n_validation: 0, n_unlabeled: 0, n_test: 0 };
        let mut manifest = write_synthetic(dir.path(), &synth, 4, &sizes).unwrap();
        let with_labels = load(dir.path()).unwrap();
        manifest.samples[0].labels = None;
        std::fs::write(dir.path().join(MANIFEST_FILE), toml::to_string(&manifest).unwrap()).unwrap();
        assert_eq!(load(dir.path()).unwrap().train.samples[0].labels, with_labels.train.samples[0].labels);
    }

    #[test]
    fn zero_labeled_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let sizes = SplitSizes { n_labeled: 0, ..SplitSizes::default() };
        assert!(write_synthetic(dir.path(), &SynthConfig::default(), 8, &sizes).is_err());
        assert!(!dir.path().join(MANIFEST_FILE).exists());
    }
}
