//! On-disk soft-label store: one container per unlabeled image.
//!
//! Arrays: `z` (f32, `[H, W, C]`, pixel-major), `u` and `omega` (f32,
//! `[H, W]`). Metadata: `source_image_id`, `teacher_checkpoint_id` and the
//! `mc_config` used. Values are stored in single precision; in-memory
//! records are double precision, so a load widens the stored values exactly.

use std::path::{Path, PathBuf};

use serde_json::json;

use segssl_core::inference::{ConfidenceMap, UncertaintyMap};
use segssl_core::{Grid, McConfig, ScoreMap, SoftLabelRecord};

use crate::container::{ArrayData, Container};
use crate::error::{format_error, Result};

fn narrow(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

fn widen(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

pub fn record_to_container(r: &SoftLabelRecord) -> Container {
    let (h, w) = r.soft_label.spatial_shape();
    let c = r.soft_label.classes();
    let mut out = Container::new(json!({
        "kind": "soft_label",
        "source_image_id": r.source_image_id,
        "teacher_checkpoint_id": r.teacher_checkpoint_id,
        "mc_config": r.mc_config,
    }));
    out.push("z", vec![h, w, c], ArrayData::F32(narrow(r.soft_label.as_slice())));
    out.push("u", vec![h, w], ArrayData::F32(narrow(r.uncertainty.0.as_slice())));
    out.push("omega", vec![h, w], ArrayData::F32(narrow(r.confidence.0.as_slice())));
    out
}

pub fn record_from_container(c: &Container, path: &Path) -> Result<SoftLabelRecord> {
    let text = |key: &str| -> Result<String> {
        c.meta.get(key).and_then(|v| v.as_str()).map(str::to_string).ok_or_else(|| format_error(path, format!("missing {key}")))
    };
    let mc_config: McConfig =
        serde_json::from_value(c.meta.get("mc_config").cloned().unwrap_or_default()).map_err(|e| format_error(path, e))?;
    let z = c.get("z").ok_or_else(|| format_error(path, "missing z"))?;
    let [h, w, classes] = z.shape[..] else {
        return Err(format_error(path, "z must have shape [H, W, C]"));
    };
    let soft_label = ScoreMap::new(h, w, classes, widen(c.f32("z", path)?)).map_err(|e| format_error(path, e))?;
    let grid = |name: &str| -> Result<Grid<f64>> { Grid::from_vec(h, w, widen(c.f32(name, path)?)).map_err(|e| format_error(path, e)) };
    let record = SoftLabelRecord {
        soft_label,
        uncertainty: UncertaintyMap(grid("u")?),
        confidence: ConfidenceMap(grid("omega")?),
        source_image_id: text("source_image_id")?,
        teacher_checkpoint_id: text("teacher_checkpoint_id")?,
        mc_config,
    };
    record.validate().map_err(|e| format_error(path, e))?;
    Ok(record)
}

pub fn record_path(dir: &Path, image_id: &str) -> PathBuf {
    dir.join(format!("{image_id}.usls"))
}

pub fn save_records(dir: &Path, records: &[SoftLabelRecord]) -> Result<()> {
    for r in records {
        record_to_container(r).write(&record_path(dir, &r.source_image_id))?;
    }
    Ok(())
}

pub fn load_record(dir: &Path, image_id: &str) -> Result<SoftLabelRecord> {
    let path = record_path(dir, image_id);
    record_from_container(&Container::read(&path)?, &path)
}
