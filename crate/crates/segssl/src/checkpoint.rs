//! Model and training-session checkpoints.
//!
//! A checkpoint is a [`Container`] whose metadata carries the model
//! configuration as TOML text and whose arrays are the model's named
//! parameters and buffers under `model.`. Session checkpoints (used for
//! resuming) add the best model under `best.`, Adam moments under
//! `adam.m.<i>` / `adam.v.<i>`, and the training state as TOML text.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use segssl_core::optim::{Adam, AdamConfig};
use segssl_core::training::{TrainSession, TrainState};
use segssl_core::{ModelConfig, SegmentationModel};

use crate::container::{ArrayData, Container};
use crate::error::{format_error, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Content hash of configuration and parameters.
    pub id: String,
    pub model: SegmentationModel,
}

#[derive(Serialize, Deserialize)]
struct SessionMeta {
    adam: AdamConfig,
    adam_step: u64,
    state: TrainState,
}

/// FNV-1a over the configuration text and every array's bytes.
pub fn model_id(model: &SegmentationModel) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut feed = |bytes: &[u8]| {
        for b in bytes {
            h ^= *b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    feed(config_text(model.config()).as_bytes());
    for (name, values) in model.named_arrays() {
        feed(name.as_bytes());
        values.iter().for_each(|v| feed(&v.to_le_bytes()));
    }
    format!("{h:016x}")
}

fn config_text(cfg: &ModelConfig) -> String {
    toml::to_string(cfg).expect("model config serializes")
}

fn push_model(c: &mut Container, prefix: &str, model: &SegmentationModel) {
    for (name, values) in model.named_arrays() {
        let n = values.len();
        c.push(format!("{prefix}{name}"), vec![n], ArrayData::F32(values));
    }
}

fn read_model(c: &Container, prefix: &str, config: &ModelConfig, path: &Path) -> Result<SegmentationModel> {
    let mut model = SegmentationModel::new(config.clone(), 0)?;
    let mut arrays = Vec::new();
    for a in &c.arrays {
        if let Some(name) = a.name.strip_prefix(prefix) {
            arrays.push((name.to_string(), c.f32(&a.name, path)?.to_vec()));
        }
    }
    model.load_named_arrays(&arrays).map_err(|e| format_error(path, e))?;
    Ok(model)
}

fn model_config(c: &Container, path: &Path) -> Result<ModelConfig> {
    let text = c.meta.get("model_config").and_then(|v| v.as_str()).ok_or_else(|| format_error(path, "missing model_config"))?;
    let cfg: ModelConfig = toml::from_str(text).map_err(|e| format_error(path, e))?;
    cfg.validate().map_err(|e| format_error(path, e))?;
    Ok(cfg)
}

fn model_container(model: &SegmentationModel, kind: &str) -> (Container, String) {
    let id = model_id(model);
    let mut c = Container::new(json!({
        "kind": kind,
        "checkpoint_id": id,
        "model_config": config_text(model.config()),
    }));
    push_model(&mut c, "model.", model);
    (c, id)
}

/// Writes `model` and returns its checkpoint id.
pub fn save_model(path: &Path, model: &SegmentationModel) -> Result<String> {
    let (c, id) = model_container(model, "model");
    c.write(path)?;
    Ok(id)
}

/// Reads the model from a model or session checkpoint.
pub fn load_model(path: &Path) -> Result<Checkpoint> {
    let c = Container::read(path)?;
    let config = model_config(&c, path)?;
    let model = read_model(&c, "model.", &config, path)?;
    let id = c.meta.get("checkpoint_id").and_then(|v| v.as_str()).unwrap_or_default().to_string();
    if id != model_id(&model) {
        return Err(format_error(path, "checkpoint id does not match its contents"));
    }
    Ok(Checkpoint { id, model })
}

pub fn save_session(path: &Path, session: &TrainSession) -> Result<String> {
    let (mut c, id) = model_container(&session.model, "session");
    let meta = SessionMeta { adam: session.optimizer.config, adam_step: session.optimizer.step, state: session.state.clone() };
    c.meta["session"] = json!(toml::to_string(&meta).map_err(|e| Error::Invalid(e.to_string()))?);
    push_model(&mut c, "best.", &session.best_model);
    for (i, (m, v)) in session.optimizer.first_moment.iter().zip(&session.optimizer.second_moment).enumerate() {
        c.push(format!("adam.m.{i}"), vec![m.len()], ArrayData::F32(m.clone()));
        c.push(format!("adam.v.{i}"), vec![v.len()], ArrayData::F32(v.clone()));
    }
    c.write(path)?;
    Ok(id)
}

pub fn load_session(path: &Path) -> Result<TrainSession> {
    let c = Container::read(path)?;
    let config = model_config(&c, path)?;
    let text = c.meta.get("session").and_then(|v| v.as_str()).ok_or_else(|| format_error(path, "not a session checkpoint"))?;
    let meta: SessionMeta = toml::from_str(text).map_err(|e| format_error(path, e))?;
    let mut model = read_model(&c, "model.", &config, path)?;
    let best_model = read_model(&c, "best.", &config, path)?;
    let mut optimizer = Adam::new(meta.adam, &mut model);
    optimizer.step = meta.adam_step;
    for i in 0..optimizer.first_moment.len() {
        let m = c.f32(&format!("adam.m.{i}"), path)?;
        let v = c.f32(&format!("adam.v.{i}"), path)?;
        if m.len() != optimizer.first_moment[i].len() || v.len() != m.len() {
            return Err(format_error(path, format!("optimizer state {i} has the wrong length")));
        }
        optimizer.first_moment[i].copy_from_slice(m);
        optimizer.second_moment[i].copy_from_slice(v);
    }
    Ok(TrainSession { model, best_model, optimizer, state: meta.state })
}

#[cfg(test)]
mod tests {
    use super::*;
    use segssl_core::training::TrainConfig;

    fn small() -> ModelConfig {
        ModelConfig { num_classes: 3, units_per_block: 1, filters_per_unit: 2, num_encoder_blocks: 1, dropout_rate: 0.1, input_channels: 1 }
    }

    #[test]
    fn model_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.usls");
        let model = SegmentationModel::new(small(), 4).unwrap();
        let id = save_model(&path, &model).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back.id, id);
        assert_eq!(back.model, model);
    }

    #[test]
    fn session_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.usls");
        let mut session = TrainSession::new(&small(), &TrainConfig::default()).unwrap();
        session.optimizer.step = 7;
        session.optimizer.first_moment[0][0] = 0.25;
        session.state.iteration = 7;
        let saved = session.clone();
        save_session(&path, &session).unwrap();
        let back = load_session(&path).unwrap();
        assert_eq!(back, saved);
        assert!(back.state.best_validation_loss.is_infinite());
        assert_eq!(load_model(&path).unwrap().model, saved.model);
    }

    #[test]
    fn tampered_arrays_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.usls");
        let model = SegmentationModel::new(small(), 4).unwrap();
        let (mut c, _) = model_container(&model, "model");
        if let ArrayData::F32(v) = &mut c.arrays[0].data {
            v[0] += 1.0;
        }
        c.write(&path).unwrap();
        assert!(load_model(&path).is_err());
        c.arrays.pop();
        c.meta["checkpoint_id"] = json!("x");
        c.write(&path).unwrap();
        assert!(load_model(&path).is_err());
    }
}
