use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::forward::Model;
use crate::autodiff::{ParamStore, Tensor};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct StoredParam {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct StoredModel {
    config: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    observed_frames: Option<usize>,
    params: Vec<StoredParam>,
}

/// A model plus the observation length it was trained with.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub observed_frames: Option<usize>,
}

impl Checkpoint {
    pub fn new(model: Model, observed_frames: Option<usize>) -> Self {
        Self { model, observed_frames }
    }
}

/// Serialises config and parameters as JSON.
pub fn checkpoint_to_json(ckpt: &Checkpoint) -> Result<String> {
    let model = &ckpt.model;
    let stored = StoredModel {
        config: model.config.clone(),
        observed_frames: ckpt.observed_frames,
        params: model
            .params
            .iter()
            .map(|(_, p)| StoredParam {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                data: p.value.data().to_vec(),
            })
            .collect(),
    };
    serde_json::to_string(&stored).map_err(|e| Error::Parse {
        context: "checkpoint".into(),
        message: e.to_string(),
    })
}

/// Parses a checkpoint and checks every parameter against the stored config.
pub fn checkpoint_from_json(text: &str) -> Result<Checkpoint> {
    let stored: StoredModel = serde_json::from_str(text).map_err(|e| Error::Parse {
        context: "checkpoint".into(),
        message: e.to_string(),
    })?;
    stored.config.validate()?;
    let mut store = ParamStore::new();
    for p in stored.params {
        let t = Tensor::new(p.shape.clone(), p.data).map_err(|_| {
            Error::validation(
                p.name.clone(),
                format!("data length does not match shape {:?}", p.shape),
            )
        })?;
        if !t.is_finite() {
            return Err(Error::validation(p.name, "non-finite values"));
        }
        store.insert(p.name, t)?;
    }
    Ok(Checkpoint {
        model: Model::from_parts(stored.config, store)?,
        observed_frames: stored.observed_frames,
    })
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, checkpoint_to_json(ckpt)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> Checkpoint {
        let cfg = ModelConfig {
            init_std: 0.1,
            ..ModelConfig::toy(8, 2, 1, 4)
        };
        Checkpoint::new(Model::new(cfg, 5).unwrap(), Some(20))
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let m = model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_checkpoint(&path, &m).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.observed_frames, Some(20));
        let (m, back) = (m.model, back.model);
        assert_eq!(back.config, m.config);
        for ((_, a), (_, b)) in m.params.iter().zip(back.params.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn shape_mismatch_names_the_parameter() {
        let text = checkpoint_to_json(&model()).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["config"]["d_ff"] = serde_json::json!(16);
        let err = checkpoint_from_json(&v.to_string()).unwrap_err();
        assert!(err.is_validation());
        assert!(err.to_string().contains("encoder.0.ff.w1"), "{err}");
    }

    #[test]
    fn truncated_data_rejected() {
        let text = checkpoint_to_json(&model()).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["params"][0]["data"].as_array_mut().unwrap().pop();
        assert!(checkpoint_from_json(&v.to_string()).is_err());
        assert!(checkpoint_from_json("{").is_err());
    }
}
