//! Checkpoints: model tensors, the creating configuration and the
//! per-epoch training history in one tensor archive.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use crate::error::{AmqfError, Result};
use crate::store::TensorStore;

use super::{ModelParams, TrainConfig};

/// Loss components averaged over one epoch.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub total: f64,
    pub mos_term: f64,
    pub recon_term: f64,
    pub decov_term: f64,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: ModelParams,
    pub config: TrainConfig,
    pub history: Vec<EpochStats>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let encoder_layers: Vec<serde_json::Value> = self
            .model
            .encoder
            .layers
            .iter()
            .map(|l| {
                serde_json::json!({
                    "stride": l.stride,
                    "pad": l.pad,
                    "activation": match l.activation {
                        crate::encoder::Activation::Tanh => "tanh",
                        crate::encoder::Activation::Linear => "linear",
                    },
                })
            })
            .collect();
        let meta = serde_json::json!({
            "kind": "amqf-checkpoint",
            "config": serde_json::to_value(&self.config).expect("config serializes"),
            "history": serde_json::to_value(&self.history).expect("history serializes"),
            "encoder_layers": encoder_layers,
            "layer_tag": self.model.encoder.layer_tag,
            "dictionary": {
                "n_words": self.model.dictionary.n_words(),
                "dim": self.model.dictionary.dim(),
                "seed": self.model.dictionary.seed,
            },
        });
        let mut store = TensorStore::new(meta);
        for (name, tensor) in self.model.named_tensors() {
            store.insert(name, tensor);
        }
        store.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let store = TensorStore::load(path)?;
        if store.meta["kind"] != "amqf-checkpoint" {
            return Err(AmqfError::validation(format!(
                "{} is not a checkpoint",
                path.display()
            )));
        }
        let config: TrainConfig = serde_json::from_value(store.meta["config"].clone())
            .map_err(|e| AmqfError::validation(format!("bad checkpoint config: {e}")))?;
        let history: Vec<EpochStats> = serde_json::from_value(store.meta["history"].clone())
            .map_err(|e| AmqfError::validation(format!("bad checkpoint history: {e}")))?;
        let mut model = ModelParams::from_archive_meta(&config, &store.meta)?;
        let mut tensors: BTreeMap<String, ArrayD<f64>> = BTreeMap::new();
        for name in store.names() {
            tensors.insert(name.to_string(), store.get(name).unwrap().clone());
        }
        model.set_named_tensors(&tensors)?;
        Ok(Checkpoint {
            model,
            config,
            history,
        })
    }
}
