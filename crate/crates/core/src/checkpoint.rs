//! Checkpoints: every network's parameters plus run metadata in one JSON file.
//! Weights are stored per layer as 2-D arrays (one row per output unit), which
//! keeps the files diffable and loadable without knowing the struct layout.

use crate::nn::{Activation, DenseNet};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("cannot access checkpoint: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint parse error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("checkpoint net {net:?}: {msg}")]
    BadNet { net: String, msg: String },
    #[error("checkpoint has no net named {0:?}")]
    MissingNet(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetDef {
    pub layer_sizes: Vec<usize>,
    /// `[layer][output unit][input unit]`.
    pub weights: Vec<Vec<Vec<f64>>>,
    /// `[layer][output unit]`.
    pub biases: Vec<Vec<f64>>,
    /// `[hidden activation, output activation]`.
    pub activations: [Activation; 2],
}

impl NetDef {
    pub fn from_net(net: &DenseNet) -> Self {
        let sizes = net.layer_sizes();
        let weights = net
            .weights()
            .iter()
            .zip(sizes.windows(2))
            .map(|(flat, w)| flat.chunks(w[0]).map(<[f64]>::to_vec).collect())
            .collect();
        Self {
            layer_sizes: sizes.to_vec(),
            weights,
            biases: net.biases().to_vec(),
            activations: [net.hidden_activation(), net.output_activation()],
        }
    }

    pub fn to_net(&self, name: &str) -> Result<DenseNet, CheckpointError> {
        let bad = |msg: String| CheckpointError::BadNet { net: name.into(), msg };
        if self.layer_sizes.len() < 2 {
            return Err(bad("needs at least two layer sizes".into()));
        }
        let n_layers = self.layer_sizes.len() - 1;
        if self.weights.len() != n_layers || self.biases.len() != n_layers {
            return Err(bad(format!(
                "expected {n_layers} weight/bias layers, got {}/{}",
                self.weights.len(),
                self.biases.len()
            )));
        }
        let mut flat_weights = Vec::with_capacity(n_layers);
        for (l, w) in self.layer_sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            if self.weights[l].len() != n_out || self.biases[l].len() != n_out {
                return Err(bad(format!("layer {l}: expected {n_out} rows")));
            }
            let mut flat = Vec::with_capacity(n_in * n_out);
            for row in &self.weights[l] {
                if row.len() != n_in {
                    return Err(bad(format!("layer {l}: expected row length {n_in}")));
                }
                flat.extend_from_slice(row);
            }
            flat_weights.push(flat);
        }
        Ok(DenseNet::from_parts(
            self.layer_sizes.clone(),
            flat_weights,
            self.biases.clone(),
            self.activations[0],
            self.activations[1],
        ))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub algo: String,
    pub env: String,
    pub seed: u64,
    /// Environment steps completed when the snapshot was taken.
    pub step: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    /// BTreeMap keeps the JSON key order stable across writes.
    pub nets: BTreeMap<String, NetDef>,
}

impl Checkpoint {
    pub fn new(meta: CheckpointMeta) -> Self {
        Self { meta, nets: BTreeMap::new() }
    }

    pub fn insert_net(&mut self, name: &str, net: &DenseNet) {
        self.nets.insert(name.into(), NetDef::from_net(net));
    }

    pub fn net(&self, name: &str) -> Result<DenseNet, CheckpointError> {
        self.nets
            .get(name)
            .ok_or_else(|| CheckpointError::MissingNet(name.into()))?
            .to_net(name)
    }

    pub fn has_net(&self, name: &str) -> bool {
        self.nets.contains_key(name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CheckpointError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        Ok(std::fs::write(path, self.to_json())?)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
