//! JSON checkpoints. Values are written in shortest round-trip form and
//! parsed with correct rounding, so a save/load cycle is bit-exact.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use grade_core::gnn::ModelParams;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    /// Encoder widths `[d_0, d_1, ..., d_M]`.
    pub layer_dims: Vec<usize>,
    /// Head widths, input first.
    pub head_dims: Vec<usize>,
    pub seed: u64,
    /// Every parameter in flat-index order.
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn from_params(params: &ModelParams, seed: u64) -> Self {
        Checkpoint {
            layer_dims: params.layer_dims(),
            head_dims: params.head_dims(),
            seed,
            params: params.to_flat(),
        }
    }

    pub fn to_params(&self) -> Result<ModelParams> {
        ModelParams::from_flat(&self.layer_dims, &self.head_dims, &self.params)
            .context("checkpoint dimensions do not match its parameter count")
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("finite values serialize");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        anyhow::ensure!(
            self.params.iter().all(|x| x.is_finite()),
            "refusing to write non-finite parameters"
        );
        fs::write(path, self.to_json()).with_context(|| format!("writing {}", path.display()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing checkpoint {}", path.display()))
    }
}
