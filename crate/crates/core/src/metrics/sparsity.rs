//! Per-layer and aggregate sparsity accounting of a checkpoint.

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::pruning::Granularity;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSparsity {
    pub name: String,
    pub parameters: usize,
    pub pruned: usize,
    pub sparsity: f64,
    pub granularity: Option<Granularity>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsityReport {
    pub layers: Vec<LayerSparsity>,
    /// Weights of prunable layers.
    pub prunable_parameters: usize,
    pub pruned_parameters: usize,
    /// Pruned fraction of prunable weights.
    pub aggregate: f64,
    /// All parameters of the network, including biases and normalization.
    pub total_parameters: usize,
}

/// Sparsity of the network whose parameters are prefixed `"{network}."`.
/// Prunable layers are those with a `weight` tensor; counts come from the
/// masks, and unmasked layers count as dense.
pub fn sparsity_report(ckpt: &Checkpoint, network: &str) -> SparsityReport {
    let prefix = format!("{network}.");
    let mut layers = Vec::new();
    let mut total_parameters = 0;
    for (name, t) in ckpt.parameters.iter().filter(|(n, _)| n.starts_with(&prefix)) {
        total_parameters += t.data.len();
        if !name.ends_with(".weight") {
            continue;
        }
        let mask = ckpt.masks.get(name);
        let pruned = mask.map_or(0, |m| m.zero_count());
        layers.push(LayerSparsity {
            name: name.clone(),
            parameters: t.data.len(),
            pruned,
            sparsity: pruned as f64 / t.data.len() as f64,
            granularity: mask.map(|m| m.granularity()),
        });
    }
    let prunable: usize = layers.iter().map(|l| l.parameters).sum();
    let pruned: usize = layers.iter().map(|l| l.pruned).sum();
    SparsityReport {
        layers,
        prunable_parameters: prunable,
        pruned_parameters: pruned,
        aggregate: if prunable == 0 { 0.0 } else { pruned as f64 / prunable as f64 },
        total_parameters,
    }
}
