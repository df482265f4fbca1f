#![allow(dead_code)]

use std::path::{Path, PathBuf};

use ganprune_core::config::{ExperimentConfig, ExperimentManifest};
use ganprune_core::data::{load_dataset, BatchStream, Dataset, Split};
use ganprune_core::engine::{training_input, Batch};
use ganprune_core::metrics_log::MetricsRecord;
use ganprune_core::strategy::RecipeId;
use ganprune_nn::Network;

pub fn data_dir() -> PathBuf {
    std::env::var_os("GANPRUNE_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

/// Small ring-task config writing into `dir/<recipe>`.
pub fn ring_config(dir: &Path, recipe: RecipeId, steps: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new("ring-2d", recipe);
    cfg.steps = Some(steps);
    cfg.batch_size = Some(32);
    cfg.generator_width = Some(16);
    cfg.discriminator_width = Some(16);
    cfg.data_dir = Some(data_dir());
    cfg.out_dir = Some(dir.join(recipe.to_string()));
    cfg
}

pub fn ring_manifest(dir: &Path, recipe: RecipeId, steps: u64) -> ExperimentManifest {
    ring_config(dir, recipe, steps).resolve().unwrap()
}

pub fn train_data(m: &ExperimentManifest) -> Dataset {
    load_dataset(&m.task, Split::Train, &m.data_dir).unwrap()
}

pub fn batch(m: &ExperimentManifest, stream: &mut BatchStream<'_>, step: u64) -> Batch {
    Batch { input: training_input(&m.task, m.seed, step), real: stream.batch_at(step) }
}

/// Bit patterns of every parameter and buffer.
pub fn network_bits(net: &Network) -> Vec<u32> {
    let mut out: Vec<u32> = net.named_params().iter().flat_map(|(_, p)| p.value.iter().map(|v| v.to_bits())).collect();
    out.extend(net.named_buffers().iter().flat_map(|(_, b)| b.iter().map(|v| v.to_bits())));
    out
}

/// Positions that a mask zeroes but the network holds as nonzero.
pub fn masked_nonzeros(net: &Network, masks: &std::collections::BTreeMap<usize, ganprune_core::pruning::PruningMask>) -> usize {
    masks
        .iter()
        .map(|(&i, m)| {
            let w = net.layers[i].prunable_weight().unwrap();
            m.bits().iter().zip(&w.value).filter(|(b, v)| **b == 0 && **v != 0.0).count()
        })
        .sum()
}

/// Log records with the wall clock removed.
pub fn strip_wall_time(records: Vec<MetricsRecord>) -> Vec<(u64, Vec<(String, u64)>)> {
    records
        .into_iter()
        .map(|r| (r.step, r.scalars.into_iter().map(|(k, v)| (k, v.to_bits())).collect()))
        .collect()
}
