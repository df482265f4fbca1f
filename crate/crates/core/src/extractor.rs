//! Feature extractors for Fréchet distances.
//!
//! Image tasks use a small MNIST classifier (784-256-64-10 MLP) trained
//! once with a fixed seed; features are its 64 post-ReLU penultimate
//! activations. The 2-D task uses the raw coordinates.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ganprune_nn::{Activation, Adam, Layer, Linear, Mode, Network, Tensor};
use serde::{Deserialize, Serialize};
use tracing::info;

use crate::checkpoint::{read_archive, write_archive, Archive};
use crate::data::{load_mnist, resize_bilinear, Split};
use crate::error::{Error, Result};
use crate::models::{DatasetKind, TaskSpec};
use crate::network_io::{load_network_tensors, network_tensors};
use crate::seeding::{self, Stream};

pub const MNIST_EXTRACTOR_ID: &str = "mnist-mlp-v1";
pub const IDENTITY_EXTRACTOR_ID: &str = "identity";
pub const MNIST_SIDE: usize = 28;
const FEATURE_LAYER: usize = 3;
const EXTRACTOR_SEED: u64 = 20_240_601;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureExtractorSpec {
    pub extractor_id: String,
    pub feature_dim: usize,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub enum FeatureExtractor {
    Identity { dim: usize },
    Mlp { classifier: Network, checkpoint: Option<PathBuf> },
}

fn classifier_layers() -> Vec<Layer> {
    vec![
        Layer::Linear(Linear::new(MNIST_SIDE * MNIST_SIDE, 256, true)),
        Layer::Activation(Activation::Relu),
        Layer::Linear(Linear::new(256, 64, true)),
        Layer::Activation(Activation::Relu),
        Layer::Linear(Linear::new(64, 10, true)),
    ]
}

/// Downsamples (or passes through) a batch of single-channel images to
/// the classifier's 28×28 input.
fn to_mnist_input(images: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = images.shape();
    if c != 1 || h != w {
        return Err(Error::validation(format!(
            "the MNIST extractor needs square single-channel images, got {:?}",
            images.shape()
        )));
    }
    if h == MNIST_SIDE {
        return Ok(images.clone());
    }
    let mut data = Vec::with_capacity(n * MNIST_SIDE * MNIST_SIDE);
    for i in 0..n {
        data.extend(resize_bilinear(images.sample(i), h, MNIST_SIDE, MNIST_SIDE));
    }
    Ok(Tensor::from_vec([n, 1, MNIST_SIDE, MNIST_SIDE], data))
}

impl FeatureExtractor {
    pub fn spec(&self) -> FeatureExtractorSpec {
        match self {
            FeatureExtractor::Identity { dim } => FeatureExtractorSpec {
                extractor_id: IDENTITY_EXTRACTOR_ID.into(),
                feature_dim: *dim,
                checkpoint: None,
            },
            FeatureExtractor::Mlp { checkpoint, .. } => FeatureExtractorSpec {
                extractor_id: MNIST_EXTRACTOR_ID.into(),
                feature_dim: 64,
                checkpoint: checkpoint.clone(),
            },
        }
    }

    /// One feature vector per batch item.
    pub fn features(&self, images: &Tensor) -> Result<Vec<Vec<f64>>> {
        match self {
            FeatureExtractor::Identity { dim } => {
                if images.sample_len() != *dim {
                    return Err(Error::validation(format!(
                        "identity extractor expects {dim} values per item, got {}",
                        images.sample_len()
                    )));
                }
                Ok((0..images.batch())
                    .map(|i| images.sample(i).iter().map(|&v| v as f64).collect())
                    .collect())
            }
            FeatureExtractor::Mlp { classifier, .. } => {
                let x = to_mnist_input(images)?;
                let trace = classifier.forward(&x, Mode::Eval);
                let f = trace.activation(FEATURE_LAYER);
                Ok((0..f.batch()).map(|i| f.sample(i).iter().map(|&v| v as f64).collect()).collect())
            }
        }
    }

    pub fn classify(&self, images: &Tensor) -> Result<Vec<usize>> {
        let FeatureExtractor::Mlp { classifier, .. } = self else {
            return Err(Error::validation("the identity extractor does not classify"));
        };
        let logits = classifier.predict(&to_mnist_input(images)?, Mode::Eval);
        Ok((0..logits.batch())
            .map(|i| {
                let row = logits.sample(i);
                (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap()
            })
            .collect())
    }
}

/// Softmax cross-entropy and its gradient with respect to the logits.
fn cross_entropy(logits: &Tensor, labels: &[u8]) -> (f64, Tensor) {
    let n = logits.batch();
    let k = logits.sample_len();
    let mut grad = vec![0.0f32; n * k];
    let mut loss = 0.0;
    for i in 0..n {
        let row = logits.sample(i);
        let max = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b));
        let exps: Vec<f64> = row.iter().map(|&v| ((v - max) as f64).exp()).collect();
        let total: f64 = exps.iter().sum();
        let y = labels[i] as usize;
        loss -= (exps[y] / total).ln();
        for j in 0..k {
            let p = exps[j] / total;
            grad[i * k + j] = ((p - (j == y) as u8 as f64) / n as f64) as f32;
        }
    }
    (loss / n as f64, Tensor::from_vec(logits.shape(), grad))
}

pub struct TrainedExtractor {
    pub extractor: FeatureExtractor,
    pub test_accuracy: f64,
}

/// Trains the MNIST classifier with a fixed seed.
pub fn train_mnist_extractor(data_dir: &Path, epochs: usize) -> Result<TrainedExtractor> {
    let (pixels, labels, side) = load_mnist(data_dir, Split::Train)?;
    if side != MNIST_SIDE {
        return Err(Error::validation(format!("expected 28x28 MNIST, found {side}x{side}")));
    }
    let plane = side * side;
    let to_float = |px: &[u8]| px.iter().map(|&p| p as f32 / 127.5 - 1.0).collect::<Vec<f32>>();
    let mut net = Network::new(classifier_layers());
    net.init(ganprune_nn::Init::FanIn, &mut seeding::rng(EXTRACTOR_SEED, Stream::Extractor));
    let mut opt = Adam::new(&net, 1e-3, 0.9, 0.999);
    let batch = 128;
    let mut order: Vec<usize> = (0..labels.len()).collect();
    for epoch in 0..epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut seeding::rng_at(EXTRACTOR_SEED, Stream::EpochOrder, epoch as u64));
        let mut last = 0.0;
        for chunk in order.chunks_exact(batch) {
            let mut x = Vec::with_capacity(batch * plane);
            let mut y = Vec::with_capacity(batch);
            for &i in chunk {
                x.extend(to_float(&pixels[i * plane..(i + 1) * plane]));
                y.push(labels[i]);
            }
            let x = Tensor::from_vec([batch, 1, side, side], x);
            let trace = net.forward(&x, Mode::Train);
            let (loss, grad) = cross_entropy(trace.output(), &y);
            let mut grads = net.zero_grads();
            net.backward(&trace, &grad, Some(&mut grads));
            opt.step(&mut net, &grads);
            last = loss;
        }
        info!(epoch, loss = last, "extractor epoch done");
    }
    let extractor = FeatureExtractor::Mlp {
        classifier: net,
        checkpoint: None,
    };
    let (tp, tl, _) = load_mnist(data_dir, Split::Test)?;
    let mut correct = 0;
    for start in (0..tl.len()).step_by(1000) {
        let end = (start + 1000).min(tl.len());
        let x = Tensor::from_vec([end - start, 1, side, side], to_float(&tp[start * plane..end * plane]));
        let pred = extractor.classify(&x)?;
        correct += pred.iter().zip(&tl[start..end]).filter(|(p, l)| **p == **l as usize).count();
    }
    let test_accuracy = correct as f64 / tl.len() as f64;
    info!(test_accuracy, "extractor trained");
    Ok(TrainedExtractor { extractor, test_accuracy })
}

pub fn save_extractor(path: &Path, trained: &TrainedExtractor) -> Result<()> {
    let FeatureExtractor::Mlp { classifier, .. } = &trained.extractor else {
        return Err(Error::validation("only the MNIST extractor is saved"));
    };
    let mut tensors = BTreeMap::new();
    network_tensors("classifier", classifier, &mut tensors);
    let archive = Archive {
        meta: serde_json::json!({
            "kind": "feature_extractor",
            "extractor_id": MNIST_EXTRACTOR_ID,
            "feature_dim": 64,
            "test_accuracy": trained.test_accuracy,
        }),
        tensors,
        masks: BTreeMap::new(),
    };
    write_archive(path, &archive)
}

pub fn load_extractor(path: &Path) -> Result<FeatureExtractor> {
    let archive = read_archive(path)?;
    if archive.meta.get("extractor_id").and_then(|v| v.as_str()) != Some(MNIST_EXTRACTOR_ID) {
        return Err(Error::checkpoint(path, format!("not a {MNIST_EXTRACTOR_ID} extractor archive")));
    }
    let mut classifier = Network::new(classifier_layers());
    load_network_tensors("classifier", &mut classifier, &archive.tensors)
        .map_err(|e| Error::checkpoint(path, e.to_string()))?;
    Ok(FeatureExtractor::Mlp {
        classifier,
        checkpoint: Some(path.to_path_buf()),
    })
}

/// Default cache directory: `$GANPRUNE_CACHE_DIR`, else `./.cache`.
pub fn default_cache_dir() -> PathBuf {
    std::env::var_os("GANPRUNE_CACHE_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(".cache"))
}

pub fn extractor_path(cache_dir: &Path) -> PathBuf {
    cache_dir.join(format!("{MNIST_EXTRACTOR_ID}.ckpt"))
}

/// The default extractor id for a task.
pub fn default_extractor_id(task: &TaskSpec) -> &'static str {
    match task.dataset {
        DatasetKind::Mnist => MNIST_EXTRACTOR_ID,
        DatasetKind::Ring2d => IDENTITY_EXTRACTOR_ID,
    }
}

/// Resolves an extractor id, training and caching the MNIST classifier
/// on first use.
pub fn resolve_extractor(id: &str, task: &TaskSpec, cache_dir: &Path, data_dir: &Path) -> Result<FeatureExtractor> {
    match id {
        IDENTITY_EXTRACTOR_ID => Ok(FeatureExtractor::Identity {
            dim: task.image_shape.iter().product(),
        }),
        MNIST_EXTRACTOR_ID => {
            let path = extractor_path(cache_dir);
            if path.exists() {
                return load_extractor(&path);
            }
            std::fs::create_dir_all(cache_dir).map_err(|e| Error::io(cache_dir, e))?;
            let trained = train_mnist_extractor(data_dir, 3)?;
            save_extractor(&path, &trained)?;
            load_extractor(&path)
        }
        other => Err(Error::config(format!(
            "unknown extractor {other:?}; expected {MNIST_EXTRACTOR_ID} or {IDENTITY_EXTRACTOR_ID}"
        ))),
    }
}
