//! Dataset ingestion and deterministic batching.
//!
//! MNIST is read from the raw IDX files (`train-images-idx3-ubyte` etc.).
//! Pixels are kept as bytes and converted per batch: resized bilinearly to
//! the task resolution and mapped to `[-1, 1]`.

use std::path::{Path, PathBuf};

use ganprune_nn::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use tracing::info;

use crate::error::{Error, Result};
use crate::models::{DatasetKind, TaskSpec};
use crate::seeding::{self, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn mnist_prefix(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "t10k",
        }
    }
}

pub const RING_MODES: usize = 8;
pub const RING_RADIUS: f32 = 0.8;
pub const RING_STD: f32 = 0.05;
const RING_TRAIN_SIZE: usize = 50_000;
const RING_TEST_SIZE: usize = 10_000;

#[derive(Clone, Debug)]
enum Items {
    /// Row-major `u8` images of `side × side`.
    Gray { pixels: Vec<u8>, side: usize },
    Points(Vec<[f32; 2]>),
}

#[derive(Clone, Debug)]
pub struct Dataset {
    items: Items,
    labels: Vec<u8>,
    /// Per-sample output shape (C, H, W).
    shape: [usize; 3],
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::data(path, format!("cannot read: {e}")))
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().unwrap())
}

/// Parses an IDX image file into `(count, rows, cols, pixels)`.
pub fn parse_idx_images(path: &Path, bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>)> {
    if bytes.len() < 16 || be_u32(bytes, 0) != 0x0000_0803 {
        return Err(Error::data(path, "not an IDX image file (bad magic)"));
    }
    let n = be_u32(bytes, 4) as usize;
    let rows = be_u32(bytes, 8) as usize;
    let cols = be_u32(bytes, 12) as usize;
    let want = 16 + n * rows * cols;
    if bytes.len() != want {
        return Err(Error::data(path, format!("expected {want} bytes, found {}", bytes.len())));
    }
    Ok((n, rows, cols, bytes[16..].to_vec()))
}

pub fn parse_idx_labels(path: &Path, bytes: &[u8]) -> Result<Vec<u8>> {
    if bytes.len() < 8 || be_u32(bytes, 0) != 0x0000_0801 {
        return Err(Error::data(path, "not an IDX label file (bad magic)"));
    }
    let n = be_u32(bytes, 4) as usize;
    if bytes.len() != 8 + n {
        return Err(Error::data(path, format!("expected {} bytes, found {}", 8 + n, bytes.len())));
    }
    Ok(bytes[8..].to_vec())
}

/// Default data directory: `$GANPRUNE_DATA_DIR`, else `./data`.
pub fn default_data_dir() -> PathBuf {
    std::env::var_os("GANPRUNE_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"))
}

pub fn load_mnist(dir: &Path, split: Split) -> Result<(Vec<u8>, Vec<u8>, usize)> {
    let dir = dir.join("mnist");
    let img_path = dir.join(format!("{}-images-idx3-ubyte", split.mnist_prefix()));
    let lbl_path = dir.join(format!("{}-labels-idx1-ubyte", split.mnist_prefix()));
    let (n, rows, cols, pixels) = parse_idx_images(&img_path, &read_file(&img_path)?)?;
    let labels = parse_idx_labels(&lbl_path, &read_file(&lbl_path)?)?;
    if labels.len() != n {
        return Err(Error::data(&lbl_path, format!("{} labels for {n} images", labels.len())));
    }
    if rows != cols {
        return Err(Error::data(&img_path, format!("non-square images {rows}x{cols}")));
    }
    if let Some(bad) = labels.iter().find(|&&l| l > 9) {
        return Err(Error::data(&lbl_path, format!("label {bad} out of range")));
    }
    Ok((pixels, labels, rows))
}

/// `n` points on the ring mixture together with their mode indices.
pub fn ring_samples(n: usize, seed: u64) -> (Vec<[f32; 2]>, Vec<u8>) {
    let mut rng = seeding::rng(seed, Stream::SyntheticData);
    let mut pts = Vec::with_capacity(n);
    let mut modes = Vec::with_capacity(n);
    for _ in 0..n {
        let m = rng.random_range(0..RING_MODES);
        let angle = std::f32::consts::TAU * m as f32 / RING_MODES as f32;
        let nx: f32 = StandardNormal.sample(&mut rng);
        let ny: f32 = StandardNormal.sample(&mut rng);
        let x = (RING_RADIUS * angle.cos() + RING_STD * nx).clamp(-1.0, 1.0);
        let y = (RING_RADIUS * angle.sin() + RING_STD * ny).clamp(-1.0, 1.0);
        pts.push([x, y]);
        modes.push(m as u8);
    }
    (pts, modes)
}

/// Loads the dataset a task trains on.
pub fn load_dataset(task: &TaskSpec, split: Split, data_dir: &Path) -> Result<Dataset> {
    let ds = match task.dataset {
        DatasetKind::Mnist => {
            let (pixels, labels, side) = load_mnist(data_dir, split)?;
            Dataset {
                items: Items::Gray { pixels, side },
                labels,
                shape: task.image_shape,
            }
        }
        DatasetKind::Ring2d => {
            let (n, seed) = match split {
                Split::Train => (RING_TRAIN_SIZE, 0),
                Split::Test => (RING_TEST_SIZE, 1),
            };
            let (pts, modes) = ring_samples(n, seed);
            Dataset {
                items: Items::Points(pts),
                labels: modes,
                shape: task.image_shape,
            }
        }
    };
    info!(task = %task.task_id, ?split, items = ds.len(), "dataset loaded");
    Ok(ds)
}

/// Bilinear resize with half-pixel centers.
pub fn resize_bilinear(src: &[f32], side: usize, out_h: usize, out_w: usize) -> Vec<f32> {
    if out_h == side && out_w == side {
        return src.to_vec();
    }
    let mut out = Vec::with_capacity(out_h * out_w);
    let sy = side as f32 / out_h as f32;
    let sx = side as f32 / out_w as f32;
    let last = (side - 1) as f32;
    for oy in 0..out_h {
        let fy = ((oy as f32 + 0.5) * sy - 0.5).clamp(0.0, last);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(side - 1);
        let wy = fy - y0 as f32;
        for ox in 0..out_w {
            let fx = ((ox as f32 + 0.5) * sx - 0.5).clamp(0.0, last);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(side - 1);
            let wx = fx - x0 as f32;
            let top = src[y0 * side + x0] * (1.0 - wx) + src[y0 * side + x1] * wx;
            let bot = src[y1 * side + x0] * (1.0 - wx) + src[y1 * side + x1] * wx;
            out.push(top * (1.0 - wy) + bot * wy);
        }
    }
    out
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn sample_shape(&self) -> [usize; 3] {
        self.shape
    }

    /// Native (unresized) side length of image items.
    pub fn native_side(&self) -> Option<usize> {
        match &self.items {
            Items::Gray { side, .. } => Some(*side),
            Items::Points(_) => None,
        }
    }

    /// Item `i` in `[-1, 1]`, at native resolution.
    pub fn native_item(&self, i: usize) -> Vec<f32> {
        match &self.items {
            Items::Gray { pixels, side } => pixels[i * side * side..(i + 1) * side * side]
                .iter()
                .map(|&p| p as f32 / 127.5 - 1.0)
                .collect(),
            Items::Points(p) => p[i].to_vec(),
        }
    }

    /// Item `i` in `[-1, 1]` at the task resolution.
    pub fn item(&self, i: usize) -> Vec<f32> {
        let native = self.native_item(i);
        match &self.items {
            Items::Gray { side, .. } => resize_bilinear(&native, *side, self.shape[1], self.shape[2]),
            Items::Points(_) => native,
        }
    }

    pub fn gather(&self, indices: &[usize]) -> Tensor {
        let [c, h, w] = self.shape;
        let mut data = Vec::with_capacity(indices.len() * c * h * w);
        for &i in indices {
            data.extend(self.item(i));
        }
        Tensor::from_vec([indices.len(), c, h, w], data)
    }
}

/// Batches whose content is a pure function of `(seed, step)`: each epoch
/// is a seed-derived permutation, and the trailing partial batch is dropped.
#[derive(Debug)]
pub struct BatchStream<'a> {
    data: &'a Dataset,
    seed: u64,
    batch_size: usize,
    cached: Option<(u64, Vec<usize>)>,
}

impl<'a> BatchStream<'a> {
    pub fn new(data: &'a Dataset, seed: u64, batch_size: usize) -> Result<Self> {
        if batch_size == 0 || batch_size > data.len() {
            return Err(Error::validation(format!(
                "batch size {batch_size} does not fit a dataset of {} items",
                data.len()
            )));
        }
        Ok(Self {
            data,
            seed,
            batch_size,
            cached: None,
        })
    }

    pub fn batches_per_epoch(&self) -> u64 {
        (self.data.len() / self.batch_size) as u64
    }

    fn permutation(&mut self, epoch: u64) -> &[usize] {
        if self.cached.as_ref().map(|(e, _)| *e) != Some(epoch) {
            let mut order: Vec<usize> = (0..self.data.len()).collect();
            order.shuffle(&mut seeding::rng_at(self.seed, Stream::EpochOrder, epoch));
            self.cached = Some((epoch, order));
        }
        &self.cached.as_ref().unwrap().1
    }

    pub fn indices_at(&mut self, step: u64) -> Vec<usize> {
        let bpe = self.batches_per_epoch();
        let (epoch, within) = (step / bpe, (step % bpe) as usize);
        let bs = self.batch_size;
        self.permutation(epoch)[within * bs..(within + 1) * bs].to_vec()
    }

    pub fn batch_at(&mut self, step: u64) -> Tensor {
        let idx = self.indices_at(step);
        self.data.gather(&idx)
    }
}

/// Standard-normal latents for training step `step`.
pub fn latent_batch(seed: u64, stream: Stream, index: u64, shape: [usize; 4]) -> Tensor {
    let mut rng = seeding::rng_at(seed, stream, index);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    Tensor::from_vec(shape, data)
}

/// Checksum-friendly view of a tensor's bits.
pub fn tensor_digest(t: &Tensor) -> u64 {
    // FNV-1a over the raw bit patterns.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in t.data() {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}
