//! Checkpoint evaluation: FID against the test split, and PSNR/SSIM of the
//! compressed generator against its dense teacher.

use std::path::{Path, PathBuf};

use ganprune_nn::{Mode, Network, Tensor};
use serde::{Deserialize, Serialize};
use tracing::info;

use crate::checkpoint::load_checkpoint;
use crate::data::{latent_batch, load_dataset, Split};
use crate::engine::{generator_from_checkpoint, load_dense};
use crate::error::{Error, Result};
use crate::extractor::{default_cache_dir, default_extractor_id, resolve_extractor, FeatureExtractor};
use crate::metrics::{frechet_distance, psnr, sparsity_report, ssim, FrechetStats, StatsAccumulator};
use crate::models::{DatasetKind, TaskSpec};
use crate::pruning::Granularity;
use crate::seeding::Stream;
use crate::strategy::RecipeId;

pub const DEFAULT_SAMPLES: usize = 10_000;
const EVAL_BATCH: usize = 250;
/// Pairs compared for PSNR/SSIM.
const PAIRED_SAMPLES: usize = 500;

#[derive(Clone, Debug, PartialEq)]
pub struct EvaluationOptions {
    pub n_generated: usize,
    pub n_real: usize,
    /// Defaults to the task's extractor.
    pub extractor_id: Option<String>,
    pub cache_dir: PathBuf,
    /// Overrides the data directory recorded in the manifest.
    pub data_dir: Option<PathBuf>,
}

impl Default for EvaluationOptions {
    fn default() -> Self {
        Self {
            n_generated: DEFAULT_SAMPLES,
            n_real: DEFAULT_SAMPLES,
            extractor_id: None,
            cache_dir: default_cache_dir(),
            data_dir: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub task: String,
    pub recipe: RecipeId,
    pub seed: u64,
    pub step: u64,
    pub granularity: Granularity,
    pub target_sparsity: f64,
    pub sparsity: f64,
    pub generator_parameters: usize,
    pub fid: f64,
    pub extractor_id: String,
    pub n_generated: usize,
    pub n_real: usize,
    /// FID of the dense teacher under the same extractor and latents.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub dense_fid: Option<f64>,
    /// Mean PSNR (dB) of student images against teacher images from the
    /// same latents; infinite pairs are skipped.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub psnr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ssim: Option<f64>,
}

fn push_features(acc: &mut StatsAccumulator, extractor: &FeatureExtractor, images: &Tensor) -> Result<()> {
    for f in extractor.features(images)? {
        acc.push(&f)?;
    }
    Ok(())
}

/// Feature statistics of the first `n` test items.
pub fn real_stats(task: &TaskSpec, data_dir: &Path, extractor: &FeatureExtractor, n: usize) -> Result<FrechetStats> {
    let data = load_dataset(task, Split::Test, data_dir)?;
    let n = n.min(data.len());
    let mut acc = StatsAccumulator::new(extractor.spec().feature_dim);
    for start in (0..n).step_by(EVAL_BATCH) {
        let idx: Vec<usize> = (start..(start + EVAL_BATCH).min(n)).collect();
        push_features(&mut acc, extractor, &data.gather(&idx))?;
    }
    acc.finish()
}

/// Evaluation input batch `index`; shared by every generator evaluated with
/// the same seed.
fn eval_input(task: &TaskSpec, seed: u64, index: u64, batch: usize) -> Tensor {
    latent_batch(seed, Stream::EvalLatent, index, task.input_shape(batch))
}

/// Feature statistics of `n` generated samples.
pub fn generator_stats(
    generator: &Network,
    task: &TaskSpec,
    seed: u64,
    extractor: &FeatureExtractor,
    n: usize,
) -> Result<FrechetStats> {
    let mut acc = StatsAccumulator::new(extractor.spec().feature_dim);
    for (i, start) in (0..n).step_by(EVAL_BATCH).enumerate() {
        let b = EVAL_BATCH.min(n - start);
        let images = generator.predict(&eval_input(task, seed, i as u64, b), Mode::Eval);
        if !images.is_finite() {
            return Err(Error::numeric("generator produced non-finite samples"));
        }
        push_features(&mut acc, extractor, &images)?;
    }
    acc.finish()
}

/// Mean PSNR and SSIM of `student` against `teacher` outputs on shared
/// latents, with images mapped from `[-1, 1]` to `[0, 1]`.
pub fn paired_quality(student: &Network, teacher: &Network, task: &TaskSpec, seed: u64, n: usize) -> Result<(f64, f64)> {
    let [c, h, w] = task.image_shape;
    let (mut psnr_sum, mut psnr_count, mut ssim_sum, mut count) = (0.0, 0usize, 0.0, 0usize);
    for (i, start) in (0..n).step_by(EVAL_BATCH).enumerate() {
        let b = EVAL_BATCH.min(n - start);
        let z = eval_input(task, seed, i as u64, b);
        let s = student.predict(&z, Mode::Eval);
        let t = teacher.predict(&z, Mode::Eval);
        for k in 0..b {
            let to_unit = |x: &[f32]| x.iter().map(|&v| (v as f64 + 1.0) / 2.0).collect::<Vec<f64>>();
            let (si, ti) = (to_unit(s.sample(k)), to_unit(t.sample(k)));
            let p = psnr(&si, &ti, 1.0)?;
            if p.is_finite() {
                psnr_sum += p;
                psnr_count += 1;
            }
            ssim_sum += ssim(&si, &ti, [c, h, w], 1.0)?;
            count += 1;
        }
    }
    let mean_psnr = if psnr_count == 0 { f64::INFINITY } else { psnr_sum / psnr_count as f64 };
    Ok((mean_psnr, ssim_sum / count as f64))
}

/// Evaluates the generator stored in `checkpoint`.
pub fn evaluate_checkpoint(checkpoint: &Path, options: &EvaluationOptions) -> Result<EvaluationRecord> {
    let ckpt = load_checkpoint(checkpoint)?;
    let manifest = &ckpt.manifest;
    let task = manifest.student_task()?;
    let data_dir = options.data_dir.clone().unwrap_or_else(|| manifest.data_dir.clone());
    let extractor_id = options.extractor_id.clone().unwrap_or_else(|| default_extractor_id(&task).to_string());
    let extractor = resolve_extractor(&extractor_id, &task, &options.cache_dir, &data_dir)?;
    if options.n_generated < 2 || options.n_real < 2 {
        return Err(Error::validation("FID needs at least 2 generated and 2 real samples"));
    }

    let generator = generator_from_checkpoint(&ckpt)?;
    let real = real_stats(&task, &data_dir, &extractor, options.n_real)?;
    let fake = generator_stats(&generator, &task, manifest.seed, &extractor, options.n_generated)?;
    let fid = frechet_distance(&fake, &real)?;

    let mut dense_fid = None;
    let (mut psnr_v, mut ssim_v) = (None, None);
    if let Some(dense_path) = manifest.dense_checkpoint.as_ref().filter(|_| manifest.strategy.keep_teacher_generator) {
        let (teacher, _) = load_dense(dense_path, &manifest.task)?;
        let dense = generator_stats(&teacher, &manifest.task, manifest.seed, &extractor, options.n_generated)?;
        dense_fid = Some(frechet_distance(&dense, &real)?);
        if task.dataset == DatasetKind::Mnist {
            let (p, s) = paired_quality(&generator, &teacher, &task, manifest.seed, PAIRED_SAMPLES.min(options.n_generated))?;
            psnr_v = Some(p);
            ssim_v = Some(s);
        }
    }

    let report = sparsity_report(&ckpt, crate::engine::GENERATOR);
    let record = EvaluationRecord {
        task: task.task_id.clone(),
        recipe: manifest.strategy.recipe_id,
        seed: manifest.seed,
        step: ckpt.step,
        granularity: manifest.granularity,
        target_sparsity: manifest.schedule.as_ref().map_or(0.0, |s| s.s_final),
        sparsity: report.aggregate,
        generator_parameters: report.total_parameters,
        fid,
        extractor_id: extractor.spec().extractor_id,
        n_generated: fake.sample_count,
        n_real: real.sample_count,
        dense_fid,
        psnr: psnr_v,
        ssim: ssim_v,
    };
    info!(fid = record.fid, dense_fid = ?record.dense_fid, "evaluated {}", checkpoint.display());
    Ok(record)
}

pub fn write_record(path: &Path, record: &EvaluationRecord) -> Result<()> {
    let text = serde_json::to_string_pretty(record).map_err(|e| Error::numeric(format!("evaluation record: {e}")))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_record(path: &Path) -> Result<EvaluationRecord> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::data(path, e.to_string()))
}
