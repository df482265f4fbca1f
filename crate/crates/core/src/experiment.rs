//! Multi-recipe, multi-seed comparisons against a shared dense baseline.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tracing::info;

use crate::config::ExperimentConfig;
use crate::engine::run_compression;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_checkpoint, read_record, write_record, EvaluationOptions, EvaluationRecord};
use crate::pruning::Granularity;
use crate::strategy::{resolve_strategy, RecipeId};

pub const SUMMARY_JSON: &str = "summary.json";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const EVALUATION_FILE: &str = "evaluation.json";

#[derive(Clone, Debug, PartialEq)]
pub struct CompareOptions {
    /// Task and shared overrides; `recipe`, `sparsity`, `granularity`,
    /// `seed`, `dense_checkpoint` and `out_dir` are set per run.
    pub base: ExperimentConfig,
    pub recipes: Vec<RecipeId>,
    pub sparsities: Vec<f64>,
    pub granularities: Vec<Granularity>,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub evaluation: EvaluationOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub recipe: RecipeId,
    /// `None` for recipes that do not prune.
    pub granularity: Option<Granularity>,
    pub target_sparsity: f64,
    pub seed: u64,
    pub sparsity: f64,
    pub fid: f64,
    /// FID of this seed's dense baseline.
    pub dense_fid: f64,
    pub relative_change: f64,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub generator_parameters: usize,
    /// Relative to the comparison directory.
    pub run_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryGroup {
    pub recipe: RecipeId,
    pub granularity: Option<Granularity>,
    pub target_sparsity: f64,
    pub seeds: usize,
    pub median_fid: f64,
    pub median_dense_fid: f64,
    pub median_relative_change: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub task: String,
    pub extractor_id: String,
    pub n_generated: usize,
    pub n_real: usize,
    pub rows: Vec<SummaryRow>,
    pub groups: Vec<SummaryGroup>,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => (v[n / 2 - 1] + v[n / 2]) / 2.0,
    }
}

/// Directory name of one run, e.g. `b-element-0.50`.
pub fn run_name(recipe: RecipeId, granularity: Option<Granularity>, sparsity: f64) -> String {
    match granularity {
        Some(g) => format!("{recipe}-{g}-{sparsity:.2}"),
        None => recipe.to_string(),
    }
}

fn evaluate_cached(run_dir: &Path, checkpoint: &Path, fresh: bool, options: &EvaluationOptions) -> Result<EvaluationRecord> {
    let path = run_dir.join(EVALUATION_FILE);
    if !fresh && path.exists() {
        let rec = read_record(&path)?;
        let same_extractor = options.extractor_id.as_ref().is_none_or(|id| *id == rec.extractor_id);
        if same_extractor && rec.n_generated == options.n_generated {
            return Ok(rec);
        }
    }
    let rec = evaluate_checkpoint(checkpoint, options)?;
    write_record(&path, &rec)?;
    Ok(rec)
}

/// Trains (or reuses) a dense baseline per seed and every requested
/// compression run, evaluates them, and writes the summary files.
pub fn compare(options: &CompareOptions) -> Result<Summary> {
    if options.recipes.is_empty() || options.seeds.is_empty() {
        return Err(Error::config("compare needs at least one recipe and one seed"));
    }
    if options.sparsities.is_empty() || options.granularities.is_empty() {
        return Err(Error::config("compare needs at least one sparsity and one granularity"));
    }
    let out = &options.out_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut rows = Vec::new();
    let mut extractor_id = String::new();
    let (mut n_generated, mut n_real) = (0, 0);

    for &seed in &options.seeds {
        let seed_dir = PathBuf::from(format!("seed{seed}"));
        let mut dense_cfg = options.base.clone();
        dense_cfg.recipe = Some(RecipeId::A);
        dense_cfg.seed = Some(seed);
        dense_cfg.steps = None;
        dense_cfg.dense_checkpoint = None;
        dense_cfg.out_dir = Some(out.join(&seed_dir).join("dense"));
        let dense_manifest = dense_cfg.resolve()?;
        info!(seed, "dense baseline");
        let dense = run_compression(&dense_manifest)?;
        let dense_rec = evaluate_cached(&dense_manifest.out_dir, &dense.checkpoint, dense.steps_run > 0, &options.evaluation)?;
        extractor_id = dense_rec.extractor_id.clone();
        (n_generated, n_real) = (dense_rec.n_generated, dense_rec.n_real);

        for &recipe in &options.recipes {
            let prunes = resolve_strategy(recipe).pruning.is_some();
            let grid: Vec<(Option<Granularity>, f64)> = if prunes {
                options
                    .sparsities
                    .iter()
                    .flat_map(|&s| options.granularities.iter().map(move |&g| (Some(g), s)))
                    .collect()
            } else {
                vec![(None, 0.0)]
            };
            for (granularity, sparsity) in grid {
                let (rel_dir, rec) = if recipe == RecipeId::A {
                    (seed_dir.join("dense"), dense_rec.clone())
                } else {
                    let name = run_name(recipe, granularity, sparsity);
                    let mut cfg = options.base.clone();
                    cfg.recipe = Some(recipe);
                    cfg.seed = Some(seed);
                    cfg.sparsity = granularity.map(|_| sparsity);
                    cfg.granularity = granularity;
                    cfg.dense_checkpoint = Some(dense.checkpoint.clone());
                    cfg.out_dir = Some(out.join(&seed_dir).join(&name));
                    let manifest = cfg.resolve()?;
                    info!(seed, run = %name, "compression run");
                    let res = run_compression(&manifest)?;
                    let rec = evaluate_cached(&manifest.out_dir, &res.checkpoint, res.steps_run > 0, &options.evaluation)?;
                    (seed_dir.join(name), rec)
                };
                rows.push(SummaryRow {
                    recipe,
                    granularity,
                    target_sparsity: sparsity,
                    seed,
                    sparsity: rec.sparsity,
                    fid: rec.fid,
                    dense_fid: dense_rec.fid,
                    relative_change: (rec.fid - dense_rec.fid) / dense_rec.fid,
                    psnr: rec.psnr,
                    ssim: rec.ssim,
                    generator_parameters: rec.generator_parameters,
                    run_dir: rel_dir,
                });
            }
        }
    }

    let summary = Summary {
        task: options.base.task.clone(),
        extractor_id,
        n_generated,
        n_real,
        groups: group_rows(&rows),
        rows,
    };
    write_summary(out, &summary)?;
    Ok(summary)
}

/// Per-(recipe, granularity, sparsity) medians over seeds, in row order.
pub fn group_rows(rows: &[SummaryRow]) -> Vec<SummaryGroup> {
    let mut order: Vec<(RecipeId, Option<Granularity>, u64)> = Vec::new();
    let mut by_key: BTreeMap<(RecipeId, Option<Granularity>, u64), Vec<&SummaryRow>> = BTreeMap::new();
    for r in rows {
        let key = (r.recipe, r.granularity, r.target_sparsity.to_bits());
        if !by_key.contains_key(&key) {
            order.push(key);
        }
        by_key.entry(key).or_default().push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let group = &by_key[&key];
            let col = |f: fn(&SummaryRow) -> f64| median(&group.iter().map(|r| f(r)).collect::<Vec<_>>());
            SummaryGroup {
                recipe: key.0,
                granularity: key.1,
                target_sparsity: f64::from_bits(key.2),
                seeds: group.len(),
                median_fid: col(|r| r.fid),
                median_dense_fid: col(|r| r.dense_fid),
                median_relative_change: col(|r| r.relative_change),
            }
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub fn summary_csv(summary: &Summary) -> String {
    let mut s = String::from(
        "recipe,granularity,target_sparsity,seed,sparsity,fid,dense_fid,relative_change,psnr,ssim,generator_parameters,run_dir\n",
    );
    for r in &summary.rows {
        s += &format!(
            "{},{},{:.2},{},{:.6},{:.6},{:.6},{:.6},{},{},{},{}\n",
            r.recipe,
            r.granularity.map(|g| g.to_string()).unwrap_or_default(),
            r.target_sparsity,
            r.seed,
            r.sparsity,
            r.fid,
            r.dense_fid,
            r.relative_change,
            opt(r.psnr),
            opt(r.ssim),
            r.generator_parameters,
            r.run_dir.display()
        );
    }
    s
}

pub fn write_summary(dir: &Path, summary: &Summary) -> Result<()> {
    let json = serde_json::to_string_pretty(summary).map_err(|e| Error::numeric(format!("summary: {e}")))?;
    let p = dir.join(SUMMARY_JSON);
    std::fs::write(&p, json + "\n").map_err(|e| Error::io(&p, e))?;
    let p = dir.join(SUMMARY_CSV);
    std::fs::write(&p, summary_csv(summary)).map_err(|e| Error::io(&p, e))
}

pub fn read_summary(dir: &Path) -> Result<Summary> {
    let p = dir.join(SUMMARY_JSON);
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    serde_json::from_str(&text).map_err(|e| Error::data(&p, e.to_string()))
}
