//! Experiment configuration files and the fully resolved manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::consistency::ConsistencyWeights;
use crate::data::default_data_dir;
use crate::error::{Error, Result};
use crate::models::{scaled_generator_width, task_spec, TaskSpec};
use crate::pruning::Granularity;
use crate::schedule::{ScheduleKind, SparsitySchedule};
use crate::strategy::{resolve_strategy, GeneratorInit, RecipeId, StrategyConfig};

/// Default compression budget as a fraction of the baseline step count.
pub const DEFAULT_BUDGET_FRACTION: f64 = 0.10;
pub const DEFAULT_SPARSITY: f64 = 0.5;

/// User-facing configuration; everything except `task` and `recipe` is
/// optional.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: String,
    pub recipe: Option<RecipeId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sparsity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub granularity: Option<Granularity>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schedule: Option<SparsitySchedule>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<ConsistencyWeights>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline_steps: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generator_width: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub discriminator_width: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dense_checkpoint: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_interval: Option<u64>,
}

/// Everything a run needs, with defaults expanded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentManifest {
    pub task: TaskSpec,
    pub strategy: StrategyConfig,
    /// Width of the trained generator (differs from the task's for
    /// width-scaled recipes).
    pub student_generator_width: usize,
    pub schedule: Option<SparsitySchedule>,
    pub granularity: Granularity,
    pub weights: ConsistencyWeights,
    pub seed: u64,
    pub total_steps: u64,
    pub baseline_steps: u64,
    pub data_dir: PathBuf,
    pub dense_checkpoint: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub checkpoint_interval: u64,
}

fn check_fraction(key: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::config(format!("{key} must lie in [0, 1], got {v}")));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn new(task: impl Into<String>, recipe: RecipeId) -> Self {
        Self {
            task: task.into(),
            recipe: Some(recipe),
            ..Self::default()
        }
    }

    /// Expands defaults and validates every field.
    pub fn resolve(&self) -> Result<ExperimentManifest> {
        let recipe = self.recipe.ok_or_else(|| Error::config("missing key \"recipe\""))?;
        let mut task = task_spec(&self.task, self.generator_width, self.discriminator_width)?;
        if let Some(bs) = self.batch_size {
            task.batch_size = bs;
        }
        task.validate()?;
        let strategy = resolve_strategy(recipe);
        strategy.validate()?;

        let sparsity = self.sparsity.unwrap_or(DEFAULT_SPARSITY);
        check_fraction("sparsity", sparsity)?;
        let fraction = self.budget_fraction.unwrap_or(DEFAULT_BUDGET_FRACTION);
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::config(format!("budget_fraction must lie in (0, 1], got {fraction}")));
        }
        let baseline_steps = self.baseline_steps.unwrap_or(task.baseline_steps);
        if baseline_steps == 0 {
            return Err(Error::config("baseline_steps must be at least 1"));
        }
        let total_steps = match self.steps {
            Some(s) => s,
            None if strategy.student_generator_init == GeneratorInit::FromDense => {
                ((fraction * baseline_steps as f64).floor() as u64).max(1)
            }
            None => baseline_steps,
        };
        if total_steps == 0 {
            return Err(Error::config("steps must be at least 1"));
        }

        let schedule = match (&self.schedule, strategy.pruning) {
            (_, None) => None,
            (Some(s), Some(_)) => {
                s.validate()?;
                Some(s.clone())
            }
            (None, Some(ScheduleKind::OneShot)) => Some(SparsitySchedule::one_shot(sparsity, 0)?),
            (None, Some(ScheduleKind::Gradual)) => Some(SparsitySchedule::default_gradual(sparsity, total_steps)?),
        };

        let weights = self.weights.clone().unwrap_or_default();
        weights.validate()?;

        let student_generator_width = match strategy.width_scale {
            Some(r) => scaled_generator_width(&task, r)?,
            None => task.generator_width,
        };

        Ok(ExperimentManifest {
            task,
            strategy,
            student_generator_width,
            schedule,
            granularity: self.granularity.unwrap_or(Granularity::Element),
            weights,
            seed: self.seed.unwrap_or(0),
            total_steps,
            baseline_steps,
            data_dir: self.data_dir.clone().unwrap_or_else(default_data_dir),
            dense_checkpoint: self.dense_checkpoint.clone(),
            out_dir: self.out_dir.clone().unwrap_or_else(|| PathBuf::from("runs").join(format!("{}-{recipe}", self.task))),
            checkpoint_interval: self.checkpoint_interval.unwrap_or(1000).max(1),
        })
    }
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    serde_json::from_str(text).map_err(|e| Error::config(format!("invalid config: {e}")))
}

/// Reads and resolves a JSON config file.
pub fn parse_config(path: &Path) -> Result<ExperimentManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text)
        .map_err(|e| Error::config(format!("{}: {e}", path.display())))?
        .resolve()
}

impl ExperimentManifest {
    /// The architecture of the generator being trained.
    pub fn student_task(&self) -> Result<TaskSpec> {
        if self.student_generator_width == self.task.generator_width {
            return Ok(self.task.clone());
        }
        let mut t = task_spec(&self.task.task_id, Some(self.student_generator_width), Some(self.task.discriminator_width))?;
        t.batch_size = self.task.batch_size;
        Ok(t)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }
}
