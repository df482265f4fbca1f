//! The compression training loop.
//!
//! One step: refresh masks when the schedule says so, run the frozen
//! teacher and the masked student on the same inputs, score all outputs
//! with the discriminator, build the loss-term vectors the recipe needs,
//! compose the objectives, update student and discriminator together
//! (both gradients use the pre-update discriminator), then zero the masked
//! weights again.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ganprune_nn::{Adam, Grads, Mode, Network, Tensor, Trace};
use tracing::{debug, info};

use crate::adversarial::{
    discriminator_loss, discriminator_loss_grad, generator_loss, generator_loss_grad, mean_squared,
    mean_squared_grad,
};
use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, NamedTensor};
use crate::config::ExperimentManifest;
use crate::consistency::{ConsistencyWeights, LossTermVector};
use crate::data::{latent_batch, load_dataset, BatchStream, Split};
use crate::error::{Error, Result};
use crate::metrics_log::{MetricsLog, MetricsRecord};
use crate::models::{build_network, TaskSpec};
use crate::network_io::{load_network_tensors, load_optimizer_tensors, network_tensors, optimizer_tensors};
use crate::pruning::{magnitude_mask, Granularity, PruningMask, WeightTensor};
use crate::schedule::SparsitySchedule;
use crate::seeding::{self, Stream};
use crate::strategy::{
    compose_objectives, DiscriminatorInit, ExtraObjective, GeneratorInit, StrategyConfig, TermKey,
};

pub const GENERATOR: &str = "generator";
pub const DISCRIMINATOR: &str = "discriminator";
pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

impl TermKey {
    pub fn as_str(self) -> &'static str {
        match self {
            TermKey::TeacherGenerator => "teacher_generator",
            TermKey::StudentGenerator => "student_generator",
            TermKey::TeacherDiscriminator => "teacher_discriminator",
            TermKey::StudentDiscriminator => "student_discriminator",
            TermKey::Distillation => "distillation",
        }
    }
}

/// One generator input batch and one batch of real samples.
#[derive(Clone, Debug)]
pub struct Batch {
    pub input: Tensor,
    pub real: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub scalars: BTreeMap<String, f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct CompressionSession {
    pub strategy: StrategyConfig,
    pub schedule: Option<SparsitySchedule>,
    pub granularity: Granularity,
    pub weights: ConsistencyWeights,
    pub teacher: Option<Network>,
    pub student: Network,
    pub discriminator: Option<Network>,
    pub student_masks: BTreeMap<usize, PruningMask>,
    pub discriminator_masks: BTreeMap<usize, PruningMask>,
    pub generator_optimizer: Adam,
    pub discriminator_optimizer: Option<Adam>,
    pub distill_layer: usize,
    pub image_shape: [usize; 3],
    pub step: u64,
    pub seed: u64,
}

/// Dense generator and discriminator from a baseline checkpoint.
pub fn load_dense(path: &Path, task: &TaskSpec) -> Result<(Network, Network)> {
    let ckpt = load_checkpoint(path)?;
    let mut g = build_network(&task.generator, task.init, &mut seeding::rng(0, Stream::GeneratorInit));
    let mut d = build_network(&task.discriminator, task.init, &mut seeding::rng(0, Stream::DiscriminatorInit));
    let wrap = |e: Error| Error::config(format!("dense checkpoint {} does not fit task {}: {e}", path.display(), task.task_id));
    load_network_tensors(GENERATOR, &mut g, &ckpt.parameters).map_err(wrap)?;
    load_network_tensors(DISCRIMINATOR, &mut d, &ckpt.parameters).map_err(wrap)?;
    Ok((g, d))
}

fn refresh_masks(
    prefix: &str,
    net: &mut Network,
    masks: &mut BTreeMap<usize, PruningMask>,
    granularity: Granularity,
    target: f64,
) -> Result<()> {
    for idx in net.prunable_layers() {
        let w = net.layers[idx].prunable_weight().expect("prunable layer");
        let tensor = WeightTensor::new(format!("{prefix}.{idx}.weight"), w.shape, w.value.clone())?;
        masks.insert(idx, magnitude_mask(&tensor, granularity, target)?);
    }
    apply_masks(net, masks)
}

fn apply_masks(net: &mut Network, masks: &BTreeMap<usize, PruningMask>) -> Result<()> {
    for (&idx, mask) in masks {
        let w = net.layers[idx]
            .prunable_weight_mut()
            .ok_or_else(|| Error::validation(format!("mask for layer {idx}, which has no prunable weight")))?;
        mask.apply_in_place(&mut w.value)?;
    }
    Ok(())
}

fn realized_sparsity(net: &Network, masks: &BTreeMap<usize, PruningMask>) -> f64 {
    let mut total = 0usize;
    let mut zeros = 0usize;
    for idx in net.prunable_layers() {
        let w = net.layers[idx].prunable_weight().expect("prunable layer");
        total += w.len();
        zeros += masks.get(&idx).map_or(0, |m| m.zero_count());
    }
    if total == 0 {
        0.0
    } else {
        zeros as f64 / total as f64
    }
}

fn term_vector(key: TermKey, terms: &[(&str, f64)]) -> Result<LossTermVector> {
    LossTermVector::new(terms.iter().map(|(k, v)| (*k, *v)))
        .map_err(|e| Error::numeric(format!("{}: {e}", key.as_str())))
}

fn add_into(dst: &mut [f32], src: &[f32]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl CompressionSession {
    /// Builds a fresh session. `dense` supplies the pretrained generator and
    /// discriminator for recipes that start from them.
    pub fn new(manifest: &ExperimentManifest, dense: Option<(Network, Network)>) -> Result<Self> {
        let strategy = manifest.strategy.clone();
        let task = &manifest.task;
        let student_task = manifest.student_task()?;
        let seed = manifest.seed;
        if strategy.needs_dense_checkpoint() && dense.is_none() {
            return Err(Error::config(format!(
                "recipe {} starts from a dense checkpoint, but none was given",
                strategy.recipe_id
            )));
        }
        let dense_g = dense.as_ref().map(|d| d.0.clone());
        let dense_d = dense.map(|d| d.1);

        let teacher = if strategy.keep_teacher_generator { dense_g.clone() } else { None };
        let student = match strategy.student_generator_init {
            GeneratorInit::FromDense => dense_g.expect("checked above"),
            GeneratorInit::Random => build_network(
                &student_task.generator,
                student_task.init,
                &mut seeding::rng(seed, Stream::GeneratorInit),
            ),
        };
        let discriminator = match strategy.discriminator_init {
            None => None,
            Some(DiscriminatorInit::Random) => Some(build_network(
                &task.discriminator,
                task.init,
                &mut seeding::rng(seed, Stream::DiscriminatorInit),
            )),
            Some(_) => dense_d,
        };
        let opt = task.optimizer;
        let generator_optimizer = Adam::new(&student, opt.lr, opt.beta1, opt.beta2);
        let discriminator_optimizer = match (&discriminator, strategy.discriminator_trainable()) {
            (Some(d), true) => Some(Adam::new(d, opt.lr, opt.beta1, opt.beta2)),
            _ => None,
        };
        Ok(Self {
            schedule: manifest.schedule.clone(),
            granularity: manifest.granularity,
            weights: manifest.weights.clone(),
            teacher,
            student,
            discriminator,
            student_masks: BTreeMap::new(),
            discriminator_masks: BTreeMap::new(),
            generator_optimizer,
            discriminator_optimizer,
            distill_layer: task.distill_layer,
            image_shape: task.image_shape,
            step: 0,
            seed,
            strategy,
        })
    }

    pub fn target_sparsity(&self) -> f64 {
        match &self.schedule {
            Some(s) if self.strategy.student_generator_pruned => s.sparsity_at(self.step),
            _ => 0.0,
        }
    }

    fn update_masks_if_due(&mut self) -> Result<()> {
        let Some(schedule) = &self.schedule else {
            return Ok(());
        };
        if !schedule.should_update_mask(self.step) {
            return Ok(());
        }
        let target = schedule.sparsity_at(self.step);
        if self.strategy.student_generator_pruned {
            refresh_masks(GENERATOR, &mut self.student, &mut self.student_masks, self.granularity, target)?;
        }
        if self.strategy.discriminator_pruned {
            if let Some(d) = &mut self.discriminator {
                refresh_masks(DISCRIMINATOR, d, &mut self.discriminator_masks, self.granularity, target)?;
            }
        }
        Ok(())
    }

    /// Runs one compression step on `batch`.
    pub fn step(&mut self, batch: &Batch) -> Result<StepReport> {
        let started = Instant::now();
        let [c, h, w] = self.image_shape;
        if batch.real.shape()[1..] != [c, h, w] {
            return Err(Error::validation(format!(
                "real batch has shape {:?}, the task expects (N, {c}, {h}, {w})",
                batch.real.shape()
            )));
        }
        if self.student.output_shape(batch.input.shape()).is_none() {
            return Err(Error::validation(format!(
                "generator cannot take input of shape {:?}",
                batch.input.shape()
            )));
        }

        self.update_masks_if_due()?;

        let required = self.strategy.required_terms();
        let needs = |k: TermKey| required.contains(&k);
        let mid_distill = self.strategy.extra == ExtraObjective::IntermediateDistill;
        let out_distill = self.strategy.extra == ExtraObjective::OutputDistill && needs(TermKey::Distillation);

        let s_trace = self.student.forward(&batch.input, Mode::Train);
        let needs_teacher_out =
            needs(TermKey::TeacherGenerator) || needs(TermKey::TeacherDiscriminator) || needs(TermKey::Distillation);
        let t_trace: Option<Trace> = match (&self.teacher, needs_teacher_out) {
            (Some(t), true) => Some(t.forward(&batch.input, Mode::Train)),
            (None, true) => return Err(Error::validation("recipe needs teacher outputs but has no teacher")),
            _ => None,
        };

        let needs_fake = needs(TermKey::StudentGenerator) || needs(TermKey::StudentDiscriminator);
        let needs_real = needs(TermKey::StudentDiscriminator) || needs(TermKey::TeacherDiscriminator);
        let needs_teacher_logits = needs(TermKey::TeacherGenerator) || needs(TermKey::TeacherDiscriminator);
        let (fake_trace, real_trace, teacher_logits) = match &self.discriminator {
            Some(d) => (
                needs_fake.then(|| d.forward(s_trace.output(), Mode::Train)),
                needs_real.then(|| d.forward(&batch.real, Mode::Train)),
                match (&t_trace, needs_teacher_logits) {
                    (Some(t), true) => Some(d.predict(t.output(), Mode::Train)),
                    _ => None,
                },
            ),
            None => (None, None, None),
        };
        let logits = |t: &Option<Trace>, what: &str| -> Result<Vec<f32>> {
            t.as_ref()
                .map(|t| t.output().data().to_vec())
                .ok_or_else(|| Error::validation(format!("recipe needs {what} logits but has no discriminator")))
        };

        let mut terms: BTreeMap<TermKey, LossTermVector> = BTreeMap::new();
        for &key in &required {
            let v = match key {
                TermKey::StudentGenerator => term_vector(key, &[("gen", generator_loss(&logits(&fake_trace, "fake")?))])?,
                TermKey::StudentDiscriminator => term_vector(
                    key,
                    &[("dis", discriminator_loss(&logits(&real_trace, "real")?, &logits(&fake_trace, "fake")?))],
                )?,
                TermKey::TeacherGenerator => {
                    let tl = teacher_logits.as_ref().expect("teacher logits computed");
                    term_vector(key, &[("gen", generator_loss(tl.data()))])?
                }
                TermKey::TeacherDiscriminator => {
                    let tl = teacher_logits.as_ref().expect("teacher logits computed");
                    term_vector(key, &[("dis", discriminator_loss(&logits(&real_trace, "real")?, tl.data()))])?
                }
                TermKey::Distillation => {
                    let t = t_trace.as_ref().expect("teacher trace computed");
                    let mut parts = Vec::new();
                    if out_distill {
                        parts.push(("out", mean_squared(s_trace.output().data(), t.output().data())));
                    }
                    if mid_distill {
                        let l = self.distill_layer;
                        parts.push(("mid", mean_squared(s_trace.activation(l).data(), t.activation(l).data())));
                    }
                    term_vector(key, &parts)?
                }
            };
            terms.insert(key, v);
        }

        let objectives = compose_objectives(&self.strategy, &terms, &self.weights)?;
        let sens = |key: TermKey, name: &str, grads: &BTreeMap<(TermKey, String), f64>| {
            grads.get(&(key, name.to_string())).copied().unwrap_or(0.0)
        };

        // Generator gradient.
        let g_gen = sens(TermKey::StudentGenerator, "gen", &objectives.generator_grad);
        let g_dis = sens(TermKey::StudentDiscriminator, "dis", &objectives.generator_grad);
        let g_out = sens(TermKey::Distillation, "out", &objectives.generator_grad);
        let g_mid = sens(TermKey::Distillation, "mid", &objectives.generator_grad);
        let mut grad_out = Tensor::zeros(s_trace.output().shape());
        if g_gen != 0.0 || g_dis != 0.0 {
            let d = self.discriminator.as_ref().expect("adversarial terms imply a discriminator");
            let ft = fake_trace.as_ref().expect("fake logits computed");
            let fake = ft.output().data();
            let mut dl = generator_loss_grad(fake, g_gen);
            if g_dis != 0.0 {
                let real = logits(&real_trace, "real")?;
                add_into(&mut dl, &discriminator_loss_grad(&real, fake, g_dis).1);
            }
            let dl = Tensor::from_vec(ft.output().shape(), dl);
            grad_out = d.backward(ft, &dl, None);
        }
        let t_ref = t_trace.as_ref();
        if g_out != 0.0 {
            let t = t_ref.expect("distillation needs the teacher");
            add_into(grad_out.data_mut(), &mean_squared_grad(s_trace.output().data(), t.output().data(), g_out));
        }
        let mid_grad = if g_mid != 0.0 {
            let t = t_ref.expect("distillation needs the teacher");
            let l = self.distill_layer;
            let a = s_trace.activation(l);
            Some(Tensor::from_vec(a.shape(), mean_squared_grad(a.data(), t.activation(l).data(), g_mid)))
        } else {
            None
        };
        let inject: Vec<(usize, &Tensor)> = mid_grad.iter().map(|g| (self.distill_layer, g)).collect();
        let mut g_grads = self.student.zero_grads();
        self.student.backward_with(&s_trace, &grad_out, &inject, Some(&mut g_grads));
        if !g_grads.is_finite() {
            return Err(Error::numeric(format!("non-finite generator gradient at step {}", self.step)));
        }

        // Discriminator gradient, from the same pre-update discriminator.
        let mut d_grads: Option<Grads> = None;
        if objectives.discriminator.is_some() {
            let c = sens(TermKey::StudentDiscriminator, "dis", &objectives.discriminator_grad);
            let d = self.discriminator.as_ref().expect("trainable discriminator");
            let (rt, ft) = (real_trace.as_ref().expect("real"), fake_trace.as_ref().expect("fake"));
            let (dr, df) = discriminator_loss_grad(rt.output().data(), ft.output().data(), c);
            let mut grads = d.zero_grads();
            d.backward(rt, &Tensor::from_vec(rt.output().shape(), dr), Some(&mut grads));
            d.backward(ft, &Tensor::from_vec(ft.output().shape(), df), Some(&mut grads));
            if !grads.is_finite() {
                return Err(Error::numeric(format!("non-finite discriminator gradient at step {}", self.step)));
            }
            d_grads = Some(grads);
        }

        self.generator_optimizer.step(&mut self.student, &g_grads);
        self.student.commit_batch_stats(&s_trace);
        if let (Some(grads), Some(d), Some(opt)) = (&d_grads, &mut self.discriminator, &mut self.discriminator_optimizer) {
            opt.step(d, grads);
            d.commit_batch_stats(real_trace.as_ref().expect("real"));
            d.commit_batch_stats(fake_trace.as_ref().expect("fake"));
        }
        apply_masks(&mut self.student, &self.student_masks)?;
        if let Some(d) = &mut self.discriminator {
            apply_masks(d, &self.discriminator_masks)?;
        }

        let mut scalars = BTreeMap::new();
        for (key, v) in &terms {
            for (name, value) in v.iter() {
                scalars.insert(format!("{}.{name}", key.as_str()), value);
            }
        }
        for (k, v) in &objectives.components {
            scalars.insert(k.clone(), *v);
        }
        scalars.insert("objective.generator".into(), objectives.generator);
        if let Some(d) = objectives.discriminator {
            scalars.insert("objective.discriminator".into(), d);
        }
        scalars.insert("target_sparsity".into(), self.target_sparsity());
        scalars.insert("sparsity".into(), realized_sparsity(&self.student, &self.student_masks));
        for (idx, m) in &self.student_masks {
            scalars.insert(format!("sparsity.{GENERATOR}.{idx}"), m.sparsity());
        }
        if let Some(d) = &self.discriminator {
            if self.strategy.discriminator_pruned {
                scalars.insert("discriminator_sparsity".into(), realized_sparsity(d, &self.discriminator_masks));
            }
        }
        scalars.insert("lr".into(), self.generator_optimizer.lr as f64);

        let report = StepReport {
            step: self.step,
            scalars,
            seconds: started.elapsed().as_secs_f64(),
        };
        self.step += 1;
        Ok(report)
    }

    /// Snapshot of the trainable state (the teacher is reloaded from the
    /// dense checkpoint on resume).
    pub fn to_checkpoint(&self, manifest: &ExperimentManifest, mut metrics: BTreeMap<String, f64>) -> Checkpoint {
        let mut parameters: BTreeMap<String, NamedTensor> = BTreeMap::new();
        network_tensors(GENERATOR, &self.student, &mut parameters);
        optimizer_tensors("optim.generator", &self.generator_optimizer, &mut parameters, &mut metrics);
        if let Some(d) = &self.discriminator {
            network_tensors(DISCRIMINATOR, d, &mut parameters);
        }
        if let Some(opt) = &self.discriminator_optimizer {
            optimizer_tensors("optim.discriminator", opt, &mut parameters, &mut metrics);
        }
        let mut masks = BTreeMap::new();
        for (idx, m) in &self.student_masks {
            masks.insert(format!("{GENERATOR}.{idx}.weight"), m.clone());
        }
        for (idx, m) in &self.discriminator_masks {
            masks.insert(format!("{DISCRIMINATOR}.{idx}.weight"), m.clone());
        }
        Checkpoint {
            manifest: manifest.clone(),
            parameters,
            masks,
            step: self.step,
            metrics,
        }
    }

    /// Restores trainable state saved by [`Self::to_checkpoint`].
    pub fn restore(&mut self, ckpt: &Checkpoint) -> Result<()> {
        load_network_tensors(GENERATOR, &mut self.student, &ckpt.parameters)?;
        load_optimizer_tensors("optim.generator", &mut self.generator_optimizer, &ckpt.parameters, &ckpt.metrics)?;
        if let Some(d) = &mut self.discriminator {
            load_network_tensors(DISCRIMINATOR, d, &ckpt.parameters)?;
        }
        if let Some(opt) = &mut self.discriminator_optimizer {
            load_optimizer_tensors("optim.discriminator", opt, &ckpt.parameters, &ckpt.metrics)?;
        }
        self.student_masks.clear();
        self.discriminator_masks.clear();
        for (name, m) in &ckpt.masks {
            let parse = |rest: &str| rest.strip_suffix(".weight").and_then(|i| i.parse::<usize>().ok());
            if let Some(idx) = name.strip_prefix("generator.").and_then(parse) {
                self.student_masks.insert(idx, m.clone());
            } else if let Some(idx) = name.strip_prefix("discriminator.").and_then(parse) {
                self.discriminator_masks.insert(idx, m.clone());
            } else {
                return Err(Error::validation(format!("unexpected mask {name:?}")));
            }
        }
        self.step = ckpt.step;
        Ok(())
    }
}

/// Generator input for training step `step`.
pub fn training_input(task: &TaskSpec, seed: u64, step: u64) -> Tensor {
    latent_batch(seed, Stream::TrainLatent, step, task.input_shape(task.batch_size))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompressionResult {
    pub checkpoint: PathBuf,
    pub metrics_log: PathBuf,
    pub steps_run: u64,
    pub resumed_from: Option<u64>,
}

/// Runs (or resumes) the experiment described by `manifest` in its output
/// directory.
pub fn run_compression(manifest: &ExperimentManifest) -> Result<CompressionResult> {
    let out = &manifest.out_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let ckpt_path = out.join(CHECKPOINT_FILE);
    let log_path = out.join(METRICS_FILE);

    let dense = if manifest.strategy.needs_dense_checkpoint() {
        let path = manifest.dense_checkpoint.as_ref().ok_or_else(|| {
            Error::config(format!(
                "recipe {} starts from a dense checkpoint; set \"dense_checkpoint\"",
                manifest.strategy.recipe_id
            ))
        })?;
        if !path.exists() {
            return Err(Error::config(format!("dense checkpoint {} does not exist", path.display())));
        }
        Some(load_dense(path, &manifest.task)?)
    } else {
        None
    };
    let mut session = CompressionSession::new(manifest, dense)?;

    let resumed_from = if ckpt_path.exists() {
        let ckpt = load_checkpoint(&ckpt_path)?;
        if ckpt.manifest != *manifest {
            return Err(Error::config(format!(
                "{} holds a run with a different manifest; choose another output directory",
                out.display()
            )));
        }
        session.restore(&ckpt)?;
        info!(step = ckpt.step, "resuming");
        Some(ckpt.step)
    } else {
        None
    };
    manifest.write(&out.join(MANIFEST_FILE))?;
    let mut log = MetricsLog::open(&log_path, Some(resumed_from.unwrap_or(0)))?;

    let start = session.step;
    if start < manifest.total_steps {
        let data = load_dataset(&manifest.task, Split::Train, &manifest.data_dir)?;
        let mut stream = BatchStream::new(&data, manifest.seed, manifest.task.batch_size)?;
        let clock = Instant::now();
        while session.step < manifest.total_steps {
            let step = session.step;
            let batch = Batch {
                input: training_input(&manifest.task, manifest.seed, step),
                real: stream.batch_at(step),
            };
            let report = session.step(&batch)?;
            log.append(&MetricsRecord {
                step,
                scalars: report.scalars.clone(),
                wall_time: clock.elapsed().as_secs_f64(),
            })?;
            if step % 100 == 0 {
                debug!(step, objective = report.scalars["objective.generator"], "step");
            }
            if session.step % manifest.checkpoint_interval == 0 || session.step == manifest.total_steps {
                save_checkpoint(&session.to_checkpoint(manifest, report.scalars), &ckpt_path)?;
            }
        }
        info!(steps = session.step - start, seconds = clock.elapsed().as_secs_f64(), "run finished");
    } else if !ckpt_path.exists() {
        save_checkpoint(&session.to_checkpoint(manifest, BTreeMap::new()), &ckpt_path)?;
    }
    Ok(CompressionResult {
        checkpoint: ckpt_path,
        metrics_log: log_path,
        steps_run: session.step - start,
        resumed_from,
    })
}

/// The trained generator stored in a run checkpoint.
pub fn generator_from_checkpoint(ckpt: &Checkpoint) -> Result<Network> {
    let task = ckpt.manifest.student_task()?;
    let mut g = build_network(&task.generator, task.init, &mut seeding::rng(0, Stream::GeneratorInit));
    load_network_tensors(GENERATOR, &mut g, &ckpt.parameters)?;
    Ok(g)
}
