//! The fourteen compression recipes (a–n) as declarative configurations, and
//! the rule that turns a recipe plus measured loss terms into training
//! objectives.
//!
//! # Loss-column semantics
//!
//! Each recipe marks four loss groups active or not: `L-Gc`, `L-Dc`
//! (consistency), `L-Go`, `L-Do` (original GAN losses). The composition is:
//!
//! * teacher kept, no distillation stand-in: `L-Gc`/`L-Dc` are the
//!   consistency losses and enter together as `L_GC + λ·L_DC`;
//! * no teacher (recipes d, e, f): `L-Gc`/`L-Dc` name the compressed
//!   model's own standard generator / discriminator losses (plain
//!   fine-tuning). This reading is an interpretation of the table, not a
//!   stated rule;
//! * output-distillation stand-in (g, h, k): `L-Gc` is the squared distance
//!   between teacher and student outputs; `L-Dc`, when active, adds `λ·L_DC`;
//! * intermediate-distillation stand-in (l): the objective is the squared
//!   distance between one designated inner activation of teacher and student;
//! * `L-Go` adds the student's standard generator loss (unit weight) when a
//!   discriminator exists;
//! * the discriminator is trained on its standard loss against student
//!   outputs when it exists, is not fixed, and `L-Do` or `L-Dc` is active.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::consistency::{overall_loss, weighted_distance, ConsistencyWeights, LossTermVector};
use crate::error::{Error, Result};
use crate::schedule::ScheduleKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecipeId {
    A,
    B,
    C,
    D,
    E,
    F,
    G,
    H,
    I,
    J,
    K,
    L,
    M,
    N,
}

impl RecipeId {
    pub const ALL: [RecipeId; 14] = [
        RecipeId::A,
        RecipeId::B,
        RecipeId::C,
        RecipeId::D,
        RecipeId::E,
        RecipeId::F,
        RecipeId::G,
        RecipeId::H,
        RecipeId::I,
        RecipeId::J,
        RecipeId::K,
        RecipeId::L,
        RecipeId::M,
        RecipeId::N,
    ];

    pub fn as_char(self) -> char {
        (b'a' + self as u8) as char
    }
}

impl fmt::Display for RecipeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

impl FromStr for RecipeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut chars = s.trim().chars();
        match (chars.next(), chars.next()) {
            (Some(c @ 'a'..='n'), None) => Ok(RecipeId::ALL[(c as u8 - b'a') as usize]),
            _ => Err(Error::config(format!("unknown recipe {s:?}; expected one of a..n"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorInit {
    Random,
    FromDense,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscriminatorInit {
    Random,
    Pretrained,
    PretrainedSparse,
}

impl DiscriminatorInit {
    pub fn is_pretrained(self) -> bool {
        !matches!(self, DiscriminatorInit::Random)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LossGroup {
    #[serde(rename = "L-Gc")]
    GenConsistency,
    #[serde(rename = "L-Dc")]
    DiscConsistency,
    #[serde(rename = "L-Go")]
    GenOriginal,
    #[serde(rename = "L-Do")]
    DiscOriginal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtraObjective {
    None,
    OutputDistill,
    IntermediateDistill,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyConfig {
    pub recipe_id: RecipeId,
    pub student_generator_init: GeneratorInit,
    pub student_generator_pruned: bool,
    pub keep_teacher_generator: bool,
    /// `None` when no discriminator takes part.
    pub discriminator_init: Option<DiscriminatorInit>,
    pub discriminator_fixed: bool,
    pub discriminator_pruned: bool,
    pub active_losses: BTreeSet<LossGroup>,
    pub extra: ExtraObjective,
    /// Channel-width multiplier for the student generator (recipe c).
    pub width_scale: Option<f64>,
    /// Pruning regime for pruned networks.
    pub pruning: Option<ScheduleKind>,
}

/// Parameter fraction targeted by the small dense network of recipe c.
pub const SMALL_DENSE_PARAM_RATIO: f64 = 0.5;

/// Returns the configuration of one recipe.
pub fn resolve_strategy(recipe: RecipeId) -> StrategyConfig {
    use DiscriminatorInit as Di;
    use GeneratorInit as Gi;
    use LossGroup::*;
    let losses = |l: &[LossGroup]| l.iter().copied().collect::<BTreeSet<_>>();
    let gradual = Some(ScheduleKind::Gradual);
    let one_shot = Some(ScheduleKind::OneShot);
    // (init, pruned, teacher, D init, fixed, D pruned, losses, extra, pruning)
    let (init, pruned, teacher, d_init, fixed, d_pruned, active, extra, pruning) = match recipe {
        RecipeId::A => (Gi::Random, false, false, Some(Di::Random), false, false, losses(&[GenOriginal, DiscOriginal]), ExtraObjective::None, None),
        RecipeId::B => (Gi::FromDense, true, true, Some(Di::Pretrained), false, false, losses(&[GenConsistency, DiscConsistency, GenOriginal, DiscOriginal]), ExtraObjective::None, gradual),
        RecipeId::C => (Gi::Random, false, false, Some(Di::Random), false, false, losses(&[GenOriginal, DiscOriginal]), ExtraObjective::None, None),
        RecipeId::D => (Gi::FromDense, true, false, Some(Di::Pretrained), false, false, losses(&[GenConsistency, DiscConsistency]), ExtraObjective::None, one_shot),
        RecipeId::E => (Gi::FromDense, true, false, Some(Di::Random), false, false, losses(&[GenConsistency, DiscConsistency]), ExtraObjective::None, gradual),
        RecipeId::F => (Gi::Random, true, false, Some(Di::Random), false, false, losses(&[GenConsistency, DiscConsistency]), ExtraObjective::None, gradual),
        RecipeId::G => (Gi::FromDense, true, true, None, false, false, losses(&[GenConsistency, GenOriginal]), ExtraObjective::OutputDistill, one_shot),
        RecipeId::H => (Gi::FromDense, true, true, Some(Di::Pretrained), false, false, losses(&[GenConsistency, DiscConsistency, GenOriginal]), ExtraObjective::OutputDistill, gradual),
        RecipeId::I => (Gi::FromDense, true, true, Some(Di::Pretrained), true, false, losses(&[GenConsistency, DiscConsistency]), ExtraObjective::None, gradual),
        RecipeId::J => (Gi::Random, true, true, Some(Di::Random), false, false, losses(&[GenConsistency, DiscConsistency, GenOriginal, DiscOriginal]), ExtraObjective::None, gradual),
        RecipeId::K => (Gi::FromDense, true, true, Some(Di::Random), false, false, losses(&[GenConsistency, GenOriginal, DiscOriginal]), ExtraObjective::OutputDistill, gradual),
        RecipeId::L => (Gi::FromDense, true, true, Some(Di::Pretrained), true, false, losses(&[]), ExtraObjective::IntermediateDistill, gradual),
        RecipeId::M => (Gi::FromDense, true, true, Some(Di::PretrainedSparse), false, true, losses(&[GenConsistency, DiscConsistency, GenOriginal]), ExtraObjective::None, gradual),
        RecipeId::N => (Gi::FromDense, true, true, Some(Di::PretrainedSparse), false, true, losses(&[GenConsistency, DiscConsistency, GenOriginal]), ExtraObjective::None, gradual),
    };
    StrategyConfig {
        recipe_id: recipe,
        student_generator_init: init,
        student_generator_pruned: pruned,
        keep_teacher_generator: teacher,
        discriminator_init: d_init,
        discriminator_fixed: fixed,
        discriminator_pruned: d_pruned,
        active_losses: active,
        extra,
        width_scale: (recipe == RecipeId::C).then_some(SMALL_DENSE_PARAM_RATIO),
        pruning,
    }
}

/// Which measured loss-term vector an objective reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TermKey {
    /// Generator loss terms of the frozen teacher (`l-G_O`).
    TeacherGenerator,
    /// Generator loss terms of the student (`l-G_C`).
    StudentGenerator,
    /// Discriminator loss terms on real vs teacher outputs (`l-D_O`).
    TeacherDiscriminator,
    /// Discriminator loss terms on real vs student outputs (`l-D_C`).
    StudentDiscriminator,
    /// Teacher/student distillation distances ("out" / "mid").
    Distillation,
}

impl TermKey {
    pub fn is_teacher(self) -> bool {
        matches!(self, TermKey::TeacherGenerator | TermKey::TeacherDiscriminator)
    }
}

/// Access to measured loss terms, so objective composition can be audited.
pub trait TermSource {
    fn terms(&self, key: TermKey) -> Option<&LossTermVector>;
}

impl TermSource for BTreeMap<TermKey, LossTermVector> {
    fn terms(&self, key: TermKey) -> Option<&LossTermVector> {
        self.get(&key)
    }
}

/// Partial derivatives of an objective with respect to individual student
/// loss terms, keyed by `(vector, term name)`.
pub type TermGradient = BTreeMap<(TermKey, String), f64>;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ComposedObjectives {
    pub generator: f64,
    /// Absent when the discriminator is fixed or missing.
    pub discriminator: Option<f64>,
    pub generator_grad: TermGradient,
    pub discriminator_grad: TermGradient,
    /// Named components for logging (l_gc, l_dc, l_overall, distill, ...).
    pub components: BTreeMap<String, f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum GenConsistencyMode {
    Off,
    Consistency,
    OwnLoss,
    OutputDistill,
}

impl StrategyConfig {
    pub fn is_active(&self, group: LossGroup) -> bool {
        self.active_losses.contains(&group)
    }

    pub fn has_discriminator(&self) -> bool {
        self.discriminator_init.is_some()
    }

    pub fn discriminator_trainable(&self) -> bool {
        self.has_discriminator()
            && !self.discriminator_fixed
            && (self.is_active(LossGroup::DiscOriginal) || self.is_active(LossGroup::DiscConsistency))
    }

    /// Whether a dense checkpoint is needed to initialize this recipe.
    pub fn needs_dense_checkpoint(&self) -> bool {
        self.keep_teacher_generator
            || self.student_generator_init == GeneratorInit::FromDense
            || self.discriminator_init.is_some_and(DiscriminatorInit::is_pretrained)
    }

    fn gen_mode(&self) -> GenConsistencyMode {
        if !self.is_active(LossGroup::GenConsistency) && !self.is_active(LossGroup::DiscConsistency) {
            return GenConsistencyMode::Off;
        }
        match (self.extra, self.keep_teacher_generator) {
            (ExtraObjective::OutputDistill, _) => GenConsistencyMode::OutputDistill,
            (_, true) => GenConsistencyMode::Consistency,
            (_, false) => GenConsistencyMode::OwnLoss,
        }
    }

    /// Loss-term vectors the objectives of this recipe read.
    pub fn required_terms(&self) -> BTreeSet<TermKey> {
        let mut keys = BTreeSet::new();
        let gc = self.is_active(LossGroup::GenConsistency);
        let dc = self.is_active(LossGroup::DiscConsistency);
        match self.gen_mode() {
            GenConsistencyMode::Off => {}
            GenConsistencyMode::Consistency => {
                if gc {
                    keys.extend([TermKey::TeacherGenerator, TermKey::StudentGenerator]);
                }
                if dc {
                    keys.extend([TermKey::TeacherDiscriminator, TermKey::StudentDiscriminator]);
                }
            }
            GenConsistencyMode::OwnLoss => {
                if gc {
                    keys.insert(TermKey::StudentGenerator);
                }
            }
            GenConsistencyMode::OutputDistill => {
                if gc {
                    keys.insert(TermKey::Distillation);
                }
                if dc && self.has_discriminator() {
                    keys.extend([TermKey::TeacherDiscriminator, TermKey::StudentDiscriminator]);
                }
            }
        }
        if self.extra == ExtraObjective::IntermediateDistill {
            keys.insert(TermKey::Distillation);
        }
        if self.is_active(LossGroup::GenOriginal) && self.has_discriminator() {
            keys.insert(TermKey::StudentGenerator);
        }
        if self.discriminator_trainable() {
            keys.insert(TermKey::StudentDiscriminator);
        }
        keys
    }

    /// Checks that every active loss has the inputs it needs.
    pub fn validate(&self) -> Result<()> {
        let consistency = self.is_active(LossGroup::GenConsistency) || self.is_active(LossGroup::DiscConsistency);
        if consistency && self.extra == ExtraObjective::None && self.keep_teacher_generator && !self.has_discriminator() {
            return Err(Error::config(format!(
                "recipe {}: consistency losses need a discriminator",
                self.recipe_id
            )));
        }
        if consistency && !self.keep_teacher_generator && !self.has_discriminator() {
            return Err(Error::config(format!(
                "recipe {}: standard losses need a discriminator",
                self.recipe_id
            )));
        }
        if self.extra != ExtraObjective::None && !self.keep_teacher_generator {
            return Err(Error::config(format!(
                "recipe {}: distillation needs the teacher generator",
                self.recipe_id
            )));
        }
        if self.discriminator_pruned && !self.has_discriminator() {
            return Err(Error::config(format!(
                "recipe {}: cannot prune a missing discriminator",
                self.recipe_id
            )));
        }
        Ok(())
    }
}

fn fetch<'a>(terms: &'a dyn TermSource, key: TermKey) -> Result<&'a LossTermVector> {
    terms
        .terms(key)
        .ok_or_else(|| Error::validation(format!("missing loss-term vector {key:?}")))
}

/// `Σ_k w_k · v_k` with its gradient; unlisted terms weigh 1.
fn weighted_sum(v: &LossTermVector, weights: &BTreeMap<String, f64>, key: TermKey, scale: f64, grad: &mut TermGradient) -> f64 {
    let mut total = 0.0;
    for (name, value) in v.iter() {
        let w = weights.get(name).copied().unwrap_or(1.0);
        total += w * value;
        *grad.entry((key, name.to_string())).or_insert(0.0) += scale * w;
    }
    total
}

fn add_scaled(grad: &mut TermGradient, key: TermKey, partials: &BTreeMap<String, f64>, scale: f64) {
    for (name, d) in partials {
        *grad.entry((key, name.clone())).or_insert(0.0) += scale * d;
    }
}

/// Builds the generator and discriminator objectives of one step.
pub fn compose_objectives(
    config: &StrategyConfig,
    terms: &dyn TermSource,
    weights: &ConsistencyWeights,
) -> Result<ComposedObjectives> {
    let mut out = ComposedObjectives::default();
    let gc = config.is_active(LossGroup::GenConsistency);
    let dc = config.is_active(LossGroup::DiscConsistency);

    let consistency_pair = |out: &mut ComposedObjectives, with_gc: bool| -> Result<()> {
        let mut l_gc = 0.0;
        let mut l_dc = 0.0;
        if with_gc {
            let d = weighted_distance(
                fetch(terms, TermKey::TeacherGenerator)?,
                fetch(terms, TermKey::StudentGenerator)?,
                &weights.generative_weights,
                weights.epsilon,
            )?;
            l_gc = d.value;
            add_scaled(&mut out.generator_grad, TermKey::StudentGenerator, &d.student_grad, 1.0);
            out.components.insert("l_gc".into(), l_gc);
        }
        if dc {
            let d = weighted_distance(
                fetch(terms, TermKey::TeacherDiscriminator)?,
                fetch(terms, TermKey::StudentDiscriminator)?,
                &weights.discriminative_weights,
                weights.epsilon,
            )?;
            l_dc = d.value;
            add_scaled(&mut out.generator_grad, TermKey::StudentDiscriminator, &d.student_grad, weights.lambda);
            out.components.insert("l_dc".into(), l_dc);
        }
        let overall = overall_loss(l_gc, l_dc, weights.lambda);
        out.components.insert("l_overall".into(), overall);
        out.generator += overall;
        Ok(())
    };

    match config.gen_mode() {
        GenConsistencyMode::Off => {}
        GenConsistencyMode::Consistency => consistency_pair(&mut out, gc)?,
        GenConsistencyMode::OwnLoss => {
            if gc {
                let own = weighted_sum(
                    fetch(terms, TermKey::StudentGenerator)?,
                    &weights.generative_weights,
                    TermKey::StudentGenerator,
                    1.0,
                    &mut out.generator_grad,
                );
                out.components.insert("student_generator".into(), own);
                out.generator += own;
            }
        }
        GenConsistencyMode::OutputDistill => {
            if gc {
                let distill = fetch(terms, TermKey::Distillation)?;
                let v = distill
                    .get("out")
                    .ok_or_else(|| Error::validation("distillation vector lacks the \"out\" term"))?;
                *out.generator_grad.entry((TermKey::Distillation, "out".into())).or_insert(0.0) += 1.0;
                out.components.insert("distill_out".into(), v);
                out.generator += v;
            }
            if dc && config.has_discriminator() {
                consistency_pair(&mut out, false)?;
            }
        }
    }

    if config.extra == ExtraObjective::IntermediateDistill {
        let distill = fetch(terms, TermKey::Distillation)?;
        let v = distill
            .get("mid")
            .ok_or_else(|| Error::validation("distillation vector lacks the \"mid\" term"))?;
        *out.generator_grad.entry((TermKey::Distillation, "mid".into())).or_insert(0.0) += 1.0;
        out.components.insert("distill_mid".into(), v);
        out.generator += v;
    }

    if config.is_active(LossGroup::GenOriginal) && config.has_discriminator() {
        let std_loss = weighted_sum(
            fetch(terms, TermKey::StudentGenerator)?,
            &weights.generative_weights,
            TermKey::StudentGenerator,
            1.0,
            &mut out.generator_grad,
        );
        out.components.insert("student_generator".into(), std_loss);
        out.generator += std_loss;
    }

    if config.discriminator_trainable() {
        let d = weighted_sum(
            fetch(terms, TermKey::StudentDiscriminator)?,
            &weights.discriminative_weights,
            TermKey::StudentDiscriminator,
            1.0,
            &mut out.discriminator_grad,
        );
        out.components.insert("student_discriminator".into(), d);
        out.discriminator = Some(d);
    }

    if !out.generator.is_finite() {
        return Err(Error::numeric(format!("generator objective is not finite: {:?}", out.components)));
    }
    Ok(out)
}
