//! Step → target-sparsity schedules.
//!
//! The gradual schedule follows the cubic automated-gradual-pruning curve
//! `s(t) = s_f + (s_i - s_f)(1 - p)^3`, `p = clamp((t - t0) / (t1 - t0), 0, 1)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Gradual,
    OneShot,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SparsitySchedule {
    pub kind: ScheduleKind,
    pub s_initial: f64,
    pub s_final: f64,
    pub step_begin: u64,
    pub step_end: u64,
    /// Steps between mask recomputations.
    pub update_interval: u64,
}

impl SparsitySchedule {
    pub fn gradual(s_initial: f64, s_final: f64, step_begin: u64, step_end: u64, update_interval: u64) -> Result<Self> {
        let s = Self {
            kind: ScheduleKind::Gradual,
            s_initial,
            s_final,
            step_begin,
            step_end,
            update_interval,
        };
        s.validate()?;
        Ok(s)
    }

    /// Prune to `sparsity` once, at `step`.
    pub fn one_shot(sparsity: f64, step: u64) -> Result<Self> {
        let s = Self {
            kind: ScheduleKind::OneShot,
            s_initial: sparsity,
            s_final: sparsity,
            step_begin: step,
            step_end: step + 1,
            update_interval: 1,
        };
        s.validate()?;
        Ok(s)
    }

    /// The default gradual ramp: 5% at the start to `s_final` halfway
    /// through `total_steps`, recomputing masks every step.
    pub fn default_gradual(s_final: f64, total_steps: u64) -> Result<Self> {
        let end = (total_steps / 2).max(1);
        Self::gradual(0.05f64.min(s_final), s_final, 0, end, 1)
    }

    pub fn validate(&self) -> Result<()> {
        let unit = 0.0..=1.0;
        if !unit.contains(&self.s_initial) || !unit.contains(&self.s_final) {
            return Err(Error::config(format!(
                "schedule sparsities must lie in [0, 1], got s_initial={} s_final={}",
                self.s_initial, self.s_final
            )));
        }
        if self.s_initial > self.s_final {
            return Err(Error::config(format!(
                "schedule s_initial ({}) exceeds s_final ({})",
                self.s_initial, self.s_final
            )));
        }
        if self.step_end <= self.step_begin {
            return Err(Error::config(format!(
                "schedule step_end ({}) must exceed step_begin ({})",
                self.step_end, self.step_begin
            )));
        }
        if self.update_interval == 0 {
            return Err(Error::config("schedule update_interval must be at least 1"));
        }
        if self.kind == ScheduleKind::OneShot && self.s_initial != self.s_final {
            return Err(Error::config("one-shot schedule needs s_initial == s_final"));
        }
        Ok(())
    }

    pub fn sparsity_at(&self, step: u64) -> f64 {
        match self.kind {
            ScheduleKind::OneShot => {
                if step >= self.step_begin {
                    self.s_final
                } else {
                    0.0
                }
            }
            ScheduleKind::Gradual => {
                if step <= self.step_begin {
                    return self.s_initial;
                }
                if step >= self.step_end {
                    return self.s_final;
                }
                let span = (self.step_end - self.step_begin) as f64;
                let remain = 1.0 - (step - self.step_begin) as f64 / span;
                (self.s_final + (self.s_initial - self.s_final) * remain * remain * remain)
                    .clamp(self.s_initial, self.s_final)
            }
        }
    }

    pub fn should_update_mask(&self, step: u64) -> bool {
        if self.kind == ScheduleKind::OneShot {
            return step == self.step_begin;
        }
        step >= self.step_begin
            && step <= self.step_end
            && (step - self.step_begin) % self.update_interval == 0
    }
}
