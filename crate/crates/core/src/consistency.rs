//! Generative and discriminative consistency losses.
//!
//! Each compares a teacher loss-term vector against the student's with a
//! weighted normalized distance, `Σ_k w_k |t_k - s_k| / max(|t_k|, ε)`, and
//! the two are combined as `L_GC + λ·L_DC`.
//!
//! Teacher values are constants: every gradient helper here differentiates
//! with respect to the student terms only.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Named scalar loss components of one model on one batch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LossTermVector {
    terms: BTreeMap<String, f64>,
}

impl LossTermVector {
    pub fn new<I, K>(terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = (K, f64)>,
        K: Into<String>,
    {
        let terms: BTreeMap<String, f64> = terms.into_iter().map(|(k, v)| (k.into(), v)).collect();
        if let Some((k, v)) = terms.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::numeric(format!("loss term {k:?} is not finite ({v})")));
        }
        Ok(Self { terms })
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.terms.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.terms.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn names(&self) -> BTreeSet<&str> {
        self.terms.keys().map(String::as_str).collect()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConsistencyWeights {
    /// Weights of generative terms; the leading term ("gen") has weight 1.
    pub generative_weights: BTreeMap<String, f64>,
    /// Weights of discriminative terms.
    pub discriminative_weights: BTreeMap<String, f64>,
    pub lambda: f64,
    /// Denominator guard for teacher terms equal to zero.
    pub epsilon: f64,
}

impl Default for ConsistencyWeights {
    fn default() -> Self {
        Self {
            generative_weights: [("gen", 1.0), ("cla", 1.0), ("rec", 10.0)]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            discriminative_weights: [("dis", 1.0), ("gp", 10.0)]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            lambda: 0.5,
            epsilon: 1e-8,
        }
    }
}

impl ConsistencyWeights {
    pub fn validate(&self) -> Result<()> {
        for (side, map) in [
            ("generative_weights", &self.generative_weights),
            ("discriminative_weights", &self.discriminative_weights),
        ] {
            if let Some((k, v)) = map.iter().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
                return Err(Error::config(format!("{side}.{k} must be a finite non-negative number, got {v}")));
            }
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::config(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// `|teacher - student| / max(|teacher|, epsilon)`.
pub fn normalized_term_distance(teacher_value: f64, student_value: f64, epsilon: f64) -> f64 {
    (teacher_value - student_value).abs() / teacher_value.abs().max(epsilon)
}

/// Derivative of [`normalized_term_distance`] with respect to the student
/// value; 0 at equality.
pub fn normalized_term_distance_grad(teacher_value: f64, student_value: f64, epsilon: f64) -> f64 {
    let denom = teacher_value.abs().max(epsilon);
    match student_value.partial_cmp(&teacher_value) {
        Some(std::cmp::Ordering::Greater) => 1.0 / denom,
        Some(std::cmp::Ordering::Less) => -1.0 / denom,
        _ => 0.0,
    }
}

/// Weighted consistency value plus its gradient with respect to each
/// student term.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedDistance {
    pub value: f64,
    pub student_grad: BTreeMap<String, f64>,
}

fn check_terms(teacher: &LossTermVector, student: &LossTermVector, weights: &BTreeMap<String, f64>) -> Result<()> {
    let t = teacher.names();
    let s = student.names();
    if t != s {
        let missing_in_student: Vec<_> = t.difference(&s).collect();
        let missing_in_teacher: Vec<_> = s.difference(&t).collect();
        return Err(Error::validation(format!(
            "teacher/student term sets differ: missing from student {missing_in_student:?}, missing from teacher {missing_in_teacher:?}"
        )));
    }
    let unweighted: Vec<_> = t.iter().filter(|k| !weights.contains_key(**k)).collect();
    if !unweighted.is_empty() {
        return Err(Error::validation(format!("no weight given for terms {unweighted:?}")));
    }
    Ok(())
}

pub fn weighted_distance(
    teacher: &LossTermVector,
    student: &LossTermVector,
    weights: &BTreeMap<String, f64>,
    epsilon: f64,
) -> Result<WeightedDistance> {
    check_terms(teacher, student, weights)?;
    let mut value = 0.0;
    let mut student_grad = BTreeMap::new();
    for (name, t) in teacher.iter() {
        let s = student.get(name).expect("checked term set");
        let w = weights[name];
        value += w * normalized_term_distance(t, s, epsilon);
        student_grad.insert(name.to_string(), w * normalized_term_distance_grad(t, s, epsilon));
    }
    Ok(WeightedDistance { value, student_grad })
}

/// `L_GC`: weighted normalized distance over generative terms.
pub fn generative_consistency(
    teacher: &LossTermVector,
    student: &LossTermVector,
    weights: &ConsistencyWeights,
) -> Result<f64> {
    weighted_distance(teacher, student, &weights.generative_weights, weights.epsilon).map(|d| d.value)
}

/// `L_DC`: weighted normalized distance over discriminative terms.
pub fn discriminative_consistency(
    teacher: &LossTermVector,
    student: &LossTermVector,
    weights: &ConsistencyWeights,
) -> Result<f64> {
    weighted_distance(teacher, student, &weights.discriminative_weights, weights.epsilon).map(|d| d.value)
}

/// `L_GC + λ·L_DC`.
pub fn overall_loss(l_gc: f64, l_dc: f64, lambda: f64) -> f64 {
    l_gc + lambda * l_dc
}
