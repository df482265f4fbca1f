//! Magnitude pruning at element, vector, kernel and filter granularity.
//!
//! A weight tensor has axes `(F, C, H, W)`. Groups are contiguous runs in
//! row-major order, so group `g` covers elements `[g*len, (g+1)*len)`:
//!
//! | granularity | group             | groups per tensor |
//! |-------------|-------------------|-------------------|
//! | element     | one scalar        | F·C·H·W           |
//! | vector      | one row of W      | F·C·H             |
//! | kernel      | one H×W slice     | F·C               |
//! | filter      | one C×H×W slice   | F                 |
//!
//! Groups are scored by the L1 norm of their elements; the lowest-scoring
//! `floor(s · groups)` groups are zeroed, ties going to the lower index.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    /// 0-D: individual weights.
    Element,
    /// 1-D: rows of length W.
    Vector,
    /// 2-D: H×W kernels.
    Kernel,
    /// 3-D: whole output filters.
    Filter,
}

impl Granularity {
    pub const ALL: [Granularity; 4] = [
        Granularity::Element,
        Granularity::Vector,
        Granularity::Kernel,
        Granularity::Filter,
    ];

    pub fn group_len(self, shape: [usize; 4]) -> usize {
        let [_, c, h, w] = shape;
        match self {
            Granularity::Element => 1,
            Granularity::Vector => w,
            Granularity::Kernel => h * w,
            Granularity::Filter => c * h * w,
        }
    }

    pub fn group_count(self, shape: [usize; 4]) -> usize {
        shape.iter().product::<usize>() / self.group_len(shape)
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Granularity::Element => "element",
            Granularity::Vector => "vector",
            Granularity::Kernel => "kernel",
            Granularity::Filter => "filter",
        })
    }
}

impl FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "element" | "0d" => Ok(Granularity::Element),
            "vector" | "1d" => Ok(Granularity::Vector),
            "kernel" | "2d" => Ok(Granularity::Kernel),
            "filter" | "3d" => Ok(Granularity::Filter),
            other => Err(Error::config(format!(
                "unknown granularity {other:?}; expected element, vector, kernel or filter"
            ))),
        }
    }
}

/// A layer's weights viewed as `(F, C, H, W)`. Fully-connected layers use
/// `(F, C, 1, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightTensor {
    layer_id: String,
    shape: [usize; 4],
    values: Vec<f32>,
}

impl WeightTensor {
    pub fn new(layer_id: impl Into<String>, shape: [usize; 4], values: Vec<f32>) -> Result<Self> {
        let layer_id = layer_id.into();
        if shape.contains(&0) {
            return Err(Error::validation(format!("{layer_id}: zero-sized dimension in {shape:?}")));
        }
        if shape.iter().product::<usize>() != values.len() {
            return Err(Error::validation(format!(
                "{layer_id}: {} values do not fill shape {shape:?}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!("{layer_id}: non-finite weight at flat index {i}")));
        }
        Ok(Self {
            layer_id,
            shape,
            values,
        })
    }

    pub fn layer_id(&self) -> &str {
        &self.layer_id
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }
}

/// Binary keep (1) / prune (0) pattern for one weight tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct PruningMask {
    shape: [usize; 4],
    granularity: Granularity,
    bits: Vec<u8>,
    sparsity: f64,
}

impl PruningMask {
    pub fn ones(shape: [usize; 4], granularity: Granularity) -> Self {
        Self {
            shape,
            granularity,
            bits: vec![1; shape.iter().product()],
            sparsity: 0.0,
        }
    }

    /// Builds a mask from raw bits, checking size, binary values and
    /// group-constancy.
    pub fn from_bits(shape: [usize; 4], granularity: Granularity, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != shape.iter().product::<usize>() {
            return Err(Error::validation(format!(
                "mask has {} bits but shape {shape:?} needs {}",
                bits.len(),
                shape.iter().product::<usize>()
            )));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::validation("mask bits must be 0 or 1"));
        }
        let len = granularity.group_len(shape);
        if let Some(g) = bits.chunks(len).position(|grp| grp.iter().any(|&b| b != grp[0])) {
            return Err(Error::validation(format!(
                "mask group {g} is not constant at {granularity} granularity"
            )));
        }
        let sparsity = zero_fraction(&bits);
        Ok(Self {
            shape,
            granularity,
            bits,
            sparsity,
        })
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn granularity(&self) -> Granularity {
        self.granularity
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn sparsity(&self) -> f64 {
        self.sparsity
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn zero_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 0).count()
    }

    pub fn group_count(&self) -> usize {
        self.granularity.group_count(self.shape)
    }

    /// Indices of fully pruned groups.
    pub fn pruned_groups(&self) -> Vec<usize> {
        let len = self.granularity.group_len(self.shape);
        self.bits
            .chunks(len)
            .enumerate()
            .filter_map(|(g, grp)| (grp[0] == 0).then_some(g))
            .collect()
    }

    /// Zeroes masked positions of a raw buffer in place.
    pub fn apply_in_place(&self, values: &mut [f32]) -> Result<()> {
        if values.len() != self.bits.len() {
            return Err(Error::validation(format!(
                "mask of {} bits applied to {} values",
                self.bits.len(),
                values.len()
            )));
        }
        for (v, &b) in values.iter_mut().zip(&self.bits) {
            if b == 0 {
                *v = 0.0;
            }
        }
        Ok(())
    }
}

fn zero_fraction(bits: &[u8]) -> f64 {
    if bits.is_empty() {
        return 0.0;
    }
    let zeros = bits.iter().filter(|&&b| b == 0).count();
    zeros as f64 / bits.len() as f64
}

/// Per-group L1 norms, in row-major group order.
pub fn compute_group_scores(weights: &WeightTensor, granularity: Granularity) -> Result<Vec<f64>> {
    let len = granularity.group_len(weights.shape);
    Ok(weights
        .values
        .chunks(len)
        .map(|g| g.iter().map(|v| v.abs() as f64).sum())
        .collect())
}

/// Number of groups to zero for a target sparsity: `floor(s · n)`.
///
/// The product is nudged by 1e-9 before flooring so that targets such as
/// 0.29 on 100 groups yield 29 rather than 28 from binary rounding.
pub fn pruned_group_count(target_sparsity: f64, group_count: usize) -> usize {
    let raw = target_sparsity * group_count as f64;
    ((raw + 1e-9).floor() as usize).min(group_count)
}

pub fn build_mask(
    scores: &[f64],
    granularity: Granularity,
    target_sparsity: f64,
    shape: [usize; 4],
) -> Result<PruningMask> {
    if !(0.0..=1.0).contains(&target_sparsity) {
        return Err(Error::validation(format!(
            "target sparsity {target_sparsity} outside [0, 1]"
        )));
    }
    let groups = granularity.group_count(shape);
    if scores.len() != groups {
        return Err(Error::validation(format!(
            "{} scores given but shape {shape:?} has {groups} {granularity} groups",
            scores.len()
        )));
    }
    let mut order: Vec<usize> = (0..groups).collect();
    // Stable sort: equal scores keep ascending index order.
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let len = granularity.group_len(shape);
    let mut bits = vec![1u8; groups * len];
    for &g in &order[..pruned_group_count(target_sparsity, groups)] {
        bits[g * len..(g + 1) * len].iter_mut().for_each(|b| *b = 0);
    }
    let sparsity = zero_fraction(&bits);
    Ok(PruningMask {
        shape,
        granularity,
        bits,
        sparsity,
    })
}

/// Scores and masks a tensor in one go.
pub fn magnitude_mask(weights: &WeightTensor, granularity: Granularity, target_sparsity: f64) -> Result<PruningMask> {
    let scores = compute_group_scores(weights, granularity)?;
    build_mask(&scores, granularity, target_sparsity, weights.shape)
}

pub fn apply_mask(weights: &WeightTensor, mask: &PruningMask) -> Result<WeightTensor> {
    if weights.shape != mask.shape {
        return Err(Error::validation(format!(
            "layer {}: weight shape {:?} does not match mask shape {:?}",
            weights.layer_id, weights.shape, mask.shape
        )));
    }
    let mut out = weights.clone();
    mask.apply_in_place(&mut out.values)?;
    Ok(out)
}

pub fn sparsity_of(mask: &PruningMask) -> f64 {
    zero_fraction(&mask.bits)
}
