//! Fréchet distance between Gaussian fits of two feature sets.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const EIGEN_MAX_ITER: usize = 10_000;
/// Slightly negative results within this distance of zero are clamped.
pub const NEGATIVE_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrechetStats {
    pub mean: Vec<f64>,
    /// Row-major `d × d`.
    pub covariance: Vec<f64>,
    pub sample_count: usize,
}

impl FrechetStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn cov(&self, i: usize, j: usize) -> f64 {
        self.covariance[i * self.dim() + j]
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.covariance.len() != d * d {
            return Err(Error::validation(format!(
                "covariance has {} entries for dimension {d}",
                self.covariance.len()
            )));
        }
        if self.sample_count < 2 {
            return Err(Error::validation("statistics need at least 2 samples"));
        }
        for i in 0..d {
            for j in 0..i {
                if (self.cov(i, j) - self.cov(j, i)).abs() > 1e-9 {
                    return Err(Error::validation(format!("covariance is not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(())
    }
}

/// Single-pass mean and co-moment accumulator (Welford).
#[derive(Clone, Debug)]
pub struct StatsAccumulator {
    count: usize,
    mean: Vec<f64>,
    comoment: Vec<f64>,
    delta: Vec<f64>,
}

impl StatsAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; dim],
            comoment: vec![0.0; dim * dim],
            delta: vec![0.0; dim],
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn push(&mut self, x: &[f64]) -> Result<()> {
        let d = self.mean.len();
        if x.len() != d {
            return Err(Error::validation(format!("feature of length {} pushed to {d}-dim stats", x.len())));
        }
        self.count += 1;
        let n = self.count as f64;
        for i in 0..d {
            self.delta[i] = x[i] - self.mean[i];
            self.mean[i] += self.delta[i] / n;
        }
        for i in 0..d {
            let after = x[i] - self.mean[i];
            let row = &mut self.comoment[i * d..(i + 1) * d];
            for j in 0..d {
                row[j] += after * self.delta[j];
            }
        }
        Ok(())
    }

    /// Mean and unbiased covariance.
    pub fn finish(&self) -> Result<FrechetStats> {
        if self.count < 2 {
            return Err(Error::validation(format!("need at least 2 images, got {}", self.count)));
        }
        let d = self.mean.len();
        let denom = (self.count - 1) as f64;
        let mut cov = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] = 0.5 * (self.comoment[i * d + j] + self.comoment[j * d + i]) / denom;
            }
        }
        Ok(FrechetStats {
            mean: self.mean.clone(),
            covariance: cov,
            sample_count: self.count,
        })
    }
}

pub fn feature_stats<I, F>(features: I) -> Result<FrechetStats>
where
    I: IntoIterator<Item = F>,
    F: AsRef<[f64]>,
{
    let mut it = features.into_iter().peekable();
    let dim = it.peek().map(|f| f.as_ref().len()).unwrap_or(0);
    let mut acc = StatsAccumulator::new(dim);
    for f in it {
        acc.push(f.as_ref())?;
    }
    acc.finish()
}

fn to_matrix(s: &FrechetStats) -> DMatrix<f64> {
    DMatrix::from_row_slice(s.dim(), s.dim(), &s.covariance)
}

fn eigen(m: DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    SymmetricEigen::try_new(m, f64::EPSILON, EIGEN_MAX_ITER)
        .ok_or_else(|| Error::numeric("symmetric eigendecomposition did not converge"))
}

/// Square root of a symmetric positive semi-definite matrix; negative
/// eigenvalues are clamped to zero.
pub fn sqrt_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let e = eigen(sym)?;
    let roots = e.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&e.eigenvectors * DMatrix::from_diagonal(&roots) * e.eigenvectors.transpose())
}

/// `tr((Σa Σb)^{1/2})`, evaluated as `tr((Σa^{1/2} Σb Σa^{1/2})^{1/2})`.
pub fn trace_sqrt_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    let ra = sqrt_psd(a)?;
    let inner = &ra * b * &ra;
    let inner = (&inner + inner.transpose()) * 0.5;
    let e = eigen(inner)?;
    Ok(e.eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum())
}

pub fn frechet_distance(a: &FrechetStats, b: &FrechetStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::validation(format!(
            "feature dimensions differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    a.validate()?;
    b.validate()?;
    let mu = DVector::from_column_slice(&a.mean) - DVector::from_column_slice(&b.mean);
    let (sa, sb) = (to_matrix(a), to_matrix(b));
    let value = mu.norm_squared() + sa.trace() + sb.trace() - 2.0 * trace_sqrt_product(&sa, &sb)?;
    if !value.is_finite() {
        return Err(Error::numeric("Fréchet distance is not finite"));
    }
    if value < 0.0 {
        if value >= -NEGATIVE_TOLERANCE {
            return Ok(0.0);
        }
        return Err(Error::numeric(format!("Fréchet distance came out negative ({value})")));
    }
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(mean: Vec<f64>, cov: Vec<f64>) -> FrechetStats {
        FrechetStats {
            mean,
            covariance: cov,
            sample_count: 10,
        }
    }

    #[test]
    fn constant_features_have_zero_covariance() {
        let v = [1.5, -2.0, 0.25];
        let s = feature_stats(std::iter::repeat_n(v, 7)).unwrap();
        assert_eq!(s.mean, v);
        assert!(s.covariance.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn two_point_covariance() {
        let s = feature_stats([[1.0, 2.0], [3.0, -2.0]]).unwrap();
        // (x1 - x2)(x1 - x2)^T / 2 for two points.
        assert_eq!(s.mean, vec![2.0, 0.0]);
        assert_eq!(s.covariance, vec![2.0, -4.0, -4.0, 8.0]);
    }

    #[test]
    fn too_few_samples() {
        assert!(feature_stats([[1.0]]).is_err());
        assert!(feature_stats(Vec::<Vec<f64>>::new()).is_err());
    }

    #[test]
    fn identical_and_shifted() {
        let id = vec![1.0, 0.0, 0.0, 1.0];
        let a = stats(vec![0.0, 0.0], id.clone());
        assert!(frechet_distance(&a, &a).unwrap() <= 1e-6);
        let b = stats(vec![2.0, 0.0], id);
        assert!((frechet_distance(&a, &b).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch() {
        let a = stats(vec![0.0], vec![1.0]);
        let b = stats(vec![0.0, 0.0], vec![1.0, 0.0, 0.0, 1.0]);
        assert!(matches!(frechet_distance(&a, &b), Err(Error::Validation(_))));
    }

    #[test]
    fn commuting_diagonal_case() {
        // Diagonal covariances: tr term is sum (sqrt(a) - sqrt(b))^2.
        let a = stats(vec![0.0; 3], vec![4.0, 0.0, 0.0, 0.0, 9.0, 0.0, 0.0, 0.0, 1.0]);
        let b = stats(vec![0.0; 3], vec![1.0, 0.0, 0.0, 0.0, 4.0, 0.0, 0.0, 0.0, 1.0]);
        assert!((frechet_distance(&a, &b).unwrap() - 2.0).abs() < 1e-12);
    }
}
