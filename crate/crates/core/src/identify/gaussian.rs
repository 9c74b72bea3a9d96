use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::IdentifyError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceKind {
    #[default]
    Full,
    Diagonal,
}

/// Multivariate normal with a ridge-regularized sample covariance.
#[derive(Debug, Clone)]
pub struct GaussianModel {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    /// Lower Cholesky factor of `cov`.
    chol_l: DMatrix<f64>,
    log_norm: f64,
}

impl GaussianModel {
    pub fn from_parts(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self, IdentifyError> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(IdentifyError::DimensionMismatch { expected: d, found: cov.nrows() });
        }
        let chol = cov.clone().cholesky().ok_or(IdentifyError::NotPositiveDefinite)?;
        let chol_l = chol.l();
        let log_det: f64 = 2.0 * chol_l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let log_norm = -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det);
        Ok(Self { mean, cov, chol_l, log_norm })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn log_normalizer(&self) -> f64 {
        self.log_norm
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let diff = DVector::from_iterator(self.dim(), x.iter().zip(self.mean.iter()).map(|(a, b)| a - b));
        let y = self
            .chol_l
            .solve_lower_triangular(&diff)
            .expect("Cholesky factor has a positive diagonal");
        self.log_norm - 0.5 * y.norm_squared()
    }
}

/// Fits mean and unbiased sample covariance plus `ridge·I`.
pub fn fit_gaussian(vectors: &[Vec<f64>], ridge: f64, kind: CovarianceKind) -> Result<GaussianModel, IdentifyError> {
    if vectors.len() < 2 {
        return Err(IdentifyError::TooFewVectors(vectors.len()));
    }
    let d = vectors[0].len();
    if let Some(v) = vectors.iter().find(|v| v.len() != d) {
        return Err(IdentifyError::DimensionMismatch { expected: d, found: v.len() });
    }
    let n = vectors.len() as f64;
    let mut mean = DVector::zeros(d);
    for v in vectors {
        mean += DVector::from_column_slice(v);
    }
    mean /= n;
    let mut cov = DMatrix::zeros(d, d);
    for v in vectors {
        let c = DVector::from_column_slice(v) - &mean;
        cov.ger(1.0, &c, &c, 1.0);
    }
    cov /= n - 1.0;
    if kind == CovarianceKind::Diagonal {
        cov = DMatrix::from_diagonal(&cov.diagonal());
    }
    for i in 0..d {
        cov[(i, i)] += ridge;
    }
    GaussianModel::from_parts(mean, cov)
}
