//! Gaussian fits of feature sets and the Fréchet distance between them.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenvalues above `-EIGEN_TOLERANCE` are clipped to zero; anything more
/// negative means the matrix is not positive semidefinite.
pub const EIGEN_TOLERANCE: f64 = 1e-8;

/// Sample mean and unbiased covariance of a feature set.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStats {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub n: usize,
}

impl FeatureStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

pub fn fit_stats(features: &[Vec<f64>]) -> Result<FeatureStats> {
    let n = features.len();
    if n < 2 {
        return Err(Error::Numeric(format!("need at least 2 feature vectors, got {n}")));
    }
    let d = features[0].len();
    if let Some(f) = features.iter().find(|f| f.len() != d) {
        return Err(Error::Shape { what: "feature vector", expected: vec![d], got: vec![f.len()] });
    }
    let mut mean = DVector::zeros(d);
    for f in features {
        mean += DVector::from_column_slice(f);
    }
    mean /= n as f64;
    let mut covariance = DMatrix::zeros(d, d);
    for f in features {
        let c = DVector::from_column_slice(f) - &mean;
        covariance += &c * c.transpose();
    }
    covariance /= (n - 1) as f64;
    Ok(FeatureStats { mean, covariance, n })
}

/// Symmetric square root via eigen-decomposition, clipping small negative
/// eigenvalues.
fn sqrt_psd(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        if *v < -EIGEN_TOLERANCE {
            return Err(Error::Numeric(format!("{what} is not positive semidefinite (eigenvalue {v:e})")));
        }
        *v = v.max(0.0).sqrt();
    }
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose())
}

/// `‖μ_a − μ_b‖² + Tr(Σ_a + Σ_b − 2 (Σ_a Σ_b)^{1/2})`.
///
/// The trace of `(Σ_a Σ_b)^{1/2}` is taken as the trace of the symmetric
/// square root of `Σ_a^{1/2} Σ_b Σ_a^{1/2}`, which has the same eigenvalues.
pub fn frechet_distance(a: &FeatureStats, b: &FeatureStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Shape { what: "feature statistics", expected: vec![a.dim()], got: vec![b.dim()] });
    }
    let diff = &a.mean - &b.mean;
    let sa = sqrt_psd(&a.covariance, "first covariance")?;
    let inner = &sa * &b.covariance * &sa;
    let cross = sqrt_psd(&inner, "covariance product")?.trace();
    let d = diff.norm_squared() + a.covariance.trace() + b.covariance.trace() - 2.0 * cross;
    Ok(d.max(0.0))
}
