//! Fréchet (2-Wasserstein) distance between Gaussians fitted to sample sets.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{invalid, Error, Result};

/// Sample mean and unbiased covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianMoments {
    pub fn from_samples(samples: &[Vec<f64>]) -> Result<Self> {
        let n = samples.len();
        if n < 2 {
            return Err(Error::Empty(format!("need at least 2 samples for moments, got {n}")));
        }
        let d = samples[0].len();
        let mut mean = DVector::zeros(d);
        for x in samples {
            if x.len() != d {
                return Err(Error::DimensionMismatch { expected: d, actual: x.len() });
            }
            mean += DVector::from_column_slice(x);
        }
        mean /= n as f64;
        let mut cov = DMatrix::zeros(d, d);
        for x in samples {
            let c = DVector::from_column_slice(x) - &mean;
            cov += &c * c.transpose();
        }
        cov /= (n - 1) as f64;
        Ok(Self { mean, cov })
    }

    /// `N(mean, scale^2 I)`.
    pub fn isotropic(mean: &[f64], scale: f64) -> Self {
        let d = mean.len();
        Self { mean: DVector::from_column_slice(mean), cov: DMatrix::identity(d, d) * (scale * scale) }
    }
}

fn check_psd(m: &DMatrix<f64>, name: &str) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    if !m.is_square() {
        return Err(invalid(format!("{name} is not square")));
    }
    let scale = m.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let tol = 1e-9 * scale;
    if (m - m.transpose()).amax() > tol {
        return Err(invalid(format!("{name} is not symmetric")));
    }
    let eig = SymmetricEigen::new((m + m.transpose()) * 0.5);
    if let Some(l) = eig.eigenvalues.iter().find(|&&l| l < -tol) {
        return Err(invalid(format!("{name} is not positive semi-definite (eigenvalue {l})")));
    }
    Ok(eig)
}

/// `|mu1 - mu2|^2 + tr(cov1 + cov2 - 2 (cov1 cov2)^(1/2))`.
///
/// The trace of the root is taken from the eigenvalues of the symmetric
/// matrix `cov1^(1/2) cov2 cov1^(1/2)`, which shares its spectrum with `cov1 cov2`.
pub fn frechet_gaussian(mu1: &DVector<f64>, cov1: &DMatrix<f64>, mu2: &DVector<f64>, cov2: &DMatrix<f64>) -> Result<f64> {
    let d = mu1.len();
    for len in [mu2.len(), cov1.nrows(), cov2.nrows()] {
        if len != d {
            return Err(Error::DimensionMismatch { expected: d, actual: len });
        }
    }
    let e1 = check_psd(cov1, "cov1")?;
    check_psd(cov2, "cov2")?;
    let root1 = {
        let vals = e1.eigenvalues.map(|l| l.max(0.0).sqrt());
        &e1.eigenvectors * DMatrix::from_diagonal(&vals) * e1.eigenvectors.transpose()
    };
    let inner = &root1 * cov2 * &root1;
    let inner = (&inner + inner.transpose()) * 0.5;
    let tr_root: f64 = SymmetricEigen::new(inner).eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum();
    let diff = mu1 - mu2;
    let value = diff.dot(&diff) + cov1.trace() + cov2.trace() - 2.0 * tr_root;
    Ok(value.max(0.0))
}

pub fn frechet_moments(a: &GaussianMoments, b: &GaussianMoments) -> Result<f64> {
    frechet_gaussian(&a.mean, &a.cov, &b.mean, &b.cov)
}
