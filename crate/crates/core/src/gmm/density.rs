use std::f64::consts::PI;

use nalgebra::SymmetricEigen;

use super::GaussianComponent;
use crate::error::{Error, Result};

/// A component with its Cholesky factor precomputed, for repeated density
/// evaluation. Supports dimensions up to 3.
#[derive(Debug, Clone)]
pub(crate) struct ComponentDensity {
    dim: usize,
    mean: [f64; 3],
    // lower-triangular factor, row-major
    chol: [[f64; 3]; 3],
    log_norm: f64,
}

impl ComponentDensity {
    pub(crate) fn new(c: &GaussianComponent) -> Result<Self> {
        let dim = c.dim();
        if dim == 0 || dim > 3 {
            return Err(Error::UnsupportedDimension(dim));
        }
        let mut chol = [[0.0; 3]; 3];
        for r in 0..dim {
            for col in 0..=r {
                let mut s = c.covariance[(r, col)];
                for k in 0..col {
                    s -= chol[r][k] * chol[col][k];
                }
                if r == col {
                    if !(s > 0.0) || !s.is_finite() {
                        let eig = SymmetricEigen::new(c.covariance.clone());
                        let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
                        return Err(Error::NotPositiveDefinite { min_eigenvalue: min });
                    }
                    chol[r][r] = s.sqrt();
                } else {
                    chol[r][col] = s / chol[col][col];
                }
            }
        }
        let log_det: f64 = 2.0 * (0..dim).map(|i| chol[i][i].ln()).sum::<f64>();
        let mut mean = [0.0; 3];
        mean[..dim].copy_from_slice(&c.mean);
        Ok(Self {
            dim,
            mean,
            chol,
            log_norm: -0.5 * (dim as f64 * (2.0 * PI).ln() + log_det),
        })
    }

    #[inline]
    pub(crate) fn logpdf(&self, x: &[f64]) -> f64 {
        let mut y = [0.0; 3];
        let mut maha = 0.0;
        for r in 0..self.dim {
            let mut s = x[r] - self.mean[r];
            for k in 0..r {
                s -= self.chol[r][k] * y[k];
            }
            y[r] = s / self.chol[r][r];
            maha += y[r] * y[r];
        }
        self.log_norm - 0.5 * maha
    }
}

/// `log N(point; μ, Σ)` for one component.
pub fn component_logpdf(component: &GaussianComponent, point: &[f64]) -> Result<f64> {
    if point.len() != component.dim() {
        return Err(Error::DimensionMismatch {
            expected: component.dim(),
            actual: point.len(),
        });
    }
    Ok(ComponentDensity::new(component)?.logpdf(point))
}
