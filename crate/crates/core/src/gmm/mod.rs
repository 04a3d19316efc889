//! Gaussian mixture models fitted by Expectation-Maximization.
//!
//! The M-step annihilates components supported by fewer than `P/2` effective
//! points, where `P = D + D(D+1)/2` is the parameter count of one full-covariance
//! Gaussian. Model selection minimizes a minimum-description-length cost over
//! the sequence of converged models.

mod density;
mod em;
mod io;

pub use density::component_logpdf;
pub(crate) use density::ComponentDensity;
pub use em::{
    covariance_floor, e_step, fit, initialize, modified_m_step, CandidateRecord, EmTrace, IterationRecord,
    MStepOutcome, MStepParams, Responsibilities,
};
pub use io::{load_model, save_model};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointcloud::PointCloud;

/// Free parameters of one full-covariance Gaussian in `dim` dimensions.
pub fn parameter_count(dim: usize) -> usize {
    dim + dim * (dim + 1) / 2
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub covariance: DMatrix<f64>,
}

impl GaussianComponent {
    pub fn new(weight: f64, mean: Vec<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if covariance.nrows() != d || covariance.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: covariance.nrows(),
            });
        }
        Ok(Self {
            weight,
            mean,
            covariance,
        })
    }

    /// Isotropic component `N(mean, variance * I)`.
    pub fn isotropic(weight: f64, mean: Vec<f64>, variance: f64) -> Self {
        let d = mean.len();
        Self {
            weight,
            mean,
            covariance: DMatrix::identity(d, d) * variance,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Square root of the largest covariance eigenvalue.
    pub fn max_std_dev(&self) -> f64 {
        let eig = nalgebra::SymmetricEigen::new(self.covariance.clone());
        eig.eigenvalues.iter().copied().fold(0.0, f64::max).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureModel {
    pub dim: usize,
    pub components: Vec<GaussianComponent>,
}

impl MixtureModel {
    pub fn new(dim: usize, components: Vec<GaussianComponent>) -> Result<Self> {
        for c in &components {
            if c.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: c.dim(),
                });
            }
        }
        Ok(Self { dim, components })
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.components.iter().map(|c| c.weight)
    }

    pub fn total_weight(&self) -> f64 {
        self.weights().sum()
    }

    /// Checks the structural invariants: non-empty, weights in (0, 1] summing
    /// to one, symmetric positive-definite covariances.
    pub fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::InvalidInput("mixture has no components".into()));
        }
        for (k, c) in self.components.iter().enumerate() {
            if !(c.weight > 0.0 && c.weight <= 1.0 + 1e-12) {
                return Err(Error::InvalidInput(format!(
                    "component {k} has weight {} outside (0, 1]",
                    c.weight
                )));
            }
            if c.mean.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "component {k} has a non-finite mean"
                )));
            }
            let asym = (&c.covariance - c.covariance.transpose()).abs().max();
            if !(asym <= 1e-12 * c.covariance.abs().max().max(1.0)) {
                return Err(Error::InvalidInput(format!(
                    "component {k} covariance is not symmetric"
                )));
            }
            ComponentDensity::new(c)?;
        }
        let total = self.total_weight();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!("weights sum to {total}, not 1")));
        }
        Ok(())
    }
}

/// `Σ_i log Σ_k α_k N(s_i; μ_k, Σ_k)`, log-sum-exp stabilized. Zero for an
/// empty cloud.
pub fn log_likelihood(model: &MixtureModel, cloud: &PointCloud) -> Result<f64> {
    if cloud.is_empty() {
        return Ok(0.0);
    }
    Ok(e_step(model, cloud)?.log_likelihood)
}

/// Description-length cost of `model` on a cloud of `n` points with the given
/// log-likelihood. Only components with positive weight are counted.
pub fn mdl_cost_from_log_likelihood(model: &MixtureModel, n: usize, log_likelihood: f64) -> f64 {
    let p = parameter_count(model.dim) as f64;
    let n = n as f64;
    let live: Vec<f64> = model.weights().filter(|&w| w > 0.0).collect();
    let k_nz = live.len() as f64;
    let weight_term: f64 = live.iter().map(|&a| (n * a / 12.0).ln()).sum();
    0.5 * p * weight_term + 0.5 * k_nz * (n / 2.0).ln() + 0.5 * k_nz * (p + 1.0) - log_likelihood
}

/// Description-length cost of `model` on `cloud`; lower is better.
pub fn mdl_cost(model: &MixtureModel, cloud: &PointCloud) -> Result<f64> {
    if model.weights().all(|w| w <= 0.0) {
        return Err(Error::InvalidInput("MDL cost needs a live component".into()));
    }
    let ll = log_likelihood(model, cloud)?;
    Ok(mdl_cost_from_log_likelihood(model, cloud.len(), ll))
}

/// Default EM settings: 25 initial components, at least 1, tolerance 1e-5 on
/// the log-likelihood change, at most 100 iterations per inner run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub k_init: usize,
    pub k_min: usize,
    pub tol: f64,
    pub max_iters: usize,
    pub seed: u64,
    /// Relative covariance floor, scaled by the mean per-axis data variance.
    pub covariance_floor: f64,
    /// After each inner convergence, delete the lightest component and refit,
    /// down to `k_min`, keeping the cheapest model.
    pub force_annihilation: bool,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            k_init: 25,
            k_min: 1,
            tol: 1e-5,
            max_iters: 100,
            seed: 0,
            covariance_floor: 1e-6,
            force_annihilation: true,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_min < 1 {
            return Err(Error::InvalidConfig("k_min must be at least 1".into()));
        }
        if self.k_init < self.k_min {
            return Err(Error::InvalidConfig(format!(
                "k_init ({}) must be at least k_min ({})",
                self.k_init, self.k_min
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidConfig("tol must be positive".into()));
        }
        if self.max_iters < 1 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        if !(self.covariance_floor > 0.0) {
            return Err(Error::InvalidConfig("covariance_floor must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_counts() {
        assert_eq!(parameter_count(3), 9);
        assert_eq!(parameter_count(2), 5);
    }

    #[test]
    fn mdl_matches_term_by_term() {
        let model = MixtureModel::new(
            2,
            vec![
                GaussianComponent::isotropic(0.25, vec![0.0, 0.0], 1.0),
                GaussianComponent::isotropic(0.75, vec![3.0, 1.0], 0.5),
            ],
        )
        .unwrap();
        let cloud = PointCloud::from_points(
            2,
            [
                [0.1, 0.2],
                [-0.3, 0.0],
                [2.9, 1.2],
                [3.1, 0.7],
                [3.0, 1.0],
                [2.5, 1.5],
            ],
        )
        .unwrap();
        let n = 6.0_f64;
        // scripted evaluation of each term
        let ll: f64 = cloud
            .points()
            .map(|s| {
                let p0 = 0.25 * (-(s[0].powi(2) + s[1].powi(2)) / 2.0).exp() / (2.0 * std::f64::consts::PI);
                let d2 = (s[0] - 3.0).powi(2) + (s[1] - 1.0).powi(2);
                let p1 = 0.75 * (-d2 / (2.0 * 0.5)).exp() / (2.0 * std::f64::consts::PI * 0.5);
                (p0 + p1).ln()
            })
            .sum();
        let expected = 2.5 * ((n * 0.25 / 12.0).ln() + (n * 0.75 / 12.0).ln())
            + (2.0 / 2.0) * (n / 2.0).ln()
            + 2.0 * 6.0 / 2.0
            - ll;
        let got = mdl_cost(&model, &cloud).unwrap();
        assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
    }

    #[test]
    fn mdl_penalty_difference_for_extra_component() {
        // same log-likelihood, 2 vs 3 live components
        let n = 1000;
        let ll = -1234.5;
        let two = MixtureModel::new(
            3,
            vec![
                GaussianComponent::isotropic(0.5, vec![0.0; 3], 1.0),
                GaussianComponent::isotropic(0.5, vec![1.0; 3], 1.0),
            ],
        )
        .unwrap();
        let three = MixtureModel::new(
            3,
            vec![
                GaussianComponent::isotropic(0.5, vec![0.0; 3], 1.0),
                GaussianComponent::isotropic(0.25, vec![1.0; 3], 1.0),
                GaussianComponent::isotropic(0.25, vec![2.0; 3], 1.0),
            ],
        )
        .unwrap();
        let p = 9.0;
        let nf = n as f64;
        let oracle = 0.5 * p * (2.0 * (nf * 0.25 / 12.0).ln() - (nf * 0.5 / 12.0).ln())
            + 0.5 * (nf / 2.0).ln()
            + 0.5 * (p + 1.0);
        let diff = mdl_cost_from_log_likelihood(&three, n, ll) - mdl_cost_from_log_likelihood(&two, n, ll);
        assert!((diff - oracle).abs() < 1e-9);
    }

    #[test]
    fn config_validation() {
        assert!(EmConfig::default().validate().is_ok());
        let bad = EmConfig {
            k_min: 5,
            k_init: 3,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(EmConfig {
            tol: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(EmConfig {
            max_iters: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn validate_catches_bad_weights() {
        let m = MixtureModel::new(3, vec![GaussianComponent::isotropic(0.5, vec![0.0; 3], 1.0)]).unwrap();
        assert!(m.validate().is_err());
    }
}
