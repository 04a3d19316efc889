use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    mdl_cost_from_log_likelihood, parameter_count, ComponentDensity, EmConfig, GaussianComponent,
    MixtureModel,
};
use crate::error::{Error, Result};
use crate::pointcloud::PointCloud;

/// Rows of the E-step are processed in blocks of this many points.
const ROW_BLOCK: usize = 256;

/// Posterior component memberships, one row per point.
#[derive(Debug, Clone)]
pub struct Responsibilities {
    pub points: usize,
    pub components: usize,
    /// Row-major `points x components`.
    pub values: Vec<f64>,
    /// Log-likelihood of the model that produced these responsibilities.
    pub log_likelihood: f64,
}

impl Responsibilities {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.components..(i + 1) * self.components]
    }

    /// Effective point count of each component, `Σ_i w_ik`.
    pub fn support(&self) -> Vec<f64> {
        let mut n = vec![0.0; self.components];
        for row in self.values.chunks_exact(self.components) {
            for (s, w) in n.iter_mut().zip(row) {
                *s += w;
            }
        }
        n
    }
}

/// Absolute covariance floor for `cloud`: the relative floor times the mean
/// per-axis variance of the data.
pub fn covariance_floor(cloud: &PointCloud, relative: f64) -> f64 {
    let scale = cloud.covariance_trace() / cloud.dim() as f64;
    relative * if scale > 0.0 { scale } else { 1.0 }
}

/// Seeds `min(k_init, N)` components at distinct sampled data points with
/// isotropic covariance `tr(cov)/(10 D)` and uniform weights.
pub fn initialize(cloud: &PointCloud, config: &EmConfig) -> Result<MixtureModel> {
    config.validate()?;
    if cloud.is_empty() {
        return Err(Error::InvalidInput(
            "cannot fit a mixture to an empty cloud".into(),
        ));
    }
    let n = cloud.len();
    let k = config.k_init.min(n);
    if k < config.k_init {
        log::warn!(
            "cloud has only {n} points; reducing initial components from {} to {k}",
            config.k_init
        );
    }
    let dim = cloud.dim();
    let mut variance = cloud.covariance_trace() / (10.0 * dim as f64);
    if !(variance > 0.0) {
        variance = covariance_floor(cloud, config.covariance_floor);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let picks = rand::seq::index::sample(&mut rng, n, k);
    let components = picks
        .iter()
        .map(|i| GaussianComponent::isotropic(1.0 / k as f64, cloud.point(i).to_vec(), variance))
        .collect();
    MixtureModel::new(dim, components)
}

/// Computes `w_ik = α_k p(s_i|θ_k) / Σ_j α_j p(s_i|θ_j)` in log space.
pub fn e_step(model: &MixtureModel, cloud: &PointCloud) -> Result<Responsibilities> {
    if model.dim != cloud.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim,
            actual: cloud.dim(),
        });
    }
    if model.is_empty() {
        return Err(Error::InvalidInput("mixture has no components".into()));
    }
    let densities = model
        .components
        .iter()
        .map(ComponentDensity::new)
        .collect::<Result<Vec<_>>>()?;
    let log_weights: Vec<f64> = model.weights().map(f64::ln).collect();
    let k = model.len();
    let n = cloud.len();
    let mut values = vec![0.0; n * k];
    let mut row_ll = vec![0.0; n];

    values
        .par_chunks_mut(ROW_BLOCK * k)
        .zip(row_ll.par_chunks_mut(ROW_BLOCK))
        .enumerate()
        .for_each(|(block, (vals, lls))| {
            let first = block * ROW_BLOCK;
            for (r, (row, ll)) in vals.chunks_exact_mut(k).zip(lls.iter_mut()).enumerate() {
                let x = cloud.point(first + r);
                let mut max = f64::NEG_INFINITY;
                for ((v, d), lw) in row.iter_mut().zip(&densities).zip(&log_weights) {
                    *v = lw + d.logpdf(x);
                    max = max.max(*v);
                }
                let mut sum = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    sum += *v;
                }
                for v in row.iter_mut() {
                    *v /= sum;
                }
                *ll = max + sum.ln();
            }
        });

    // fixed summation order keeps the result independent of the thread count
    let log_likelihood: f64 = row_ll.iter().sum();
    assert!(
        log_likelihood.is_finite() || n == 0,
        "E-step produced a non-finite log-likelihood"
    );
    Ok(Responsibilities {
        points: n,
        components: k,
        values,
        log_likelihood,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MStepParams {
    /// Absolute value added to every covariance diagonal.
    pub floor: f64,
    /// Never leave fewer live components than this.
    pub min_components: usize,
}

#[derive(Debug, Clone)]
pub struct MStepOutcome {
    pub model: MixtureModel,
    /// Indices (in the input model) of the components that survived.
    pub survivors: Vec<usize>,
    /// Set when annihilation would have left fewer than `min_components` and
    /// the largest-support components were kept instead.
    pub degenerate: bool,
}

/// M-step with component annihilation: `α_k ∝ max(0, n_k − P/2)`; components
/// whose weight reaches zero are dropped, the rest get the usual weighted
/// mean and covariance (plus the floor).
pub fn modified_m_step(
    model: &MixtureModel,
    cloud: &PointCloud,
    resp: &Responsibilities,
    params: &MStepParams,
) -> Result<MStepOutcome> {
    let dim = cloud.dim();
    if model.dim != dim {
        return Err(Error::DimensionMismatch {
            expected: model.dim,
            actual: dim,
        });
    }
    if resp.points != cloud.len() || resp.components != model.len() {
        return Err(Error::InvalidInput(
            "responsibility matrix does not match model and cloud".into(),
        ));
    }
    let support = resp.support();
    let half_p = parameter_count(dim) as f64 / 2.0;
    let trimmed: Vec<f64> = support.iter().map(|&s| (s - half_p).max(0.0)).collect();
    let mut survivors: Vec<usize> = (0..model.len()).filter(|&k| trimmed[k] > 0.0).collect();
    let min_components = params.min_components.max(1).min(model.len());

    let (survivors, raw_weights, degenerate) = if survivors.len() >= min_components {
        let w = survivors.iter().map(|&k| trimmed[k]).collect::<Vec<_>>();
        (survivors, w, false)
    } else {
        // keep the best-supported components, weighted by plain support
        let mut order: Vec<usize> = (0..model.len()).collect();
        order.sort_by(|&a, &b| support[b].total_cmp(&support[a]).then(a.cmp(&b)));
        survivors = order[..min_components].to_vec();
        survivors.sort_unstable();
        log::warn!(
            "annihilation left {} live components; keeping the {min_components} best supported",
            trimmed.iter().filter(|t| **t > 0.0).count()
        );
        let w = survivors.iter().map(|&k| support[k]).collect::<Vec<_>>();
        (survivors, w, true)
    };
    let total: f64 = raw_weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidInput("no component has positive support".into()));
    }

    let k_all = model.len();
    let components = survivors
        .iter()
        .zip(&raw_weights)
        .map(|(&k, &raw)| {
            let nk = support[k];
            let mut mean = [0.0; 3];
            for (i, p) in cloud.points().enumerate() {
                let w = resp.values[i * k_all + k];
                for d in 0..dim {
                    mean[d] += w * p[d];
                }
            }
            for m in mean.iter_mut() {
                *m /= nk;
            }
            let mut cov = [[0.0; 3]; 3];
            for (i, p) in cloud.points().enumerate() {
                let w = resp.values[i * k_all + k];
                let mut diff = [0.0; 3];
                for d in 0..dim {
                    diff[d] = p[d] - mean[d];
                }
                for r in 0..dim {
                    for c in 0..=r {
                        cov[r][c] += w * diff[r] * diff[c];
                    }
                }
            }
            let covariance = DMatrix::from_fn(dim, dim, |r, c| {
                let v = if c <= r { cov[r][c] } else { cov[c][r] } / nk;
                if r == c {
                    v + params.floor
                } else {
                    v
                }
            });
            GaussianComponent {
                weight: raw / total,
                mean: mean[..dim].to_vec(),
                covariance,
            }
        })
        .collect();

    Ok(MStepOutcome {
        model: MixtureModel::new(dim, components)?,
        survivors,
        degenerate,
    })
}

/// One EM iteration as recorded in the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// Which inner run (candidate) this iteration belongs to.
    pub run: usize,
    pub iteration: usize,
    pub components: usize,
    pub neg_log_likelihood: f64,
    pub mdl_cost: f64,
}

/// The end state of one inner EM run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub components: usize,
    pub neg_log_likelihood: f64,
    pub mdl_cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EmTrace {
    pub iterations: Vec<IterationRecord>,
    pub candidates: Vec<CandidateRecord>,
    /// Index into `candidates` of the returned model.
    pub selected: usize,
    pub selected_cost: f64,
    pub k_star: usize,
    /// M-steps that fell back to keeping the best-supported components.
    pub degenerate_steps: usize,
}

struct InnerRun {
    model: MixtureModel,
    log_likelihood: f64,
    iterations: usize,
    converged: bool,
}

fn run_inner(
    mut model: MixtureModel,
    cloud: &PointCloud,
    config: &EmConfig,
    params: &MStepParams,
    run: usize,
    trace: &mut EmTrace,
) -> Result<InnerRun> {
    let n = cloud.len();
    let mut previous: Option<f64> = None;
    let mut iteration = 0;
    loop {
        let resp = e_step(&model, cloud)?;
        let ll = resp.log_likelihood;
        trace.iterations.push(IterationRecord {
            run,
            iteration,
            components: model.len(),
            neg_log_likelihood: -ll,
            mdl_cost: mdl_cost_from_log_likelihood(&model, n, ll),
        });
        let converged = previous.is_some_and(|p| (ll - p).abs() < config.tol);
        if converged || iteration == config.max_iters {
            return Ok(InnerRun {
                model,
                log_likelihood: ll,
                iterations: iteration,
                converged,
            });
        }
        let out = modified_m_step(&model, cloud, &resp, params)?;
        if out.degenerate {
            trace.degenerate_steps += 1;
        }
        model = out.model;
        previous = Some(ll);
        iteration += 1;
    }
}

/// Removes the lightest component (lowest index on ties) and renormalizes.
fn drop_lightest(model: &MixtureModel) -> MixtureModel {
    let (victim, _) = model
        .components
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (k, c)| {
            if c.weight < best.1 {
                (k, c.weight)
            } else {
                best
            }
        });
    let mut components = model.components.clone();
    components.remove(victim);
    let total: f64 = components.iter().map(|c| c.weight).sum();
    for c in &mut components {
        c.weight /= total;
    }
    MixtureModel {
        dim: model.dim,
        components,
    }
}

/// Fits a mixture to `cloud` and returns the model with the lowest
/// description-length cost among all converged candidates, with the trace.
pub fn fit(cloud: &PointCloud, config: &EmConfig) -> Result<(MixtureModel, EmTrace)> {
    let mut model = initialize(cloud, config)?;
    let params = MStepParams {
        floor: covariance_floor(cloud, config.covariance_floor),
        min_components: config.k_min,
    };
    let n = cloud.len();
    let mut trace = EmTrace::default();
    let mut best: Option<(MixtureModel, f64)> = None;
    loop {
        let run = trace.candidates.len();
        let inner = run_inner(model, cloud, config, &params, run, &mut trace)?;
        let cost = mdl_cost_from_log_likelihood(&inner.model, n, inner.log_likelihood);
        trace.candidates.push(CandidateRecord {
            components: inner.model.len(),
            neg_log_likelihood: -inner.log_likelihood,
            mdl_cost: cost,
            iterations: inner.iterations,
            converged: inner.converged,
        });
        if best.as_ref().is_none_or(|(_, c)| cost < *c) {
            trace.selected = run;
            best = Some((inner.model.clone(), cost));
        }
        if !config.force_annihilation || inner.model.len() <= config.k_min.max(1) {
            break;
        }
        model = drop_lightest(&inner.model);
    }
    let (model, cost) = best.expect("at least one candidate");
    trace.selected_cost = cost;
    trace.k_star = model.len();
    Ok((model, trace))
}
