use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::PointCloud;
use crate::error::{Error, Result};

/// Eigenvalues at or below this fraction of the largest count as zero.
const RANK_TOLERANCE: f64 = 1e-12;

/// A linear projection onto the leading principal directions of a point set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaTransform {
    pub mean: Vec<f64>,
    /// `target_dim` orthonormal rows, each of length `source_dim`.
    pub basis: Vec<Vec<f64>>,
    /// Variance along each basis row, non-increasing.
    pub explained_variance: Vec<f64>,
}

impl PcaTransform {
    pub fn source_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn target_dim(&self) -> usize {
        self.basis.len()
    }

    pub fn project(&self, point: &[f64]) -> Vec<f64> {
        self.basis
            .iter()
            .map(|row| {
                row.iter()
                    .zip(point.iter().zip(&self.mean))
                    .map(|(b, (p, m))| b * (p - m))
                    .sum()
            })
            .collect()
    }

    /// Maps a reduced-space point back into the source frame (`mean + basisᵀ y`).
    pub fn back_project(&self, reduced: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (row, y) in self.basis.iter().zip(reduced) {
            for (o, b) in out.iter_mut().zip(row) {
                *o += b * y;
            }
        }
        out
    }

    /// Maps a reduced-space covariance back into the source frame (`Bᵀ Σ B`).
    /// The result is singular when `target_dim < source_dim`.
    pub fn back_project_covariance(&self, cov: &DMatrix<f64>) -> DMatrix<f64> {
        let basis = DMatrix::from_fn(self.target_dim(), self.source_dim(), |r, c| self.basis[r][c]);
        basis.transpose() * cov * basis
    }
}

/// Fits principal directions to the union of `clouds`, so every cloud shares
/// one frame. Covariance uses the `n - 1` denominator.
pub fn pca_fit(clouds: &[&PointCloud], target_dim: usize) -> Result<PcaTransform> {
    let Some(first) = clouds.first() else {
        return Err(Error::InvalidInput("PCA needs at least one cloud".into()));
    };
    let dim = first.dim();
    for c in clouds {
        if c.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: c.dim(),
            });
        }
    }
    if target_dim == 0 || target_dim > dim {
        return Err(Error::InvalidConfig(format!(
            "PCA target dimension must be in 1..={dim}, got {target_dim}"
        )));
    }
    let n: usize = clouds.iter().map(|c| c.len()).sum();
    if n < dim + 1 {
        return Err(Error::InvalidInput(format!(
            "PCA needs at least {} points, got {n}",
            dim + 1
        )));
    }

    // Per-cloud partial sums combined afterwards: with two clouds the result
    // does not depend on their order.
    let mut sum = DVector::zeros(dim);
    for c in clouds {
        sum += DVector::from_column_slice(&c.centroid().unwrap_or(vec![0.0; dim])) * c.len() as f64;
    }
    let mean = sum / n as f64;
    let mut scatter = DMatrix::zeros(dim, dim);
    for c in clouds {
        let mut s = DMatrix::zeros(dim, dim);
        for p in c.points() {
            let d = DVector::from_column_slice(p) - &mean;
            s += &d * d.transpose();
        }
        scatter += s;
    }
    let cov = scatter / (n - 1) as f64;

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let rank = order
        .iter()
        .filter(|&&i| top > 0.0 && eig.eigenvalues[i] > top * RANK_TOLERANCE)
        .count();
    if target_dim > rank {
        return Err(Error::RankDeficient {
            achieved: rank,
            requested: target_dim,
        });
    }

    let basis = order[..target_dim]
        .iter()
        .map(|&i| {
            let mut row: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            row.iter_mut().for_each(|v| *v /= norm);
            // sign convention: largest-magnitude entry positive
            let lead = (0..dim)
                .max_by(|&a, &b| row[a].abs().total_cmp(&row[b].abs()).then(b.cmp(&a)))
                .unwrap_or(0);
            if row[lead] < 0.0 {
                row.iter_mut().for_each(|v| *v = -*v);
            }
            row
        })
        .collect();
    let explained_variance = order[..target_dim]
        .iter()
        .map(|&i| eig.eigenvalues[i].max(0.0))
        .collect();

    Ok(PcaTransform {
        mean: mean.iter().copied().collect(),
        basis,
        explained_variance,
    })
}

/// Projects every point of `cloud` through `transform`.
pub fn pca_apply(transform: &PcaTransform, cloud: &PointCloud) -> Result<PointCloud> {
    if cloud.dim() != transform.source_dim() {
        return Err(Error::DimensionMismatch {
            expected: transform.source_dim(),
            actual: cloud.dim(),
        });
    }
    let target = transform.target_dim();
    super::check_dim(target)?;
    let mut coords = Vec::with_capacity(cloud.len() * target);
    for p in cloud.points() {
        coords.extend(transform.project(p));
    }
    let mut out = PointCloud::from_flat(target, coords)?;
    out.frame_id = cloud.frame_id.clone();
    Ok(out)
}
