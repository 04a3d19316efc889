use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kdtree::KdTree;
use super::PointCloud;
use crate::error::{Error, Result};

/// Parameters of the outlier and downsampling filters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterParams {
    /// Voxel edge length in meters.
    pub voxel_size: f64,
    /// Neighbour count for statistical outlier removal.
    pub sor_neighbors: usize,
    /// Standard-deviation multiplier for statistical outlier removal.
    pub sor_stddev_mult: f64,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self {
            voxel_size: 0.05,
            sor_neighbors: 50,
            sor_stddev_mult: 1.0,
        }
    }
}

impl FilterParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.voxel_size > 0.0) || !self.voxel_size.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "voxel_size must be positive, got {}",
                self.voxel_size
            )));
        }
        if self.sor_neighbors == 0 {
            return Err(Error::InvalidConfig("sor_neighbors must be at least 1".into()));
        }
        if !(self.sor_stddev_mult > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "sor_stddev_mult must be positive, got {}",
                self.sor_stddev_mult
            )));
        }
        Ok(())
    }
}

/// Replaces the points of each occupied voxel by their centroid. The grid is
/// anchored at the cloud's own minimum corner.
pub fn voxel_downsample(cloud: &PointCloud, voxel_size: f64) -> Result<PointCloud> {
    match cloud.bounds() {
        None => Ok(cloud.clone()),
        Some((lo, _)) => voxel_downsample_anchored(cloud, voxel_size, &lo),
    }
}

/// Voxel downsampling on a grid anchored at `anchor`. Output points appear in
/// order of first occupancy.
pub fn voxel_downsample_anchored(cloud: &PointCloud, voxel_size: f64, anchor: &[f64]) -> Result<PointCloud> {
    if !(voxel_size > 0.0) || !voxel_size.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "voxel_size must be positive, got {voxel_size}"
        )));
    }
    if anchor.len() != cloud.dim() {
        return Err(Error::DimensionMismatch {
            expected: cloud.dim(),
            actual: anchor.len(),
        });
    }
    let dim = cloud.dim();
    let mut slots: HashMap<[i64; 3], usize> = HashMap::new();
    let mut sums: Vec<f64> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    for p in cloud.points() {
        let mut key = [0i64; 3];
        for d in 0..dim {
            key[d] = ((p[d] - anchor[d]) / voxel_size).floor() as i64;
        }
        let slot = *slots.entry(key).or_insert_with(|| {
            sums.extend(std::iter::repeat_n(0.0, dim));
            counts.push(0);
            counts.len() - 1
        });
        counts[slot] += 1;
        for d in 0..dim {
            sums[slot * dim + d] += p[d];
        }
    }
    let coords = sums
        .chunks_exact(dim)
        .zip(&counts)
        .flat_map(|(s, &n)| s.iter().map(move |v| v / n as f64))
        .collect();
    let mut out = PointCloud::from_flat(dim, coords)?;
    out.frame_id = cloud.frame_id.clone();
    Ok(out)
}

/// Result of [`statistical_outlier_removal`].
#[derive(Debug, Clone)]
pub struct OutlierRemoval {
    pub cloud: PointCloud,
    /// Indices of the surviving input points, in input order.
    pub kept: Vec<usize>,
    /// Set when the filter could not run (too few points) and returned the input.
    pub skipped: bool,
}

/// Removes points whose mean distance to their `k` nearest neighbours exceeds
/// `mean + stddev_mult * stddev` of that statistic over the cloud. The
/// standard deviation uses the `n - 1` denominator.
pub fn statistical_outlier_removal(cloud: &PointCloud, k: usize, stddev_mult: f64) -> Result<OutlierRemoval> {
    if k == 0 {
        return Err(Error::InvalidConfig("outlier filter needs k >= 1".into()));
    }
    if cloud.len() <= k {
        log::warn!(
            "outlier removal skipped: {} points is not more than k = {k}",
            cloud.len()
        );
        return Ok(OutlierRemoval {
            cloud: cloud.clone(),
            kept: (0..cloud.len()).collect(),
            skipped: true,
        });
    }
    let tree = KdTree::build(cloud);
    let mean_dists: Vec<f64> = (0..cloud.len())
        .into_par_iter()
        .map(|i| {
            let nn = tree.nearest(cloud.point(i), k, Some(i));
            nn.iter().map(|n| n.dist2.sqrt()).sum::<f64>() / nn.len() as f64
        })
        .collect();
    let kept = outlier_survivors(&mean_dists, stddev_mult);
    Ok(OutlierRemoval {
        cloud: cloud.select(&kept),
        kept,
        skipped: false,
    })
}

fn outlier_survivors(mean_dists: &[f64], stddev_mult: f64) -> Vec<usize> {
    let n = mean_dists.len() as f64;
    let mean = mean_dists.iter().sum::<f64>() / n;
    let var = mean_dists.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    let threshold = mean + stddev_mult * var.sqrt();
    mean_dists
        .iter()
        .enumerate()
        .filter(|(_, d)| **d <= threshold)
        .map(|(i, _)| i)
        .collect()
}

/// Keeps points inside the closed box `[min_corner, max_corner]`.
pub fn crop_aabb(cloud: &PointCloud, min_corner: &[f64], max_corner: &[f64]) -> Result<PointCloud> {
    for corner in [min_corner, max_corner] {
        if corner.len() != cloud.dim() {
            return Err(Error::DimensionMismatch {
                expected: cloud.dim(),
                actual: corner.len(),
            });
        }
    }
    if min_corner.iter().zip(max_corner).any(|(a, b)| a > b) {
        return Err(Error::InvalidInput(
            "crop box min corner exceeds max corner".into(),
        ));
    }
    let kept: Vec<usize> = cloud
        .points()
        .enumerate()
        .filter(|(_, p)| {
            p.iter()
                .zip(min_corner.iter().zip(max_corner))
                .all(|(c, (lo, hi))| *lo <= *c && *c <= *hi)
        })
        .map(|(i, _)| i)
        .collect();
    Ok(cloud.select(&kept))
}
