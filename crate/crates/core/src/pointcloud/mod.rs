//! Point clouds and the preprocessing that runs ahead of EM.

mod filter;
pub mod kdtree;
mod pca;
pub mod ply;

pub use filter::{
    crop_aabb, statistical_outlier_removal, voxel_downsample, voxel_downsample_anchored, FilterParams,
    OutlierRemoval,
};
pub use pca::{pca_apply, pca_fit, PcaTransform};
pub use ply::{load_ply, load_ply_labeled, save_ply, PlyEncoding};

use crate::error::{Error, Result};

/// An ordered set of 2-D or 3-D points stored as a flat row-major buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    dim: usize,
    coords: Vec<f64>,
    frame_id: Option<String>,
}

impl PointCloud {
    /// Empty cloud of the given dimension.
    pub fn new(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(Self {
            dim,
            coords: Vec::new(),
            frame_id: None,
        })
    }

    /// Builds a cloud from a flat `[x0, y0, (z0), x1, ...]` buffer.
    pub fn from_flat(dim: usize, coords: Vec<f64>) -> Result<Self> {
        check_dim(dim)?;
        if coords.len() % dim != 0 {
            return Err(Error::InvalidInput(format!(
                "flat buffer of length {} is not a multiple of dimension {dim}",
                coords.len()
            )));
        }
        if let Some(pos) = coords.iter().position(|c| !c.is_finite()) {
            return Err(Error::NonFinitePoint { index: pos / dim });
        }
        Ok(Self {
            dim,
            coords,
            frame_id: None,
        })
    }

    pub fn from_points<I, P>(dim: usize, points: I) -> Result<Self>
    where
        I: IntoIterator<Item = P>,
        P: AsRef<[f64]>,
    {
        let mut cloud = Self::new(dim)?;
        for p in points {
            cloud.push(p.as_ref())?;
        }
        Ok(cloud)
    }

    pub fn push(&mut self, point: &[f64]) -> Result<()> {
        if point.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: point.len(),
            });
        }
        if point.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinitePoint { index: self.len() });
        }
        self.coords.extend_from_slice(point);
        Ok(())
    }

    pub fn with_frame_id(mut self, frame_id: impl Into<String>) -> Self {
        self.frame_id = Some(frame_id.into());
        self
    }

    pub fn frame_id(&self) -> Option<&str> {
        self.frame_id.as_deref()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, index: usize) -> &[f64] {
        &self.coords[index * self.dim..(index + 1) * self.dim]
    }

    pub fn points(&self) -> std::slice::ChunksExact<'_, f64> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.coords
    }

    /// Componentwise (min, max) corners, or `None` for an empty cloud.
    pub fn bounds(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let mut pts = self.points();
        let first = pts.next()?;
        let mut lo = first.to_vec();
        let mut hi = first.to_vec();
        for p in pts {
            for d in 0..self.dim {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        Some((lo, hi))
    }

    pub fn centroid(&self) -> Option<Vec<f64>> {
        if self.is_empty() {
            return None;
        }
        let mut sum = vec![0.0; self.dim];
        for p in self.points() {
            for (s, c) in sum.iter_mut().zip(p) {
                *s += c;
            }
        }
        let n = self.len() as f64;
        Some(sum.into_iter().map(|s| s / n).collect())
    }

    /// Trace of the population covariance of the points (0 for fewer than two points).
    pub fn covariance_trace(&self) -> f64 {
        let Some(mean) = self.centroid() else {
            return 0.0;
        };
        let n = self.len() as f64;
        self.points()
            .map(|p| p.iter().zip(&mean).map(|(a, m)| (a - m) * (a - m)).sum::<f64>())
            .sum::<f64>()
            / n
    }

    /// New cloud holding the given points, in the given order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        let mut coords = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            coords.extend_from_slice(self.point(i));
        }
        PointCloud {
            dim: self.dim,
            coords,
            frame_id: self.frame_id.clone(),
        }
    }
}

pub(crate) fn check_dim(dim: usize) -> Result<()> {
    if dim == 2 || dim == 3 {
        Ok(())
    } else {
        Err(Error::UnsupportedDimension(dim))
    }
}

/// Componentwise union of two optional bounding boxes.
pub(crate) fn union_bounds(a: &PointCloud, b: &PointCloud) -> Option<(Vec<f64>, Vec<f64>)> {
    match (a.bounds(), b.bounds()) {
        (None, None) => None,
        (Some(x), None) | (None, Some(x)) => Some(x),
        (Some((alo, ahi)), Some((blo, bhi))) => Some((
            alo.iter().zip(&blo).map(|(x, y)| x.min(*y)).collect(),
            ahi.iter().zip(&bhi).map(|(x, y)| x.max(*y)).collect(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite() {
        let err = PointCloud::from_points(3, [[0.0, 0.0, 0.0], [f64::NAN, 1.0, 2.0]]).unwrap_err();
        assert!(matches!(err, Error::NonFinitePoint { index: 1 }));
        assert!(PointCloud::from_flat(3, vec![0.0, f64::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn rejects_bad_dimension() {
        assert!(matches!(PointCloud::new(4), Err(Error::UnsupportedDimension(4))));
        let mut c = PointCloud::new(2).unwrap();
        assert!(c.push(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn bounds_and_centroid() {
        let c = PointCloud::from_points(2, [[0.0, 1.0], [2.0, -1.0]]).unwrap();
        assert_eq!(c.bounds().unwrap(), (vec![0.0, -1.0], vec![2.0, 1.0]));
        assert_eq!(c.centroid().unwrap(), vec![1.0, 0.0]);
        assert_eq!(c.covariance_trace(), 2.0);
        assert!(PointCloud::new(3).unwrap().bounds().is_none());
    }
}
