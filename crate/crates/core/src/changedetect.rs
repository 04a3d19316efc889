//! Greedy extraction of changed mixture components and the end-to-end
//! detection pipeline.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::{self, e_step, EmConfig, GaussianComponent, MixtureModel};
use crate::pointcloud::{
    self, pca_apply, pca_fit, statistical_outlier_removal, voxel_downsample_anchored, FilterParams,
    PcaTransform, PointCloud,
};
use crate::transport::{emd, Signature};

/// An extraction is accepted only if it lowers the EMD by more than this.
pub const DECREASE_TOL: f64 = 1e-9;

/// Dimension of the joint PCA projection used by the pipeline.
pub const PCA_TARGET_DIM: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectionMode {
    /// Components of the later model missing from the earlier one.
    Appear,
    /// Components of the earlier model missing from the later one; runs the
    /// appearance search with the models swapped.
    Disappear,
}

/// How the searched model's masses are treated once components have been
/// extracted from it.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MassPolicy {
    /// Remaining weights are rescaled to sum to one before each EMD.
    #[default]
    Renormalize,
    /// Remaining weights are used as-is; the transport moves only the
    /// smaller total mass.
    Partial,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionConfig {
    pub mode: DetectionMode,
    /// Extractions performed even when they do not lower the EMD.
    pub min_extractions: usize,
    /// Upper bound on extractions; `None` means the component count.
    pub max_extractions: Option<usize>,
    #[serde(default)]
    pub mass_policy: MassPolicy,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            mode: DetectionMode::Appear,
            min_extractions: 0,
            max_extractions: None,
            mass_policy: MassPolicy::Renormalize,
        }
    }
}

impl DetectionConfig {
    pub fn with_mode(mode: DetectionMode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(max) = self.max_extractions {
            if self.min_extractions > max {
                return Err(Error::InvalidConfig(format!(
                    "min_extractions ({}) exceeds max_extractions ({max})",
                    self.min_extractions
                )));
            }
        }
        Ok(())
    }
}

/// The extracted set and the EMD after each extraction.
#[derive(Debug, Clone, PartialEq)]
pub struct ChangeModel {
    pub mode: DetectionMode,
    pub extracted: Vec<GaussianComponent>,
    /// Indices of `extracted` in the searched model, in extraction order.
    pub source_indices: Vec<usize>,
    /// Initial EMD followed by the EMD after each extraction.
    pub emd_trace: Vec<f64>,
}

impl ChangeModel {
    pub fn is_empty(&self) -> bool {
        self.extracted.is_empty()
    }

    pub fn initial_emd(&self) -> f64 {
        self.emd_trace[0]
    }

    pub fn final_emd(&self) -> f64 {
        *self.emd_trace.last().expect("trace starts with the initial EMD")
    }
}

fn remaining_signature(model: &MixtureModel, keep: &[usize], policy: MassPolicy) -> Result<Signature> {
    let total: f64 = match policy {
        MassPolicy::Renormalize => keep.iter().map(|&k| model.components[k].weight).sum(),
        MassPolicy::Partial => 1.0,
    };
    Signature::new(
        keep.iter().map(|&k| model.components[k].mean.clone()).collect(),
        keep.iter().map(|&k| model.components[k].weight / total).collect(),
    )
}

/// Greedily removes the component of the searched model whose removal
/// lowers EMD to the reference model the most, until no removal helps.
///
/// In appear mode the searched model is `theta_t`; in disappear mode the two
/// models swap roles.
pub fn detect_changes(
    theta_t0: &MixtureModel,
    theta_t: &MixtureModel,
    config: &DetectionConfig,
) -> Result<ChangeModel> {
    config.validate()?;
    if theta_t0.dim != theta_t.dim {
        return Err(Error::DimensionMismatch {
            expected: theta_t0.dim,
            actual: theta_t.dim,
        });
    }
    let (reference, searched) = match config.mode {
        DetectionMode::Appear => (theta_t0, theta_t),
        DetectionMode::Disappear => (theta_t, theta_t0),
    };
    if reference.is_empty() || searched.is_empty() {
        return Err(Error::InvalidInput(
            "both mixtures need at least one component".into(),
        ));
    }
    let reference_sig = Signature::from_model(reference)?;
    let max_extractions = config
        .max_extractions
        .unwrap_or(searched.len())
        .min(searched.len() - 1);

    let mut remaining: Vec<usize> = (0..searched.len()).collect();
    let mut current = emd(
        &reference_sig,
        &remaining_signature(searched, &remaining, config.mass_policy)?,
    )?;
    let mut change = ChangeModel {
        mode: config.mode,
        extracted: Vec::new(),
        source_indices: Vec::new(),
        emd_trace: vec![current],
    };

    while change.source_indices.len() < max_extractions {
        let scores = remaining
            .par_iter()
            .enumerate()
            .map(|(slot, _)| {
                let mut keep = remaining.clone();
                keep.remove(slot);
                emd(
                    &reference_sig,
                    &remaining_signature(searched, &keep, config.mass_policy)?,
                )
            })
            .collect::<Result<Vec<f64>>>()?;
        let (best_slot, best) =
            scores.iter().enumerate().fold(
                (0, f64::INFINITY),
                |acc, (slot, &e)| if e < acc.1 { (slot, e) } else { acc },
            );
        let forced = change.source_indices.len() < config.min_extractions;
        if !(forced || best < current - DECREASE_TOL) {
            break;
        }
        let k = remaining.remove(best_slot);
        change.source_indices.push(k);
        change.extracted.push(searched.components[k].clone());
        change.emd_trace.push(best);
        current = best;
    }
    Ok(change)
}

/// Marks each point whose most responsible component of `theta` was
/// extracted. `theta` is the searched model and `cloud` the cloud it was
/// fitted to.
pub fn label_points(cloud: &PointCloud, theta: &MixtureModel, change: &ChangeModel) -> Result<Vec<bool>> {
    if cloud.is_empty() {
        return Ok(Vec::new());
    }
    if change.is_empty() {
        return Ok(vec![false; cloud.len()]);
    }
    let resp = e_step(theta, cloud)?;
    let mut extracted = vec![false; theta.len()];
    for &k in &change.source_indices {
        *extracted
            .get_mut(k)
            .ok_or_else(|| Error::InvalidInput(format!("extracted index {k} out of range")))? = true;
    }
    Ok((0..cloud.len())
        .map(|i| {
            let row = resp.row(i);
            let best = row
                .iter()
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |acc, (k, &w)| if w > acc.1 { (k, w) } else { acc },
                )
                .0;
            extracted[best]
        })
        .collect())
}

/// Wall-clock milliseconds per pipeline stage. File reading and filtering
/// both count as data loading.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub data_loading: f64,
    pub pca: f64,
    pub gmm_clustering: f64,
    pub change_detection: f64,
}

impl StageTimings {
    pub fn total(&self) -> f64 {
        self.data_loading + self.pca + self.gmm_clustering + self.change_detection
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractedComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Row-major.
    pub covariance: Vec<f64>,
    pub source_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub em: EmConfig,
    pub detection: DetectionConfig,
    pub filters: FilterParams,
    pub use_pca: bool,
}

/// Everything a detection run produced, in the input clouds' frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub mode: DetectionMode,
    pub k_star_t0: usize,
    pub k_star_t: usize,
    pub initial_emd: f64,
    pub emd_trace: Vec<f64>,
    pub extracted: Vec<ExtractedComponent>,
    pub changed_points: usize,
    pub stage_timings_ms: StageTimings,
    pub config: RunSettings,
    pub model_t0: MixtureModel,
    pub model_t: MixtureModel,
    pub pca: Option<PcaTransform>,
}

impl DetectionReport {
    /// The model the changes were extracted from.
    pub fn searched_model(&self) -> &MixtureModel {
        match self.mode {
            DetectionMode::Appear => &self.model_t,
            DetectionMode::Disappear => &self.model_t0,
        }
    }

    pub fn change_model(&self) -> Result<ChangeModel> {
        let dim = self.searched_model().dim;
        let extracted = self
            .extracted
            .iter()
            .map(|e| {
                if e.covariance.len() != dim * dim {
                    return Err(Error::InvalidInput(
                        "extracted covariance has the wrong size".into(),
                    ));
                }
                GaussianComponent::new(
                    e.weight,
                    e.mean.clone(),
                    nalgebra::DMatrix::from_row_slice(dim, dim, &e.covariance),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ChangeModel {
            mode: self.mode,
            extracted,
            source_indices: self.extracted.iter().map(|e| e.source_index).collect(),
            emd_trace: self.emd_trace.clone(),
        })
    }
}

/// Report plus the filtered searched cloud and its per-point labels.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub report: DetectionReport,
    /// The searched cloud after filtering, in its original frame.
    pub cloud: PointCloud,
    pub labels: Vec<bool>,
}

fn millis(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Outlier removal and voxel downsampling of a pair, with the voxel grid
/// anchored at the pair's common minimum corner.
pub fn filter_pair(
    a: &PointCloud,
    b: &PointCloud,
    filters: &FilterParams,
) -> Result<(PointCloud, PointCloud)> {
    filters.validate()?;
    let (a, b) = rayon::join(
        || statistical_outlier_removal(a, filters.sor_neighbors, filters.sor_stddev_mult),
        || statistical_outlier_removal(b, filters.sor_neighbors, filters.sor_stddev_mult),
    );
    let (a, b) = (a?.cloud, b?.cloud);
    let Some((anchor, _)) = pointcloud::union_bounds(&a, &b) else {
        return Ok((a, b));
    };
    Ok((
        voxel_downsample_anchored(&a, filters.voxel_size, &anchor)?,
        voxel_downsample_anchored(&b, filters.voxel_size, &anchor)?,
    ))
}

fn back_project_model(model: &MixtureModel, pca: &PcaTransform) -> Result<MixtureModel> {
    let components = model
        .components
        .iter()
        .map(|c| {
            GaussianComponent::new(
                c.weight,
                pca.back_project(&c.mean),
                pca.back_project_covariance(&c.covariance),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    MixtureModel::new(pca.source_dim(), components)
}

/// Filters both clouds, optionally projects them jointly with PCA, fits a
/// mixture to each, extracts the changed components and labels the points of
/// the searched cloud.
pub fn run_pipeline(
    cloud_t0: &PointCloud,
    cloud_t: &PointCloud,
    em: &EmConfig,
    det: &DetectionConfig,
    filters: &FilterParams,
    use_pca: bool,
) -> Result<PipelineOutput> {
    run_pipeline_with_models(cloud_t0, cloud_t, None, em, det, filters, use_pca)
}

/// As [`run_pipeline`], optionally skipping EM with models fitted earlier to
/// the same (filtered) clouds.
pub fn run_pipeline_with_models(
    cloud_t0: &PointCloud,
    cloud_t: &PointCloud,
    prefit: Option<(MixtureModel, MixtureModel)>,
    em: &EmConfig,
    det: &DetectionConfig,
    filters: &FilterParams,
    use_pca: bool,
) -> Result<PipelineOutput> {
    em.validate()?;
    det.validate()?;
    if cloud_t0.is_empty() || cloud_t.is_empty() {
        return Err(Error::InvalidInput("both clouds must be non-empty".into()));
    }
    if cloud_t0.dim() != cloud_t.dim() {
        return Err(Error::DimensionMismatch {
            expected: cloud_t0.dim(),
            actual: cloud_t.dim(),
        });
    }
    if use_pca && prefit.is_some() {
        return Err(Error::InvalidConfig(
            "pre-fitted models cannot be combined with PCA".into(),
        ));
    }
    let mut timings = StageTimings::default();

    let start = Instant::now();
    let (f_t0, f_t) = filter_pair(cloud_t0, cloud_t, filters)?;
    timings.data_loading = millis(start);
    if f_t0.is_empty() || f_t.is_empty() {
        return Err(Error::InvalidInput("a cloud is empty after filtering".into()));
    }

    let start = Instant::now();
    let pca = if use_pca {
        Some(pca_fit(&[&f_t0, &f_t], PCA_TARGET_DIM)?)
    } else {
        None
    };
    let (w_t0, w_t) = match &pca {
        Some(p) => (pca_apply(p, &f_t0)?, pca_apply(p, &f_t)?),
        None => (f_t0.clone(), f_t.clone()),
    };
    timings.pca = millis(start);

    let start = Instant::now();
    let (theta_t0, theta_t) = match prefit {
        Some((a, b)) => {
            for m in [&a, &b] {
                m.validate()?;
                if m.dim != w_t0.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: w_t0.dim(),
                        actual: m.dim,
                    });
                }
            }
            (a, b)
        }
        None => {
            let (a, b) = rayon::join(|| gmm::fit(&w_t0, em), || gmm::fit(&w_t, em));
            (a?.0, b?.0)
        }
    };
    timings.gmm_clustering = millis(start);

    let start = Instant::now();
    let change = detect_changes(&theta_t0, &theta_t, det)?;
    let (searched_cloud, searched_work, searched_model) = match det.mode {
        DetectionMode::Appear => (f_t, &w_t, &theta_t),
        DetectionMode::Disappear => (f_t0, &w_t0, &theta_t0),
    };
    let labels = label_points(searched_work, searched_model, &change)?;
    timings.change_detection = millis(start);

    let (model_t0, model_t, extracted_frame) = match &pca {
        Some(p) => {
            let searched = back_project_model(searched_model, p)?;
            (
                back_project_model(&theta_t0, p)?,
                back_project_model(&theta_t, p)?,
                searched,
            )
        }
        None => (theta_t0.clone(), theta_t.clone(), searched_model.clone()),
    };
    let extracted = change
        .source_indices
        .iter()
        .map(|&k| {
            let c = &extracted_frame.components[k];
            let d = c.dim();
            ExtractedComponent {
                weight: c.weight,
                mean: c.mean.clone(),
                covariance: (0..d * d).map(|i| c.covariance[(i / d, i % d)]).collect(),
                source_index: k,
            }
        })
        .collect();

    let report = DetectionReport {
        mode: det.mode,
        k_star_t0: theta_t0.len(),
        k_star_t: theta_t.len(),
        initial_emd: change.initial_emd(),
        emd_trace: change.emd_trace.clone(),
        extracted,
        changed_points: labels.iter().filter(|&&l| l).count(),
        stage_timings_ms: timings,
        config: RunSettings {
            em: em.clone(),
            detection: *det,
            filters: *filters,
            use_pca,
        },
        model_t0,
        model_t,
        pca,
    };
    Ok(PipelineOutput {
        report,
        cloud: searched_cloud,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iso(weight: f64, mean: &[f64]) -> GaussianComponent {
        GaussianComponent::isotropic(weight, mean.to_vec(), 0.01)
    }

    fn model(components: Vec<GaussianComponent>) -> MixtureModel {
        MixtureModel::new(components[0].dim(), components).unwrap()
    }

    #[test]
    fn identical_models_have_no_change() {
        let m = model(vec![
            iso(0.5, &[0.0, 0.0, 0.0]),
            iso(0.3, &[1.0, 0.0, 0.0]),
            iso(0.2, &[0.0, 2.0, 0.0]),
        ]);
        for policy in [MassPolicy::Renormalize, MassPolicy::Partial] {
            let cfg = DetectionConfig {
                mass_policy: policy,
                ..Default::default()
            };
            let c = detect_changes(&m, &m, &cfg).unwrap();
            assert!(c.is_empty());
            assert_eq!(c.emd_trace, vec![0.0]);
        }
    }

    #[test]
    fn far_component_is_extracted() {
        let t0 = model(vec![iso(1.0, &[0.0, 0.0, 0.0])]);
        let t = model(vec![iso(0.8, &[0.0, 0.0, 0.0]), iso(0.2, &[10.0, 0.0, 0.0])]);
        for policy in [MassPolicy::Renormalize, MassPolicy::Partial] {
            let cfg = DetectionConfig {
                mass_policy: policy,
                ..Default::default()
            };
            let c = detect_changes(&t0, &t, &cfg).unwrap();
            assert_eq!(c.source_indices, vec![1]);
            assert!((c.emd_trace[0] - 2.0).abs() < 1e-12);
            assert!(c.emd_trace[1].abs() < 1e-12);
        }
    }

    #[test]
    fn disappear_is_swapped_appear() {
        let a = model(vec![iso(0.6, &[0.0, 0.0]), iso(0.4, &[3.0, 0.0])]);
        let b = model(vec![
            iso(0.5, &[0.1, 0.0]),
            iso(0.3, &[3.0, 0.2]),
            iso(0.2, &[0.0, 5.0]),
        ]);
        let dis = detect_changes(&a, &b, &DetectionConfig::with_mode(DetectionMode::Disappear)).unwrap();
        let app = detect_changes(&b, &a, &DetectionConfig::default()).unwrap();
        assert_eq!(dis.source_indices, app.source_indices);
        assert_eq!(dis.emd_trace, app.emd_trace);
    }

    #[test]
    fn partial_mass_keeps_extracting_on_unequal_costs() {
        // No genuine change, but every removal of the costliest component
        // lowers the flow-normalized work when masses are not renormalized.
        let t0 = model(vec![
            iso(0.25, &[0.0]),
            iso(0.25, &[1.0]),
            iso(0.25, &[2.0]),
            iso(0.25, &[3.0]),
        ]);
        let t = model(vec![
            iso(0.25, &[0.1]),
            iso(0.25, &[1.2]),
            iso(0.25, &[2.3]),
            iso(0.25, &[3.4]),
        ]);
        let partial = DetectionConfig {
            mass_policy: MassPolicy::Partial,
            ..Default::default()
        };
        let c = detect_changes(&t0, &t, &partial).unwrap();
        assert_eq!(c.source_indices.len(), 3);
        let c = detect_changes(&t0, &t, &DetectionConfig::default()).unwrap();
        assert!(c.source_indices.len() < 3);
    }

    #[test]
    fn extraction_bounds() {
        let t0 = model(vec![iso(1.0, &[0.0])]);
        let t = model(vec![iso(0.5, &[0.0]), iso(0.3, &[5.0]), iso(0.2, &[9.0])]);
        let capped = DetectionConfig {
            max_extractions: Some(1),
            ..Default::default()
        };
        assert_eq!(detect_changes(&t0, &t, &capped).unwrap().source_indices.len(), 1);
        let forced = DetectionConfig {
            min_extractions: 2,
            ..Default::default()
        };
        assert_eq!(detect_changes(&t0, &t, &forced).unwrap().source_indices.len(), 2);
        let bad = DetectionConfig {
            min_extractions: 3,
            max_extractions: Some(1),
            ..Default::default()
        };
        assert!(detect_changes(&t0, &t, &bad).is_err());
    }

    #[test]
    fn labels_follow_the_extracted_component() {
        let m = model(vec![iso(0.5, &[0.0, 0.0]), iso(0.5, &[4.0, 0.0])]);
        let cloud = PointCloud::from_points(2, [[0.1, 0.0], [3.9, 0.1], [1.0, 0.0], [3.0, 0.0]]).unwrap();
        let change = ChangeModel {
            mode: DetectionMode::Appear,
            extracted: vec![m.components[1].clone()],
            source_indices: vec![1],
            emd_trace: vec![1.0, 0.0],
        };
        assert_eq!(
            label_points(&cloud, &m, &change).unwrap(),
            vec![false, true, false, true]
        );
        let none = ChangeModel {
            extracted: vec![],
            source_indices: vec![],
            ..change.clone()
        };
        assert_eq!(label_points(&cloud, &m, &none).unwrap(), vec![false; 4]);
        let all = ChangeModel {
            source_indices: vec![1, 0],
            ..change
        };
        assert_eq!(label_points(&cloud, &m, &all).unwrap(), vec![true; 4]);
    }
}
