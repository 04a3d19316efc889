//! Component-level evaluation against ground-truth change regions.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::changedetect::{ChangeModel, DetectionMode};
use crate::error::{Error, Result};
use crate::gmm::{GaussianComponent, MixtureModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChangeKind {
    Appearance,
    Disappearance,
}

impl ChangeKind {
    /// The kind of change a detection mode looks for.
    pub fn for_mode(mode: DetectionMode) -> Self {
        match mode {
            DetectionMode::Appear => ChangeKind::Appearance,
            DetectionMode::Disappear => ChangeKind::Disappearance,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            ChangeKind::Appearance => ChangeKind::Disappearance,
            ChangeKind::Disappearance => ChangeKind::Appearance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRegion {
    pub name: String,
    pub kind: ChangeKind,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl GroundTruthRegion {
    pub fn new(name: impl Into<String>, kind: ChangeKind, min: Vec<f64>, max: Vec<f64>) -> Result<Self> {
        let region = Self {
            name: name.into(),
            kind,
            min,
            max,
        };
        region.validate()?;
        Ok(region)
    }

    pub fn validate(&self) -> Result<()> {
        if self.min.len() != self.max.len() {
            return Err(Error::DimensionMismatch {
                expected: self.min.len(),
                actual: self.max.len(),
            });
        }
        if self.min.iter().zip(&self.max).any(|(a, b)| !(a <= b)) {
            return Err(Error::InvalidInput(format!(
                "region {:?} has min > max",
                self.name
            )));
        }
        Ok(())
    }

    /// Whether `point` lies in the box grown by `margin` on every side.
    pub fn contains_inflated(&self, point: &[f64], margin: f64) -> bool {
        point
            .iter()
            .zip(self.min.iter().zip(&self.max))
            .all(|(p, (lo, hi))| *p >= lo - margin && *p <= hi + margin)
    }
}

/// Keeps the regions a detection run in `mode` is supposed to find.
pub fn regions_for_mode(truth: &[GroundTruthRegion], mode: DetectionMode) -> Vec<GroundTruthRegion> {
    let kind = ChangeKind::for_mode(mode);
    truth.iter().filter(|r| r.kind == kind).cloned().collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

/// Metrics with a zero denominator are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

/// Inflation scale applied to a component's largest standard deviation when
/// testing overlap with a region.
pub const DEFAULT_INFLATION: f64 = 1.0;

/// A component overlaps a region when its mean lies inside the region's box
/// grown by `inflation` times the component's largest standard deviation.
pub fn overlaps(component: &GaussianComponent, region: &GroundTruthRegion, inflation: f64) -> bool {
    let margin = if inflation > 0.0 {
        inflation * component.max_std_dev()
    } else {
        0.0
    };
    region.contains_inflated(&component.mean, margin)
}

pub fn classify_components(
    theta: &MixtureModel,
    change: &ChangeModel,
    truth: &[GroundTruthRegion],
) -> Result<ConfusionCounts> {
    classify_components_with(theta, change, truth, DEFAULT_INFLATION)
}

/// Counts extracted/overlapping combinations over every component of
/// `theta`, the model the change set was extracted from.
pub fn classify_components_with(
    theta: &MixtureModel,
    change: &ChangeModel,
    truth: &[GroundTruthRegion],
    inflation: f64,
) -> Result<ConfusionCounts> {
    for region in truth {
        region.validate()?;
        if region.min.len() != theta.dim {
            return Err(Error::DimensionMismatch {
                expected: theta.dim,
                actual: region.min.len(),
            });
        }
    }
    if let Some(&bad) = change.source_indices.iter().find(|&&k| k >= theta.len()) {
        return Err(Error::InvalidInput(format!(
            "extracted index {bad} is out of range for {} components",
            theta.len()
        )));
    }
    let mut counts = ConfusionCounts::default();
    for (k, component) in theta.components.iter().enumerate() {
        let extracted = change.source_indices.contains(&k);
        let hit = truth.iter().any(|r| overlaps(component, r, inflation));
        match (extracted, hit) {
            (true, true) => counts.tp += 1,
            (true, false) => counts.fp += 1,
            (false, true) => counts.fn_ += 1,
            (false, false) => counts.tn += 1,
        }
    }
    Ok(counts)
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn compute_metrics(c: &ConfusionCounts) -> Metrics {
    Metrics {
        accuracy: ratio(c.tp + c.tn, c.tp + c.fn_ + c.tn + c.fp),
        precision: ratio(c.tp, c.tp + c.fp),
        recall: ratio(c.tp, c.tp + c.fn_),
        f1: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
    }
}

/// Plain-text table with one row per labeled result.
pub fn format_table(rows: &[(String, Metrics)]) -> String {
    let cell = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.3}"));
    let label_width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(5);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<label_width$}  {:>8}  {:>9}  {:>6}  {:>6}",
        "Scene", "Accuracy", "Precision", "Recall", "F1"
    );
    for (label, m) in rows {
        let _ = writeln!(
            out,
            "{:<label_width$}  {:>8}  {:>9}  {:>6}  {:>6}",
            label,
            cell(m.accuracy),
            cell(m.precision),
            cell(m.recall),
            cell(m.f1)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> ConfusionCounts {
        ConfusionCounts { tp, fp, fn_, tn }
    }

    #[test]
    fn reference_counts() {
        let m = compute_metrics(&counts(3, 2, 0, 15));
        assert_eq!(m.accuracy, Some(0.9));
        assert_eq!(m.precision, Some(0.6));
        assert_eq!(m.recall, Some(1.0));
        assert_eq!(m.f1, Some(0.75));
    }

    #[test]
    fn undefined_markers() {
        let m = compute_metrics(&counts(0, 0, 2, 5));
        assert_eq!(m.precision, None);
        assert_eq!(m.recall, Some(0.0));
        let m = compute_metrics(&counts(0, 0, 0, 0));
        assert_eq!(
            m,
            Metrics {
                accuracy: None,
                precision: None,
                recall: None,
                f1: None
            }
        );
    }

    #[test]
    fn table_lines_align() {
        let t = format_table(&[
            ("1 object".into(), compute_metrics(&counts(3, 2, 0, 15))),
            ("none".into(), compute_metrics(&counts(0, 0, 0, 4))),
        ]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines.iter().all(|l| l.len() == lines[0].len()));
        assert!(lines[1].contains("0.600") && lines[1].contains("0.750"));
        assert!(lines[2].contains("n/a"));
    }

    #[test]
    fn counts_serialize_with_fn_key() {
        let v = serde_json::to_value(counts(1, 2, 3, 4)).unwrap();
        assert_eq!(v["fn"], 3);
        let r: GroundTruthRegion =
            serde_json::from_str(r#"{"name":"box","kind":"appearance","min":[0,0,0],"max":[1,1,1]}"#)
                .unwrap();
        assert_eq!(r.kind, ChangeKind::Appearance);
    }

    #[test]
    fn overlap_inflation() {
        let region = GroundTruthRegion::new("b", ChangeKind::Appearance, vec![0.0; 3], vec![1.0; 3]).unwrap();
        let c = GaussianComponent::isotropic(1.0, vec![1.3, 0.5, 0.5], 0.09);
        assert!(overlaps(&c, &region, 1.0));
        assert!(!overlaps(&c, &region, 0.0));
        assert!(GroundTruthRegion::new("bad", ChangeKind::Appearance, vec![1.0], vec![0.0]).is_err());
    }
}
