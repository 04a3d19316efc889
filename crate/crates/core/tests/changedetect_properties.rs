mod common;

use proptest::prelude::*;
use scenechange::gmm::component_logpdf;
use scenechange::transport::ground_distances;
use scenechange::{
    detect_changes, label_points, DetectionConfig, DetectionMode, MassPolicy, MixtureModel, Signature,
};

use common::{blobs, lp_vertex_min, random_model, rng};

fn model_pair() -> impl Strategy<Value = (MixtureModel, MixtureModel)> {
    (any::<u64>(), 1usize..6, 1usize..6).prop_map(|(seed, k0, k1)| {
        let mut r = rng(seed);
        (random_model(&mut r, k0, 3), random_model(&mut r, k1, 3))
    })
}

/// EMD between `reference` and `searched` without component `skip`, via the
/// vertex-enumeration oracle.
fn oracle_emd_without(reference: &MixtureModel, searched: &MixtureModel, skip: usize) -> f64 {
    let keep: Vec<_> = (0..searched.len()).filter(|&k| k != skip).collect();
    let total: f64 = keep.iter().map(|&k| searched.components[k].weight).sum();
    let a = Signature::from_model(reference).unwrap();
    let b = Signature::new(
        keep.iter()
            .map(|&k| searched.components[k].mean.clone())
            .collect(),
        keep.iter()
            .map(|&k| searched.components[k].weight / total)
            .collect(),
    )
    .unwrap();
    let d = ground_distances(&a, &b).unwrap();
    lp_vertex_min(a.masses(), b.masses(), &d.values)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn trace_strictly_decreases_and_is_bounded((t0, t) in model_pair()) {
        for mode in [DetectionMode::Appear, DetectionMode::Disappear] {
            let change = detect_changes(&t0, &t, &DetectionConfig::with_mode(mode)).unwrap();
            let searched = if mode == DetectionMode::Appear { &t } else { &t0 };
            prop_assert!(change.extracted.len() < searched.len());
            prop_assert_eq!(change.emd_trace.len(), change.extracted.len() + 1);
            for w in change.emd_trace.windows(2) {
                prop_assert!(w[1] < w[0]);
            }
            let mut seen = change.source_indices.clone();
            seen.sort_unstable();
            seen.dedup();
            prop_assert_eq!(seen.len(), change.source_indices.len());
            for (k, c) in change.source_indices.iter().zip(&change.extracted) {
                prop_assert_eq!(&searched.components[*k], c);
            }
        }
    }

    #[test]
    fn disappear_mode_is_appear_mode_with_roles_swapped((t0, t) in model_pair()) {
        let appear = detect_changes(&t, &t0, &DetectionConfig::with_mode(DetectionMode::Appear)).unwrap();
        let disappear = detect_changes(&t0, &t, &DetectionConfig::with_mode(DetectionMode::Disappear)).unwrap();
        prop_assert_eq!(appear.source_indices, disappear.source_indices);
        prop_assert_eq!(appear.emd_trace, disappear.emd_trace);
    }

    #[test]
    fn first_extraction_is_best_single_removal((t0, t) in model_pair()) {
        prop_assume!(t.len() >= 2 && t0.len() <= 3 && t.len() <= 4);
        let change = detect_changes(&t0, &t, &DetectionConfig { max_extractions: Some(1), ..Default::default() }).unwrap();
        let scores: Vec<f64> = (0..t.len()).map(|k| oracle_emd_without(&t0, &t, k)).collect();
        let best = scores.iter().cloned().fold(f64::INFINITY, f64::min);
        if let Some(&k) = change.source_indices.first() {
            prop_assert!((scores[k] - best).abs() < 1e-9 * best.max(1.0));
            prop_assert!(best < change.emd_trace[0]);
        } else {
            prop_assert!(best >= change.emd_trace[0] - 1e-9 * best.max(1.0));
        }
    }

    #[test]
    fn identical_models_have_no_changes((t0, _) in model_pair()) {
        for policy in [MassPolicy::Renormalize, MassPolicy::Partial] {
            let config = DetectionConfig { mass_policy: policy, ..Default::default() };
            let change = detect_changes(&t0, &t0, &config).unwrap();
            prop_assert!(change.is_empty());
            prop_assert!(change.emd_trace[0].abs() < 1e-12);
        }
    }

    #[test]
    fn forced_and_capped_extraction_counts((t0, t) in model_pair(), min in 0usize..3, extra in 0usize..3) {
        let config = DetectionConfig { min_extractions: min, max_extractions: Some(min + extra), ..Default::default() };
        let change = detect_changes(&t0, &t, &config).unwrap();
        let cap = (min + extra).min(t.len() - 1);
        prop_assert!(change.extracted.len() >= min.min(t.len() - 1));
        prop_assert!(change.extracted.len() <= cap);
    }

    #[test]
    fn labels_follow_most_responsible_component(seed in any::<u64>(), k in 2usize..5) {
        let mut r = rng(seed);
        let t0 = random_model(&mut r, 2, 3);
        let t = random_model(&mut r, k, 3);
        let cloud = blobs(&mut r, &t.components.iter().map(|c| c.mean.clone()).collect::<Vec<_>>(), 0.2, 20);
        let change = detect_changes(&t0, &t, &DetectionConfig::default()).unwrap();
        let labels = label_points(&cloud, &t, &change).unwrap();
        prop_assert_eq!(labels.len(), cloud.len());
        for (i, x) in cloud.points().enumerate() {
            let scores: Vec<f64> = t.components.iter().map(|c| c.weight.ln() + component_logpdf(c, x).unwrap()).collect();
            let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let candidates: Vec<usize> = (0..k).filter(|&j| scores[j] >= top - 1e-9).collect();
            let any_extracted = candidates.iter().any(|j| change.source_indices.contains(j));
            let all_extracted = candidates.iter().all(|j| change.source_indices.contains(j));
            if all_extracted { prop_assert!(labels[i]); }
            if !any_extracted { prop_assert!(!labels[i]); }
        }
    }
}

#[test]
fn new_far_component_is_found() {
    let mut r = rng(5);
    let t0 = random_model(&mut r, 4, 3);
    let mut t = t0.clone();
    for c in &mut t.components {
        c.weight *= 0.8;
    }
    t.components.push(scenechange::GaussianComponent::isotropic(
        0.2,
        vec![30.0, 30.0, 30.0],
        0.1,
    ));
    let change = detect_changes(&t0, &t, &DetectionConfig::default()).unwrap();
    assert_eq!(change.source_indices, vec![4]);
    assert!(change.final_emd() < 1e-9);
    let gone = detect_changes(&t, &t0, &DetectionConfig::with_mode(DetectionMode::Disappear)).unwrap();
    assert_eq!(gone.source_indices, vec![4]);
}
