mod common;

use proptest::prelude::*;
use scenechange::eval::{classify_components_with, overlaps, ChangeKind, DEFAULT_INFLATION};
use scenechange::{
    classify_components, compute_metrics, detect_changes, ChangeModel, ConfusionCounts, DetectionConfig,
    DetectionMode, GroundTruthRegion, MixtureModel,
};

use common::{random_model, rng};

fn counts() -> impl Strategy<Value = ConfusionCounts> {
    (0usize..50, 0usize..50, 0usize..50, 0usize..50).prop_map(|(tp, fp, fn_, tn)| ConfusionCounts {
        tp,
        fp,
        fn_,
        tn,
    })
}

fn change_of(model: &MixtureModel, indices: Vec<usize>) -> ChangeModel {
    ChangeModel {
        mode: DetectionMode::Appear,
        extracted: indices.iter().map(|&k| model.components[k].clone()).collect(),
        emd_trace: vec![1.0; indices.len() + 1],
        source_indices: indices,
    }
}

proptest! {
    #[test]
    fn f1_is_harmonic_mean(c in counts()) {
        let m = compute_metrics(&c);
        match (m.precision, m.recall, m.f1) {
            (Some(p), Some(r), Some(f)) if p + r > 0.0 => prop_assert!((f - 2.0 * p * r / (p + r)).abs() < 1e-12),
            (Some(_), Some(_), Some(f)) => prop_assert_eq!(f, 0.0),
            _ => {}
        }
        if let Some(a) = m.accuracy {
            prop_assert!((0.0..=1.0).contains(&a));
        }
    }

    #[test]
    fn precision_and_recall_ignore_true_negatives(c in counts(), extra in 0usize..100) {
        let a = compute_metrics(&c);
        let b = compute_metrics(&ConfusionCounts { tn: c.tn + extra, ..c });
        prop_assert_eq!(a.precision, b.precision);
        prop_assert_eq!(a.recall, b.recall);
        prop_assert_eq!(a.f1, b.f1);
    }

    #[test]
    fn overlap_predicate_matches_definition(seed in any::<u64>(), inflation in 0.0..3.0f64) {
        let mut r = rng(seed);
        let model = random_model(&mut r, 6, 3);
        let region = GroundTruthRegion::new("r", ChangeKind::Appearance, vec![-1.0, -0.5, -2.0], vec![1.0, 0.5, 0.0]).unwrap();
        for c in &model.components {
            let sigma = c.covariance.clone().symmetric_eigen().eigenvalues.max().sqrt();
            let margin = inflation * sigma;
            let inside = (0..3).all(|d| c.mean[d] >= region.min[d] - margin && c.mean[d] <= region.max[d] + margin);
            prop_assert_eq!(overlaps(c, &region, inflation), inside);
        }
    }

    #[test]
    fn counts_cover_every_component_once(seed in any::<u64>(), k in 2usize..10, pick in prop::collection::vec(any::<bool>(), 10)) {
        let mut r = rng(seed);
        let model = random_model(&mut r, k, 3);
        let indices: Vec<usize> = (0..k).filter(|&j| pick[j]).collect();
        let truth = vec![GroundTruthRegion::new("r", ChangeKind::Appearance, vec![-1.0; 3], vec![1.0; 3]).unwrap()];
        let c = classify_components(&model, &change_of(&model, indices.clone()), &truth).unwrap();
        prop_assert_eq!(c.tp + c.fp + c.fn_ + c.tn, k);
        prop_assert_eq!(c.tp + c.fp, indices.len());
        let mut reversed = indices.clone();
        reversed.reverse();
        prop_assert_eq!(c, classify_components(&model, &change_of(&model, reversed), &truth).unwrap());
    }
}

#[test]
fn empty_truth_and_empty_change() {
    let mut r = rng(1);
    let model = random_model(&mut r, 5, 3);
    let none = classify_components_with(&model, &change_of(&model, vec![]), &[], DEFAULT_INFLATION).unwrap();
    assert_eq!(
        none,
        ConfusionCounts {
            tp: 0,
            fp: 0,
            fn_: 0,
            tn: 5
        }
    );
    let m = compute_metrics(&none);
    assert_eq!((m.precision, m.recall, m.f1), (None, None, None));
    assert_eq!(m.accuracy, Some(1.0));
}

#[test]
fn detected_far_object_is_a_true_positive() {
    let mut r = rng(8);
    let t0 = random_model(&mut r, 4, 3);
    let mut t = t0.clone();
    for c in &mut t.components {
        c.weight *= 0.8;
    }
    t.components.push(scenechange::GaussianComponent::isotropic(
        0.2,
        vec![20.0, 20.0, 20.0],
        0.01,
    ));
    let change = detect_changes(&t0, &t, &DetectionConfig::default()).unwrap();
    let truth =
        vec![GroundTruthRegion::new("obj", ChangeKind::Appearance, vec![19.8; 3], vec![20.2; 3]).unwrap()];
    let m = compute_metrics(&classify_components(&t, &change, &truth).unwrap());
    assert_eq!((m.precision, m.recall, m.f1), (Some(1.0), Some(1.0), Some(1.0)));
}
