use proptest::prelude::*;

use super::*;
use crate::attribution::MethodParams;
use crate::autodiff::Tensor;

fn attribution(a0: Vec<Vec<f64>>, a1: Vec<Vec<f64>>) -> ClassAttribution {
    ClassAttribution::from_slices(
        "c1",
        MethodParams::defaults(Method::IntegratedGradients),
        [Tensor::from_rows(&a0).unwrap(), Tensor::from_rows(&a1).unwrap()],
    )
    .unwrap()
}

fn profile(values: Vec<Vec<f64>>) -> BipolarProfile {
    BipolarProfile::new("c1", Method::IntegratedGradients, values).unwrap()
}

fn leads_with(rows: &[(usize, Vec<f64>)], t: usize) -> Vec<Vec<f64>> {
    let mut v = vec![vec![0.0; t]; NUM_LEADS];
    for (i, row) in rows {
        v[*i] = row.clone();
    }
    v
}

#[test]
fn bipolar_half_difference() {
    let phi = bipolar_profile(&attribution(vec![vec![-0.2, 1.0]], vec![vec![0.4, 1.0]])).unwrap();
    assert_eq!(phi.values, vec![vec![0.30000000000000004, 0.0]]);
    assert_eq!(phi.values[0][0], (0.4 - -0.2) / 2.0);
}

#[test]
fn bipolar_equal_classes_cancel() {
    let a = vec![vec![0.1, -0.7, 3.0], vec![2.0, 0.0, -1.5]];
    let phi = bipolar_profile(&attribution(a.clone(), a)).unwrap();
    assert!(phi.values.iter().flatten().all(|&v| v == 0.0));
}

#[test]
fn bipolar_opposite_classes() {
    let a1 = vec![vec![0.25, -0.5, 3.0]];
    let a0 = vec![vec![-0.25, 0.5, -3.0]];
    assert_eq!(bipolar_profile(&attribution(a0, a1.clone())).unwrap().values, a1);
}

#[test]
fn map_two_leads() {
    let phi = profile(leads_with(&[(0, vec![1.5, 0.25, 0.0]), (4, vec![0.5, -0.25, 0.0])], 3));
    let m = map_to_cine(&phi).unwrap();
    assert_eq!(m.temporal, vec![1.0, 0.0, 0.0]);
    assert!(!m.degenerate);
    assert_eq!(m.replicated.len(), 3);
    assert!(m.replicated.iter().all(|r| r == &m.temporal));
}

#[test]
fn map_zero_profile_is_degenerate() {
    let m = map_to_cine(&profile(vec![vec![0.0; 5]; NUM_LEADS])).unwrap();
    assert!(m.degenerate);
    assert_eq!(m.temporal, vec![0.0; 5]);
}

#[test]
fn map_negative_peak() {
    let m = map_to_cine(&profile(leads_with(&[(2, vec![0.5, -2.0])], 2))).unwrap();
    assert_eq!(m.temporal, vec![0.25, -1.0]);
}

#[test]
fn map_requires_twelve_leads() {
    assert_eq!(
        map_to_cine(&profile(vec![vec![1.0; 4]; 3])).unwrap_err(),
        CrossmodalError::WrongChannelCount { expected: 12, got: 3 }
    );
}

#[test]
fn orientation() {
    let phi = profile(vec![vec![0.3, -0.1]]);
    let normal = orient_by_diagnosis(&phi, Some(Label::Normal)).unwrap();
    assert_eq!(normal.values, vec![vec![-0.3, 0.1]]);
    assert_eq!(orient_by_diagnosis(&phi, Some(Label::Abnormal)).unwrap(), phi);
    assert_eq!(orient_by_diagnosis(&normal, Some(Label::Normal)).unwrap(), phi);
    assert_eq!(
        orient_by_diagnosis(&phi, None).unwrap_err(),
        CrossmodalError::MissingDiagnosis("c1".into())
    );
}

#[test]
fn post_processing_variants() {
    let phi = profile(vec![vec![-0.5, 0.2]]);
    let region = Region::all(1).unwrap();
    let run = |p| post_process(&phi, p, &region).unwrap().values;
    assert_eq!(run(Prep::Positive), vec![vec![0.0, 0.2]]);
    assert_eq!(run(Prep::Absolute), vec![vec![0.5, 0.2]]);
    assert_eq!(run(Prep::Scaled), vec![vec![0.0, 1.0]]);
}

#[test]
fn positive_of_negative_profile_is_zero() {
    let phi = profile(vec![vec![-0.5, -0.2, -1e-9]]);
    let m = post_process(&phi, Prep::Positive, &Region::all(1).unwrap()).unwrap();
    assert!(m.values[0].iter().all(|&v| v == 0.0));
}

#[test]
fn scaled_constant_region_is_flagged() {
    let phi = profile(vec![vec![0.4; 3], vec![-1.0, 2.0, 5.0]]);
    let m = post_process(&phi, Prep::Scaled, &Region::new([0]).unwrap()).unwrap();
    assert!(m.constant);
    assert!(m.values.iter().flatten().all(|&v| v == 0.0));
}

#[test]
fn scaled_uses_region_range_only() {
    let phi = profile(vec![vec![0.0, 1.0, 2.0], vec![-10.0, 10.0, 0.5]]);
    let m = post_process(&phi, Prep::Scaled, &Region::new([0]).unwrap()).unwrap();
    assert_eq!(m.values[0], vec![0.0, 0.5, 1.0]);
    assert_eq!(m.values[1], vec![0.0, 1.0, 0.25]);
}

#[test]
fn region_errors() {
    assert_eq!(Region::new([]).unwrap_err(), CrossmodalError::EmptyRegion);
    let phi = profile(vec![vec![1.0, 2.0]]);
    assert!(matches!(
        post_process(&phi, Prep::Absolute, &Region::new([3]).unwrap()),
        Err(CrossmodalError::ShapeMismatch(_))
    ));
}

fn matrix(c: usize, t: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-5.0f64..5.0, t), c)
}

proptest! {
    #[test]
    fn map_is_scale_invariant(values in matrix(12, 16), alpha in prop::sample::select(vec![0.5, 2.0, 10.0])) {
        let phi = profile(values);
        let scaled = profile(phi.values.iter().map(|r| r.iter().map(|v| v * alpha).collect()).collect());
        let a = map_to_cine(&phi).unwrap();
        let b = map_to_cine(&scaled).unwrap();
        for (x, y) in a.temporal.iter().zip(&b.temporal) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
        let neg = profile(phi.values.iter().map(|r| r.iter().map(|v| -v).collect()).collect());
        let n = map_to_cine(&neg).unwrap();
        for (x, y) in a.temporal.iter().zip(&n.temporal) {
            prop_assert_eq!(*x, -*y);
        }
    }

    #[test]
    fn mapped_peak_is_one(values in matrix(12, 10)) {
        let m = map_to_cine(&profile(values)).unwrap();
        let peak = m.temporal.iter().fold(0.0f64, |p, v| p.max(v.abs()));
        prop_assert!(m.degenerate || peak == 1.0);
    }

    #[test]
    fn positive_and_absolute_are_idempotent(values in matrix(3, 8)) {
        let region = Region::all(3).unwrap();
        for prep in [Prep::Positive, Prep::Absolute] {
            let once = post_process(&profile(values.clone()), prep, &region).unwrap();
            let twice = post_process(&profile(once.values.clone()), prep, &region).unwrap();
            prop_assert_eq!(once.values, twice.values);
        }
    }

    #[test]
    fn scaled_preserves_order(values in matrix(2, 12)) {
        let region = Region::all(2).unwrap();
        let m = post_process(&profile(values.clone()), Prep::Scaled, &region).unwrap();
        let a: Vec<f64> = values.concat();
        let b: Vec<f64> = m.values.concat();
        if !m.constant {
            prop_assert!(b.contains(&0.0) && b.contains(&1.0));
        }
        for i in 0..a.len() {
            for j in 0..a.len() {
                prop_assert_eq!(a[i] < a[j], b[i] < b[j]);
                prop_assert_eq!(a[i] == a[j], b[i] == b[j]);
            }
        }
    }
}
