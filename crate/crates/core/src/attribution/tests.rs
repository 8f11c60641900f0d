use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::model::{build_model, ConvSpec, ModelConfig};

fn random_tensor(c: usize, t: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(vec![c, t], (0..c * t).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn small_model(channels: usize, seed: u64) -> Model {
    let cfg = ModelConfig {
        in_channels: channels,
        stem: ConvSpec::new(6, 3, 2),
        blocks: vec![ConvSpec::new(6, 3, 1), ConvSpec::new(8, 3, 2)],
        dropout_rate: 0.1,
        num_classes: 2,
    };
    build_model(&cfg, seed).unwrap()
}

fn linear(c: usize, t: usize, seed: u64) -> LinearModel {
    LinearModel {
        weights: [random_tensor(c, t, seed), random_tensor(c, t, seed + 100)],
        bias: [0.3, -0.2],
    }
}

fn max_abs(t: &Tensor) -> f64 {
    t.data().iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

#[test]
fn ig_of_baseline_is_zero() {
    let model = small_model(3, 0);
    let x = random_tensor(3, 24, 1);
    let quiet = IgParams {
        noise_samples: 1,
        ..Default::default()
    };
    let a = integrated_gradients(&model, &x, &x, &quiet, 0).unwrap();
    assert_eq!(max_abs(&a[0]) + max_abs(&a[1]), 0.0);
}

#[test]
fn ig_is_complete() {
    let model = small_model(12, 3);
    let params = IgParams {
        steps: 200,
        noise_samples: 1,
        ..Default::default()
    };
    for seed in 0..3 {
        let x = random_tensor(12, 40, seed);
        let base = Tensor::zeros(x.shape());
        let a = integrated_gradients(&model, &x, &base, &params, 0).unwrap();
        let fx = model.predict_proba(&x).unwrap();
        let fb = model.predict_proba(&base).unwrap();
        for k in 0..2 {
            let d = fx[k] - fb[k];
            assert!(
                (a[k].sum() - d).abs() <= 1e-3 * d.abs().max(1.0),
                "class {k}: {} vs {d}",
                a[k].sum()
            );
        }
    }
}

#[test]
fn ig_linear_closed_form() {
    let m = linear(3, 10, 1);
    let x = random_tensor(3, 10, 2);
    let params = IgParams {
        noise_samples: 1,
        ..Default::default()
    };
    let a = integrated_gradients(&m, &x, &Tensor::zeros(x.shape()), &params, 0).unwrap();
    for (ak, wk) in a.iter().zip(&m.weights) {
        let expected = wk.zip_map(&x, |w, v| w * v).unwrap();
        let err = ak.zip_map(&expected, |p, q| (p - q).abs()).unwrap();
        assert!(max_abs(&err) <= 1e-12);
    }
}

#[test]
fn ig_noise_is_seeded() {
    let model = small_model(3, 1);
    let x = random_tensor(3, 16, 1);
    let base = Tensor::zeros(x.shape());
    let p = IgParams {
        steps: 5,
        noise_samples: 3,
        ..Default::default()
    };
    let a = integrated_gradients(&model, &x, &base, &p, 7).unwrap();
    assert_eq!(a, integrated_gradients(&model, &x, &base, &p, 7).unwrap());
    assert_ne!(a, integrated_gradients(&model, &x, &base, &p, 8).unwrap());
}

#[test]
fn ig_shape_mismatch() {
    let model = small_model(3, 1);
    let x = random_tensor(3, 16, 1);
    assert!(matches!(
        integrated_gradients(&model, &x, &Tensor::zeros(&[3, 15]), &IgParams::default(), 0),
        Err(AttributionError::ShapeMismatch(_))
    ));
}

#[test]
fn gradient_shap_singleton_equal_to_input_is_zero() {
    let model = small_model(3, 2);
    let x = random_tensor(3, 16, 4);
    let set = BaselineSet::new(vec![x.clone()]).unwrap();
    let a = gradient_shap(&model, &x, &set, &GradShapParams::default(), 1).unwrap();
    assert_eq!(max_abs(&a[0]) + max_abs(&a[1]), 0.0);
}

#[test]
fn gradient_shap_is_seeded() {
    let model = small_model(3, 2);
    let x = random_tensor(3, 16, 4);
    let set = BaselineSet::new((0..4).map(|s| random_tensor(3, 16, 50 + s)).collect()).unwrap();
    let p = GradShapParams::default();
    assert_eq!(
        gradient_shap(&model, &x, &set, &p, 3).unwrap(),
        gradient_shap(&model, &x, &set, &p, 3).unwrap()
    );
}

#[test]
fn empty_baseline_set() {
    assert_eq!(
        BaselineSet::new(vec![]).unwrap_err(),
        AttributionError::EmptyBaselineSet
    );
    let model = small_model(3, 0);
    let x = random_tensor(3, 16, 0);
    let err = attribute(&model, "c", &x, &MethodParams::defaults(Method::GradientShap), None, 0).unwrap_err();
    assert_eq!(err, AttributionError::EmptyBaselineSet);
}

#[test]
fn constant_model_gets_zero_attributions() {
    let model = ConstantModel {
        channels: 3,
        value: [0.25, 0.75],
    };
    let x = random_tensor(3, 30, 0);
    let set = BaselineSet::new((0..3).map(|s| random_tensor(3, 30, 10 + s)).collect()).unwrap();
    let lime = MethodParams::Lime(LimeParams {
        n_perturb: 200,
        ..Default::default()
    });
    let ks = MethodParams::KernelShap(KernelShapParams {
        segment_ms: 10.0,
        ..Default::default()
    });
    for params in [
        MethodParams::defaults(Method::IntegratedGradients),
        MethodParams::defaults(Method::GradientShap),
        ks,
        lime,
    ] {
        let a = attribute(&model, "c", &x, &params, Some(&set), 5).unwrap();
        let worst = a.values.iter().flatten().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(worst <= 1e-8, "{:?}: {worst}", a.method);
    }
}

#[test]
fn kernel_shap_two_additive_groups_is_exact() {
    // Groups are the halves of a 1x20 series sampled at 1 kHz with 10 ms segments.
    let g1 = |v: &[f64]| v[..10].iter().map(|x| x * x).sum::<f64>();
    let g2 = |v: &[f64]| v[10..].iter().map(|x| x.sin()).sum::<f64>();
    let model = FnModel {
        channels: 3,
        f: |x: &Tensor| {
            let row = &x.data()[..20];
            [g1(row) + g2(row), 2.0 * g1(row) - g2(row)]
        },
    };
    let x = random_tensor(3, 20, 3);
    let bg = random_tensor(3, 20, 4);
    let params = KernelShapParams {
        budget: 4,
        segment_ms: 10.0,
        sample_rate_hz: 1000,
        grouping: Grouping::TimeSegments,
    };
    let a = kernel_shap(&model, &x, &bg, &params, 0).unwrap();
    let (xr, br) = (&x.data()[..20], &bg.data()[..20]);
    let group_sum = |k: usize, lo: usize, hi: usize| -> f64 {
        (0..3)
            .map(|c| a[k].data()[c * 20 + lo..c * 20 + hi].iter().sum::<f64>())
            .sum()
    };
    let d1 = g1(xr) - g1(br);
    let d2 = g2(xr) - g2(br);
    assert!((group_sum(0, 0, 10) - d1).abs() < 1e-6);
    assert!((group_sum(0, 10, 20) - d2).abs() < 1e-6);
    assert!((group_sum(1, 0, 10) - 2.0 * d1).abs() < 1e-6);
    assert!((group_sum(1, 10, 20) + d2).abs() < 1e-6);
}

#[test]
fn kernel_shap_rejects_small_budgets() {
    let model = ConstantModel {
        channels: 12,
        value: [0.5, 0.5],
    };
    let x = random_tensor(12, 200, 0);
    let per_channel = KernelShapParams {
        grouping: Grouping::ChannelSegments,
        ..Default::default()
    };
    assert_eq!(
        kernel_shap(&model, &x, &Tensor::zeros(x.shape()), &per_channel, 0).unwrap_err(),
        AttributionError::BudgetTooSmall {
            budget: 100,
            needed: 194
        }
    );
    assert!(kernel_shap(&model, &x, &Tensor::zeros(x.shape()), &KernelShapParams::default(), 0).is_ok());
}

#[test]
fn kernel_shap_sampled_is_efficient_and_seeded() {
    let model = small_model(12, 5);
    let x = random_tensor(12, 200, 1);
    let bg = Tensor::zeros(x.shape());
    let p = KernelShapParams::default();
    let a = kernel_shap(&model, &x, &bg, &p, 9).unwrap();
    assert_eq!(a, kernel_shap(&model, &x, &bg, &p, 9).unwrap());
    let fx = model.predict_proba(&x).unwrap();
    let fb = model.predict_proba(&bg).unwrap();
    for k in 0..2 {
        assert!((a[k].sum() - (fx[k] - fb[k])).abs() < 1e-9);
    }
}

#[test]
fn lime_single_cell_model_dominates() {
    let (c0, t0) = (1, 17);
    let model = FnModel {
        channels: 3,
        f: move |x: &Tensor| {
            let v = x.data()[c0 * 50 + t0];
            [-v, v]
        },
    };
    for seed in 0..5 {
        let x = random_tensor(3, 50, 20 + seed).map(|v| v + 2.0);
        let a = lime_explain(&model, &x, &Tensor::zeros(x.shape()), &LimeParams::default(), seed).unwrap();
        let target = a[1].data()[c0 * 50 + t0].abs();
        let others = a[1]
            .data()
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != c0 * 50 + t0)
            .fold(0.0f64, |m, (_, v)| m.max(v.abs()));
        assert!(target >= 10.0 * others, "seed {seed}: {target} vs {others}");
    }
}

#[test]
fn lime_is_seeded_and_checks_budget() {
    let model = small_model(3, 4);
    let x = random_tensor(3, 40, 2);
    let bg = Tensor::zeros(x.shape());
    let p = LimeParams {
        n_perturb: 150,
        ..Default::default()
    };
    assert_eq!(
        lime_explain(&model, &x, &bg, &p, 1).unwrap(),
        lime_explain(&model, &x, &bg, &p, 1).unwrap()
    );
    let fixed = LimeParams {
        n_perturb: 100,
        segment_len: Some(1),
        ..Default::default()
    };
    assert_eq!(
        lime_explain(&model, &x, &bg, &fixed, 1).unwrap_err(),
        AttributionError::BudgetTooSmall {
            budget: 100,
            needed: 121
        }
    );
}

#[test]
fn model_gradients_of_the_two_classes_cancel() {
    let model = small_model(12, 6);
    let inputs: Vec<Tensor> = (0..3).map(|s| random_tensor(12, 32, s)).collect();
    for (p, [g0, g1]) in model.output_gradients(&inputs).unwrap() {
        assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
        let sum = g0.zip_map(&g1, |a, b| a + b).unwrap();
        assert!(max_abs(&sum) < 1e-12);
    }
}

#[test]
fn attribute_packages_both_classes() {
    let model = small_model(12, 7);
    let x = random_tensor(12, 60, 3);
    let set = BaselineSet::new((0..3).map(|s| random_tensor(12, 60, 30 + s)).collect()).unwrap();
    let params = [
        MethodParams::Ig(IgParams {
            steps: 4,
            noise_samples: 2,
            ..Default::default()
        }),
        MethodParams::GradShap(GradShapParams {
            n_samples: 4,
            ..Default::default()
        }),
        MethodParams::KernelShap(KernelShapParams::default()),
        MethodParams::Lime(LimeParams {
            n_perturb: 200,
            ..Default::default()
        }),
    ];
    for p in params {
        let a = attribute(&model, "case-1", &x, &p, Some(&set), 0).unwrap();
        assert_eq!((a.channels(), a.len()), (12, 60));
        assert_eq!(a.method, p.method());
        let json = serde_json::to_string(&a).unwrap();
        assert_eq!(serde_json::from_str::<ClassAttribution>(&json).unwrap(), a);
    }
}

#[test]
fn method_names_round_trip() {
    for m in Method::ALL {
        assert_eq!(Method::parse(m.key()), Some(m));
        assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.key()));
    }
    let p: MethodParams = serde_json::from_str(r#"{"method":"ig","steps":10}"#).unwrap();
    assert_eq!(
        p,
        MethodParams::Ig(IgParams {
            steps: 10,
            ..Default::default()
        })
    );
}
