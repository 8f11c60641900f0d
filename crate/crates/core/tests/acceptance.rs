//! Acceptance gates. Every test prints one `ACCEPT PASS|FAIL <criterion>`
//! line (written straight to stdout so it shows without `--nocapture`) and
//! then asserts. All tolerances live in the constants below.

use std::collections::HashSet;
use std::io::Write;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use cinemap::agreement::{
    align_case, annotation_to_mask, dice, iou, mask_region, mask_to_annotation, optimal_threshold, spearman,
    AgreementError, AlignConfig, AnnotationModality, BinaryMask, ExpertAnnotation, Representation, Segment,
};
use cinemap::attribution::{
    attribute, gradient_shap, integrated_gradients, BaselineSet, ClassAttribution, GradShapParams, GradientModel,
    IgBaseline, IgParams, KernelShapParams, LimeParams, LinearModel, Method, MethodParams,
};
use cinemap::autodiff::{Graph, Tensor};
use cinemap::crossmodal::{
    bipolar_profile, map_to_cine, orient_by_diagnosis, post_process, BipolarProfile, Prep, Region,
};
use cinemap::harness::{
    bca_bootstrap, cohort_report, emit_report, run_pool, synthetic_annotations, write_results, PoolBaselines,
    PoolConfig, PoolModels, ReportFormat,
};
use cinemap::model::{
    build_model, train_and_evaluate, ConvSpec, Mode, Model, ModelConfig, Sample, TrainConfig, TrainReport,
};
use cinemap::signal::{
    generate_synthetic_cohort, stratified_split, CaseKey, DatasetEntry, Label, SplitRatios, SynthConfig, SyntheticCase,
    LEAD_NAMES,
};

// Autodiff.
const FD_NETWORKS: usize = 20;
const FD_POINTS: usize = 20;
const FD_STEP: f64 = 1e-5;
const FD_MAX_REL_ERR: f64 = 1e-4;
const FD_MAX_SECONDS: f64 = 30.0;

// Integrated-gradients completeness.
const IG_COMPLETENESS_STEPS: usize = 200;
const IG_COMPLETENESS_CASES: usize = 20;
const IG_COMPLETENESS_REL: f64 = 1e-3;
const IG_COMPLETENESS_SECONDS: f64 = 60.0;

// Linear closed forms.
const LINEAR_IG_ABS: f64 = 1e-6;
const GRADSHAP_SAMPLES: usize = 500;
const GRADSHAP_STD_ERRORS: f64 = 3.0;

// Metric oracles.
const ORACLE_PAIRS: usize = 1000;
const SPEARMAN_ABS: f64 = 1e-12;
const IDENTITY_ABS: f64 = 1e-12;

// Cross-modal identities.
const SCALE_PROFILES: usize = 100;
const SCALE_ALPHAS: [f64; 3] = [0.5, 2.0, 10.0];
const SCALE_ABS: f64 = 1e-12;

// Bootstrap coverage.
const BCA_COHORTS: usize = 200;
const BCA_N: usize = 30;
const BCA_B: usize = 2000;
const BCA_ALPHA: f64 = 0.05;
const BCA_COVERAGE: (f64, f64) = (0.90, 0.99);
const BCA_MAX_SECONDS: f64 = 120.0;

// Mask protocol.
const ROUND_TRIP_ANNOTATIONS: usize = 100;

// End-to-end gate.
const GATE_PER_CLASS: usize = 200;
const GATE_MIN_ACCURACY: f64 = 0.90;
const GATE_MAX_TRAIN_SECONDS: f64 = 300.0;
const GATE_IG_STEPS: usize = 32;
const GATE_PERMUTATIONS: usize = 1000;
const GATE_MAX_P: f64 = 0.05;
const GATE_BOOTSTRAP_B: usize = 2000;
const TABLE_HEADER: &str = "| Modality | Dice Score | IoU Score | Spearman Cor. |";

fn verdict(criterion: &str, pass: bool, detail: &str) {
    let line = format!("ACCEPT {} {criterion}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(pass, "{criterion}: {detail}");
}

fn uniform_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-scale..scale)).collect(),
    )
    .unwrap()
}

/// `||a - b||_inf / max(||a||_inf, ||b||_inf)`, zero when both vanish.
fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let scale = a.iter().chain(b).fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

// ---------------------------------------------------------------- fixture

struct Trained {
    cases: Vec<SyntheticCase>,
    test_idx: Vec<usize>,
    model: Model,
    report: TrainReport,
    train_time: Duration,
}

fn trained() -> &'static Trained {
    static FIXTURE: OnceLock<Trained> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let cases = generate_synthetic_cohort(GATE_PER_CLASS, GATE_PER_CLASS, 2024, &SynthConfig::default()).unwrap();
        let keys: Vec<CaseKey> = cases
            .iter()
            .map(|c| CaseKey {
                case_id: c.record.case_id.clone(),
                patient_id: c.record.patient_id.clone(),
                label: c.record.label,
            })
            .collect();
        let split = stratified_split(&keys, SplitRatios::default(), 1).unwrap();
        let fit: HashSet<&str> = split.train.iter().chain(&split.val).map(String::as_str).collect();
        let test: HashSet<&str> = split.test.iter().map(String::as_str).collect();
        let pick = |ids: &HashSet<&str>| -> Vec<usize> {
            (0..cases.len())
                .filter(|&i| ids.contains(cases[i].record.case_id.as_str()))
                .collect()
        };
        let (fit_idx, test_idx) = (pick(&fit), pick(&test));
        let samples =
            |idx: &[usize]| -> Vec<Sample> { idx.iter().map(|&i| Sample::from_record(&cases[i].record)).collect() };

        let start = Instant::now();
        let mut model = build_model(&ModelConfig::default(), 0).unwrap();
        let report = train_and_evaluate(
            &mut model,
            &samples(&fit_idx),
            &samples(&test_idx),
            &TrainConfig::default(),
            0,
        )
        .unwrap();
        let train_time = start.elapsed();
        Trained {
            cases,
            test_idx,
            model,
            report,
            train_time,
        }
    })
}

// ---------------------------------------------------------------- autodiff

fn random_config(rng: &mut ChaCha8Rng) -> ModelConfig {
    let spec = |rng: &mut ChaCha8Rng| {
        ConvSpec::new(
            rng.random_range(2..=4),
            [3, 5][rng.random_range(0..2)],
            rng.random_range(1..=2),
        )
    };
    let stem = spec(rng);
    let blocks = (0..rng.random_range(0..=2)).map(|_| spec(rng)).collect();
    ModelConfig {
        in_channels: [3, 12][rng.random_range(0..2)],
        stem,
        blocks,
        dropout_rate: 0.3,
        num_classes: 2,
    }
}

fn eval_loss(model: &Model, x: &Tensor, label: usize) -> f64 {
    let mut g = Graph::new();
    let input = g.constant(Tensor::stack(std::slice::from_ref(x)).unwrap());
    let params = model.bind(&mut g, false);
    let (logits, _) = model.forward(&mut g, input, &params, Mode::Eval).unwrap();
    let loss = g.softmax_cross_entropy(logits, &[label]).unwrap();
    g.value(loss).data()[0]
}

#[test]
fn autodiff_matches_finite_differences() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut checks = 0usize;
    for net in 0..FD_NETWORKS as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + net);
        let config = random_config(&mut rng);
        let mut model = build_model(&config, net).unwrap();
        for p in model.params_mut() {
            p.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
        }
        let t = rng.random_range(config.min_length().max(8)..=24);
        for _ in 0..FD_POINTS {
            let x = uniform_tensor(&mut rng, &[config.in_channels, t], 1.0);
            let label = rng.random_range(0..2);

            // Input gradients of both class probabilities.
            let (_, grads) = model.output_gradients(std::slice::from_ref(&x)).unwrap().remove(0);
            let mut probes = Vec::with_capacity(2 * x.len());
            for i in 0..x.len() {
                for sign in [1.0, -1.0] {
                    let mut p = x.clone();
                    p.data_mut()[i] += sign * FD_STEP;
                    probes.push(p);
                }
            }
            let probs = model.predict_proba_batch(&probes).unwrap();
            for (k, grad) in grads.iter().enumerate() {
                let fd: Vec<f64> = probs.chunks(2).map(|c| (c[0][k] - c[1][k]) / (2.0 * FD_STEP)).collect();
                worst = worst.max(rel_err(grad.data(), &fd));
                checks += 1;
            }

            // Parameter gradients of the cross-entropy loss.
            let mut g = Graph::new();
            let input = g.constant(Tensor::stack(std::slice::from_ref(&x)).unwrap());
            let vars = model.bind(&mut g, true);
            let (logits, _) = model.forward(&mut g, input, &vars, Mode::Eval).unwrap();
            let loss = g.softmax_cross_entropy(logits, &[label]).unwrap();
            let back = g.backward(loss).unwrap();
            for (pi, &var) in vars.iter().enumerate() {
                let analytic = back.wrt(var);
                let mut fd = Vec::with_capacity(analytic.len());
                for j in 0..analytic.len() {
                    let orig = model.params()[pi].data()[j];
                    model.params_mut()[pi].data_mut()[j] = orig + FD_STEP;
                    let up = eval_loss(&model, &x, label);
                    model.params_mut()[pi].data_mut()[j] = orig - FD_STEP;
                    let down = eval_loss(&model, &x, label);
                    model.params_mut()[pi].data_mut()[j] = orig;
                    fd.push((up - down) / (2.0 * FD_STEP));
                }
                worst = worst.max(rel_err(analytic.data(), &fd));
                checks += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "autodiff-finite-differences",
        worst <= FD_MAX_REL_ERR && secs < FD_MAX_SECONDS,
        &format!(
            "{FD_NETWORKS} networks x {FD_POINTS} points, {checks} gradient tensors, h={FD_STEP:e}, \
             max rel err {worst:.2e} (<= {FD_MAX_REL_ERR:e}), {secs:.1}s (< {FD_MAX_SECONDS}s)"
        ),
    );
}

// ---------------------------------------------------------------- attribution

#[test]
fn integrated_gradients_are_complete() {
    let fx = trained();
    let params = IgParams {
        steps: IG_COMPLETENESS_STEPS,
        noise_samples: 1,
        noise_sigma: 0.0,
        baseline: IgBaseline::Zeros,
    };
    let start = Instant::now();
    let mut worst = 0.0f64;
    for &i in fx.test_idx.iter().take(IG_COMPLETENESS_CASES) {
        let x = fx.cases[i].record.to_tensor();
        let zero = Tensor::zeros(x.shape());
        let attr = integrated_gradients(&fx.model, &x, &zero, &params, 0).unwrap();
        let fx_ = fx.model.predict_proba(&x).unwrap();
        let f0 = fx.model.predict_proba(&zero).unwrap();
        for k in 0..2 {
            let total: f64 = attr[k].data().iter().sum();
            let delta = fx_[k] - f0[k];
            worst = worst.max((total - delta).abs() / delta.abs().max(1.0));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "ig-completeness",
        worst <= IG_COMPLETENESS_REL && secs < IG_COMPLETENESS_SECONDS,
        &format!(
            "{IG_COMPLETENESS_CASES} cases, {IG_COMPLETENESS_STEPS} steps, max |sum - delta f|/max(1, |delta f|) \
             {worst:.2e} (<= {IG_COMPLETENESS_REL:e}), {secs:.1}s (< {IG_COMPLETENESS_SECONDS}s)"
        ),
    );
}

#[test]
fn linear_models_match_closed_forms() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let shape = [2, 8];
    let model = LinearModel {
        weights: [
            uniform_tensor(&mut rng, &shape, 2.0),
            uniform_tensor(&mut rng, &shape, 2.0),
        ],
        bias: [0.3, -0.1],
    };
    let x = uniform_tensor(&mut rng, &shape, 1.0);
    let baseline = uniform_tensor(&mut rng, &shape, 1.0);

    let ig = integrated_gradients(
        &model,
        &x,
        &baseline,
        &IgParams {
            steps: 50,
            noise_samples: 1,
            ..IgParams::default()
        },
        0,
    )
    .unwrap();
    let mut ig_err = 0.0f64;
    for (attr, weights) in ig.iter().zip(&model.weights) {
        for ((a, w), (xi, bi)) in attr
            .data()
            .iter()
            .zip(weights.data())
            .zip(x.data().iter().zip(baseline.data()))
        {
            ig_err = ig_err.max((a - w * (xi - bi)).abs());
        }
    }

    let records: Vec<Tensor> = (0..40).map(|_| uniform_tensor(&mut rng, &shape, 1.0)).collect();
    let set = BaselineSet::new(records.clone()).unwrap();
    let gs = gradient_shap(
        &model,
        &x,
        &set,
        &GradShapParams {
            n_samples: GRADSHAP_SAMPLES,
            noise_sigma: 0.0,
        },
        5,
    )
    .unwrap();
    let n = records.len() as f64;
    let mut worst_z = 0.0f64;
    for cell in 0..x.len() {
        let mean = records.iter().map(|r| r.data()[cell]).sum::<f64>() / n;
        let sd = (records.iter().map(|r| (r.data()[cell] - mean).powi(2)).sum::<f64>() / n).sqrt();
        for (attr, weights) in gs.iter().zip(&model.weights) {
            let w = weights.data()[cell];
            let expected = w * (x.data()[cell] - mean);
            let se = w.abs() * sd / (GRADSHAP_SAMPLES as f64).sqrt();
            worst_z = worst_z.max((attr.data()[cell] - expected).abs() / se);
        }
    }
    verdict(
        "linear-closed-forms",
        ig_err <= LINEAR_IG_ABS && worst_z <= GRADSHAP_STD_ERRORS,
        &format!(
            "IG max abs err {ig_err:.2e} (<= {LINEAR_IG_ABS:e}); GradientSHAP n={GRADSHAP_SAMPLES} max \
             deviation {worst_z:.2} SE (<= {GRADSHAP_STD_ERRORS})"
        ),
    );
}

// ---------------------------------------------------------------- metrics

fn oracle_cells(mask: &[Vec<bool>], rows: &[usize]) -> HashSet<(usize, usize)> {
    rows.iter()
        .flat_map(|&r| mask[r].iter().enumerate().filter(|(_, &b)| b).map(move |(t, _)| (r, t)))
        .collect()
}

fn oracle_dice_iou(pred: &[Vec<bool>], gt: &[Vec<bool>], rows: &[usize]) -> (f64, f64) {
    let a = oracle_cells(pred, rows);
    let b = oracle_cells(gt, rows);
    let inter = a.intersection(&b).count();
    let union = a.union(&b).count();
    (
        (2 * inter) as f64 / (a.len() + b.len()) as f64,
        inter as f64 / union as f64,
    )
}

fn oracle_rank(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|v| {
            let below = x.iter().filter(|w| *w < v).count() as f64;
            let equal = x.iter().filter(|w| *w == v).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

fn oracle_spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    let (rx, ry) = (oracle_rank(x), oracle_rank(y));
    let n = x.len() as f64;
    let (sx, sy) = (rx.iter().sum::<f64>(), ry.iter().sum::<f64>());
    let sxy: f64 = rx.iter().zip(&ry).map(|(a, b)| a * b).sum();
    let sxx: f64 = rx.iter().map(|a| a * a).sum();
    let syy: f64 = ry.iter().map(|b| b * b).sum();
    let den = ((n * sxx - sx * sx) * (n * syy - sy * sy)).sqrt();
    (den > 1e-9).then(|| (n * sxy - sx * sy) / den)
}

fn oracle_threshold(map: &[Vec<f64>], gt: &[Vec<bool>], rows: &[usize]) -> (f64, f64) {
    let mut best = (0.0, -1.0);
    for i in 0..=100 {
        let t = i as f64 / 100.0;
        let pred: Vec<Vec<bool>> = map.iter().map(|r| r.iter().map(|&v| v >= t).collect()).collect();
        let (d, _) = oracle_dice_iou(&pred, gt, rows);
        if d > best.1 {
            best = (t, d);
        }
    }
    best
}

#[test]
fn metrics_match_brute_force_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let (mut mismatches, mut spearman_worst, mut identity_worst) = (0usize, 0.0f64, 0.0f64);
    let mut degenerate_agree = true;
    for _ in 0..ORACLE_PAIRS {
        let c = rng.random_range(1..=12);
        let t = rng.random_range(2..=60);
        let mut rows: Vec<usize> = (0..c).filter(|_| rng.random_bool(0.6)).collect();
        if rows.is_empty() {
            rows.push(rng.random_range(0..c));
        }
        let density = rng.random_range(0.05..0.6);
        let gt: Vec<Vec<bool>> = (0..c)
            .map(|_| (0..t).map(|_| rng.random_bool(density)).collect())
            .collect();
        let pred: Vec<Vec<bool>> = (0..c).map(|_| (0..t).map(|_| rng.random_bool(0.4)).collect()).collect();
        let quantize = rng.random_bool(0.5);
        let map: Vec<Vec<f64>> = (0..c)
            .map(|_| {
                (0..t)
                    .map(|_| {
                        let v: f64 = rng.random();
                        if quantize {
                            (v * 20.0).round() / 20.0
                        } else {
                            v
                        }
                    })
                    .collect()
            })
            .collect();
        let region = Region::new(rows.iter().copied()).unwrap();
        let gt_cells = oracle_cells(&gt, &rows).len();
        if gt_cells == 0 {
            mismatches += usize::from(
                dice(&pred, &gt, &region)
                    != Err(AgreementError::EmptyGroundTruth(
                        "ground truth has no cells in the region".into(),
                    )),
            );
            continue;
        }

        let (od, oi) = oracle_dice_iou(&pred, &gt, &rows);
        mismatches += usize::from(dice(&pred, &gt, &region).unwrap() != od);
        mismatches += usize::from(iou(&pred, &gt, &region).unwrap() != oi);

        let (ot, odice) = oracle_threshold(&map, &gt, &rows);
        let th = optimal_threshold(&map, &gt, &region).unwrap();
        mismatches += usize::from(th.threshold != ot || th.dice != odice);
        identity_worst = identity_worst.max((th.iou - th.dice / (2.0 - th.dice)).abs());

        let xs: Vec<f64> = rows.iter().flat_map(|&r| map[r].iter().copied()).collect();
        let ys: Vec<f64> = rows
            .iter()
            .flat_map(|&r| gt[r].iter().map(|&b| f64::from(u8::from(b))))
            .collect();
        let gt_constant = gt_cells == xs.len();
        match (spearman(&map, &gt, &region), oracle_spearman(&xs, &ys)) {
            (Err(AgreementError::DegenerateRegion), _) => degenerate_agree &= gt_constant,
            (Ok(s), Some(rho)) => spearman_worst = spearman_worst.max((s.rho - rho).abs()),
            (Ok(s), None) => degenerate_agree &= s.degenerate && s.rho == 0.0,
            (Err(e), _) => panic!("unexpected {e}"),
        }
    }
    let pass = mismatches == 0 && degenerate_agree && spearman_worst <= SPEARMAN_ABS && identity_worst <= IDENTITY_ABS;
    verdict(
        "metric-oracles",
        pass,
        &format!(
            "{ORACLE_PAIRS} random pairs: {mismatches} exact mismatches (Dice/IoU/threshold), Spearman max \
             diff {spearman_worst:.1e} (<= {SPEARMAN_ABS:e}), |iou - dice/(2-dice)| max {identity_worst:.1e} \
             (<= {IDENTITY_ABS:e}), degenerate handling consistent: {degenerate_agree}"
        ),
    );
}

// ---------------------------------------------------------------- cross-modal

fn attribution(values: [Vec<Vec<f64>>; 2]) -> ClassAttribution {
    let slices = values.map(|m| {
        let shape = vec![m.len(), m[0].len()];
        Tensor::new(shape, m.into_iter().flatten().collect()).unwrap()
    });
    ClassAttribution::from_slices("case", MethodParams::defaults(Method::IntegratedGradients), slices).unwrap()
}

fn profile(values: Vec<Vec<f64>>) -> BipolarProfile {
    BipolarProfile::new("case", Method::IntegratedGradients, values).unwrap()
}

#[test]
fn crossmodal_identities_hold() {
    let mut failures: Vec<&str> = Vec::new();
    let mut check = |ok: bool, name: &'static str| {
        if !ok {
            failures.push(name);
        }
    };

    let phi = bipolar_profile(&attribution([vec![vec![-0.2]], vec![vec![0.4]]])).unwrap();
    check(phi.values[0][0] == (0.4 - (-0.2)) / 2.0, "half difference");
    check((phi.values[0][0] - 0.3).abs() <= f64::EPSILON, "half difference value");
    let same = bipolar_profile(&attribution([vec![vec![0.7, -1.2]], vec![vec![0.7, -1.2]]])).unwrap();
    check(same.values == vec![vec![0.0, 0.0]], "equal slices cancel");
    let opposite = bipolar_profile(&attribution([vec![vec![-0.7, 1.3]], vec![vec![0.7, -1.3]]])).unwrap();
    check(opposite.values == vec![vec![0.7, -1.3]], "opposite slices");

    let mut leads = vec![vec![0.0; 3]; 12];
    leads[0] = vec![1.5, 0.5, -0.25];
    leads[4] = vec![0.5, -0.5, 0.25];
    let mapped = map_to_cine(&profile(leads)).unwrap();
    check(
        mapped.temporal == vec![1.0, 0.0, 0.0] && !mapped.degenerate,
        "lead sum normalization",
    );
    check(
        mapped.replicated.iter().all(|r| *r == mapped.temporal) && mapped.replicated.len() == 3,
        "replication",
    );
    let zero = map_to_cine(&profile(vec![vec![0.0; 4]; 12])).unwrap();
    check(zero.degenerate && zero.temporal == vec![0.0; 4], "degenerate flag");

    let cell = profile(vec![vec![0.3]]);
    check(
        orient_by_diagnosis(&cell, Some(Label::Normal)).unwrap().values == vec![vec![-0.3]],
        "normal flips",
    );
    check(
        orient_by_diagnosis(&cell, Some(Label::Abnormal)).unwrap() == cell,
        "abnormal keeps",
    );
    let twice = orient_by_diagnosis(
        &orient_by_diagnosis(&cell, Some(Label::Normal)).unwrap(),
        Some(Label::Normal),
    );
    check(twice.unwrap() == cell, "involution");

    let region = Region::all(1).unwrap();
    let p = profile(vec![vec![-0.5, 0.2]]);
    let prep = |q| post_process(&p, q, &region).unwrap().values;
    check(prep(Prep::Positive) == vec![vec![0.0, 0.2]], "positive");
    check(prep(Prep::Absolute) == vec![vec![0.5, 0.2]], "absolute");
    check(prep(Prep::Scaled) == vec![vec![0.0, 1.0]], "scaled");
    let negative = post_process(&profile(vec![vec![-0.1, -2.0]]), Prep::Positive, &region).unwrap();
    check(negative.values == vec![vec![0.0, 0.0]], "all-negative positive");

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst = 0.0f64;
    let mut exact = true;
    for _ in 0..SCALE_PROFILES {
        let t = rng.random_range(1..40);
        let values: Vec<Vec<f64>> = (0..12)
            .map(|_| (0..t).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let base = map_to_cine(&profile(values.clone())).unwrap();
        for alpha in SCALE_ALPHAS {
            for sign in [1.0, -1.0] {
                let scaled: Vec<Vec<f64>> = values
                    .iter()
                    .map(|r| r.iter().map(|v| v * alpha * sign).collect())
                    .collect();
                let m = map_to_cine(&profile(scaled)).unwrap();
                for (a, b) in m.temporal.iter().zip(&base.temporal) {
                    let diff = (a - sign * b).abs();
                    worst = worst.max(diff);
                    if alpha.log2().fract() == 0.0 {
                        exact &= diff == 0.0;
                    }
                }
            }
        }
    }
    let pass = failures.is_empty() && worst <= SCALE_ABS && exact;
    verdict(
        "crossmodal-identities",
        pass,
        &format!(
            "arithmetic examples failing: {failures:?}; scale invariance over {SCALE_PROFILES} profiles x \
             alpha {SCALE_ALPHAS:?} (and negated): max diff {worst:.1e} (<= {SCALE_ABS:e}), exact for powers \
             of two: {exact}"
        ),
    );
}

// ---------------------------------------------------------------- bootstrap

#[test]
fn bca_intervals_cover_the_mean() {
    let start = Instant::now();
    let mut covered = 0;
    for cohort in 0..BCA_COHORTS as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(50_000 + cohort);
        let draws: Vec<f64> = (0..BCA_N).map(|_| StandardNormal.sample(&mut rng)).collect();
        let ci = bca_bootstrap(&draws, BCA_B, BCA_ALPHA, cohort).unwrap();
        covered += usize::from(ci.lo <= 0.0 && 0.0 <= ci.hi);
    }
    let coverage = covered as f64 / BCA_COHORTS as f64;
    let constant = bca_bootstrap(&[0.42; BCA_N], BCA_B, BCA_ALPHA, 1).unwrap();
    let single = bca_bootstrap(&[0.42], BCA_B, BCA_ALPHA, 1).unwrap();
    let degenerate_ok = [constant, single]
        .iter()
        .all(|c| c.degenerate && c.lo == c.mean && c.hi == c.mean);
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "bca-coverage",
        (BCA_COVERAGE.0..=BCA_COVERAGE.1).contains(&coverage) && degenerate_ok && secs < BCA_MAX_SECONDS,
        &format!(
            "{BCA_COHORTS} cohorts of n={BCA_N}, B={BCA_B}: coverage {coverage:.3} in [{}, {}]; degenerate \
             inputs flagged as point intervals: {degenerate_ok}; {secs:.1}s (< {BCA_MAX_SECONDS}s)",
            BCA_COVERAGE.0, BCA_COVERAGE.1
        ),
    );
}

// ---------------------------------------------------------------- masks

fn ecg_annotation(leads: &[&str], segments: Vec<Segment>) -> ExpertAnnotation {
    ExpertAnnotation {
        case_id: "case".into(),
        annotator_id: "expert".into(),
        modality: AnnotationModality::Ecg12,
        diagnosis: Some(Label::Abnormal),
        leads: leads.iter().map(|s| s.to_string()).collect(),
        segments,
        free_text: String::new(),
        rasterized: false,
    }
}

fn true_range(mask: &BinaryMask, row: usize) -> Vec<usize> {
    mask.cells[row]
        .iter()
        .enumerate()
        .filter(|(_, &b)| b)
        .map(|(i, _)| i)
        .collect()
}

#[test]
fn mask_protocol_examples_and_round_trip() {
    let interval = |s, e| Segment::Interval { start_ms: s, end_ms: e };
    let cases: [(Segment, std::ops::Range<usize>, &str); 4] = [
        (interval(30.0, 100.0), 15..50, "30-100 ms"),
        (Segment::Point { point_ms: 200.0 }, 95..105, "point 200 ms +-10"),
        (interval(160.0, 170.0), 70..95, "160-170 ms widened to 50 ms"),
        (interval(50.0, 60.0), 21..34, "50-60 ms widened to 25 ms"),
    ];
    let mut failures = Vec::new();
    for (seg, expected, name) in cases {
        let mask = annotation_to_mask(&ecg_annotation(&["III"], vec![seg]), 500, 400.0).unwrap();
        let row = 2;
        let others_empty = (0..12).filter(|&r| r != row).all(|r| mask.cells[r].iter().all(|&b| !b));
        if true_range(&mask, row) != expected.collect::<Vec<_>>() || !others_empty {
            failures.push(name);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(31337);
    let mut round_trip_failures = 0;
    for i in 0..ROUND_TRIP_ANNOTATIONS {
        let rate = [250u32, 360, 500, 1000][rng.random_range(0..4)];
        let segments: Vec<Segment> = (0..rng.random_range(1..4))
            .map(|_| {
                if rng.random_bool(0.3) {
                    Segment::Point {
                        point_ms: rng.random_range(0.0..400.0),
                    }
                } else {
                    let s = rng.random_range(0.0..390.0);
                    interval(s, (s + rng.random_range(0.0..120.0)).min(400.0))
                }
            })
            .collect();
        let ann = if rng.random_bool(0.5) {
            let mut leads: Vec<&str> = LEAD_NAMES.iter().copied().filter(|_| rng.random_bool(0.3)).collect();
            if leads.is_empty() {
                leads.push(LEAD_NAMES[i % 12]);
            }
            ecg_annotation(&leads, segments)
        } else {
            ExpertAnnotation {
                modality: AnnotationModality::Cine,
                leads: vec!["all".into()],
                ..ecg_annotation(&[], segments)
            }
        };
        let mask = annotation_to_mask(&ann, rate, 400.0).unwrap();
        let back = mask_to_annotation(
            &mask,
            ann.modality,
            rate,
            &ann.case_id,
            &ann.annotator_id,
            ann.diagnosis,
        )
        .unwrap();
        let again = annotation_to_mask(&back, rate, 400.0).unwrap();
        round_trip_failures += usize::from(again != mask);
    }
    verdict(
        "mask-protocol",
        failures.is_empty() && round_trip_failures == 0,
        &format!(
            "examples failing: {failures:?}; round trip mismatches {round_trip_failures}/{ROUND_TRIP_ANNOTATIONS}"
        ),
    );
}

// ---------------------------------------------------------------- end to end

fn scaled_cine_dice(attr: &ClassAttribution, ann: &ExpertAnnotation, rate: u32) -> f64 {
    let mapped = map_to_cine(&bipolar_profile(attr).unwrap()).unwrap().temporal_profile();
    let gt = annotation_to_mask(ann, rate, 400.0).unwrap();
    let oriented = orient_by_diagnosis(&mapped, ann.diagnosis).unwrap();
    let map = post_process(&oriented, Prep::Scaled, &mask_region(&gt).unwrap()).unwrap();
    let config = AlignConfig {
        representation: Representation::CineMapped,
        method: Method::IntegratedGradients,
        prep: Prep::Scaled,
    };
    align_case(&map, &gt, config).unwrap().dice
}

#[test]
fn end_to_end_synthetic_gate() {
    let fx = trained();
    let train_secs = fx.train_time.as_secs_f64();
    let accuracy_ok = fx.report.test_accuracy >= GATE_MIN_ACCURACY && train_secs < GATE_MAX_TRAIN_SECONDS;

    let ig = IgParams {
        steps: GATE_IG_STEPS,
        noise_samples: 1,
        ..IgParams::default()
    };
    let params = MethodParams::Ig(ig);
    let test: Vec<&SyntheticCase> = fx.test_idx.iter().map(|&i| &fx.cases[i]).collect();
    let cine_anns: Vec<ExpertAnnotation> = test
        .iter()
        .map(|c| synthetic_annotations(c, "truth")[1].clone())
        .collect();
    let attrs: Vec<ClassAttribution> = test
        .iter()
        .map(|c| attribute(&fx.model, &c.record.case_id, &c.record.to_tensor(), &params, None, 0).unwrap())
        .collect();
    let rate = test[0].record.sample_rate_hz;

    let observed: Vec<f64> = attrs
        .iter()
        .zip(&cine_anns)
        .map(|(a, ann)| scaled_cine_dice(a, ann, rate))
        .collect();
    let n = observed.len() as f64;
    let observed_mean = observed.iter().sum::<f64>() / n;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut perm: Vec<usize> = (0..attrs.len()).collect();
    let mut at_least = 0usize;
    for _ in 0..GATE_PERMUTATIONS {
        perm.shuffle(&mut rng);
        let null_mean = perm
            .iter()
            .enumerate()
            .map(|(i, &j)| scaled_cine_dice(&attrs[i], &cine_anns[j], rate))
            .sum::<f64>()
            / n;
        at_least += usize::from(null_mean >= observed_mean);
    }
    let p = (1 + at_least) as f64 / (1 + GATE_PERMUTATIONS) as f64;

    let entries: Vec<DatasetEntry> = test.iter().map(|c| DatasetEntry::from((*c).clone())).collect();
    let annotations: Vec<ExpertAnnotation> = test.iter().flat_map(|c| synthetic_annotations(c, "truth")).collect();
    let config = PoolConfig {
        methods: vec![Method::IntegratedGradients],
        representations: vec![Representation::Ecg12, Representation::CineMapped],
        params: vec![params.clone()],
        bootstrap_b: GATE_BOOTSTRAP_B,
        ..PoolConfig::default()
    };
    let models = PoolModels {
        ecg: Some(&fx.model),
        cine: None,
    };
    let outcome = run_pool(&entries, &annotations, models, &PoolBaselines::default(), &config, None).unwrap();
    let pool_mapped: Vec<f64> = outcome
        .results
        .iter()
        .filter(|r| r.config.representation == Representation::CineMapped && r.config.prep == Prep::Scaled)
        .map(|r| r.dice)
        .collect();
    let pool_agrees = outcome.errors.is_empty() && pool_mapped.len() == observed.len() && {
        let mut a = pool_mapped.clone();
        let mut b = observed.clone();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        a == b
    };
    let report = cohort_report(&outcome.results, config.bootstrap_b, config.alpha, 0).unwrap();
    let md = emit_report(&report, ReportFormat::Markdown);
    let winners: Vec<&str> = md
        .lines()
        .skip_while(|l| *l != TABLE_HEADER)
        .skip(2)
        .take_while(|l| l.starts_with('|'))
        .collect();
    let layout_ok = md.contains(TABLE_HEADER)
        && [Representation::Ecg12, Representation::CineMapped].iter().all(|r| {
            winners
                .iter()
                .any(|l| l.starts_with(&format!("| {} | ", r.label())) && l.matches('–').count() == 3)
        });
    {
        let mut out = std::io::stdout().lock();
        let table: Vec<&str> = md.lines().skip_while(|l| *l != TABLE_HEADER).take(4).collect();
        let _ = writeln!(out, "{}", table.join("\n"));
    }

    verdict(
        "end-to-end-gate",
        accuracy_ok && p < GATE_MAX_P && pool_agrees && layout_ok,
        &format!(
            "{} cases, test accuracy {:.3} (>= {GATE_MIN_ACCURACY}) after {train_secs:.0}s training \
             (< {GATE_MAX_TRAIN_SECONDS}s); mapped Scaled mean Dice {observed_mean:.3} over {} held-out cases, \
             permutation p = {p:.4} (< {GATE_MAX_P}, {GATE_PERMUTATIONS} permutations); pool agrees: \
             {pool_agrees}; report layout ok: {layout_ok}",
            fx.cases.len(),
            fx.report.test_accuracy,
            observed.len()
        ),
    );
}

// ---------------------------------------------------------------- pool

fn tiny(in_channels: usize, seed: u64) -> Model {
    let config = ModelConfig {
        in_channels,
        stem: ConvSpec::new(4, 3, 2),
        blocks: vec![ConvSpec::new(4, 3, 2)],
        dropout_rate: 0.0,
        num_classes: 2,
    };
    build_model(&config, seed).unwrap()
}

#[test]
fn pool_is_deterministic_and_resumable() {
    let cases = generate_synthetic_cohort(4, 4, 606, &SynthConfig::default()).unwrap();
    let annotations: Vec<ExpertAnnotation> = cases.iter().flat_map(|c| synthetic_annotations(c, "truth")).collect();
    let entries: Vec<DatasetEntry> = cases.iter().cloned().map(DatasetEntry::from).collect();
    let normals: Vec<&SyntheticCase> = cases.iter().filter(|c| c.record.label == Label::Normal).collect();
    let baselines = PoolBaselines {
        ecg: Some(BaselineSet::new(normals.iter().map(|c| c.record.to_tensor()).collect()).unwrap()),
        cine: Some(BaselineSet::new(normals.iter().map(|c| c.trajectory.to_tensor()).collect()).unwrap()),
    };
    let (ecg, cine) = (tiny(12, 1), tiny(3, 2));
    let models = PoolModels {
        ecg: Some(&ecg),
        cine: Some(&cine),
    };
    let config = PoolConfig {
        seeds: vec![0, 1],
        params: vec![
            MethodParams::Ig(IgParams {
                steps: 4,
                noise_samples: 2,
                ..IgParams::default()
            }),
            MethodParams::GradShap(GradShapParams {
                n_samples: 6,
                noise_sigma: 0.05,
            }),
            MethodParams::KernelShap(KernelShapParams {
                budget: 24,
                ..KernelShapParams::default()
            }),
            MethodParams::Lime(LimeParams {
                n_perturb: 24,
                ..LimeParams::default()
            }),
        ],
        ..PoolConfig::default()
    };
    let cache = tempfile::tempdir().unwrap();
    let table = |o: &cinemap::harness::PoolOutcome| {
        let mut buf = Vec::new();
        write_results(&mut buf, &o.results).unwrap();
        buf
    };
    let first = run_pool(&entries, &annotations, models, &baselines, &config, Some(cache.path())).unwrap();
    let second = run_pool(&entries, &annotations, models, &baselines, &config, Some(cache.path())).unwrap();
    let uncached = run_pool(&entries, &annotations, models, &baselines, &config, None).unwrap();
    let cells = entries.len() * 4 * 3 * 3 * 2;
    let pass = first.errors.is_empty()
        && first.results.len() == cells
        && first.computed == cells
        && second.computed == 0
        && second.cache_hits == cells
        && table(&first) == table(&second)
        && table(&first) == table(&uncached);
    verdict(
        "pool-determinism",
        pass,
        &format!(
            "{cells} cells; first run computed {} (errors {}), re-run computed {} with {} cache hits; tables \
             byte-identical: cached {}, recomputed {}",
            first.computed,
            first.errors.len(),
            second.computed,
            second.cache_hits,
            table(&first) == table(&second),
            table(&first) == table(&uncached)
        ),
    );
}
