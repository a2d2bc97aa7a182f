//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ecovnet::arch::{ArchSpec, ScalingCoefficients, StageOp};
use ecovnet::ensemble::{hard_ensemble, soft_ensemble, PredictionSet};
use ecovnet::gradcam::{cam_from_activations, compute_cam_for_image, HeatMap};
use ecovnet::io::{generate_toy_dataset, load_dataset, load_snapshot, save_snapshot, split_dataset};
use ecovnet::metrics::{accuracy_ci, prf1, roc_curve, ClassCounts, EvaluationReport, Z_95};
use ecovnet::model::{build_model, param_count, Feature, ModelParams};
use ecovnet::ops::conv::Padding;
use ecovnet::ops::{
    activation, activation_backward, batch_norm, batch_norm_backward, conv2d, conv2d_backward, depthwise_conv2d,
    depthwise_conv2d_backward, fully_connected, fully_connected_backward, global_avg_pool, global_avg_pool_backward,
    grad_check, one_hot, softmax_rows, squeeze_excite, squeeze_excite_backward, ActKind, BnStats, Mode, SeWeights,
};
use ecovnet::ops::loss::{cross_entropy_loss, softmax_ce_grad};
use ecovnet::train::{cosine_lr, predict_probs, train_with_snapshots, TrainConfig};
use ecovnet::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn report(id: usize, name: &str, result: Result<Outcome>) -> bool {
    let (pass, detail) = match result {
        Ok(o) => (o.pass, o.detail),
        Err(e) => (false, format!("error: {e}")),
    };
    println!("{} criterion {id} ({name}): {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}

// ---------------------------------------------------------------- gradients

type Forward = Box<dyn Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>>;
type Backward = Box<dyn Fn(&[Tensor<f64>], &Tensor<f64>) -> Result<Vec<Tensor<f64>>>>;

struct Case {
    inputs: Vec<Tensor<f64>>,
    forward: Forward,
    backward: Backward,
}

fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Maximum relative error of `sign · backward` against central differences
/// of the projected loss `Σ r ⊙ forward`.
fn case_error(case: &Case, sign: f64, rng: &mut ChaCha8Rng) -> Result<f64> {
    let out = (case.forward)(&case.inputs)?;
    let r = randn(rng, out.shape());
    grad_check(
        |ins| {
            let y = (case.forward)(ins)?;
            let loss = y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum();
            let grads = (case.backward)(ins, &r)?.iter().map(|g| g.scale(sign)).collect();
            Ok((loss, grads))
        },
        &case.inputs,
        1e-6,
    )
}

fn conv_case(rng: &mut ChaCha8Rng) -> Case {
    let (n, cin, cout) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..4));
    let k = [1, 3, 5][rng.random_range(0..3)];
    let hw = rng.random_range(k..k + 4);
    let stride = rng.random_range(1..3);
    let pad = if rng.random_bool(0.5) { Padding::Same } else { Padding::Valid };
    Case {
        inputs: vec![randn(rng, &[n, cin, hw, hw]), randn(rng, &[cout, cin, k, k])],
        forward: Box::new(move |i| conv2d(&i[0], &i[1], stride, pad)),
        backward: Box::new(move |i, g| {
            let (dx, dk) = conv2d_backward(&i[0], &i[1], stride, pad, g)?;
            Ok(vec![dx, dk])
        }),
    }
}

fn depthwise_case(rng: &mut ChaCha8Rng) -> Case {
    let (n, ch) = (rng.random_range(1..3), rng.random_range(1..4));
    let k = [3, 5][rng.random_range(0..2)];
    let hw = rng.random_range(k..k + 4);
    let stride = rng.random_range(1..3);
    let pad = if rng.random_bool(0.5) { Padding::Same } else { Padding::Valid };
    Case {
        inputs: vec![randn(rng, &[n, ch, hw, hw]), randn(rng, &[ch, 1, k, k])],
        forward: Box::new(move |i| depthwise_conv2d(&i[0], &i[1], stride, pad)),
        backward: Box::new(move |i, g| {
            let (dx, dk) = depthwise_conv2d_backward(&i[0], &i[1], stride, pad, g)?;
            Ok(vec![dx, dk])
        }),
    }
}

fn bn_case(rng: &mut ChaCha8Rng) -> Case {
    let (n, ch, hw) = (rng.random_range(2..4), rng.random_range(1..4), rng.random_range(1..4));
    let bn = |i: &[Tensor<f64>]| {
        let stats = BnStats::identity(i[1].len());
        batch_norm(&i[0], i[1].data(), i[2].data(), &stats, 1e-3, Mode::Training)
    };
    Case {
        inputs: vec![randn(rng, &[n, ch, hw, hw]), randn(rng, &[ch]), randn(rng, &[ch])],
        forward: Box::new(move |i| Ok(bn(i)?.0)),
        backward: Box::new(move |i, g| {
            let (_, cache) = bn(i)?;
            let (dx, dg, db) = batch_norm_backward(g, i[1].data(), &cache)?;
            Ok(vec![dx, Tensor::from_vec(&[dg.len()], dg)?, Tensor::from_vec(&[db.len()], db)?])
        }),
    }
}

fn swish_case(rng: &mut ChaCha8Rng) -> Case {
    let shape = [rng.random_range(1..3), rng.random_range(1..4), 3, rng.random_range(1..4)];
    Case {
        inputs: vec![randn(rng, &shape).scale(3.0)],
        forward: Box::new(|i| Ok(activation(ActKind::Swish, &i[0]))),
        backward: Box::new(|i, g| Ok(vec![activation_backward(ActKind::Swish, &i[0], g)?])),
    }
}

fn se_case(rng: &mut ChaCha8Rng) -> Case {
    let (n, ch, hw) = (rng.random_range(1..3), [4, 8][rng.random_range(0..2)], rng.random_range(1..4));
    let ratio = 4;
    let r = ch / ratio;
    let se = move |i: &[Tensor<f64>]| {
        let w = SeWeights {
            reduce_w: &i[1],
            reduce_b: i[2].data(),
            expand_w: &i[3],
            expand_b: i[4].data(),
        };
        squeeze_excite(&i[0], ratio, w)
    };
    Case {
        inputs: vec![
            randn(rng, &[n, ch, hw, hw]),
            randn(rng, &[ch, r]),
            randn(rng, &[r]),
            randn(rng, &[r, ch]),
            randn(rng, &[ch]),
        ],
        forward: Box::new(move |i| Ok(se(i)?.0)),
        backward: Box::new(move |i, g| {
            let (_, cache) = se(i)?;
            let w = SeWeights {
                reduce_w: &i[1],
                reduce_b: i[2].data(),
                expand_w: &i[3],
                expand_b: i[4].data(),
            };
            let (dx, gr) = squeeze_excite_backward(&i[0], w, &cache, g)?;
            Ok(vec![
                dx,
                gr.reduce_w,
                Tensor::from_vec(&[r], gr.reduce_b)?,
                gr.expand_w,
                Tensor::from_vec(&[ch], gr.expand_b)?,
            ])
        }),
    }
}

fn gap_case(rng: &mut ChaCha8Rng) -> Case {
    let shape = [rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..5), rng.random_range(1..5)];
    Case {
        inputs: vec![randn(rng, &shape)],
        forward: Box::new(|i| global_avg_pool(&i[0])),
        backward: Box::new(|i, g| Ok(vec![global_avg_pool_backward(g, i[0].shape())?])),
    }
}

fn fc_case(rng: &mut ChaCha8Rng) -> Case {
    let (n, din, dout) = (rng.random_range(1..4), rng.random_range(1..6), rng.random_range(1..6));
    Case {
        inputs: vec![randn(rng, &[n, din]), randn(rng, &[din, dout]), randn(rng, &[dout])],
        forward: Box::new(|i| fully_connected(&i[0], &i[1], i[2].data())),
        backward: Box::new(|i, g| {
            let (dx, dw, db) = fully_connected_backward(&i[0], &i[1], g)?;
            let len = db.len();
            Ok(vec![dx, dw, Tensor::from_vec(&[len], db)?])
        }),
    }
}

fn softmax_ce_case(rng: &mut ChaCha8Rng) -> Case {
    let (n, c) = (rng.random_range(1..5), rng.random_range(2..5));
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
    let onehot = one_hot::<f64>(&labels, c).unwrap();
    let weights: Vec<f64> = (0..c).map(|_| rng.random_range(0.5..2.0)).collect();
    let (oh, w) = (onehot.clone(), weights.clone());
    Case {
        inputs: vec![randn(rng, &[n, c]).scale(2.0)],
        forward: Box::new(move |i| {
            let loss = cross_entropy_loss(&softmax_rows(&i[0])?, &onehot, &weights, 0.0, 0.0, &[])?;
            Tensor::from_vec(&[1], vec![loss])
        }),
        backward: Box::new(move |i, g| Ok(vec![softmax_ce_grad(&softmax_rows(&i[0])?, &oh, &w)?.scale(g.data()[0])])),
    }
}

fn gradient_correctness() -> Result<Outcome> {
    let makers: [(&str, fn(&mut ChaCha8Rng) -> Case); 8] = [
        ("conv2d", conv_case),
        ("depthwise", depthwise_case),
        ("batchnorm", bn_case),
        ("swish", swish_case),
        ("se", se_case),
        ("gap", gap_case),
        ("fc", fc_case),
        ("softmax-ce", softmax_ce_case),
    ];
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    let mut weakest_mutant = f64::INFINITY;
    for (name, make) in makers {
        for _ in 0..3 {
            let case = make(&mut rng);
            let err = case_error(&case, 1.0, &mut rng)?;
            let flipped = case_error(&case, -1.0, &mut rng)?;
            if err > 1e-5 {
                println!("  {name}: max relative error {err:.2e}");
            }
            worst = worst.max(err);
            weakest_mutant = weakest_mutant.min(flipped);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Ok(outcome(
        worst <= 1e-5 && weakest_mutant > 1e-2 && secs < 120.0,
        format!(
            "8 ops x 3 shapes, max rel err {worst:.2e} (<= 1e-5); sign-flipped backward min err {weakest_mutant:.2e}; {secs:.1}s"
        ),
    ))
}

// ---------------------------------------------------------------- scaling

fn compound_scaling() -> Result<Outcome> {
    use StageOp::*;
    let b0 = ArchSpec::preset("b0", 3)?;
    // (op, kernel, stride, channels, layers, input resolution)
    let table = [
        (Conv, 3, 2, 32, 1, 224),
        (MbConv1, 3, 1, 16, 1, 112),
        (MbConv6, 3, 2, 24, 2, 112),
        (MbConv6, 5, 2, 40, 2, 56),
        (MbConv6, 3, 2, 80, 3, 28),
        (MbConv6, 5, 1, 112, 3, 14),
        (MbConv6, 5, 2, 192, 4, 14),
        (MbConv6, 3, 1, 320, 1, 7),
        (Conv, 1, 1, 1280, 1, 7),
    ];
    let got: Vec<_> = b0
        .stages
        .iter()
        .zip(b0.stage_resolutions())
        .map(|(s, r)| (s.op, s.kernel, s.stride, s.channels, s.repeats, r))
        .collect();
    let table_ok = got == table && b0.resolution == 224;
    let c = ScalingCoefficients::with_phi(1.0)?;
    let mult_ok =
        (c.depth() - 1.2).abs() < 1e-12 && (c.width() - 1.1).abs() < 1e-12 && (c.resolution() - 1.15).abs() < 1e-12;
    let product = c.constraint_product();
    let product_ok = (product - 1.9203).abs() < 1e-4 && (product - 2.0).abs() / 2.0 <= 0.1;
    let params = param_count(&build_model::<f32>(&b0, 0)?);
    let rel = (params as f64 - 4_978_847.0).abs() / 4_978_847.0;
    Ok(outcome(
        table_ok && mult_ok && product_ok && rel <= 0.05,
        format!(
            "b0 table {}; multipliers {:.2}/{:.2}/{:.2}; product {product:.4}; b0 params {params} ({:.2}% off)",
            if table_ok { "matches" } else { "differs" },
            c.depth(),
            c.width(),
            c.resolution(),
            100.0 * rel
        ),
    ))
}

// ---------------------------------------------------------------- schedule

fn schedule(snapshots_emitted: usize) -> Result<Outcome> {
    let cfg = TrainConfig::default();
    let (t_total, m, a0) = (25usize, 5usize, 1e-4);
    assert_eq!((cfg.total_epochs, cfg.cycles, cfg.initial_lr), (t_total, m, a0));
    let l = t_total.div_ceil(m);
    let mut worst: f64 = 0.0;
    let mut restarts = Vec::new();
    for t in 1..=t_total {
        let closed = a0 / 2.0 * ((std::f64::consts::PI * ((t - 1) % l) as f64 / l as f64).cos() + 1.0);
        let lr = cosine_lr(t, &cfg)?;
        worst = worst.max((lr - closed).abs() / closed);
        if lr == a0 {
            restarts.push(t);
        }
    }
    let ends = (1..=t_total).filter(|&t| cfg.is_cycle_end(t)).count();
    Ok(outcome(
        worst <= 1e-12 && restarts == [1, 6, 11, 16, 21] && ends == 5 && snapshots_emitted == 5,
        format!("max rel err {worst:.1e}; restarts at {restarts:?}; {snapshots_emitted} snapshots emitted"),
    ))
}

// ---------------------------------------------------------------- ensembles

fn first_max(v: &[f64]) -> usize {
    let mx = v.iter().cloned().fold(f64::MIN, f64::max);
    v.iter().position(|&x| x == mx).unwrap()
}

/// Vote counting with explicit sorting: most votes, then highest mean
/// probability, then lowest class index.
fn oracle(vectors: &[Vec<f64>], m: usize) -> (usize, usize) {
    let used = &vectors[vectors.len() - m..];
    let mean: Vec<f64> = (0..3).map(|k| used.iter().map(|v| v[k]).sum::<f64>() / m as f64).collect();
    let mut votes = [0usize; 3];
    for v in used {
        votes[first_max(v)] += 1;
    }
    let mut order = vec![0usize, 1, 2];
    order.sort_by(|&a, &b| {
        votes[b]
            .cmp(&votes[a])
            .then(mean[b].partial_cmp(&mean[a]).unwrap())
            .then(a.cmp(&b))
    });
    (order[0], first_max(&mean))
}

fn ensemble_oracle() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut mismatches = 0;
    let mut invariant_failures = 0;
    for _ in 0..1000 {
        let vectors: Vec<Vec<f64>> = (0..5)
            .map(|_| {
                let raw: Vec<f64> = (0..3).map(|_| rng.random_range(0..4) as f64 + 0.01).collect();
                let s: f64 = raw.iter().sum();
                raw.iter().map(|v| v / s).collect()
            })
            .collect();
        for m in 1..=5 {
            let p = PredictionSet::new(vectors.clone(), 1, 3)?.with_m(m)?;
            let (hard, soft) = oracle(&vectors, m);
            if hard_ensemble(&p)[0] != hard || soft_ensemble(&p)[0].0 != soft {
                mismatches += 1;
            }
        }
        // Invariants use continuous vectors: with exact ties, a different
        // summation order may round the tied means apart.
        let smooth: Vec<Vec<f64>> = (0..5)
            .map(|_| {
                let raw: Vec<f64> = (0..3).map(|_| rng.random_range(0.01..1.0)).collect();
                let s: f64 = raw.iter().sum();
                raw.iter().map(|v| v / s).collect()
            })
            .collect();
        let mut shuffled = smooth.clone();
        shuffled.reverse();
        shuffled.swap(0, 2);
        let a = PredictionSet::new(smooth.clone(), 1, 3)?;
        let b = PredictionSet::new(shuffled, 1, 3)?;
        if hard_ensemble(&a) != hard_ensemble(&b) || soft_ensemble(&a)[0].0 != soft_ensemble(&b)[0].0 {
            invariant_failures += 1;
        }
        // Repeating one vector reproduces its own argmax.
        let same = PredictionSet::new(vec![smooth[0].clone(); 5], 1, 3)?;
        let k = first_max(&smooth[0]);
        if hard_ensemble(&same)[0] != k || soft_ensemble(&same)[0].0 != k {
            invariant_failures += 1;
        }
    }
    Ok(outcome(
        mismatches == 0 && invariant_failures == 0,
        format!("1000 sets x m=1..5: {mismatches} mismatches, {invariant_failures} invariant failures"),
    ))
}

// ---------------------------------------------------------------- metrics

fn pair_auc(scores: &[f64], positive: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &p) in positive.iter().enumerate() {
        for (j, &q) in positive.iter().enumerate() {
            if p && !q {
                pairs += 1.0;
                wins += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / pairs
}

fn metrics_arithmetic() -> Result<Outcome> {
    let m = prf1(&ClassCounts {
        tp: 100,
        fp: 8,
        fn_: 0,
        tn: 192,
    });
    let prf_ok = (m.precision - 92.59).abs() <= 0.01 && (m.recall - 100.0).abs() <= 0.01 && (m.f1 - 96.15).abs() <= 0.01;
    let (_, h1) = accuracy_ci(1520, 1579, Z_95)?;
    let (_, h2) = accuracy_ci(289, 300, Z_95)?;
    let ci_ok = (h1 - 0.94).abs() <= 0.01 && (h2 - 2.13).abs() <= 0.01;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.random_range(4..60);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..10) as f64 / 10.0).collect();
        let mut positive: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        positive[0] = true;
        positive[1] = false;
        let curve = roc_curve(&scores, &positive).expect("both classes present");
        worst = worst.max((curve.auc - pair_auc(&scores, &positive)).abs());
    }
    Ok(outcome(
        prf_ok && ci_ok && worst <= 1e-9,
        format!(
            "P/R/F1 {:.2}/{:.2}/{:.2}; Wald half-widths {h1:.2}, {h2:.2}; AUC vs pair counting max diff {worst:.1e}",
            m.precision, m.recall, m.f1
        ),
    ))
}

// ---------------------------------------------------------------- toy runs

struct ToyRun {
    snapshot_files: Vec<PathBuf>,
    models: Vec<ModelParams<f32>>,
    single_acc: Vec<f64>,
    soft_acc: f64,
    report: EvaluationReport,
    soft_pred: Vec<usize>,
    seconds: f64,
}

const TOY_SIZE: usize = 48;
const TOY_PER_CLASS: usize = 50;

fn toy_run(data_root: &Path, out: &Path) -> Result<ToyRun> {
    let start = Instant::now();
    let spec = ArchSpec::micro(3);
    let cfg = TrainConfig::default();
    let train_m = generate_toy_dataset(&data_root.join("train"), TOY_PER_CLASS, TOY_SIZE, 11)?;
    let test_m = generate_toy_dataset(&data_root.join("test"), TOY_PER_CLASS, TOY_SIZE, 22)?;
    let (tr, va) = split_dataset(&train_m, 0.1, cfg.seed)?;
    let (train, val) = (load_dataset(&tr, spec.resolution)?, load_dataset(&va, spec.resolution)?);
    let test = load_dataset(&test_m, spec.resolution)?;

    let mut model = build_model::<f32>(&spec, cfg.seed)?;
    let bundle = train_with_snapshots(&mut model, &train, &val, &cfg, |_| {})?;
    fs::create_dir_all(out).map_err(|e| ecovnet::Error::Argument(e.to_string()))?;
    let mut snapshot_files = Vec::new();
    let mut models = Vec::new();
    let mut probs = Vec::new();
    for (i, s) in bundle.snapshots.iter().enumerate() {
        let path = out.join(format!("snapshot_{}.ecov", i + 1));
        save_snapshot(&s.params, &path)?;
        let m = bundle.model(&model, i)?;
        probs.push(predict_probs(&m, &test, 16)?);
        snapshot_files.push(path);
        models.push(m);
    }
    let pset = PredictionSet::from_tensors(&probs)?;
    let acc = |pred: &[usize]| pred.iter().zip(&test.labels).filter(|(p, t)| p == t).count() as f64 / test.len() as f64;
    let single_acc = (0..pset.snapshots()).map(|s| acc(&pset.snapshot_predictions(s))).collect();
    let soft = soft_ensemble(&pset);
    let soft_pred: Vec<usize> = soft.iter().map(|(k, _)| *k).collect();
    let scores: Vec<f64> = soft.iter().flat_map(|(_, p)| p.clone()).collect();
    let report = EvaluationReport::new(&test.labels, &soft_pred, &scores, &test.classes)?;
    Ok(ToyRun {
        snapshot_files,
        models,
        single_acc,
        soft_acc: acc(&soft_pred),
        report,
        soft_pred,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn end_to_end(run: &ToyRun) -> Result<Outcome> {
    let params = param_count(&run.models[0]);
    let mean_single = run.single_acc.iter().sum::<f64>() / run.single_acc.len() as f64;
    Ok(outcome(
        params <= 200_000 && run.soft_acc >= 0.95 && run.soft_acc >= mean_single - 0.01 && run.seconds <= 600.0,
        format!(
            "micro {params} params; soft test acc {:.4} (>= 0.95); single-snapshot {:?} mean {mean_single:.4}; {:.0}s",
            run.soft_acc,
            run.single_acc.iter().map(|a| format!("{a:.3}")).collect::<Vec<_>>(),
            run.seconds
        ),
    ))
}

fn grad_cam(run: &ToyRun, test_dir: &Path) -> Result<Outcome> {
    // 2 filters on a 2x2 map: w = (0.2, -0.2) gives [[0.2,0.2],[0.8,0.4]].
    let acts = [1.0, 2.0, 3.0, 4.0, 0.0, 1.0, -1.0, 2.0];
    let grads = [0.1, 0.3, 0.2, 0.2, -0.4, 0.0, -0.2, -0.2];
    let map = cam_from_activations(&acts, &grads, 2, 2, 2)?;
    let oracle_err = map
        .iter()
        .zip([0.2, 0.2, 0.8, 0.4])
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    let test_m = ecovnet::io::load_manifest(&test_dir.join("manifest.csv"), &ecovnet::io::DEFAULT_CLASSES)?;
    let test = load_dataset(&test_m, TOY_SIZE)?;
    let model = run.models.last().unwrap();
    let half = TOY_SIZE / 2;
    // Localization is scored on the 12x12 output of block 1. Later maps
    // cover the whole 48-pixel image per cell and also credit the band-free
    // lower half, which is genuine evidence against class 2; their mass is
    // reported alongside.
    let (mut masses, mut top_masses) = (Vec::new(), Vec::new());
    let mut negative = false;
    for (i, (&label, img)) in test.labels.iter().zip(&test.images).enumerate() {
        if label != 0 || run.soft_pred[i] != 0 {
            continue;
        }
        for (layer, out) in [(Feature::Block(1), &mut masses), (Feature::Top, &mut top_masses)] {
            let heat: HeatMap = compute_cam_for_image(model, img, 0, layer, run.models.len())?;
            negative |= heat.map.iter().chain(&heat.raw).any(|&v| v < 0.0);
            out.push(heat.mass_fraction(0..half, 0..half));
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    let (block_mass, top_mass) = (mean(&masses), mean(&top_masses));
    Ok(outcome(
        oracle_err <= 1e-10 && masses.len() >= 20 && block_mass >= 0.5 && !negative,
        format!(
            "hand oracle err {oracle_err:.1e}; mean upper-left mass {block_mass:.3} at block 1 (top layer {top_mass:.3}) over {} correct class-0 samples; {}",
            masses.len(),
            if negative { "negative values found" } else { "all nonnegative" }
        ),
    ))
}

fn determinism(first: &ToyRun, second: &ToyRun) -> Result<Outcome> {
    let mut identical_files = first.snapshot_files.len() == second.snapshot_files.len();
    for (a, b) in first.snapshot_files.iter().zip(&second.snapshot_files) {
        identical_files &= fs::read(a).ok() == fs::read(b).ok();
    }
    let same_report = first.report == second.report;
    let mut round_trip = true;
    for (path, model) in first.snapshot_files.iter().zip(&first.models) {
        let loaded = load_snapshot::<f32>(path, model.spec())?;
        round_trip &= loaded.params() == model.params();
    }
    Ok(outcome(
        identical_files && same_report && round_trip,
        format!(
            "snapshot files {}; reports {}; save/load round trip {}",
            if identical_files { "bit-identical" } else { "differ" },
            if same_report { "identical" } else { "differ" },
            if round_trip { "exact" } else { "inexact" }
        ),
    ))
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let root = tmp.path();
    let first = toy_run(&root.join("data"), &root.join("run1"));
    let second = toy_run(&root.join("data"), &root.join("run2"));
    let toy = |f: &dyn Fn(&ToyRun, &ToyRun) -> Result<Outcome>| match (&first, &second) {
        (Ok(a), Ok(b)) => f(a, b),
        (Err(e), _) | (_, Err(e)) => Ok(outcome(false, format!("toy run failed: {e}"))),
    };
    let results = [
        report(1, "gradient correctness", gradient_correctness()),
        report(2, "compound scaling", compound_scaling()),
        report(3, "schedule", toy(&|a, _| schedule(a.snapshot_files.len()))),
        report(4, "ensemble oracle", ensemble_oracle()),
        report(5, "metrics arithmetic", metrics_arithmetic()),
        report(6, "end-to-end toy run", toy(&|a, _| end_to_end(a))),
        report(7, "grad-cam", toy(&|a, _| grad_cam(a, &root.join("data/test")))),
        report(8, "determinism", toy(&determinism)),
    ];
    if results.contains(&false) {
        std::process::exit(1);
    }
}
