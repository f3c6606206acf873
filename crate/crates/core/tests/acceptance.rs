//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! `cargo test -p exprune-core --test acceptance -- 4 5` runs a subset.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use exprune_core::engine::{
    forward, model_flops, Engine, LayerPruneCfg, ReluPredictorCfg, TermOrder,
};
use exprune_core::lab::{
    self, equivariance_check, gaussian_probes, random_permutation, symmetry_check, AttentionBlock,
    GroupSpec, Observable, ResidualNet,
};
use exprune_core::model::{gen_blob_images, gen_blobs};
use exprune_core::predict::{inv_normal_cdf, threshold_predict, PartialStats, StatsTestRule};
use exprune_core::rng::stream_rng;
use exprune_core::sweep::{confirm_on_test, pareto_slice_indices, pareto_slices, random_search, SearchSpace};
use exprune_core::train::{
    accuracy, init_model, magnitude_prune_scoped, train, train_from, Arch, PruneScope, SparsityMask, TrainCfg,
};
use exprune_core::{Dataset, Model, Precision, PruneConfig, Real, Tensor};
use rand::Rng;
use statrs::distribution::{ContinuousCDF, Normal};

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn arch(s: &str) -> Arch {
    s.parse().expect("fixture architecture")
}

fn fresh(spec: &str, seed: u64) -> Model {
    init_model(&arch(spec), seed, Precision::F64).expect("fixture model")
}

fn within_budget(start: Instant, budget: Duration) -> Result<(), String> {
    let spent = start.elapsed();
    ensure(spent < budget, || format!("took {spent:.0?}, budget {budget:.0?}"))
}

// 2. With predictors off the engine equals the reference forward pass bit for
// bit, and every sample is charged exactly the analytic model cost.
fn baseline_equivalence() -> Outcome {
    let start = Instant::now();
    fn check<T: Real>(model: &Model, inputs: &[Tensor<f64>], expected_flops: u64) -> Result<(), String> {
        let engine = Engine::<T>::compile(model, &PruneConfig::none()).map_err(e2s)?;
        for (i, x) in inputs.iter().enumerate() {
            let x: Tensor<T> = x.cast();
            let out = engine.run(&x).map_err(e2s)?;
            let reference = forward(model, &x).map_err(e2s)?;
            let scores = out.scores.ok_or("unpruned run stopped early")?;
            let same = scores.len() == reference.len()
                && scores.iter().zip(reference.data()).all(|(a, b)| a.to_f64().map(f64::to_bits) == b.to_f64().map(f64::to_bits));
            ensure(same, || format!("sample {i}: scores differ from the reference pass"))?;
            ensure(out.ledger.total() == expected_flops, || {
                format!("sample {i}: ledger {} vs analytic {expected_flops}", out.ledger.total())
            })?;
        }
        Ok(())
    }
    let mlp = fresh("mlp:40-48-36-5", 11);
    // Dense: 2·in·out MACs, out bias adds, out ReLUs. Head: MACs plus bias.
    let mlp_flops = (2 * 40 * 48 + 48 + 48) + (2 * 48 * 36 + 36 + 36) + (2 * 36 * 5 + 5);
    ensure(model_flops(&mlp).map_err(e2s)? == mlp_flops, || "MLP analytic count mismatch".into())?;
    let cnn = fresh("cnn:3x6x6-c8-c12b-c8s2-4", 12);
    let cnn_flops = model_flops(&cnn).map_err(e2s)?;
    let mlp_inputs = gaussian_probes(21, &[40], 500);
    let cnn_inputs = gaussian_probes(22, &[3, 6, 6], 500);
    check::<f64>(&mlp, &mlp_inputs, mlp_flops)?;
    check::<f64>(&cnn, &cnn_inputs, cnn_flops)?;
    check::<f32>(&mlp, &mlp_inputs[..100], mlp_flops)?;
    check::<f32>(&cnn, &cnn_inputs[..100], cnn_flops)?;
    within_budget(start, Duration::from_secs(60))?;
    Ok(format!("1000 inputs bit-exact, MLP {mlp_flops} and CNN {cnn_flops} FLOPs/sample"))
}

// 3. Never-prune sentinels cost exactly one check per eligible neuron.
fn overhead_accounting() -> Outcome {
    const K: usize = 32;
    let cases = [
        ("mlp:40-48-36-5", vec!["fc1", "fc2"], vec![40usize, 48], vec![48usize, 36]),
        ("cnn:40x5x5-c36-c48b-c20-6", vec!["conv1", "conv2", "conv3"], vec![40, 36, 48], vec![36 * 25, 48 * 25, 20 * 25]),
    ];
    let mut lines = Vec::new();
    for (spec, layers, fan_in, neurons) in cases {
        let model = fresh(spec, 5);
        let base = model_flops(&model).map_err(e2s)?;
        // A check fires once, after K of the fan-in terms, iff terms remain.
        let checks: u64 = fan_in
            .iter()
            .zip(&neurons)
            .map(|(&n_in, &n_out)| if n_in > K { n_out as u64 } else { 0 })
            .sum();
        ensure(checks > 0, || format!("{spec}: fixture has no eligible layer"))?;
        for (name, pred, per_check) in [
            ("threshold", ReluPredictorCfg::threshold(f64::NEG_INFINITY, K), 1u64),
            ("statstest", ReluPredictorCfg::statstest(0.0, K), 2 * K as u64 + 6),
        ] {
            let cfg = layers
                .iter()
                .fold(PruneConfig::none(), |c, l| c.with_layer(l, LayerPruneCfg::new(pred)));
            let engine = Engine::<f64>::compile(&model, &cfg).map_err(e2s)?;
            let reference = Engine::<f64>::compile(&model, &PruneConfig::none()).map_err(e2s)?;
            for x in gaussian_probes(3, model.input_shape(), 20) {
                let out = engine.run(&x).map_err(e2s)?;
                let want = base + checks * per_check;
                ensure(out.ledger.total() == want, || {
                    format!("{spec} {name}: total {} != {base} + {checks}·{per_check}", out.ledger.total())
                })?;
                ensure(out.ledger.prunes() == 0, || format!("{spec} {name}: sentinel pruned"))?;
                ensure(out.scores == reference.run(&x).map_err(e2s)?.scores, || {
                    format!("{spec} {name}: sentinel changed the scores")
                })?;
            }
            lines.push(format!("{name} {checks} checks"));
        }
    }
    Ok(lines.join(", "))
}

// 4. Predicates against two-pass oracles on random streams.
fn predicate_oracles() -> Outcome {
    const STREAMS: usize = 10_000;
    let normal = Normal::standard();
    let mut rng = stream_rng(4, 0);
    let mut worst_q = 0.0f64;
    let (mut stat_pos, mut thr_pos) = (0, 0);
    for s in 0..STREAMS {
        let k = rng.random_range(2..=64);
        let shift: f64 = rng.random_range(-1.5..1.0);
        let scale: f64 = rng.random_range(0.1..3.0);
        let terms: Vec<f64> = (0..k)
            .map(|_| shift + scale * (rng.random::<f64>() * 2.0 - 1.0 + rng.random::<f64>() - 0.5))
            .collect();
        let stats = PartialStats::from_terms(terms.iter().copied());
        let mean = terms.iter().sum::<f64>() / k as f64;
        let var = terms.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / k as f64;

        let alpha: f64 = if s % 2 == 0 {
            rng.random_range(1e-6..0.5)
        } else {
            10f64.powf(rng.random_range(-12.0..0.5f64.log10()))
        };
        let q = inv_normal_cdf(alpha).map_err(e2s)?;
        let z = normal.inverse_cdf(alpha);
        worst_q = worst_q.max((q - z).abs());
        // Partial mean over its spread, against the same normal quantile.
        let oracle = mean < 0.0 && (var == 0.0 || mean * mean / var > z * z);
        let got = StatsTestRule::new(alpha).map_err(e2s)?.decide(&stats).map_err(e2s)?;
        ensure(got == oracle, || format!("stream {s}: statstest {got}, oracle {oracle}"))?;
        stat_pos += usize::from(got);

        let t: f64 = rng.random_range(-1.5..0.5);
        let got = threshold_predict(&stats, t);
        ensure(got == (mean < t), || format!("stream {s}: threshold {got}, mean {mean} vs {t}"))?;
        thr_pos += usize::from(got);
    }
    ensure(worst_q <= 1e-8, || format!("quantile error {worst_q:e}"))?;
    ensure(stat_pos > STREAMS / 10 && stat_pos < STREAMS * 9 / 10, || {
        format!("degenerate stream mix: {stat_pos} statstest prunes")
    })?;
    Ok(format!(
        "{STREAMS} streams agree ({stat_pos} statstest and {thr_pos} threshold prunes), quantile error {worst_q:.1e}"
    ))
}

fn hidden_layers(model: &Model) -> Vec<String> {
    model
        .layers()
        .iter()
        .filter(|l| l.name.starts_with("fc") || l.name.starts_with("conv"))
        .map(|l| l.name.clone())
        .collect()
}

// 5. One gradient step commutes with permuting a hidden group.
fn gradient_equivariance() -> Outcome {
    let start = Instant::now();
    let (mut worst, mut control) = (0.0f64, f64::INFINITY);
    let mut rng = stream_rng(5, 0);
    for spec in ["mlp:6-16-12-3", "cnn:2x5x5-c6-c8b-3"] {
        let a = arch(spec);
        for seed in 0..10u64 {
            let model = init_model(&a, seed, Precision::F64).map_err(e2s)?;
            let data = gen_blobs(seed, 8, model.input_shape().iter().product(), 3, 1.0)
                .and_then(|d| d.reshaped(model.input_shape()))
                .map_err(e2s)?;
            let batch: Vec<usize> = (0..8).collect();
            for layer in hidden_layers(&model) {
                let g = GroupSpec::hidden(&model, &layer).map_err(e2s)?;
                let partial = g.clone().without_consumer();
                for _ in 0..50 {
                    let perm = random_permutation(&mut rng, g.size);
                    let e = equivariance_check(&model, &g, &data, &batch, &perm, 0.1).map_err(e2s)?;
                    worst = worst.max(e.group).max(e.rest);
                    if perm.iter().enumerate().any(|(i, &p)| i != p) {
                        let c = equivariance_check(&model, &partial, &data, &batch, &perm, 0.1).map_err(e2s)?;
                        control = control.min(c.group);
                    }
                }
            }
        }
    }
    ensure(worst <= 1e-10, || format!("max deviation {worst:e}"))?;
    ensure(control > 1e-3, || format!("control deviation only {control:e}"))?;
    within_budget(start, Duration::from_secs(300))?;
    Ok(format!("max deviation {worst:.1e}, min control deviation {control:.1e}"))
}

// 6. Permuting a group leaves the network function unchanged.
fn function_symmetry() -> Outcome {
    let mut rng = stream_rng(6, 0);
    let mut worst = Vec::new();
    for (spec, shape) in [("mlp:6-16-12-3", vec![6]), ("cnn:3x6x6-c8b-c10b-c6-4", vec![3, 6, 6])] {
        let mut dev = 0.0f64;
        for seed in 0..5u64 {
            let model = fresh(spec, seed);
            let probes = gaussian_probes(seed, &shape, 20);
            for layer in hidden_layers(&model) {
                let g = GroupSpec::hidden(&model, &layer).map_err(e2s)?;
                for _ in 0..10 {
                    let perm = random_permutation(&mut rng, g.size);
                    dev = dev.max(symmetry_check(&model, &g, &perm, &probes).map_err(e2s)?);
                }
            }
        }
        worst.push((spec.split(':').next().unwrap_or(spec).to_string(), dev));
    }
    let (mut res_dev, mut attn_dev) = (0.0f64, 0.0f64);
    for seed in 0..5u64 {
        let res = ResidualNet::random(seed, 3, 8, 6, 4);
        let probes = gaussian_probes(seed, &[3, 5, 5], 20);
        for g in [res.stream_group(), res.branch_group()] {
            for _ in 0..10 {
                let perm = random_permutation(&mut rng, g.size);
                res_dev = res_dev.max(res.symmetry_check(&g, &perm, &probes).map_err(e2s)?);
            }
        }
        let attn = AttentionBlock::random(seed, 6, 5, 3);
        let probes = gaussian_probes(seed, &[6, 7], 20);
        for _ in 0..10 {
            let perm = random_permutation(&mut rng, attn.group_size());
            attn_dev = attn_dev.max(attn.symmetry_check(&perm, &probes).map_err(e2s)?);
        }
    }
    worst.push(("residual".into(), res_dev));
    worst.push(("attention".into(), attn_dev));
    let summary: Vec<String> = worst.iter().map(|(n, d)| format!("{n} {d:.1e}")).collect();
    ensure(worst.iter().all(|(_, d)| *d <= 1e-10), || summary.join(", "))?;
    Ok(summary.join(", "))
}

// 7. Trained hidden neurons are identically distributed across an ensemble.
fn ensemble_identical_distribution() -> Outcome {
    let start = Instant::now();
    let a = arch("mlp:8-64-4");
    let data = gen_blobs(7, 800, 8, 4, 1.5).map_err(e2s)?;
    let cfg = TrainCfg {
        epochs: 20,
        ..TrainCfg::default()
    };
    let models = lab::train_ensemble(&a, &data, &cfg, 100).map_err(e2s)?;
    let probe = gen_blobs(70, 1, 8, 4, 1.5).map_err(e2s)?.inputs()[0].clone();
    let probes = [probe];
    let group = |m: &Model| GroupSpec::hidden(m, "fc1");
    let mut lines = Vec::new();
    let mut failed = Vec::new();
    let mut incoming = Vec::new();
    for (name, obs) in [
        ("incoming", Observable::IncomingWeight { input: 0 }),
        ("outgoing", Observable::OutgoingWeight { output: 0 }),
        ("activation", Observable::Activation { probe: 0 }),
    ] {
        let samples = lab::ensemble_samples(&models, group, &obs, &probes).map_err(e2s)?;
        let r = lab::identical_distribution_test(&samples, 0.05, 0.99).map_err(e2s)?;
        lines.push(format!("{name} {}/{} in {:?}", r.rejections, r.rows.len(), r.interval));
        if !r.within {
            failed.push(name);
        }
        if incoming.is_empty() {
            incoming = samples;
        }
    }
    let control = lab::identical_distribution_test(&lab::with_index_bias(&incoming, 10.0), 0.05, 0.99).map_err(e2s)?;
    lines.push(format!("control {:.0}%", 100.0 * control.rejection_rate));
    let summary = lines.join(", ");
    ensure(failed.is_empty(), || format!("{summary}; outside interval: {failed:?}"))?;
    ensure(control.rejection_rate >= 0.9, || summary.clone())?;
    within_budget(start, Duration::from_secs(20 * 60))?;
    Ok(summary)
}

struct Task {
    train: Dataset,
    val: Dataset,
    test: Dataset,
}

fn image_task(seed: u64) -> Result<Task, String> {
    let all = gen_blob_images(seed, 2000, [3, 4, 4], 4, 1.0).map_err(e2s)?;
    let (train, val, test) = all.partition(0.4, 0.3).map_err(e2s)?;
    Ok(Task { train, val, test })
}

const CNN: &str = "cnn:3x4x4-c64-c32-4";

fn train_cnn(task: &Task, seed: u64) -> Result<Model, String> {
    let cfg = TrainCfg {
        seed,
        epochs: 6,
        ..TrainCfg::default()
    };
    train(&arch(CNN), &task.train, &cfg).map_err(e2s)
}

const CNN_SPACE: &str = r#"
[layers.conv2]
predictor = "threshold"
t_min = -0.3
k = 16
"#;

/// Best test-set reduction among confirmed configs within the accuracy budget.
fn best_reduction(model: &Model, task: &Task, space: &SearchSpace, trials: usize, seed: u64) -> Result<(f64, f64), String> {
    let results = random_search(space, trials, model, &task.val, seed).map_err(e2s)?;
    let slices = pareto_slices(&results, 5);
    let confirmed = confirm_on_test(&slices, model, &task.test).map_err(e2s)?;
    Ok(confirmed
        .iter()
        .filter(|c| c.accuracy_drop() <= 0.01)
        .map(|c| (1.0 - c.test_flops, c.accuracy_drop()))
        .fold((0.0, 0.0), |best, x| if x.0 > best.0 { x } else { best }))
}

// 8. A random search finds a cheaper config at nearly baseline accuracy.
fn desk_scale_reduction() -> Outcome {
    let start = Instant::now();
    let space = SearchSpace::from_toml_str(CNN_SPACE).map_err(e2s)?;
    let mut lines = Vec::new();
    let mut passed = 0;
    for seed in 0..3u64 {
        let task = image_task(80 + seed)?;
        let model = train_cnn(&task, seed)?;
        let acc = accuracy(&model, &task.test).map_err(e2s)?;
        let (red, drop) = best_reduction(&model, &task, &space, 300, seed)?;
        passed += usize::from(red >= 0.08);
        lines.push(format!("seed {seed}: acc {acc:.3}, -{:.1}% at drop {:.1}%", 100.0 * red, 100.0 * drop));
    }
    let summary = lines.join("; ");
    ensure(passed >= 2, || summary.clone())?;
    within_budget(start, Duration::from_secs(30 * 60))?;
    Ok(summary)
}

// 9. Dynamic pruning still pays off on a magnitude-pruned model.
fn static_composition() -> Outcome {
    let task = image_task(90)?;
    let mut model = train_cnn(&task, 0)?;
    let finetune = TrainCfg {
        epochs: 1,
        ..TrainCfg::default()
    };
    let mut mask = SparsityMask::dense(&model);
    for i in 0..10 {
        let (pruned, m) = magnitude_prune_scoped(&model, 0.05, Some(&mask), PruneScope::Global).map_err(e2s)?;
        ensure(m.holds_for(&pruned), || format!("round {i}: mask broken after pruning"))?;
        mask = m;
        let cfg = TrainCfg {
            seed: i,
            ..finetune.clone()
        };
        model = train_from(pruned, &task.train, &cfg, Some(&mask)).map_err(e2s)?;
        ensure(mask.holds_for(&model), || format!("round {i}: masked weight revived by fine-tuning"))?;
    }
    let density = mask.density();
    ensure((density - 0.95f64.powi(10)).abs() < 1e-3, || format!("conv density {density:.4}"))?;
    let mut space = SearchSpace::from_toml_str(CNN_SPACE).map_err(e2s)?;
    space.order = TermOrder::ByNonzeroCost;
    let (red, drop) = best_reduction(&model, &task, &space, 200, 9)?;
    let summary = format!("density {density:.4}, -{:.1}% at drop {:.1}%", 100.0 * red, 100.0 * drop);
    ensure(red >= 0.05, || summary.clone())?;
    Ok(summary)
}

/// Iterated extraction of the non-dominated set, by exhaustive comparison.
fn brute_force_slices(points: &[(f64, f64)], n_slices: usize) -> Vec<BTreeSet<usize>> {
    let beats = |a: (f64, f64), b: (f64, f64)| a.0 >= b.0 && a.1 <= b.1 && (a.0 > b.0 || a.1 < b.1);
    let mut left: BTreeSet<usize> = (0..points.len()).collect();
    let mut out = Vec::new();
    while out.len() < n_slices && !left.is_empty() {
        let front: BTreeSet<usize> = left
            .iter()
            .copied()
            .filter(|&i| !left.iter().any(|&j| beats(points[j], points[i])))
            .collect();
        left = left.difference(&front).copied().collect();
        out.push(front);
    }
    out
}

// 10. Pareto slices against the exhaustive oracle.
fn pareto_correctness() -> Outcome {
    let mut rng = stream_rng(10, 0);
    let mut total = 0;
    for set in 0..200 {
        let n = rng.random_range(1..=500);
        // Coarse grids force ties in one or both coordinates.
        let grid = if set % 2 == 0 { 20.0 } else { 1e6 };
        let points: Vec<(f64, f64)> = (0..n)
            .map(|_| {
                let f = (rng.random::<f64>() * grid).round() / grid;
                let c = (rng.random::<f64>() * grid).round() / grid;
                (f, c)
            })
            .collect();
        let n_slices = rng.random_range(1..=8);
        let got: Vec<BTreeSet<usize>> = pareto_slice_indices(&points, n_slices)
            .into_iter()
            .map(|s| s.into_iter().collect())
            .collect();
        let want = brute_force_slices(&points, n_slices);
        ensure(got == want, || format!("set {set} (n = {n}, {n_slices} slices) differs"))?;
        total += n;
    }
    Ok(format!("200 sets, {total} points, all slices equal"))
}

fn main() {
    let criteria: [Criterion; 9] = [
        (2, "baseline equivalence", baseline_equivalence),
        (3, "predictor overhead accounting", overhead_accounting),
        (4, "predicate oracles", predicate_oracles),
        (5, "gradient equivariance", gradient_equivariance),
        (6, "function symmetry", function_symmetry),
        (7, "ensemble identical distribution", ensemble_identical_distribution),
        (8, "desk-scale FLOPs reduction", desk_scale_reduction),
        (9, "static pruning composition", static_composition),
        (10, "pareto correctness", pareto_correctness),
    ];
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failures = 0;
    for (id, name, run) in criteria {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {id}: PASS {name} ({detail}) [{secs:.1}s]"),
            Err(detail) => {
                failures += 1;
                println!("criterion {id}: FAIL {name} ({detail}) [{secs:.1}s]");
            }
        }
    }
    if failures > 0 {
        std::process::exit(1);
    }
}
