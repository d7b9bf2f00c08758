//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use mtl_mos::cli::{ModelConfig, ModelKind};
use mtl_mos::dataset::{aggregate_mos, merge_datasets, Dataset, RatingRecord, RatingTable, TaskId};
use mtl_mos::eval::{pearson, rmse};
use mtl_mos::linalg::Matrix;
use mtl_mos::model::{gradient_check, init_params, Architecture, ModelParams};
use mtl_mos::rater::{
    crossval_protocol, estimate_profiles, fit_linear, loo_mos, unbiased_mos, CorrectionMethod,
    CrossValConfig,
};
use mtl_mos::semisup::{train_student, Teacher, TrimPolicy, TrimScope};
use mtl_mos::synth::{gen_corpus, gen_splits, SynthConfig};
use mtl_mos::train::{adam_step, batch_gradients, evaluate, train, AdamState, TrainConfig};
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

// ---------------------------------------------------------------- AC-1

fn gradient_exactness() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut params = 0;
    for split in [0, 1, 3] {
        let arch = Architecture {
            input_dim: 8,
            trunk_layers: vec![24, 24, 16],
            split_index: split,
            branch_layers: vec![8],
            tasks: vec![TaskId::Mos, TaskId::T60, TaskId::C50],
        };
        ensure(arch.parameter_count() <= 5000, format!("model too large: {}", arch.parameter_count()))?;
        let report = ok(gradient_check(&arch, 11 + split as u64, 1e-4))?;
        ensure(
            report.passed,
            format!(
                "split {split}: max rel err {:.3e}, small abs err {:.3e}",
                report.max_relative_error, report.max_small_abs_error
            ),
        )?;
        worst = worst.max(report.max_relative_error);
        params = params.max(report.parameters);
    }
    Ok(format!("max relative error {worst:.2e} (splits 0, mid, depth; up to {params} parameters)"))
}

// ---------------------------------------------------------------- AC-2

fn naive_mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn naive_pearson(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (naive_mean(x), naive_mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

fn naive_rmse(x: &[f64], y: &[f64]) -> f64 {
    (x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64).sqrt()
}

/// Per sample: `(sample_id, [(rater_id, rating)])`.
type RawRatings = Vec<(String, Vec<(String, f64)>)>;

fn random_table(rng: &mut ChaCha8Rng) -> (RatingTable, RawRatings) {
    let samples = rng.random_range(1..8);
    let mut recs = Vec::new();
    let mut raw = Vec::new();
    for s in 0..samples {
        let n = rng.random_range(2..12);
        let mut row = Vec::new();
        for j in 0..n {
            let v = if rng.random_bool(0.7) {
                rng.random_range(1..=5) as f64
            } else {
                rng.random_range(0.5..5.5)
            };
            let rater = format!("j{}", (j * 7 + s) % 23);
            if row.iter().any(|(r, _): &(String, f64)| *r == rater) {
                continue;
            }
            row.push((rater.clone(), v));
            recs.push(RatingRecord {
                sample_id: format!("s{s}"),
                rater_id: rater,
                task: TaskId::Mos,
                value: v,
            });
        }
        raw.push((format!("s{s}"), row));
    }
    (RatingTable::from_records(recs).unwrap(), raw)
}

fn oracle_equalities() -> Outcome {
    const N: usize = 1000;
    const TOL: f64 = 1e-12;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut note = |name: &'static str, err: f64| -> Result<(), String> {
        let w = worst.entry(name).or_insert(0.0);
        *w = w.max(err);
        ensure(err <= TOL, format!("{name} differs from reference by {err:.3e}"))
    };
    for _ in 0..N {
        let n = rng.random_range(2..200);
        let scale = 10f64.powi(rng.random_range(-2..3));
        let offset = rng.random_range(-5.0..5.0);
        let x: Vec<f64> = (0..n).map(|_| offset + scale * rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.3 * v + scale * rng.random_range(-1.0..1.0)).collect();
        let p = ok(pearson(&x, &y))?.ok_or("pearson undefined on non-constant data")?;
        note("pearson", (p - naive_pearson(&x, &y)).abs())?;
        let e = ok(rmse(&x, &y))?;
        let r = naive_rmse(&x, &y);
        note("rmse", (e - r).abs() / r.max(1.0))?;
    }
    for _ in 0..N {
        let (table, raw) = random_table(&mut rng);
        let mos = ok(aggregate_mos(&table, &TaskId::Mos))?;
        for (s, row) in &raw {
            let vals: Vec<f64> = row.iter().map(|r| r.1).collect();
            note("aggregate_mos", (mos[s] - naive_mean(&vals)).abs())?;
            if row.len() < 2 {
                continue;
            }
            for (j, _) in row {
                let others: Vec<f64> = row.iter().filter(|r| &r.0 != j).map(|r| r.1).collect();
                let l = ok(loo_mos(&table, s, j, &TaskId::Mos))?;
                note("loo_mos", (l - naive_mean(&others)).abs())?;
            }
        }
    }
    for _ in 0..N {
        let len = rng.random_range(1..30);
        let steps = rng.random_range(1..20);
        let lr = rng.random_range(1e-4..1e-1);
        let mut p: Vec<f64> = (0..len).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut q = p.clone();
        let mut state = AdamState::with_defaults(len);
        let (mut m, mut v) = (vec![0.0; len], vec![0.0; len]);
        for t in 1..=steps {
            let g: Vec<f64> = (0..len).map(|_| rng.random_range(-3.0..3.0)).collect();
            ok(adam_step(&mut p, &g, &mut state, lr))?;
            for i in 0..len {
                m[i] = 0.9 * m[i] + 0.1 * g[i];
                v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
                let mh = m[i] / (1.0 - 0.9f64.powf(t as f64));
                let vh = v[i] / (1.0 - 0.999f64.powf(t as f64));
                q[i] -= lr * mh / (vh.sqrt() + 1e-8);
            }
        }
        let err = p.iter().zip(&q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        note("adam_step", err)?;
    }
    let summary: Vec<String> = worst.iter().map(|(k, v)| format!("{k} {v:.1e}")).collect();
    Ok(format!("{N} instances each; max error {}", summary.join(", ")))
}

// ---------------------------------------------------------------- AC-3

fn labelled(ids: &str, n: usize, dim: usize, tasks: Vec<TaskId>, rng: &mut ChaCha8Rng) -> Dataset {
    let feats = Matrix::from_vec(n, dim, (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect());
    let labels: Vec<Vec<Option<f64>>> = (0..n)
        .map(|_| tasks.iter().map(|_| Some(rng.random_range(1.0..5.0))).collect())
        .collect();
    Dataset::from_optional_labels((0..n).map(|i| format!("{ids}{i}")).collect(), feats, &labels, tasks).unwrap()
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn masked_loss_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let tasks = vec![TaskId::Mos, TaskId::T60, TaskId::C50];
    let full = labelled("x", 80, 6, tasks.clone(), &mut rng);
    let mask: Vec<bool> = (0..80 * 3).map(|_| rng.random_bool(0.6)).collect();
    let base = full.with_mask(mask.clone()).map_err(|e| e.to_string())?;
    let mut poisoned = full.label_storage().clone();
    for (i, &m) in mask.iter().enumerate() {
        if !m {
            let v = match i % 3 {
                0 => f64::NAN,
                1 => 1e300,
                _ => rng.random_range(-1e6..1e6),
            };
            poisoned.set(i / 3, i % 3, v);
        }
    }
    let other = ok(Dataset::new(
        base.sample_ids().to_vec(),
        base.features().clone(),
        poisoned,
        mask,
        tasks.clone(),
    ))?;
    let arch = Architecture {
        input_dim: 6,
        trunk_layers: vec![12, 8],
        split_index: 1,
        branch_layers: vec![4],
        tasks: tasks.clone(),
    };
    let params = ok(init_params(&arch, 5))?;
    let rows: Vec<usize> = (0..80).collect();
    let (la, ga) = ok(batch_gradients(&params, &base, &rows, &[1.0, 0.5, 2.0], None, None))?;
    let (lb, gb) = ok(batch_gradients(&params, &other, &rows, &[1.0, 0.5, 2.0], None, None))?;
    ensure(la.loss.to_bits() == lb.loss.to_bits(), "loss changed with masked labels")?;
    ensure(bits(&ga) == bits(&gb), "gradients changed with masked labels")?;
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 16,
        initial_lr: 0.01,
        ..TrainConfig::default()
    };
    let (pa, ra) = ok(train(params.clone(), &base, &cfg, None))?;
    let (pb, rb) = ok(train(params, &other, &cfg, None))?;
    ensure(bits(pa.values()) == bits(pb.values()), "3-epoch training diverged")?;
    ensure(
        ra.epochs.iter().zip(&rb.epochs).all(|(a, b)| a.train_loss.to_bits() == b.train_loss.to_bits()),
        "epoch losses diverged",
    )?;

    // Fully split: each branch only sees its own part of a disjoint merge.
    let part_a = labelled("a", 50, 6, vec![TaskId::Mos], &mut rng);
    let part_b = labelled("b", 40, 6, vec![TaskId::T60, TaskId::C50], &mut rng);
    let merged = ok(merge_datasets(&[part_a.clone(), part_b.clone()]))?;
    let split = Architecture {
        split_index: 0,
        ..arch
    };
    let params = ok(init_params(&split, 8))?;
    let all: Vec<usize> = (0..merged.len()).collect();
    let (_, g) = ok(batch_gradients(&params, &merged, &all, &[1.0; 3], None, Some(1.0)))?;
    let mut worst: f64 = 0.0;
    for (part, task_ids) in [(&part_a, vec![TaskId::Mos]), (&part_b, vec![TaskId::T60, TaskId::C50])] {
        let iso = ok(params.select_tasks(&task_ids))?;
        let rows: Vec<usize> = (0..part.len()).collect();
        let weights = vec![1.0; task_ids.len()];
        let (_, gi) = ok(batch_gradients(&iso, part, &rows, &weights, None, Some(1.0)))?;
        for (k, t) in task_ids.iter().enumerate() {
            let full_idx = merged.task_index(t).unwrap();
            let a = &g[params.branch_range(full_idx)];
            let b = &gi[iso.branch_range(k)];
            ensure(a.len() == b.len(), "branch sizes differ")?;
            for (x, y) in a.iter().zip(b) {
                worst = worst.max((x - y).abs());
            }
        }
    }
    ensure(worst <= 1e-12, format!("merged vs isolated branch gradients differ by {worst:.3e}"))?;
    Ok(format!(
        "masked cells inert (loss, gradients, 3 epochs bit-identical); branch gradient gap {worst:.1e}"
    ))
}

// ---------------------------------------------------------------- AC-4

fn loo_identity() -> Outcome {
    let mut runner = TestRunner::new(PropConfig {
        cases: 10_000,
        failure_persistence: None,
        ..PropConfig::default()
    });
    let ratings = prop_oneof![
        (1u8..=5).prop_map(f64::from),
        (0.5f64..5.5),
    ];
    let strategy = prop::collection::vec(prop::collection::vec(ratings, 2..14), 1..6);
    let mut worst: f64 = 0.0;
    let result = runner.run(&strategy, |samples| {
        let mut recs = Vec::new();
        for (s, row) in samples.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                recs.push(RatingRecord {
                    sample_id: format!("s{s}"),
                    rater_id: format!("r{j}"),
                    task: TaskId::Sig,
                    value: v,
                });
            }
        }
        let table = RatingTable::from_records(recs).unwrap();
        let mos = aggregate_mos(&table, &TaskId::Sig).unwrap();
        for (s, row) in samples.iter().enumerate() {
            let id = format!("s{s}");
            let n = row.len() as f64;
            for (j, &r) in row.iter().enumerate() {
                let l = loo_mos(&table, &id, &format!("r{j}"), &TaskId::Sig).unwrap();
                let err = (l * (n - 1.0) + r - n * mos[&id]).abs();
                prop_assert!(err <= 1e-12, "identity off by {err:e}");
            }
        }
        Ok(())
    });
    if let Err(e) = result {
        return Err(e.to_string());
    }
    // Cheap second pass to report the observed gap.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let (table, raw) = random_table(&mut rng);
        let mos = aggregate_mos(&table, &TaskId::Mos).unwrap();
        for (s, row) in &raw {
            let n = row.len() as f64;
            for (j, r) in row {
                let l = loo_mos(&table, s, j, &TaskId::Mos).unwrap();
                worst = worst.max((l * (n - 1.0) + r - n * mos[s]).abs());
            }
        }
    }
    Ok(format!("10000 random tables hold to 1e-12 (observed gap {worst:.1e})"))
}

// ---------------------------------------------------------------- AC-5

/// Rater `j` gives `ratings[s]`; two helpers bracket `reference[s]` so the
/// leave-one-out reference of `j` equals it.
fn table_with_reference(ratings: &[f64], reference: &[f64]) -> RatingTable {
    let mut recs = Vec::new();
    for (s, (&r, &m)) in ratings.iter().zip(reference).enumerate() {
        for (j, v) in [("j", r), ("x", m - 0.25), ("y", m + 0.25)] {
            recs.push(RatingRecord {
                sample_id: format!("s{s:04}"),
                rater_id: j.into(),
                task: TaskId::Mos,
                value: v,
            });
        }
    }
    RatingTable::from_records(recs).unwrap()
}

fn least_squares_recovery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut exact_err: f64 = 0.0;
    for _ in 0..100 {
        let a = rng.random_range(0.3..1.5);
        let b = rng.random_range(-1.0..2.0);
        let r: Vec<f64> = (0..30).map(|_| rng.random_range(1..=5) as f64).collect();
        if r.iter().all(|&v| v == r[0]) {
            continue;
        }
        let m: Vec<f64> = r.iter().map(|v| a * v + b).collect();
        let p = ok(fit_linear(&table_with_reference(&r, &m), "j", &TaskId::Mos, 5))?;
        exact_err = exact_err.max((p.a - a).abs()).max((p.b - b).abs());
    }
    ensure(exact_err <= 1e-9, format!("noiseless fit off by {exact_err:.3e}"))?;

    // Bands frozen from a Monte-Carlo of ordinary least squares on the same
    // generative setup.
    const TOL_A: f64 = 0.08;
    const TOL_B: f64 = 0.25;
    let noise = rand_distr::Normal::new(0.0, 0.3).unwrap();
    let (mut wa, mut wb): (f64, f64) = (0.0, 0.0);
    for seed in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let r: Vec<f64> = (0..200).map(|_| rng.random_range(1..=5) as f64).collect();
        let m: Vec<f64> = r.iter().map(|v| 0.6 * v + 1.5 + rng.sample(noise)).collect();
        let p = ok(fit_linear(&table_with_reference(&r, &m), "j", &TaskId::Mos, 5))?;
        wa = wa.max((p.a - 0.6).abs());
        wb = wb.max((p.b - 1.5).abs());
    }
    ensure(wa < TOL_A && wb < TOL_B, format!("noisy fit off by |Δa| {wa:.3}, |Δb| {wb:.3}"))?;
    Ok(format!(
        "noiseless error {exact_err:.1e}; noisy worst |Δa| {wa:.3} < {TOL_A}, |Δb| {wb:.3} < {TOL_B} over 50 raters"
    ))
}

// ---------------------------------------------------------------- AC-6

fn bias_correction_efficacy() -> Outcome {
    let cfg = SynthConfig {
        n_mos: 2000,
        n_ovr_sig_bak: 1,
        n_t60_c50: 1,
        raters: 200,
        raters_per_sample: 10,
        bias_spread: 0.5,
        slope_spread: 0.0,
        rating_noise: 0.3,
        seed: 6,
        ..SynthConfig::default()
    };
    let corpus = ok(gen_corpus(&cfg))?;
    let report = ok(crossval_protocol(
        &corpus.ratings,
        &TaskId::Mos,
        &CrossValConfig {
            seed: 6,
            methods: vec![CorrectionMethod::Bias],
            ..CrossValConfig::default()
        },
    ))?;
    let truth: BTreeMap<&str, f64> = corpus.raters.iter().map(|r| (r.rater_id.as_str(), r.b)).collect();
    let strong: Vec<_> = report
        .summaries(CorrectionMethod::Bias)
        .into_iter()
        .filter(|s| truth[s.rater_id.as_str()].abs() >= 0.3)
        .collect();
    ensure(!strong.is_empty(), "no strongly biased raters in the corpus")?;
    let improved = strong.iter().filter(|s| s.mean_delta_holdout > 0.0).count();
    let frac = improved as f64 / strong.len() as f64;
    ensure(frac >= 0.9, format!("only {improved}/{} strongly biased raters improved", strong.len()))?;
    Ok(format!(
        "{improved}/{} raters with |b| >= 0.3 improve vs hold-out ({:.1}%, threshold 90%)",
        strong.len(),
        100.0 * frac
    ))
}

// ---------------------------------------------------------------- AC-7 / AC-8

struct EndToEnd {
    train: Dataset,
    test: Dataset,
    config: TrainConfig,
    arch: Architecture,
    teacher: ModelParams,
    teacher_pcc: Vec<(TaskId, f64)>,
}

fn pccs(params: &ModelParams, data: &Dataset) -> Result<Vec<(TaskId, f64)>, String> {
    ok(evaluate(params, data))?
        .into_iter()
        .map(|(t, m)| Ok((t.clone(), m.pcc.ok_or(format!("PCC undefined for {t}"))?)))
        .collect()
}

fn end_to_end_setup() -> Result<EndToEnd, String> {
    let (train_c, test_c) = ok(gen_splits(&SynthConfig {
        n_mos: 5000,
        n_t60_c50: 5000,
        n_ovr_sig_bak: 1,
        label_noise: 0.1,
        ..SynthConfig::default()
    }))?;
    let train_data = ok(merge_datasets(&[train_c.mos, train_c.t60_c50]))?;
    let test_data = ok(merge_datasets(&[test_c.mos, test_c.t60_c50]))?;
    let arch = ok(ModelKind::MultiSplit.architectures(&ModelConfig::default(), train_data.dim(), train_data.tasks()))?
        .remove(0);
    let config = TrainConfig {
        initial_lr: 0.005,
        epochs: 40,
        ..TrainConfig::default()
    };
    let (teacher, _) = ok(train(ok(init_params(&arch, 0))?, &train_data, &config, None))?;
    let teacher_pcc = pccs(&teacher, &test_data)?;
    Ok(EndToEnd {
        train: train_data,
        test: test_data,
        config,
        arch,
        teacher,
        teacher_pcc,
    })
}

fn multitask_recovery(e2e: &EndToEnd) -> Outcome {
    const THRESHOLD: f64 = 0.9;
    for (t, p) in &e2e.teacher_pcc {
        ensure(*p >= THRESHOLD, format!("test PCC for {t} is {p:.4} < {THRESHOLD}"))?;
    }
    let tasks = e2e.train.tasks();
    let singles: usize = ok(ModelKind::Single.architectures(&ModelConfig::default(), e2e.train.dim(), tasks))?
        .iter()
        .map(Architecture::parameter_count)
        .sum();
    let shared = e2e.arch.parameter_count();
    ensure(shared < singles, format!("multi,split uses {shared} parameters vs {singles} for single models"))?;
    let shown: Vec<String> = e2e.teacher_pcc.iter().map(|(t, p)| format!("{t} {p:.4}")).collect();
    Ok(format!(
        "test PCC {} (threshold {THRESHOLD}); {shared} parameters vs {singles} for three single models",
        shown.join(", ")
    ))
}

fn semisupervised_pipeline(e2e: &EndToEnd) -> Outcome {
    // Reduction to plain training.
    let corpus = ok(gen_corpus(&SynthConfig {
        n_mos: 1,
        n_ovr_sig_bak: 400,
        n_t60_c50: 1,
        seed: 8,
        ..SynthConfig::default()
    }))?;
    let full = corpus.ovr_sig_bak;
    let arch = Architecture {
        tasks: full.tasks().to_vec(),
        ..e2e.arch.clone()
    };
    let init = ok(init_params(&arch, 8))?;
    let cfg = TrainConfig {
        epochs: 5,
        batch_size: 64,
        ..e2e.config.clone()
    };
    let zero = TrimPolicy {
        fraction: 0.0,
        scope: TrimScope::AllCells,
    };
    let teacher = Teacher::new("init", vec![init.clone()]);
    let (ps, rs, _) = ok(train_student(&teacher, &full, init.clone(), &cfg, &zero, None))?;
    let (pt, rt) = ok(train(init, &full, &cfg, None))?;
    ensure(bits(ps.values()) == bits(pt.values()), "p=0 student differs from plain training")?;
    ensure(rs.epochs == rt.epochs, "p=0 epoch records differ")?;

    let teacher = Teacher::new("multi,split", vec![e2e.teacher.clone()]);
    let mut worst: f64 = 0.0;
    for p in [0.1, 0.2] {
        let policy = TrimPolicy {
            fraction: p,
            ..TrimPolicy::default()
        };
        let init = ok(init_params(&e2e.arch, 1))?;
        let (student, _, _) = ok(train_student(&teacher, &e2e.train, init, &e2e.config, &policy, None))?;
        for ((t, ps), (_, pt)) in pccs(&student, &e2e.test)?.iter().zip(&e2e.teacher_pcc) {
            let gap = (ps - pt).abs();
            worst = worst.max(gap);
            ensure(gap <= 0.05, format!("p={p}: student {t} PCC {ps:.4} vs teacher {pt:.4}"))?;
        }
    }
    Ok(format!(
        "p=0 trajectory bit-identical to plain training; p in {{0.1, 0.2}} student-teacher PCC gap <= {worst:.4}"
    ))
}

// ---------------------------------------------------------------- AC-9

fn files_under(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n != "manifest.toml") {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_mtl-mos"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(
        out.status.success(),
        format!("`mtl-mos {}` failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)),
    )
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = tmp.path();
    let p = |name: &str| root.join(name).display().to_string();
    std::fs::write(
        root.join("config.toml"),
        "[synth]\nn_mos = 300\nn_ovr_sig_bak = 200\nn_t60_c50 = 300\nraters = 60\n\n\
         [train]\nepochs = 3\nbatch_size = 64\n\n[train.task_weights]\nMOS = 2.0\n",
    )
    .map_err(|e| e.to_string())?;
    let cfg = p("config.toml");
    let data = [p("gen/train/mos"), p("gen/train/t60_c50")];
    let val = [p("gen/test/mos"), p("gen/test/t60_c50")];
    let ratings = p("gen/train/ratings.csv");
    let runs: Vec<(&str, Vec<String>)> = vec![
        ("gen", vec!["gen".into()]),
        ("single", [vec!["train".into(), "--model".into(), "single".into(), "--data".into()], data.to_vec()].concat()),
        (
            "split",
            [
                vec!["train".into(), "--model".into(), "multi,split".into(), "--data".into()],
                data.to_vec(),
                vec!["--val".into()],
                val.to_vec(),
            ]
            .concat(),
        ),
        ("weighted", [vec!["train".into(), "--model".into(), "multi,split,W".into(), "--data".into()], data.to_vec()].concat()),
        (
            "semi",
            [
                vec!["train".into(), "--model".into(), "multi,split,semi".into(), "--teacher".into(), p("split/model.ckpt"), "--data".into()],
                data.to_vec(),
            ]
            .concat(),
        ),
        ("eval", [vec!["eval".into(), "--checkpoint".into(), p("single"), "--data".into()], val.to_vec()].concat()),
        ("debias", vec!["debias".into(), "--ratings".into(), ratings.clone(), "--method".into(), "linear".into()]),
        ("crossval", vec!["crossval".into(), "--ratings".into(), ratings, "--folds".into(), "2".into()]),
    ];
    let mut compared = 0;
    for (name, args) in &runs {
        let first = p(name);
        let mut a: Vec<&str> = vec!["--config", &cfg, "--out", &first, "--threads", "1"];
        a.extend(args.iter().map(String::as_str));
        cli(&a)?;
        for threads in ["3", "8"] {
            let again = p(&format!("{name}-rerun{threads}"));
            let manifest = root.join(name).join("manifest.toml").display().to_string();
            cli(&["rerun", "--manifest", &manifest, "--out", &again, "--threads", threads])?;
            let x = files_under(&root.join(name));
            let y = files_under(Path::new(&again));
            ensure(!x.is_empty(), format!("{name} wrote no artifacts"))?;
            ensure(x == y, format!("{name} rerun with {threads} threads differs"))?;
            compared += x.len();
        }
    }
    Ok(format!(
        "{} commands rerun from manifests with 3 and 8 threads; {compared} artifact comparisons byte-identical",
        runs.len()
    ))
}

// ---------------------------------------------------------------- AC-10

fn unbiased_mos_improvement() -> Outcome {
    let mut lines = Vec::new();
    for spread in [0.3, 0.5] {
        let corpus = ok(gen_corpus(&SynthConfig {
            n_mos: 3000,
            n_ovr_sig_bak: 1,
            n_t60_c50: 1,
            raters: 300,
            bias_spread: spread,
            seed: 10,
            ..SynthConfig::default()
        }))?;
        let (profiles, _) = estimate_profiles(&corpus.ratings, &TaskId::Mos, CorrectionMethod::Bias, 5);
        let raw = ok(aggregate_mos(&corpus.ratings, &TaskId::Mos))?;
        let fixed = ok(unbiased_mos(&corpus.ratings, &profiles, &TaskId::Mos))?;
        let median = |m: &BTreeMap<String, f64>| {
            let mut e: Vec<f64> = m
                .iter()
                .map(|(s, v)| (v - corpus.latent(s, &TaskId::Mos).unwrap()).abs())
                .collect();
            e.sort_by(f64::total_cmp);
            e[e.len() / 2]
        };
        let (before, after) = (median(&raw), median(&fixed));
        ensure(after <= before, format!("spread {spread}: median error {after:.4} > {before:.4}"))?;
        lines.push(format!("spread {spread}: {before:.4} -> {after:.4}"));
    }
    Ok(format!("median |MOS - latent| {}", lines.join("; ")))
}

// ----------------------------------------------------------------

fn main() {
    let mut failures = 0;
    let mut report = |id: &str, name: &str, limit: Option<Duration>, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        let result = match (result, limit) {
            (Ok(_), Some(l)) if elapsed > l => Err(format!("took {elapsed:.1?}, limit {l:?}")),
            (r, _) => r,
        };
        match result {
            Ok(detail) => println!("[PASS] {id} {name}: {detail} ({elapsed:.1?})"),
            Err(detail) => {
                failures += 1;
                println!("[FAIL] {id} {name}: {detail} ({elapsed:.1?})");
            }
        }
    };
    let secs = |s| Some(Duration::from_secs(s));
    report("AC-1", "gradient exactness", secs(10), &mut gradient_exactness);
    report("AC-2", "oracle equalities", secs(30), &mut oracle_equalities);
    report("AC-3", "masked-loss correctness", None, &mut masked_loss_correctness);
    report("AC-4", "leave-one-out identity", None, &mut loo_identity);
    report("AC-5", "least-squares recovery", None, &mut least_squares_recovery);
    report("AC-6", "bias correction efficacy", secs(120), &mut bias_correction_efficacy);
    let start = Instant::now();
    let e2e = end_to_end_setup();
    let setup_time = start.elapsed();
    report("AC-7", "multi-task recovery", secs(300), &mut || {
        if setup_time > Duration::from_secs(300) {
            return Err(format!("training took {setup_time:.1?}"));
        }
        e2e.as_ref()
            .map_err(Clone::clone)
            .and_then(multitask_recovery)
            .map(|d| format!("{d}; training {setup_time:.1?}"))
    });
    report("AC-8", "semi-supervised pipeline", None, &mut || {
        e2e.as_ref().map_err(Clone::clone).and_then(semisupervised_pipeline)
    });
    report("AC-9", "cli determinism", None, &mut determinism);
    report("AC-10", "unbiased MOS improvement", None, &mut unbiased_mos_improvement);
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
