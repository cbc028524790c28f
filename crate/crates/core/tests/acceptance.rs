//! End-to-end acceptance checks. Each check writes one
//! `criterion N: PASS|FAIL (...)` line to stderr and then asserts.

mod common;

use std::collections::HashSet;
use std::time::{Duration, Instant};

use common::{dense_hooi, median, naive_metrics, report, Tensor};
use latte_core::data::{
    build_tensor, generate_shifted_population, ingest, leave_last_out, temporal_split, Dataset, Format, Interaction,
    RatingScale, SparseTensor3, Stage,
};
use latte_core::evaluation::{evaluate, metrics_from_cases, mcc, Case, ConfusionCounts};
use latte_core::linalg::{hooi, hooi_observed, FiberTensor, HooiOptions};
use latte_core::models::{
    aggregate_context, topn, train, ContextAggregation, ContextName, ModelConfig, ModelKind, TrainedModel,
};
use latte_core::similarity::{build_similarity, LawKind};
use latte_core::tuning::{tune, GridSpec, Target, TuneResult};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(rng: &mut ChaCha8Rng, dims: (usize, usize, usize), density: f64) -> SparseTensor3 {
    let mut entries = Vec::new();
    for i in 0..dims.0 {
        for j in 0..dims.1 {
            if rng.random::<f64>() < density {
                entries.push((i, j, rng.random_range(0..dims.2)));
            }
        }
    }
    SparseTensor3 { dims, entries }
}

fn random_dataset(rng: &mut ChaCha8Rng, users: usize, items: usize, density: f64) -> Dataset {
    let mut rows = Vec::new();
    let mut ts = 0;
    for u in 0..users {
        for i in 0..items {
            if rng.random::<f64>() < density {
                ts += 1;
                rows.push(Interaction::new(format!("u{u}"), format!("i{i}"), rng.random_range(1..=5), ts));
            }
        }
    }
    // Every user and item appears at least once.
    for u in 0..users.max(items) {
        ts += 1;
        rows.push(Interaction::new(format!("u{}", u % users), format!("i{}", u % items), rng.random_range(1..=5), ts));
    }
    Dataset::new(rows, RatingScale::one_to(5).unwrap()).unwrap()
}

#[test]
fn criterion_1_similarity_matrices_match_the_published_tables() {
    let start = Instant::now();
    let expected: [(LawKind, [[f64; 5]; 5]); 4] = [
        (
            LawKind::Linear,
            [
                [1.0, 0.75, 0.5, 0.25, 0.0],
                [0.75, 1.0, 0.75, 0.5, 0.25],
                [0.5, 0.75, 1.0, 0.75, 0.5],
                [0.25, 0.5, 0.75, 1.0, 0.75],
                [0.0, 0.25, 0.5, 0.75, 1.0],
            ],
        ),
        (
            LawKind::Sigmoid,
            [
                [1.0, 0.96, 0.5, 0.05, 0.0],
                [0.96, 1.0, 0.55, 0.09, 0.05],
                [0.5, 0.55, 1.0, 0.55, 0.5],
                [0.05, 0.09, 0.55, 1.0, 0.96],
                [0.0, 0.05, 0.5, 0.96, 1.0],
            ],
        ),
        (
            LawKind::Arctan,
            [
                [1.0, 0.83, 0.5, 0.17, 0.0],
                [0.83, 1.0, 0.67, 0.33, 0.17],
                [0.5, 0.67, 1.0, 0.67, 0.5],
                [0.17, 0.33, 0.67, 1.0, 0.83],
                [0.0, 0.17, 0.5, 0.83, 1.0],
            ],
        ),
        (
            LawKind::CubeRoot,
            [
                [1.0, 0.9, 0.5, 0.1, 0.0],
                [0.9, 1.0, 0.6, 0.21, 0.1],
                [0.5, 0.6, 1.0, 0.6, 0.5],
                [0.1, 0.21, 0.6, 1.0, 0.9],
                [0.0, 0.1, 0.5, 0.9, 1.0],
            ],
        ),
    ];
    let mut mismatches = Vec::new();
    for (kind, table) in expected {
        let s = build_similarity(kind.into(), 5).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let got = s.entries[(i, j)];
                let ok = if kind == LawKind::Linear {
                    got == table[i][j]
                } else {
                    (got * 100.0).round() / 100.0 == table[i][j]
                };
                if !ok {
                    mismatches.push(format!("{kind}[{i},{j}]={got:.4}"));
                }
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = mismatches.is_empty() && elapsed < Duration::from_secs(1);
    report("1", pass, &format!("mismatches {:?}, {elapsed:.2?}", mismatches));
    assert!(pass);
}

#[test]
fn criterion_2_mcc_of_balanced_counts_is_zero() {
    let m = mcc(&ConfusionCounts { tp: 1, fp: 1, tn: 1, fn_: 1 });
    report("2", m == 0.0, &format!("mcc(1,1,1,1) = {m}"));
    assert_eq!(m, 0.0);
}

#[test]
fn criterion_3_identity_law_reproduces_coffee() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let mut list_mismatches = 0;
    let instances = 24;
    for inst in 0..instances {
        let users = rng.random_range(8..=30);
        let items = rng.random_range(8..=40);
        let density = rng.random_range(0.1..0.5);
        let d = random_dataset(&mut rng, users, items, density);
        let t = build_tensor(&d);
        let r = rng.random_range(1..=8usize).min(d.n_users()).min(d.n_items());
        let r3 = rng.random_range(1..=3);
        let f = rng.random_range(0..=20) as f64 / 10.0;
        let hooi = HooiOptions { seed: inst, ..HooiOptions::default() };
        let coffee = train(&ModelConfig::Coffee { ranks: (r, r, r3), normalization_factor: f, hooi }, &d, &t).unwrap();
        let latte = train(
            &ModelConfig::Latte {
                ranks: (r, r, r3),
                normalization_factor: f,
                law: LawKind::Identity.into(),
                hooi,
            },
            &d,
            &t,
        )
        .unwrap();
        for u in 0..d.n_users() {
            let history: Vec<(usize, usize)> = t.entries.iter().filter(|e| e.0 == u).map(|e| (e.1, e.2)).collect();
            let seen: HashSet<usize> = history.iter().map(|h| h.0).collect();
            let a = coffee.predict_slice(u as u64, &history).unwrap();
            let b = latte.predict_slice(u as u64, &history).unwrap();
            for name in ContextName::ALL {
                let ctx = ContextAggregation::named(name, 5).unwrap();
                let sa = aggregate_context(&a, &ctx).unwrap();
                let sb = aggregate_context(&b, &ctx).unwrap();
                for (x, y) in sa.iter().zip(&sb) {
                    worst = worst.max((x - y).abs());
                }
                if topn(&sa, 10, &seen) != topn(&sb, 10, &seen) {
                    list_mismatches += 1;
                }
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = worst <= 1e-12 && list_mismatches == 0 && elapsed < Duration::from_secs(10);
    report(
        "3",
        pass,
        &format!("{instances} instances, max score gap {worst:e}, top-10 mismatches {list_mismatches}, {elapsed:.2?}"),
    );
    assert!(pass);
}

/// Dense `X ×₃ scaler` with item slices scaled by `weights`, built directly
/// from the coordinates.
fn oracle_tensor(t: &SparseTensor3, weights: Option<&[f64]>, scaler: Option<&DMatrix<f64>>) -> Tensor {
    let (d1, d2, d3) = t.dims;
    let mut x = Tensor::zeros([d1, d2, d3]);
    for &(i, j, k) in &t.entries {
        let w = weights.map_or(1.0, |w| w[j]);
        for r in 0..d3 {
            let s = scaler.map_or(if r == k { 1.0 } else { 0.0 }, |s| s[(r, k)]);
            let o = x.idx(i, j, r);
            x.data[o] += w * s;
        }
    }
    x
}

#[test]
fn criterion_4_hooi_is_orthonormal_monotone_exact_and_matches_the_dense_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_orth = 0.0f64;
    let mut worst_drop = 0.0f64;
    let orth_err = |m: &DMatrix<f64>| (m.transpose() * m - DMatrix::identity(m.ncols(), m.ncols())).amax();

    // (a), (b) on sparse tensors of assorted shapes, plus a realistic one.
    let mut cases: Vec<(SparseTensor3, (usize, usize, usize))> = (0..12)
        .map(|_| {
            let dims = (rng.random_range(5..80), rng.random_range(5..60), rng.random_range(2..=5));
            let density = rng.random_range(0.05..0.4);
            let t = random_tensor(&mut rng, dims, density);
            let ranks = (rng.random_range(1..=dims.0.min(8)), rng.random_range(1..=dims.1.min(8)), rng.random_range(1..=dims.2));
            (t, ranks)
        })
        .collect();
    let population = generate_shifted_population(1000, 200, 1, 0).unwrap();
    cases.push((build_tensor(&population), (24, 24, 3)));
    for (t, ranks) in &cases {
        let scaler = build_similarity(LawKind::Sigmoid.into(), t.dims.2).unwrap().sqrt;
        for s in [None, Some(&scaler)] {
            let x = FiberTensor::from_sparse(t, None, s).unwrap();
            let mut prev = f64::NEG_INFINITY;
            hooi_observed(&x, *ranks, HooiOptions::default(), |sw| {
                worst_orth = worst_orth.max(orth_err(sw.u)).max(orth_err(sw.v)).max(orth_err(sw.w));
                worst_drop = worst_drop.max(prev - sw.fit);
                prev = sw.fit;
            })
            .unwrap();
        }
    }

    // (c) full multilinear rank reconstructs exactly.
    let mut worst_recon = 0.0f64;
    for _ in 0..6 {
        let dims = (rng.random_range(2..7), rng.random_range(2..7), rng.random_range(2..5));
        let t = random_tensor(&mut rng, dims, 0.6);
        let f = hooi(&t, dims, None, HooiOptions::default()).unwrap();
        let recon = f.reconstruct().unwrap();
        let dense = t.to_dense();
        for (a, b) in recon.data.iter().zip(&dense.data) {
            worst_recon = worst_recon.max((a - b).abs());
        }
    }

    // (d) fit trajectory equals the dense brute-force HOOI.
    let mut worst_fit = 0.0f64;
    let mut iteration_mismatches = 0;
    let (mut compared, mut tied) = (0, 0);
    let mut case = 0;
    while compared < 20 {
        case += 1;
        let dims = (rng.random_range(3..=6), rng.random_range(3..=6), rng.random_range(2..=4));
        let t = random_tensor(&mut rng, dims, 0.7);
        if t.entries.is_empty() {
            continue;
        }
        let weights: Vec<f64> = (0..dims.1).map(|_| rng.random_range(0.5..2.0)).collect();
        let a = DMatrix::from_fn(dims.2, dims.2, |_, _| rng.random_range(-1.0..1.0));
        let scaler = &a * a.transpose() + DMatrix::identity(dims.2, dims.2);
        let (w, s) = if case % 2 == 0 { (None, None) } else { (Some(weights.as_slice()), Some(&scaler)) };
        let x = FiberTensor::from_sparse(&t, w, s).unwrap();
        // Each rank at most the product of the others, so every subspace is determined.
        let ranks = loop {
            let r = (rng.random_range(1..dims.0), rng.random_range(1..dims.1), rng.random_range(1..dims.2));
            if r.0 <= r.1 * r.2 && r.1 <= r.0 * r.2 && r.2 <= r.0 * r.1 {
                break r;
            }
        };
        let dense = oracle_tensor(&t, w, s);
        // Tied singular values leave the starting subspace undetermined.
        let rs = [ranks.0, ranks.1, ranks.2];
        if (0..3).any(|m| common::subspace_gap(&dense.unfold(m), rs[m]) < 1e-9) {
            tied += 1;
            continue;
        }
        compared += 1;
        let opts = HooiOptions { max_iters: 25, tol: 1e-4, seed: 0 };
        let ours = hooi_observed(&x, ranks, opts, |_| {}).unwrap().fit_history;
        let oracle = dense_hooi(&dense, rs, opts.max_iters, opts.tol);
        if ours.len() != oracle.len() {
            iteration_mismatches += 1;
        }
        for (a, b) in ours.iter().zip(&oracle) {
            worst_fit = worst_fit.max((a - b).abs());
        }
    }

    let elapsed = start.elapsed();
    let pass = worst_orth <= 1e-10
        && worst_drop <= 0.0
        && worst_recon <= 1e-8
        && worst_fit <= 1e-8
        && iteration_mismatches == 0
        && elapsed < Duration::from_secs(30);
    report(
        "4",
        pass,
        &format!(
            "orthonormality {worst_orth:e}, largest fit drop {worst_drop:e}, full-rank error {worst_recon:e}, \
             oracle fit gap {worst_fit:e} over {compared} cases ({tied} tied skipped), \
             iteration-count mismatches {iteration_mismatches}, {elapsed:.2?}"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_5_metrics_match_the_naive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut failures = Vec::new();
    for config in 0..1000 {
        let n_items = rng.random_range(1..60);
        let n = rng.random_range(0..15);
        let threshold = rng.random_range(1..=5);
        let users = rng.random_range(1..50);
        let cases: Vec<(Vec<usize>, usize, u32)> = (0..users)
            .map(|_| {
                let mut pool: Vec<usize> = (0..n_items).collect();
                let len = rng.random_range(0..=n.min(n_items));
                let mut recs = Vec::with_capacity(len);
                for _ in 0..len {
                    recs.push(pool.swap_remove(rng.random_range(0..pool.len())));
                }
                (recs, rng.random_range(0..n_items), rng.random_range(1..=5))
            })
            .collect();
        let ours = metrics_from_cases(
            &cases
                .iter()
                .map(|(r, i, y)| Case { recommended: r.clone(), item: *i, rating: *y })
                .collect::<Vec<_>>(),
            n_items,
            n,
            threshold,
        )
        .unwrap();
        let oracle = naive_metrics(&cases, n_items, threshold);
        let counts_ok = (ours.counts.tp, ours.counts.fp, ours.counts.tn, ours.counts.fn_)
            == (oracle.tp, oracle.fp, oracle.tn, oracle.fn_);
        let reals = [
            (ours.hr_pos, oracle.hr_pos),
            (ours.hr_neg, oracle.hr_neg),
            (ours.mrr_pos, oracle.mrr_pos),
            (ours.mrr_neg, oracle.mrr_neg),
            (ours.coverage, oracle.coverage),
            (ours.mcc, oracle.mcc),
        ];
        if !counts_ok || reals.iter().any(|(a, b)| (a - b).abs() > 1e-12) {
            failures.push(config);
        }
    }

    // The full pipeline agrees with recommendations rebuilt by hand.
    let d = generate_shifted_population(80, 40, 1, 5).unwrap();
    let (train_part, test_part) = temporal_split(&d, 0.25).unwrap();
    let bundle = leave_last_out(&test_part, &train_part).unwrap();
    let t = build_tensor(&bundle.train);
    let model = train(
        &ModelConfig::Latte {
            ranks: (6, 6, 3),
            normalization_factor: 0.5,
            law: LawKind::Linear.into(),
            hooi: HooiOptions::default(),
        },
        &bundle.train,
        &t,
    )
    .unwrap();
    let ctx = ContextAggregation::named(ContextName::FourFive, 5).unwrap();
    let report_ = evaluate(&model, &bundle, Stage::Test, &ctx, 10, 3).unwrap();
    let manual: Vec<(Vec<usize>, usize, u32)> = bundle
        .test_holdout
        .iter()
        .zip(bundle.histories(Stage::Test))
        .map(|(entry, history)| {
            let key = latte_core::models::user_key(entry.user());
            let scores = aggregate_context(&model.predict_slice(key, &history).unwrap(), &ctx).unwrap();
            let seen: HashSet<usize> = history.iter().map(|h| h.0).collect();
            let mut order: Vec<usize> = (0..scores.len()).filter(|j| !seen.contains(j)).collect();
            order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
            order.truncate(10);
            (order, entry.item, entry.interaction.rating)
        })
        .collect();
    let oracle = naive_metrics(&manual, bundle.train.n_items(), 3);
    let pipeline_ok = (report_.counts.tp, report_.counts.fp) == (oracle.tp, oracle.fp)
        && (report_.mcc - oracle.mcc).abs() <= 1e-12
        && (report_.coverage - oracle.coverage).abs() <= 1e-12;

    let pass = failures.is_empty() && pipeline_ok;
    report(
        "5",
        pass,
        &format!("1000 configurations, {} mismatches, pipeline check {}", failures.len(), pipeline_ok),
    );
    assert!(pass);
}

/// The tuning protocol at desk scale: PureSVD's best normalization
/// factor is inherited by both tensor models, which are then tuned over
/// ranks and contexts on the validation holdout and scored on the test
/// holdout.
#[test]
fn criterion_6_smoothing_beats_coffee_on_the_shifted_population() {
    let start = Instant::now();
    let mut latte_scores = Vec::new();
    let mut coffee_scores = Vec::new();
    let mut lines = Vec::new();
    for seed in 0..5 {
        let d = generate_shifted_population(1000, 200, 1, seed).unwrap();
        let (train_part, test_part) = temporal_split(&d, 0.2).unwrap();
        let bundle = leave_last_out(&test_part, &train_part).unwrap();
        let mut grid = GridSpec {
            rank_grid: vec![8, 16, 32],
            laws: vec![LawKind::Linear.into()],
            seed,
            ..GridSpec::default()
        };
        let svd = tune(ModelKind::PureSvd, &grid, &bundle, Target::Mcc).unwrap();
        if let ModelConfig::PureSvd { normalization_factor, .. } = svd.best_config {
            grid.tensor_normalization = normalization_factor;
        }
        let t = build_tensor(&bundle.train);
        let test_mcc = |r: &TuneResult| {
            let model = train(&r.best_config, &bundle.train, &t).unwrap();
            evaluate(&model, &bundle, Stage::Test, r.best_context.as_ref().unwrap(), 10, 3).unwrap().mcc
        };
        let latte = tune(ModelKind::Latte, &grid, &bundle, Target::Mcc).unwrap();
        let coffee = tune(ModelKind::Coffee, &grid, &bundle, Target::Mcc).unwrap();
        let (l, c) = (test_mcc(&latte), test_mcc(&coffee));
        lines.push(format!("seed {seed}: latte {l:.4} coffee {c:.4}"));
        latte_scores.push(l);
        coffee_scores.push(c);
    }
    let (ml, mc) = (median(latte_scores), median(coffee_scores));
    let elapsed = start.elapsed();
    let pass = ml > mc && elapsed < Duration::from_secs(120);
    report(
        "6",
        pass,
        &format!("median test MCC@10 latte {ml:.4} vs coffee {mc:.4}; {}; {elapsed:.2?}", lines.join(", ")),
    );
    assert!(pass);
}

/// Keeps the non-gating MovieLens check visible in the default run.
#[test]
fn criterion_7_status() {
    let detail = match std::env::var("LATTE_ML1M") {
        Ok(path) => format!("data at {path}; run with --ignored to execute"),
        Err(_) => "non-gating; set LATTE_ML1M and run with --ignored".to_string(),
    };
    common::skipped("7", &detail);
}

/// Full-scale reproduction on MovieLens-1M. Point `LATTE_ML1M` at
/// `ratings.dat` and run with `--ignored`.
#[test]
#[ignore]
fn criterion_7_movielens_1m_reproduction() {
    let path = std::env::var("LATTE_ML1M").expect("set LATTE_ML1M to the ratings.dat path");
    let start = Instant::now();
    let d = ingest(&path, Format::MovielensDat, RatingScale::one_to(5).unwrap()).unwrap();
    let (train_part, test_part) = temporal_split(&d, 0.2).unwrap();
    let bundle = leave_last_out(&test_part, &train_part).unwrap();
    let mut grid = GridSpec::default();
    let svd = tune(ModelKind::PureSvd, &grid, &bundle, Target::Mcc).unwrap();
    if let ModelConfig::PureSvd { normalization_factor, .. } = svd.best_config {
        grid.tensor_normalization = normalization_factor;
    }
    let latte = tune(ModelKind::Latte, &grid, &bundle, Target::Mcc).unwrap();
    let t = build_tensor(&bundle.train);
    let model: TrainedModel = train(&latte.best_config, &bundle.train, &t).unwrap();
    let ctx = latte.best_context.clone().unwrap();
    let test = evaluate(&model, &bundle, Stage::Test, &ctx, 10, 3).unwrap();

    // Best validation MCC per law, and whether the linear law's best context is "only 5".
    let mut per_law = Vec::new();
    for law in LawKind::SMOOTHING {
        let best = latte
            .trace
            .iter()
            .filter(|e| matches!(&e.config, ModelConfig::Latte { law: l, .. } if l.kind == law))
            .filter_map(|e| e.metric(Target::Mcc).map(|m| (m, e.context.clone())))
            .max_by(|a, b| a.0.total_cmp(&b.0));
        per_law.push((law, best));
    }
    let linear_only5 = per_law
        .iter()
        .find(|(l, _)| *l == LawKind::Linear)
        .and_then(|(_, b)| b.as_ref())
        .is_some_and(|(_, c)| c.as_ref().and_then(|c| c.name) == Some(ContextName::Only5));
    let pass = (0.072..=0.095).contains(&test.mcc);
    report(
        "7",
        pass,
        &format!(
            "test MCC@10 {:.4} with {} [{}], linear best context only5: {linear_only5}, per-law {:?}, {:.0?}",
            test.mcc,
            latte.best_config.describe(),
            ctx.label(),
            per_law.iter().map(|(l, b)| (l.name(), b.as_ref().map(|x| x.0))).collect::<Vec<_>>(),
            start.elapsed()
        ),
    );
    assert!(pass);
}
