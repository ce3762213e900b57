//! Acceptance checks, one test per criterion. Each prints a single
//! `criterion N ...: PASS|FAIL|SKIP` line before asserting.

use std::path::PathBuf;
use std::time::Instant;

use coldstart::checkpoint::Checkpoint;
use coldstart::config::RunConfig;
use coldstart::data::parse::{parse_movielens, MovieLensPaths};
use coldstart::data::{generate_synthetic, Scenario, SyntheticConfig};
use coldstart::eval::{mae, ndcg_at_n, ndcg_at_n_with_log};
use coldstart::experiment::{run_ablation, Experiment};
use coldstart::gradcheck::{run_gradcheck, GradcheckConfig};
use coldstart::memory::{
    attend, bias_term, read_task, write_grad, write_profile, write_task, AttentionVector, FeatureMemory, TaskMemory,
};
use coldstart::meta::{init_local, MetaHyper, MetaState};
use coldstart::model::{FastWeights, LayerStack, ModelDims};
use coldstart::numerics::{Matrix, Params, Rng};

fn report(n: u32, name: &str, pass: bool, detail: &str) {
    println!("criterion {n} {name}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
}

#[test]
fn criterion_1_gradient_correctness() {
    let started = Instant::now();
    let r = run_gradcheck(&GradcheckConfig::default()).unwrap();
    let secs = started.elapsed().as_secs_f64();
    let worst = r.groups.iter().map(|g| g.max_relative_error).fold(0.0, f64::max);
    let dims = GradcheckConfig::default().dims;
    let pass = r.passed() && r.instances == 50 && dims.embed_dim == 8 && secs < 30.0;
    report(
        1,
        "gradient correctness",
        pass,
        &format!("{} groups, worst relative error {worst:.2e} < 1e-4, {secs:.2}s", r.groups.len()),
    );
    assert!(pass, "{r}");
}

// Plain-loop oracles over nested vectors.

fn oracle_attention(p: &[f64], rows: &[Vec<f64>]) -> Vec<f64> {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let cos: Vec<f64> = rows
        .iter()
        .map(|r| {
            let dot: f64 = p.iter().zip(r).map(|(a, b)| a * b).sum();
            dot / (norm(p) * norm(r))
        })
        .collect();
    let z: f64 = cos.iter().map(|c| c.exp()).sum();
    cos.iter().map(|c| c.exp() / z).collect()
}

fn oracle_mix(a: &[f64], slots: &[Vec<f64>]) -> Vec<f64> {
    (0..slots[0].len()).map(|j| (0..a.len()).map(|k| a[k] * slots[k][j]).sum()).collect()
}

fn oracle_write(rate: f64, a: &[f64], value: &[f64], slots: &[Vec<f64>]) -> Vec<Vec<f64>> {
    slots
        .iter()
        .enumerate()
        .map(|(k, s)| s.iter().zip(value).map(|(m, v)| rate * a[k] * v + (1.0 - rate) * m).collect())
        .collect()
}

fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn criterion_2_memory_algebra() {
    let started = Instant::now();
    let mut worst = 0.0f64;
    for case in 0..100u64 {
        let mut rng = Rng::stream(2024, case);
        let k = 1 + rng.below(5);
        let d_u = 1 + rng.below(10);
        let d_e = 1 + rng.below(4);
        let tower = LayerStack::init(&[d_u, 1 + rng.below(6), d_e], &mut rng).unwrap();
        let n_grad = tower.num_params();

        let rows: Vec<Vec<f64>> = (0..k).map(|_| rng.uniform_vec(d_u, -1.0, 1.0)).collect();
        let grads: Vec<Vec<f64>> = (0..k).map(|_| rng.uniform_vec(n_grad, -1.0, 1.0)).collect();
        let tasks: Vec<Vec<f64>> = (0..k).map(|_| rng.uniform_vec(d_e * 2 * d_e, -1.0, 1.0)).collect();
        let mut stacks = vec![tower.clone(); k];
        for (s, g) in stacks.iter_mut().zip(&grads) {
            s.assign(g);
        }
        let mut mem = FeatureMemory::new(Matrix::from_rows(&rows).unwrap(), stacks).unwrap();
        let mut cube = TaskMemory::new(
            tasks.iter().map(|t| Matrix::from_vec(d_e, 2 * d_e, t.clone()).unwrap()).collect(),
        )
        .unwrap();
        let p = rng.uniform_vec(d_u, -1.0, 1.0);
        let (alpha, beta, gamma) = (rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0));

        let a = attend(&p, &mem).unwrap();
        let oracle_a = oracle_attention(&p, &rows);
        worst = worst.max(max_gap(a.as_slice(), &oracle_a));
        worst = worst.max(max_gap(&bias_term(&a, &mem).unwrap().flatten(), &oracle_mix(&oracle_a, &grads)));
        worst = worst.max(max_gap(read_task(&a, &cube).unwrap().matrix().as_slice(), &oracle_mix(&oracle_a, &tasks)));

        // Writes with an independent attention vector so each write is checked on its own.
        let w = AttentionVector::new(oracle_attention(&rng.uniform_vec(d_u, -1.0, 1.0), &rows)).unwrap();
        let g_new = rng.uniform_vec(n_grad, -1.0, 1.0);
        let f_new = rng.uniform_vec(d_e * 2 * d_e, -1.0, 1.0);
        let mut g_stack = tower.clone();
        g_stack.assign(&g_new);
        write_profile(&mut mem, &w, &p, alpha).unwrap();
        write_grad(&mut mem, &w, &g_stack, beta).unwrap();
        write_task(
            &mut cube,
            &w,
            &FastWeights::new(Matrix::from_vec(d_e, 2 * d_e, f_new.clone()).unwrap()).unwrap(),
            gamma,
        )
        .unwrap();
        let want_rows = oracle_write(alpha, w.as_slice(), &p, &rows);
        let want_grads = oracle_write(beta, w.as_slice(), &g_new, &grads);
        let want_tasks = oracle_write(gamma, w.as_slice(), &f_new, &tasks);
        for j in 0..k {
            worst = worst.max(max_gap(mem.profiles().row(j), &want_rows[j]));
            worst = worst.max(max_gap(&mem.grads()[j].flatten(), &want_grads[j]));
            worst = worst.max(max_gap(cube.slots()[j].as_slice(), &want_tasks[j]));
        }
    }
    let secs = started.elapsed().as_secs_f64();
    let pass = worst <= 1e-12 && secs < 5.0;
    report(
        2,
        "memory algebra",
        pass,
        &format!("100 instances, max deviation {worst:.1e} <= 1e-12, {secs:.2}s"),
    );
    assert!(pass);
}

#[test]
fn criterion_3_ablation_reduction() {
    let dims = ModelDims {
        user_dim: 9,
        item_dim: 7,
        embed_dim: 8,
        layers: 2,
    };
    let hyper = MetaHyper::default().without_memory();
    let state = MetaState::init(&dims, 1, hyper, 31).unwrap();
    assert!(state.features.grads()[0].values().all(|v| v == 0.0));
    let bits = |v: Vec<f64>| v.into_iter().map(f64::to_bits).collect::<Vec<_>>();
    let global = bits(state.global.flatten());
    let slot = bits(state.tasks.slots()[0].as_slice().to_vec());
    let mut rng = Rng::new(77);
    let mut identical = 0;
    for _ in 0..1000 {
        let p = rng.uniform_vec(dims.user_dim, -1.0, 1.0);
        let u = init_local(&state, &p).unwrap();
        if bits(u.local.flatten()) == global && bits(u.fast.matrix().as_slice().to_vec()) == slot {
            identical += 1;
        }
    }
    let pass = identical == 1000;
    report(
        3,
        "ablation reduction",
        pass,
        &format!("{identical}/1000 profiles bit-identical to the shared init and task slot 0"),
    );
    assert!(pass);
}

fn oracle_ndcg(pairs: &[(f64, f64)], n: usize) -> f64 {
    let mut idx: Vec<usize> = (0..pairs.len()).collect();
    idx.sort_by(|&a, &b| pairs[b].0.partial_cmp(&pairs[a].0).unwrap().then(a.cmp(&b)));
    let gain = |y: f64| 2f64.powf(y) - 1.0;
    let dcg: f64 = idx.iter().take(n).enumerate().map(|(r, &i)| gain(pairs[i].1) / ((r + 2) as f64).log2()).sum();
    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    ys.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let idcg: f64 = ys.iter().take(n).enumerate().map(|(r, &y)| gain(y) / ((r + 2) as f64).log2()).sum();
    if idcg == 0.0 {
        1.0
    } else {
        dcg / idcg
    }
}

#[test]
fn criterion_4_metric_oracles() {
    let range = (1.0, 5.0);
    let mut failures = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failures.push(name.to_string());
        }
    };

    check("mae perfect", mae(&[(3.0, 3.0), (5.0, 5.0)], range).unwrap() == 0.0);
    check("mae half", (mae(&[(3.0, 4.0), (4.0, 4.0)], range).unwrap() - 0.5).abs() < 1e-15);
    check("mae clamps", (mae(&[(7.0, 5.0), (0.0, 2.0)], range).unwrap() - 0.5).abs() < 1e-15);

    let worked = ndcg_at_n(&[(2.0, 3.0), (1.0, 5.0)], 2).unwrap();
    let hand = (7.0 + 31.0 / 3f64.log2()) / (31.0 + 7.0 / 3f64.log2());
    check("worked example", (worked - 0.7499).abs() <= 1e-3 && (worked - hand).abs() < 1e-15);
    check("perfect ranking", ndcg_at_n(&[(3.0, 5.0), (2.0, 4.0), (1.0, 1.0)], 3).unwrap() == 1.0);
    check("single element", ndcg_at_n(&[(0.3, 2.0)], 1).unwrap() == 1.0);
    check("ties keep order", ndcg_at_n(&[(1.0, 1.0), (1.0, 5.0), (0.0, 3.0)], 3).unwrap() == oracle_ndcg(&[(1.0, 1.0), (1.0, 5.0), (0.0, 3.0)], 3));

    let mut worst_base = 0.0f64;
    let mut worst_monotone = 0.0f64;
    let mut worst_oracle = 0.0f64;
    let mut rng = Rng::new(4);
    for _ in 0..100 {
        let len = 3 + rng.below(8);
        let pairs: Vec<(f64, f64)> = (0..len)
            .map(|_| (rng.uniform(0.0, 6.0), (1 + rng.below(5)) as f64))
            .collect();
        let n = 3;
        let base2 = ndcg_at_n_with_log(&pairs, n, f64::log2).unwrap();
        let natural = ndcg_at_n_with_log(&pairs, n, f64::ln).unwrap();
        let moved: Vec<(f64, f64)> = pairs.iter().map(|&(p, y)| (2.0 * p + 1.0, y)).collect();
        worst_base = worst_base.max((base2 - natural).abs());
        worst_monotone = worst_monotone.max((ndcg_at_n(&moved, n).unwrap() - base2).abs());
        worst_oracle = worst_oracle.max((oracle_ndcg(&pairs, n) - base2).abs());
    }
    check("log-base invariance", worst_base <= 1e-12);
    check("monotone invariance", worst_monotone <= 1e-12);
    check("formula oracle", worst_oracle <= 1e-12);

    let pass = failures.is_empty();
    report(
        4,
        "metric oracles",
        pass,
        &format!(
            "worked NDCG {worked:.4}; base gap {worst_base:.1e}, monotone gap {worst_monotone:.1e}, oracle gap {worst_oracle:.1e} over 100 cases; failed: {failures:?}"
        ),
    );
    assert!(pass);
}

/// Mean test-query MAE of the memory model and its ablation over seeds 0..5.
fn heterogeneity(clusters: usize) -> (f64, f64) {
    let (mut memory, mut ablation) = (0.0, 0.0);
    for seed in 0..5 {
        let data = generate_synthetic(&SyntheticConfig {
            n_users: 200,
            n_items: 100,
            n_clusters: clusters,
            noise_sd: 0.3,
            seed,
            ..Default::default()
        })
        .unwrap();
        let cfg = RunConfig {
            seed,
            ..RunConfig::synthetic()
        };
        assert_eq!((cfg.slots, cfg.epochs, cfg.support_size, cfg.record_cap), (2, 30, 15, 20));
        let out = run_ablation(&Experiment::new(cfg, &data.corpus).unwrap()).unwrap();
        memory += out.memory.report.overall.mae.unwrap();
        ablation += out.ablation.report.overall.mae.unwrap();
    }
    (memory / 5.0, ablation / 5.0)
}

#[test]
fn criterion_5_heterogeneity_benefit() {
    let started = Instant::now();
    let (m2, a2) = heterogeneity(2);
    let (m1, a1) = heterogeneity(1);
    let secs = started.elapsed().as_secs_f64();
    let ratio = m2 / a2;
    let gap = (m1 - a1).abs();
    let pass = ratio <= 0.9 && gap < 0.05 && secs < 120.0;
    report(
        5,
        "heterogeneity benefit",
        pass,
        &format!(
            "2 clusters: memory {m2:.4} vs ablation {a2:.4}, ratio {ratio:.3} (need <= 0.9); \
             1 cluster: memory {m1:.4} vs ablation {a1:.4}, |diff| {gap:.3} (need < 0.05); {secs:.1}s"
        ),
    );
    assert!(pass);
}

/// Informational: runs only when `COLDSTART_MOVIELENS_DIR` names a raw
/// MovieLens-1M directory, and never fails the suite.
#[test]
fn criterion_6_movielens_table() {
    let Some(dir) = std::env::var_os("COLDSTART_MOVIELENS_DIR").map(PathBuf::from) else {
        println!("criterion 6 MovieLens table: SKIP (set COLDSTART_MOVIELENS_DIR to a MovieLens-1M directory)");
        return;
    };
    let parsed = parse_movielens(&MovieLensPaths::from_dir(&dir)).unwrap();
    let exp = Experiment::new(RunConfig::default(), &parsed.corpus).unwrap();
    let (state, _) = exp.train().unwrap();
    let r = exp.evaluate(&state).unwrap();
    let targets = [
        (Scenario::WarmUserWarmItem, 0.8725, 0.8866),
        (Scenario::WarmUserColdItem, 0.9306, 0.8315),
        (Scenario::ColdUserWarmItem, 0.8967, 0.8799),
        (Scenario::ColdUserColdItem, 0.8894, 0.8709),
    ];
    let mut pass = true;
    let mut detail = Vec::new();
    for (s, mae_ref, ndcg_ref) in targets {
        let m = r.get(s);
        let mae = m.mae.unwrap_or(f64::NAN);
        let ndcg = m.ndcg.get(&3).copied().flatten().unwrap_or(f64::NAN);
        pass &= (mae - mae_ref).abs() <= 0.1 && (ndcg - ndcg_ref).abs() <= 0.05;
        detail.push(format!("{s} MAE {mae:.4}/{mae_ref} NDCG@3 {ndcg:.4}/{ndcg_ref}"));
    }
    report(6, "MovieLens table (informational)", pass, &detail.join("; "));
}

#[test]
fn criterion_7_determinism_and_persistence() {
    let data = generate_synthetic(&SyntheticConfig::default()).unwrap();
    let cfg = RunConfig {
        epochs: 5,
        ..RunConfig::synthetic()
    };
    let bytes = |workers: usize| {
        let exp = Experiment::new(RunConfig { workers, ..cfg.clone() }, &data.corpus).unwrap();
        let (state, log) = exp.train().unwrap();
        exp.checkpoint(state, log.len()).to_bytes().unwrap()
    };
    let first = bytes(1);
    let second = bytes(1);
    let parallel = bytes(4);
    let restored = Checkpoint::from_bytes(&first).unwrap().to_bytes().unwrap();
    let pass = first == second && first == parallel && first == restored;
    report(
        7,
        "determinism and persistence",
        pass,
        &format!(
            "repeat run identical: {}, 4 workers identical: {}, round trip identical: {} ({} bytes)",
            first == second,
            first == parallel,
            first == restored,
            first.len()
        ),
    );
    assert!(pass);
}
