//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any gating criterion fails.
//!
//! Set `GBCC_MNIST_USPS` to a dataset manifest (or its directory) to run the
//! optional real-data check.

use std::collections::HashSet;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use gbcc::association::{associate_members, cross_association, pair_mask};
use gbcc::diffcore::Graph;
use gbcc::eval::{accuracy, nmi, purity};
use gbcc::granular::{ball_count, ball_stats, generate_balls_kmeans};
use gbcc::kmeans::KMeans;
use gbcc::model::{build_batch, BatchPlan, TrainConfig};
use gbcc::{Matrix, Trainer, ViewNetwork};
use gbcc_cli::dataset::load_dataset;
use gbcc_cli::run;
use gbcc_cli::synth::{synth, SynthSpec};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_gbcc")
}

fn gbcc(args: &[&str]) -> Result<(), String> {
    let out = Command::new(bin()).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("gbcc {args:?} failed: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn sse(x: &Matrix, labels: &[usize], k: usize) -> f64 {
    let d = x.cols();
    let mut total = 0.0;
    for c in 0..k {
        let rows: Vec<usize> = (0..x.rows()).filter(|&i| labels[i] == c).collect();
        if rows.is_empty() {
            continue;
        }
        let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|&i| x[(i, j)]).sum::<f64>() / rows.len() as f64).collect();
        for &i in &rows {
            total += (0..d).map(|j| (x[(i, j)] - mean[j]).powi(2)).sum::<f64>();
        }
    }
    total
}

// ---------------------------------------------------------------------------

fn gradient_check() -> Outcome {
    let cfg = TrainConfig {
        p: 2,
        latent_dim: 4,
        hidden_dims: vec![8],
        batch_size: 12,
        ..TrainConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let views = vec![random_matrix(&mut rng, 12, 6), random_matrix(&mut rng, 12, 6)];
    let trainer = Trainer::new(cfg.clone(), &[6, 6]).unwrap();
    let ids: Vec<usize> = (0..12).collect();
    let mut bg = build_batch(&trainer.nets, &views, &ids, &cfg, None, |v| ChaCha8Rng::seed_from_u64(5 + v as u64)).unwrap();
    let plan: BatchPlan<f64> = bg.plan.clone().unwrap();
    bg.graph.backward(bg.losses.total).unwrap();
    let vars = bg.param_vars();

    let total = |nets: &[ViewNetwork]| {
        build_batch(nets, &views, &ids, &cfg, Some(&plan), |_| ChaCha8Rng::seed_from_u64(0))
            .unwrap()
            .loss_values()
            .2
    };
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut idx = 0;
    for v in 0..trainer.nets.len() {
        for p in 0..trainer.nets[v].parameters().len() {
            let analytic = bg.graph.grad(vars[idx]).clone();
            idx += 1;
            for e in 0..analytic.len() {
                let mut plus = trainer.nets.clone();
                let mut minus = trainer.nets.clone();
                plus[v].parameters_mut()[p].as_mut_slice()[e] += h;
                minus[v].parameters_mut()[p].as_mut_slice()[e] -= h;
                let numeric = (total(&plus) - total(&minus)) / (2.0 * h);
                let a = analytic.as_slice()[e];
                worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3));
                checked += 1;
            }
        }
    }
    outcome(worst < 1e-4, format!("{checked} parameters, max relative error {worst:.2e}"))
}

fn ball_stats_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(1..=20);
        let d = rng.random_range(1..=8);
        let x = Matrix::from_fn(n, d, |_, _| rng.random_range(-5.0..5.0));
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let (c, r) = ball_stats(&mut g, xv).unwrap();

        let center: Vec<f64> = (0..d).map(|j| (0..n).map(|i| x[(i, j)]).sum::<f64>() / n as f64).collect();
        let radius = (0..n)
            .map(|i| (0..d).map(|j| (x[(i, j)] - center[j]).powi(2)).sum::<f64>().sqrt())
            .sum::<f64>()
            / n as f64;
        for (a, b) in g.value(c).as_slice().iter().zip(&center) {
            worst = worst.max((a - b).abs());
        }
        worst = worst.max((g.value(r).item() - radius).abs());
    }
    outcome(worst <= 1e-12, format!("100 point sets, max abs error {worst:.2e}"))
}

fn kmeans_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut hits = 0;
    for _ in 0..50 {
        let n = rng.random_range(2..=8);
        let d = rng.random_range(1..=3);
        let x = random_matrix(&mut rng, n, d);
        let mut best = f64::INFINITY;
        // every 2-partition with both sides non-empty; point 0 fixed in cluster 0
        for mask in 0u32..(1 << (n - 1)) {
            let labels: Vec<usize> = (0..n).map(|i| if i == 0 { 0 } else { ((mask >> (i - 1)) & 1) as usize }).collect();
            if labels.iter().all(|&l| l == 0) {
                continue;
            }
            best = best.min(sse(&x, &labels, 2));
        }
        let fit = KMeans::new(2).restarts(20).fit(&x, &mut rng).unwrap();
        if (sse(&x, &fit.assignments, 2) - best).abs() <= 1e-9 {
            hits += 1;
        }
    }
    outcome(hits * 100 >= 95 * 50, format!("{hits}/50 instances at the exhaustive minimum"))
}

fn random_partition(rng: &mut ChaCha8Rng, ids: &[usize], parts: usize) -> Vec<Vec<usize>> {
    let mut ids = ids.to_vec();
    ids.shuffle(rng);
    let mut out = vec![Vec::new(); parts];
    for (i, id) in ids.into_iter().enumerate() {
        // the first `parts` ids seed each part so none is empty
        let part = if i < parts { i } else { rng.random_range(0..parts) };
        out[part].push(id);
    }
    out
}

fn count_and_threshold_rules() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..1000 {
        let n = rng.random_range(0..2000);
        let p = rng.random_range(1..100);
        let mut k = 0;
        while (k + 1) * p <= n {
            k += 1;
        }
        if ball_count(n, p) != k.max(1) {
            return outcome(false, format!("ball_count({n}, {p}) = {}", ball_count(n, p)));
        }
    }
    for _ in 0..200 {
        let n = rng.random_range(2..40);
        let ids: Vec<usize> = (0..n).map(|i| 3 * i + 1).collect();
        let km = rng.random_range(1..=n);
        let kn = rng.random_range(1..=n);
        let a = random_partition(&mut rng, &ids, km);
        let b = random_partition(&mut rng, &ids, kn);
        let mut taus: Vec<f64> = (0..4).map(|_| rng.random_range(0.01..=1.0)).collect();
        taus.sort_by(f64::total_cmp);
        let mut previous: Option<gbcc::binary::BinaryMatrix> = None;
        for &tau in &taus {
            let got = associate_members(&a, &b, tau);
            for (i, ai) in a.iter().enumerate() {
                let si: HashSet<_> = ai.iter().collect();
                for (j, bj) in b.iter().enumerate() {
                    let shared = bj.iter().filter(|id| si.contains(id)).count();
                    let want = shared as f64 >= tau * ai.len().min(bj.len()) as f64;
                    if got.get(i, j) != want {
                        return outcome(false, format!("threshold rule disagrees at tau={tau}"));
                    }
                    if let Some(prev) = &previous {
                        if got.get(i, j) && !prev.get(i, j) {
                            return outcome(false, "association grew with tau");
                        }
                    }
                }
            }
            previous = Some(got);
        }
    }
    outcome(true, "1000 (N, p) pairs, 200 partition pairs x 4 thresholds")
}

fn mask_structure() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for case in 0..100 {
        let n = rng.random_range(4..60);
        let p = rng.random_range(1..=5).min(n);
        let d = rng.random_range(1..=4);
        let tau = rng.random_range(0.05..=1.0);
        let ids: Vec<usize> = (0..n).collect();
        let mut g = Graph::new();
        let mut sets = Vec::new();
        for v in 0..2 {
            let h = g.constant(random_matrix(&mut rng, n, d));
            sets.push(generate_balls_kmeans(&mut g, h, p, &ids, v, &mut rng).unwrap().0);
        }
        let mask = pair_mask(&sets[0], &sets[1], tau).unwrap();
        let pm = cross_association(&sets[0], &sets[1], tau).unwrap().p;
        let m = mask.matrix();
        let k = mask.k();
        for i in 0..2 * k {
            for j in 0..2 * k {
                let want = match (i < k, j < k) {
                    (true, true) => sets[0].overlap.get(i, j),
                    (false, false) => sets[1].overlap.get(i - k, j - k),
                    (true, false) => pm.get(i, j - k),
                    (false, true) => pm.get(j, i - k),
                };
                if m.get(i, j) != want || m.get(i, j) != m.get(j, i) || (i == j && m.get(i, i)) {
                    return outcome(false, format!("case {case}: entry ({i}, {j}) breaks the block structure"));
                }
            }
        }
    }
    outcome(true, "100 random ball-set pairs")
}

fn brute_force_accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    fn walk(perm: &mut Vec<usize>, i: usize, pred: &[usize], truth: &[usize], best: &mut usize) {
        if i == perm.len() {
            let hits = pred.iter().zip(truth).filter(|(a, b)| perm[**a] == **b).count();
            *best = (*best).max(hits);
            return;
        }
        for j in i..perm.len() {
            perm.swap(i, j);
            walk(perm, i + 1, pred, truth, best);
            perm.swap(i, j);
        }
    }
    let k = pred.iter().chain(truth).max().unwrap() + 1;
    let mut best = 0;
    walk(&mut (0..k).collect(), 0, pred, truth, &mut best);
    best as f64 / pred.len() as f64
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for _ in 0..100 {
        let n = rng.random_range(1..50);
        let k = rng.random_range(1..=6);
        let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let (got, want) = (accuracy(&pred, &truth).unwrap(), brute_force_accuracy(&pred, &truth));
        if (got - want).abs() > 1e-12 {
            return outcome(false, format!("accuracy {got} vs brute force {want}"));
        }
    }
    let ln2 = 2f64.ln();
    let ln3 = 3f64.ln();
    let cases: [(&[usize], &[usize], f64, f64); 4] = [
        (&[0, 0, 1, 1], &[0, 0, 1, 1], 1.0, 1.0),
        (&[0, 1, 0, 1], &[0, 0, 1, 1], 0.0, 0.5),
        // contingency [[2,0],[1,1],[0,2]]: MI = (2/3) ln 2
        (&[0, 0, 1, 1, 2, 2], &[0, 0, 0, 1, 1, 1], (2.0 / 3.0) * ln2 / (ln3 * ln2).sqrt(), 5.0 / 6.0),
        // contingency [[2,1,0],[0,1,2]]: MI = (2/3) ln 2
        (&[0, 0, 0, 1, 1, 1], &[0, 0, 1, 1, 2, 2], (2.0 / 3.0) * ln2 / (ln3 * ln2).sqrt(), 4.0 / 6.0),
    ];
    for (pred, truth, want_nmi, want_pur) in cases {
        let (n, p) = (nmi(pred, truth).unwrap(), purity(pred, truth).unwrap());
        if (n - want_nmi).abs() > 1e-9 || (p - want_pur).abs() > 1e-9 {
            return outcome(false, format!("{pred:?} vs {truth:?}: nmi {n}, purity {p}"));
        }
    }
    outcome(true, "100 accuracy pairs, 4 fixed NMI/purity examples")
}

// ---------------------------------------------------------------------------

struct EndToEnd {
    acc: f64,
    nmi: f64,
    elapsed: Duration,
    totals: Vec<f64>,
}

fn end_to_end(dir: &Path) -> Result<EndToEnd, String> {
    let data = dir.join("synth");
    let out = dir.join("run");
    let start = Instant::now();
    gbcc(&["synth", "--out", data.to_str().unwrap(), "--seed", "0"])?;
    gbcc(&[
        "train", "--data", data.to_str().unwrap(), "--out", out.to_str().unwrap(),
        "--p", "2", "--tau", "0.1", "--lambda", "1", "--dim", "16", "--epochs", "50", "--seed", "0",
    ])?;
    let elapsed = start.elapsed();
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join(run::METRICS_JSON)).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    let totals = std::fs::read_to_string(out.join(run::LOSS_FILE))
        .map_err(|e| e.to_string())?
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap())
        .collect();
    Ok(EndToEnd {
        acc: metrics["acc"].as_f64().unwrap_or(f64::NAN),
        nmi: metrics["nmi"].as_f64().unwrap_or(f64::NAN),
        elapsed,
        totals,
    })
}

fn convergence(e2e: &EndToEnd) -> Outcome {
    if e2e.totals.len() != 50 {
        return outcome(false, format!("{} loss rows, expected 50", e2e.totals.len()));
    }
    let first = e2e.totals[..10].iter().sum::<f64>() / 10.0;
    let last = e2e.totals[40..].iter().sum::<f64>() / 10.0;
    outcome(last < first, format!("mean total loss epochs 1-10 {first:.4}, epochs 41-50 {last:.4}"))
}

/// Synthetic data with view-private nuisance groups stronger than the
/// shared cluster signal; rec-only vs rec + contrastive at p = 2.
fn ablation() -> Outcome {
    let base = TrainConfig {
        p: 2,
        tau: 0.1,
        lambda: 1e-5,
        latent_dim: 16,
        hidden_dims: vec![256, 64],
        epochs: 30,
        ..TrainConfig::default()
    };
    let mut rec_accs = Vec::new();
    let mut full_accs = Vec::new();
    for seed in 1..=5u64 {
        let ds = synth(&SynthSpec {
            nuisance_groups: 4,
            nuisance_scale: 2.0,
            seed,
            ..SynthSpec::default()
        })
        .unwrap();
        for (contrastive, accs) in [(false, &mut rec_accs), (true, &mut full_accs)] {
            let cfg = TrainConfig {
                contrastive,
                seed,
                ..base.clone()
            };
            let (trainer, _) = run::train(&ds, &cfg, None).unwrap();
            accs.push(run::evaluate(&trainer, &ds, None).unwrap().report.acc.unwrap());
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let wins = full_accs.iter().zip(&rec_accs).filter(|(f, r)| f > r).count();
    let fmt = |v: &[f64]| v.iter().map(|a| format!("{a:.3}")).collect::<Vec<_>>().join(" ");
    outcome(
        mean(&full_accs) >= mean(&rec_accs) - 0.02 && wins >= 4,
        format!(
            "rec-only [{}] mean {:.3}; rec+con [{}] mean {:.3}; {wins}/5 strict wins",
            fmt(&rec_accs),
            mean(&rec_accs),
            fmt(&full_accs),
            mean(&full_accs)
        ),
    )
}

fn determinism(dir: &Path) -> Outcome {
    let data = dir.join("det-data");
    if let Err(e) = gbcc(&["synth", "--out", data.to_str().unwrap(), "--seed", "3"]) {
        return outcome(false, e);
    }
    let mut files = Vec::new();
    for name in ["a", "b"] {
        let out = dir.join(name);
        let res = gbcc(&[
            "train", "--data", data.to_str().unwrap(), "--out", out.to_str().unwrap(),
            "--dim", "16", "--epochs", "10", "--hidden", "128,64", "--seed", "3",
        ]);
        if let Err(e) = res {
            return outcome(false, e);
        }
        let read = |f: &str| std::fs::read(out.join(f)).unwrap();
        files.push((read(run::LOSS_FILE), read(run::METRICS_JSON)));
    }
    outcome(files[0] == files[1], "two train runs: loss.csv and metrics.json compared byte for byte")
}

/// Non-gating; `None` means skipped.
fn real_data() -> Option<Outcome> {
    let path = std::env::var_os("GBCC_MNIST_USPS")?;
    let ds = match load_dataset(Path::new(&path)) {
        Ok(ds) => ds,
        Err(e) => return Some(outcome(false, e.to_string())),
    };
    let cfg = TrainConfig {
        p: 2,
        latent_dim: 64,
        tau: 0.1,
        lambda: 1.0,
        epochs: 100,
        ..TrainConfig::default()
    };
    let result = run::train(&ds, &cfg, None).and_then(|(t, _)| run::evaluate(&t, &ds, None));
    Some(match result {
        Ok(ev) => {
            let acc = ev.report.acc.unwrap_or(f64::NAN);
            outcome(acc >= 0.95, format!("acc {acc:.4}"))
        }
        Err(e) => outcome(false, e.to_string()),
    })
}

fn report(name: &str, elapsed: Duration, o: &Outcome) {
    let tag = if o.pass { "PASS" } else { "FAIL" };
    println!("{tag} {name} ({:.2}s): {}", elapsed.as_secs_f64(), o.detail);
}

fn timed(name: &str, limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let mut o = f();
    let elapsed = start.elapsed();
    if let Some(limit) = limit {
        if elapsed > limit {
            o.pass = false;
            o.detail += &format!("; over the {}s limit", limit.as_secs());
        }
    }
    report(name, elapsed, &o);
    o.pass
}

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().expect("temp dir");
    let mut ok = true;
    ok &= timed("gradient-check", Some(Duration::from_secs(10)), gradient_check);
    ok &= timed("ball-stats-oracle", None, ball_stats_oracle);
    ok &= timed("kmeans-oracle", Some(Duration::from_secs(5)), kmeans_oracle);
    ok &= timed("ball-count-and-threshold-rules", None, count_and_threshold_rules);
    ok &= timed("mask-structure", None, mask_structure);
    ok &= timed("metric-oracles", None, metric_oracles);

    match end_to_end(tmp.path()) {
        Ok(e2e) => {
            let mut o = outcome(
                e2e.acc >= 0.95 && e2e.nmi >= 0.85,
                format!("acc {:.4}, nmi {:.4}", e2e.acc, e2e.nmi),
            );
            if e2e.elapsed > Duration::from_secs(120) {
                o.pass = false;
                o.detail += "; over the 120s limit";
            }
            report("end-to-end-synthetic", e2e.elapsed, &o);
            ok &= o.pass;
            ok &= timed("convergence", None, || convergence(&e2e));
        }
        Err(e) => {
            for name in ["end-to-end-synthetic", "convergence"] {
                report(name, Duration::ZERO, &outcome(false, e.clone()));
            }
            ok = false;
        }
    }
    ok &= timed("ablation-trend", None, ablation);
    ok &= timed("determinism", None, || determinism(tmp.path()));

    let start = Instant::now();
    match real_data() {
        Some(o) => report("real-data-spot-check (non-gating)", start.elapsed(), &o),
        None => println!("SKIP real-data-spot-check (non-gating): set GBCC_MNIST_USPS to a dataset manifest"),
    }

    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
