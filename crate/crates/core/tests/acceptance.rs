//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits nonzero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::Rng;

use domd::analysis::{dynamic_regret, estimate_constants};
use domd::engine::{run, run_with_trajectory, Execution};
use domd::geometry::{FeasibleSet, MirrorMap, Vector};
use domd::harness::artifacts::{stable_manifest, ESTIMATES_CSV, MANIFEST, REGRET_CSV, TRAJECTORY_CSV};
use domd::harness::{cmd_run, execute, Experiment, RunOutput};
use domd::losses::{observation_noise, quartic_expected_loss, round_robin_coords, DualNorm, LossFamily, LossOracle};
use domd::network::{metropolis_weights, parse_edge_list, sigma2_exact};
use domd::rng::{agent_round_rng, aux_rng};

type Criterion = (u32, &'static str, fn() -> Result<String, String>);

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        (1, "sigma_nu2 sweep ordering", sweep_ordering),
        (2, "tracking quality", tracking_quality),
        (3, "regret bound dominance", bound_dominance),
        (4, "disagreement bound dominance", disagreement_dominance),
        (5, "static-rate recovery", static_rate),
        (6, "engine equals explicit recursion", explicit_recursion),
        (7, "oracle suite", oracle_suite),
        (8, "determinism across execution modes", determinism),
    ];
    let mut failed = 0;
    for (id, name, f) in criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS criterion {id} ({name}) [{secs:.1}s]: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {id} ({name}) [{secs:.1}s]: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 8 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn load(preset: &str, overrides: &[&str]) -> Experiment {
    let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    Experiment::load(Some(preset), None, &o).expect("valid experiment")
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

const SIGMAS: [&str; 4] = ["0.25", "0.5", "0.75", "1"];

fn terminal_regret(preset: &str, sigma: &str, seed: u64) -> f64 {
    let e = load(preset, &[&format!("sigma_nu2={sigma}"), &format!("seed={seed}"), "granularity=\"summary\""]);
    execute(&e).expect("run").regret.normalized()
}

fn sweep_ordering() -> Result<String, String> {
    let start = Instant::now();
    let seeds = 10;
    let means: Vec<f64> = SIGMAS
        .iter()
        .map(|s| (0..seeds).map(|seed| terminal_regret("ncv-grid25", s, seed)).sum::<f64>() / seeds as f64)
        .collect();
    ensure(means.windows(2).all(|w| w[0] < w[1]), || format!("means not strictly increasing: {means:?}"))?;
    // Single-seed protocol: the three adjacent pairs plus the end-to-end pair.
    let single: Vec<f64> = SIGMAS.iter().map(|s| terminal_regret("ncv-grid25", s, 0)).collect();
    let pairs = [(0, 1), (1, 2), (2, 3), (0, 3)];
    let held = pairs.iter().filter(|(a, b)| single[*a] < single[*b]).count();
    ensure(held >= 3, || format!("single-seed orderings held {held} of 4: {single:?}"))?;
    let elapsed = start.elapsed();
    ensure(elapsed <= Duration::from_secs(600), || format!("took {elapsed:?}"))?;
    Ok(format!("means {means:.4?}; single seed {single:.4?} ({held}/4 orderings); {elapsed:.1?}"))
}

/// Positions are coordinates 0 and 2 of (p_x, v_x, p_y, v_y).
fn position(x: &Vector) -> [f64; 2] {
    [x[0], x[2]]
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn tracking_quality() -> Result<String, String> {
    let (t0, t1) = (100usize, 1000usize);
    let mut good_seeds = 0;
    let mut worst = Vec::new();
    for seed in 0..10u64 {
        let out = execute(&load("ncv-grid25", &["sigma_nu2=0.5", &format!("seed={seed}")])).map_err(|e| e.to_string())?;
        let traj = &out.record.trajectory;
        let agents = out.record.agents.as_ref().ok_or("full record expected")?;
        let scale: f64 = (t0..t1).map(|t| dist(position(traj.state(t + 1)), position(traj.state(t)))).sum();
        let span = (t1 - t0 + 1) as f64;
        let worst_err = (0..out.record.n)
            .map(|i| (t0..=t1).map(|t| dist(position(&agents[t - 1][i].x), position(traj.state(t)))).sum::<f64>() / span)
            .fold(0.0, f64::max);
        let ratio = worst_err / scale;
        worst.push(ratio);
        if ratio < 0.2 {
            good_seeds += 1;
        }
    }
    ensure(good_seeds >= 9, || format!("{good_seeds}/10 seeds within 20%; worst-agent error/path length {worst:.4?}"))?;
    Ok(format!("{good_seeds}/10 seeds; worst-agent error/path length per seed {worst:.4?}"))
}

fn bound_dominance() -> Result<String, String> {
    let start = Instant::now();
    let mut holds = 0;
    let mut min_slack = f64::INFINITY;
    for seed in 0..50u64 {
        let out = execute(&load("static-quadratic", &[&format!("seed={seed}")])).map_err(|e| e.to_string())?;
        let b = &out.bound;
        ensure(b.constants.hypotheses.all(), || "static scenario flagged outside hypotheses".into())?;
        ensure(b.rounds == 1000 && out.record.n == 9 && b.delta == 0.1, || "unexpected scenario parameters".into())?;
        if b.measured.unwrap() <= b.total() {
            holds += 1;
        }
        min_slack = min_slack.min(b.slack().unwrap());
    }
    let elapsed = start.elapsed();
    ensure(holds >= 45, || format!("bound held in {holds}/50 seeds"))?;
    ensure(elapsed <= Duration::from_secs(120), || format!("took {elapsed:?}"))?;
    Ok(format!("bound held in {holds}/50 seeds, min slack {min_slack:.3e}; {elapsed:.1?}"))
}

fn disagreement_dominance() -> Result<String, String> {
    let scenarios: [(&str, &[&str]); 6] = [
        ("ncv-grid25", &["dynamics.kind=identity", "dynamics.dim=4", "noise.epsilon=0.1", "seed=0"]),
        ("ncv-grid25", &["dynamics.kind=identity", "dynamics.dim=4", "noise.epsilon=0.1", "seed=1", "clip=\"none\""]),
        ("static-quadratic", &["seed=2"]),
        ("static-quadratic", &["seed=3", "network.kind=ring", "network.n=12", "schedule.kind=inverse-sqrt", "schedule.c=0.5"]),
        (
            "static-quadratic",
            &[
                "seed=4",
                "map=\"negative-entropy\"",
                "dynamics.dim=3",
                "set.kind=simplex",
                "set.mix=0.05",
                "target_start=[0.2, 0.3, 0.5]",
                "network.kind=path",
                "network.n=6",
            ],
        ),
        ("complete-graph-centralized", &["dynamics.kind=identity", "dynamics.dim=4", "noise.epsilon=0.1", "seed=5"]),
    ];
    let mut lines = Vec::new();
    let mut grid_t1000 = false;
    for (preset, overrides) in scenarios {
        let out = execute(&load(preset, overrides)).map_err(|e| format!("{preset} {overrides:?}: {e}"))?;
        ensure(out.prepared.run.dynamics.is_non_expansive(), || "scenario has ‖A‖ > 1".into())?;
        let report = domd::analysis::disagreement(&out.record, out.constants.l).map_err(|e| e.to_string())?;
        if out.record.n == 25 && out.record.rounds() == 1000 && preset == "ncv-grid25" {
            grid_t1000 = true;
        }
        ensure(report.violations == 0, || {
            format!("{preset} {overrides:?}: {} violations, worst ratio {:.4}", report.violations, report.worst_ratio())
        })?;
        lines.push(format!("{preset}[n={}, T={}] worst ratio {:.3e}", out.record.n, out.record.rounds(), report.worst_ratio()));
    }
    ensure(grid_t1000, || "no Grid(5,5), T=1000 scenario".into())?;
    Ok(format!("0 violations in {} scenarios: {}", lines.len(), lines.join("; ")))
}

fn static_rate() -> Result<String, String> {
    let seeds = 5;
    let mean_at = |rounds: usize| -> Result<f64, String> {
        let mut total = 0.0;
        for seed in 0..seeds {
            let e = load("static-quadratic", &[&format!("rounds={rounds}"), &format!("seed={seed}"), "granularity=\"summary\""]);
            total += execute(&e).map_err(|e| e.to_string())?.regret.normalized();
        }
        Ok(total / seeds as f64)
    };
    let short = mean_at(100)?;
    let long = mean_at(10_000)?;
    let factor = short / long;
    ensure((5.0..=20.0).contains(&factor), || format!("reduction factor {factor:.3} (T=100: {short:.4e}, T=10^4: {long:.4e})"))?;
    Ok(format!("normalized regret {short:.4e} at T=100, {long:.4e} at T=10^4, factor {factor:.2}"))
}

fn explicit_recursion() -> Result<String, String> {
    let e = load("ncv-grid25", &["rounds=100", "seed=3"]);
    let prepared = e.prepare().map_err(|e| e.to_string())?;
    let record = run_with_trajectory(prepared.run.clone(), prepared.trajectory.clone()).map_err(|e| e.to_string())?;
    ensure(record.total_clipped() == 0, || "clipping engaged; recursion comparison would not be exact".into())?;
    let cfg = &prepared.run;
    let a = cfg.dynamics.matrix();
    let w = cfg.network.weights().matrix();
    let traj = &record.trajectory;
    let n = cfg.network.n();
    let coords = round_robin_coords(n, 4);
    let eta = 0.1;
    let mut xs = vec![Vector::zeros(4); n];
    let mut max_dev = 0.0f64;
    let agents = record.agents.as_ref().ok_or("full record expected")?;
    for t in 1..=100 {
        if t > 1 {
            let prev = xs.clone();
            for i in 0..n {
                let mut next = Vector::zeros(4);
                for j in 0..n {
                    next += (a * &prev[j]) * w[(i, j)];
                }
                let k = coords[i];
                let z = traj.state(t - 1)[k] + observation_noise(&mut agent_round_rng(cfg.seed, i, t - 1));
                let mut e_k = Vector::zeros(4);
                e_k[k] = 1.0;
                next += (a * e_k) * (eta * (z - prev[i][k]).powi(3));
                xs[i] = next;
            }
        }
        for i in 0..n {
            max_dev = max_dev.max((&agents[t - 1][i].x - &xs[i]).amax());
        }
    }
    ensure(max_dev <= 1e-10, || format!("max deviation {max_dev:.3e}"))?;
    Ok(format!("max deviation {max_dev:.3e} over 100 rounds, 25 agents"))
}

/// Nested golden-section minimization over the μ-mixed 3-simplex.
fn simplex_argmin(f: impl Fn(&Vector) -> f64, floor: f64) -> Vector {
    const PHI: f64 = 0.618_033_988_749_894_8;
    let golden = |lo: f64, hi: f64, h: &dyn Fn(f64) -> f64| -> f64 {
        let (mut a, mut b) = (lo, hi);
        let mut c = b - PHI * (b - a);
        let mut d = a + PHI * (b - a);
        let (mut fc, mut fd) = (h(c), h(d));
        while b - a > 1e-12 {
            if fc < fd {
                b = d;
                d = c;
                fd = fc;
                c = b - PHI * (b - a);
                fc = h(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + PHI * (b - a);
                fd = h(d);
            }
        }
        0.5 * (a + b)
    };
    let point = |x1: f64, x2: f64| Vector::from_column_slice(&[x1, x2, 1.0 - x1 - x2]);
    let inner = |x1: f64| golden(floor, 1.0 - x1 - floor, &|x2| f(&point(x1, x2)));
    let outer = |x1: f64| f(&point(x1, inner(x1)));
    let x1 = golden(floor, 1.0 - 2.0 * floor, &outer);
    point(x1, inner(x1))
}

fn oracle_suite() -> Result<String, String> {
    let mut notes = Vec::new();

    // Quartic expected loss against 10^6 Monte Carlo samples.
    let mut rng = aux_rng(2024, 0);
    let mut worst_mc = 0.0f64;
    for &u in &[-1.5, -0.3, 0.0, 0.7, 2.0] {
        let m = 1_000_000;
        let mc: f64 = (0..m).map(|_| 0.25 * (u + observation_noise(&mut rng)).powi(4)).sum::<f64>() / m as f64;
        let exact = quartic_expected_loss(u);
        worst_mc = worst_mc.max((mc - exact).abs() / exact);
    }
    ensure(worst_mc <= 0.01, || format!("quartic Monte Carlo relative error {worst_mc:.3e}"))?;
    notes.push(format!("MC {worst_mc:.1e}"));

    // Unbiasedness and finite differences for both loss families.
    let ncv = load("ncv-grid25", &["rounds=30", "seed=1", "clip=\"none\""]).prepare().map_err(|e| e.to_string())?;
    let quartic = ncv.run.oracle(ncv.trajectory.clone()).map_err(|e| e.to_string())?;
    let quad_traj = ncv.trajectory.clone();
    let quadratic =
        LossOracle::new(LossFamily::QuadraticTracking { amplitude: 0.5 }, 25, quad_traj, DualNorm::L2).map_err(|e| e.to_string())?;
    let mut probe_rng = aux_rng(7, 1);
    let mut worst_z = 0.0f64;
    let mut worst_fd = 0.0f64;
    for oracle in [&quartic, &quadratic] {
        for _ in 0..20 {
            let i = probe_rng.random_range(0..25);
            let t = probe_rng.random_range(1..=30);
            let x = oracle.trajectory().state(t) + Vector::from_fn(4, |_, _| probe_rng.random_range(-1.5..1.5));
            let exact = oracle.exact_gradient(i, t, &x).map_err(|e| e.to_string())?;
            let m = 100_000;
            let mut sum = Vector::zeros(4);
            let mut sumsq = Vector::zeros(4);
            for _ in 0..m {
                let g = oracle.stochastic_gradient(i, t, &x, &mut probe_rng).map_err(|e| e.to_string())?.g;
                sumsq += g.component_mul(&g);
                sum += g;
            }
            for k in 0..4 {
                let mean = sum[k] / m as f64;
                let var = (sumsq[k] / m as f64 - mean * mean).max(0.0);
                let se = (var / m as f64).sqrt();
                if se > 0.0 {
                    worst_z = worst_z.max((mean - exact[k]).abs() / se);
                } else {
                    ensure(mean == exact[k], || "zero-variance coordinate with biased mean".into())?;
                }
                let h = 1e-5;
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[k] += h;
                xm[k] -= h;
                let fd = (oracle.local_value(i, t, &xp).unwrap() - oracle.local_value(i, t, &xm).unwrap()) / (2.0 * h);
                let rel = (fd - exact[k]).abs() / exact[k].abs().max(1.0);
                worst_fd = worst_fd.max(rel);
            }
        }
    }
    ensure(worst_z <= 3.0, || format!("stochastic gradient bias at {worst_z:.2} standard errors"))?;
    ensure(worst_fd <= 1e-6, || format!("finite-difference relative error {worst_fd:.3e}"))?;
    notes.push(format!("bias {worst_z:.2} SE over 40 probes"));
    notes.push(format!("FD {worst_fd:.1e}"));

    // Entropic mirror step against a numeric constrained minimizer.
    let map = MirrorMap::negative_entropy(3).unwrap();
    let mix = 0.05;
    let set = FeasibleSet::simplex(3, mix).unwrap();
    let floor = mix / 3.0;
    let mut worst_kl = 0.0f64;
    let mut rng = aux_rng(11, 2);
    for case in 0..12 {
        let y = set.sample(&mut rng).unwrap();
        let scale = if case % 3 == 0 { 8.0 } else { 1.0 };
        let g = Vector::from_fn(3, |_, _| scale * rng.random_range(-1.0..1.0));
        let eta = rng.random_range(0.1..1.5);
        let step = map.mirror_step(&set, &y, &g, eta).map_err(|e| e.to_string())?;
        let numeric = simplex_argmin(|x| eta * x.dot(&g) + map.bregman(x, &y).unwrap(), floor);
        worst_kl = worst_kl.max((&step - &numeric).amax());
    }
    let two = MirrorMap::negative_entropy(2).unwrap();
    let half = Vector::from_column_slice(&[0.5, 0.5]);
    let s = two
        .mirror_step(&FeasibleSet::simplex(2, 0.0).unwrap(), &half, &Vector::from_column_slice(&[2f64.ln(), 0.0]), 1.0)
        .unwrap();
    worst_kl = worst_kl.max((s[0] - 1.0 / 3.0).abs()).max((s[1] - 2.0 / 3.0).abs());
    ensure(worst_kl <= 1e-6, || format!("KL mirror step off by {worst_kl:.3e}"))?;
    notes.push(format!("KL step {worst_kl:.1e}"));

    // σ₂ of the 3-node path under Metropolis weights.
    let path = parse_edge_list("0 1\n1 2\n", Some(3)).unwrap();
    let s2 = sigma2_exact(metropolis_weights(&path).unwrap().matrix());
    ensure((s2 - 2.0 / 3.0).abs() <= 1e-10, || format!("sigma2(Path(3)) = {s2}"))?;
    notes.push(format!("sigma2(P3) {s2:.12}"));

    // Strong convexity and separate convexity, 10^4 samples per map.
    let mut rng = aux_rng(13, 3);
    let euclid = MirrorMap::euclidean(4).unwrap();
    let ball = FeasibleSet::ball(Vector::zeros(4), 3.0).unwrap();
    let ent = MirrorMap::negative_entropy(4).unwrap();
    let simplex = FeasibleSet::simplex(4, 0.01).unwrap();
    for (m, set) in [(&euclid, &ball), (&ent, &simplex)] {
        for _ in 0..10_000 {
            let x = set.sample(&mut rng).unwrap();
            let y = set.sample(&mut rng).unwrap();
            let d = m.bregman(&x, &y).unwrap();
            let gap = m.norm(&(&x - &y));
            ensure(d >= 0.5 * gap * gap - 1e-9, || format!("strong convexity fails: D = {d}, ‖x−y‖ = {gap}"))?;
            let ys: Vec<Vector> = (0..3).map(|_| set.sample(&mut rng).unwrap()).collect();
            let raw: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1.0)).collect();
            let total: f64 = raw.iter().sum();
            let alpha: Vec<f64> = raw.iter().map(|a| a / total).collect();
            let mut mixed = Vector::zeros(x.len());
            let mut rhs = 0.0;
            for (a, yi) in alpha.iter().zip(&ys) {
                mixed += yi * *a;
                rhs += a * m.bregman(&x, yi).unwrap();
            }
            let lhs = m.bregman(&x, &mixed).unwrap();
            ensure(lhs <= rhs + 1e-9, || format!("separate convexity fails: {lhs} > {rhs}"))?;
        }
    }
    notes.push("convexity probes 2×10^4 ok".into());
    Ok(notes.join("; "))
}

fn read(dir: &std::path::Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap_or_default()
}

fn determinism() -> Result<String, String> {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut outputs: Vec<(std::path::PathBuf, RunOutput)> = Vec::new();
    for (tag, execution) in [("serial-a", "serial"), ("parallel", "parallel"), ("serial-b", "serial")] {
        let e = load("ncv-grid25", &["seed=7", &format!("execution=\"{execution}\"")]);
        let dir = root.path().join(tag);
        let out = cmd_run(&e, &dir).map_err(|e| e.to_string())?;
        outputs.push((dir, out));
    }
    let (base, _) = &outputs[0];
    for (dir, _) in &outputs[1..] {
        for name in [REGRET_CSV, TRAJECTORY_CSV, ESTIMATES_CSV] {
            let a = read(base, name);
            ensure(!a.is_empty() && a == read(dir, name), || format!("{name} differs in {}", dir.display()))?;
        }
        let ma = stable_manifest(&String::from_utf8_lossy(&read(base, MANIFEST)));
        let mb = stable_manifest(&String::from_utf8_lossy(&read(dir, MANIFEST)));
        ensure(ma == mb, || format!("manifest differs in {}", dir.display()))?;
    }
    ensure(outputs[0].1.record == outputs[1].1.record, || "in-memory records differ".into())?;

    // Engine-level check on a second configuration without the harness.
    let p = load("static-quadratic", &["seed=3", "rounds=300"]).prepare().map_err(|e| e.to_string())?;
    let mut par = p.run.clone();
    par.execution = Execution::Parallel;
    let a = run(p.run.clone()).map_err(|e| e.to_string())?;
    let b = run(par).map_err(|e| e.to_string())?;
    ensure(a == b, || "static-quadratic serial and parallel records differ".into())?;
    let oracle = p.run.oracle(a.trajectory.clone()).map_err(|e| e.to_string())?;
    let c = estimate_constants(&p.run, &oracle, Some(&a), None, 1.0).map_err(|e| e.to_string())?;
    ensure(c.hypotheses.all(), || "unexpected hypothesis flags".into())?;
    let regret = dynamic_regret(&a, &oracle).map_err(|e| e.to_string())?;
    Ok(format!(
        "regret/trajectory/estimates CSVs and manifest identical across serial, parallel, repeat; regret {:.6e}",
        regret.total()
    ))
}
