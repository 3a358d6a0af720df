//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! a summary; panics inside a check count as FAIL.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::Instant;

use hawkes_mitigation::baselines::rnd_policy;
use hawkes_mitigation::harness::{
    draw_budgets, generate_network, run_benchmark, run_convergence, validate_moments, ExperimentConfig, Method,
};
use hawkes_mitigation::hawkes::{
    fit_mle, log_likelihood, simulate_stage, spectral_radius, EventLog, HistoryCarry, MleOptions, NetworkModel, Process,
};
use hawkes_mitigation::lstd::{collect_samples, lstd_solve, policy_iteration, IterationOptions};
use hawkes_mitigation::mdp::{Environment, FeasibleSet, RewardKind, StageState};
use hawkes_mitigation::moments::{mean_intensity, response_grid, stage_mean_counts, stage_second_moment, MomentContext};
use hawkes_mitigation::optimize::{solve_concave_qp, solve_linear};
use hawkes_mitigation::rng::{derive_seed, rng_from};
use hawkes_mitigation::stats::{mean, paired_t_test_greater, std_err};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

const KINDS: [RewardKind; 2] = [RewardKind::Correlation, RewardKind::Difference];

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn random_model(seed: u64, n: usize, rho: f64, decay: f64) -> NetworkModel {
    let mut rng = rng_from(seed);
    let mut a = DMatrix::from_fn(n, n, |_, _| if rng.random_bool(0.7) { rng.random_range(0.0..0.5) } else { 0.0 });
    let r = spectral_radius(&a, decay);
    if r > 0.0 {
        a *= rho / r;
    }
    let mu_f = DVector::from_fn(n, |_, _| rng.random_range(0.2..1.0));
    let mu_m = DVector::from_fn(n, |_, _| rng.random_range(0.2..1.0));
    let b = DMatrix::from_fn(n, n, |i, j| if i == j || rng.random_bool(0.4) { 1.0 } else { 0.0 });
    NetworkModel::new(a, decay, mu_f, mu_m, b).unwrap()
}

fn open_set(n: usize, budget: f64, cap: f64) -> FeasibleSet {
    FeasibleSet::new(DVector::from_element(n, 1.0), budget, DVector::from_element(n, cap), vec![true; n]).unwrap()
}

fn second_moments() -> Outcome {
    let mut cfg = ExperimentConfig::default();
    cfg.validation.simulations = 1000;
    let start = Instant::now();
    let rep = validate_moments(&cfg).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let ok = rep.fraction_within >= 0.95 && secs < 300.0;
    outcome(ok, format!("{}/{} bins within 3 SE ({:.1}%)", rep.within_band, rep.rows.len(), 100.0 * rep.fraction_within))
}

fn poisson_limits() -> Outcome {
    let mu = DVector::from_vec(vec![0.4, 1.7, 0.05]);
    let model = NetworkModel::without_followers(DMatrix::zeros(3, 3), 1.3, mu.clone(), DVector::zeros(3)).unwrap();
    let zero = DVector::zeros(3);
    let mut worst: f64 = 0.0;
    for delta in [0.3, 1.0, 2.5] {
        let ctx = MomentContext::new(&model, delta).unwrap();
        for t in [0.0, 0.7, 3.0] {
            worst = worst.max((mean_intensity(&ctx, &mu, t).unwrap() - &mu).amax());
        }
        worst = worst.max((stage_mean_counts(&ctx, &mu, &zero) - &mu * delta).amax());
        let sm = stage_second_moment(&ctx, &mu, &zero).unwrap();
        let expect = &mu * mu.transpose() * (delta * delta) + DMatrix::from_diagonal(&(&mu * delta));
        worst = worst.max((sm.second_moment - expect).amax());
    }
    let carry = HistoryCarry::zeros(3);
    let log = simulate_stage(&model, Process::Fake, &carry, &zero, (0.0, 20.0), 3).unwrap();
    let counts = log.counts(3, Process::Fake);
    let expect: f64 = (0..3).map(|i| counts[i] as f64 * mu[i].ln() - mu[i] * 20.0).sum();
    let ll = log_likelihood(&model, &log, Process::Fake, &carry, &zero).unwrap();
    let ll_err = (ll - expect).abs() / expect.abs().max(1.0);
    outcome(worst < 1e-9 && ll_err < 1e-9, format!("max moment error {worst:.2e}, likelihood error {ll_err:.2e}"))
}

fn volterra_sup_error(ctx: &MomentContext, horizon: f64, steps: usize) -> f64 {
    let grid = response_grid(ctx, horizon, steps).unwrap();
    let h = horizon / steps as f64;
    grid.iter()
        .enumerate()
        .map(|(k, r)| (ctx.propagator(k as f64 * h) * ctx.coupling() - r).amax())
        .fold(0.0, f64::max)
}

fn response_backends() -> Outcome {
    let mut rng = rng_from(2024);
    let mut worst: f64 = 0.0;
    for inst in 0..20 {
        let n = rng.random_range(2..7);
        let rho = rng.random_range(0.2..0.9);
        let decay = rng.random_range(0.5..2.0);
        let ctx = MomentContext::new(&random_model(100 + inst, n, rho, decay), 1.0).unwrap();
        worst = worst.max(volterra_sup_error(&ctx, 2.0, 2000));
    }
    let ctx = MomentContext::new(&random_model(7, 4, 0.8, 1.0), 1.0).unwrap();
    let ratio = volterra_sup_error(&ctx, 2.0, 100) / volterra_sup_error(&ctx, 2.0, 200);
    let ok = worst < 1e-5 && (3.5..4.5).contains(&ratio);
    outcome(ok, format!("sup error {worst:.2e} at h=1e-3 over 20 instances, halving-h error ratio {ratio:.2}"))
}

fn warm_state(env: &Environment, seed: u64) -> StageState {
    let set = open_set(env.n(), 2.0, 1.0);
    let mut s = env.initial_state();
    for k in 0..2 {
        s = env.step(&s, &rnd_policy(&set, seed * 10 + k), seed * 100 + k).unwrap().next;
    }
    s
}

fn expected_rewards() -> Outcome {
    let mut worst: f64 = 0.0;
    for inst in 0..10 {
        let env = Environment::new(random_model(inst, 5, 0.5, 1.0), 1.0, 2).unwrap();
        let state = warm_state(&env, inst);
        let set = open_set(5, 2.0, 1.0);
        let u = rnd_policy(&set, 1000 + inst);
        let (mut corr, mut diff) = (Vec::new(), Vec::new());
        for s in 0..5000 {
            let tr = env.step(&state, &u, 7_000_000 + s).unwrap();
            corr.push(tr.rewards.correlation);
            diff.push(tr.rewards.difference);
        }
        for (kind, xs) in [(RewardKind::Correlation, &corr), (RewardKind::Difference, &diff)] {
            let th = env.expected_reward(kind, &state, &u, &set).unwrap();
            worst = worst.max((mean(xs) - th).abs() / std_err(xs));
        }
    }
    outcome(worst <= 3.0, format!("largest deviation {worst:.2} SE over 10 instances x 2 rewards"))
}

fn lstd_fixed_point() -> Outcome {
    let mut rng = rng_from(77);
    let mut residual: f64 = 0.0;
    for _ in 0..10 {
        let (s, d) = (rng.random_range(20..80), rng.random_range(2..8));
        let psi = DMatrix::from_fn(s, d, |_, _| rng.random_range(0.0..2.0));
        let psi_next = DMatrix::from_fn(s, d, |_, _| rng.random_range(0.0..2.0));
        let r = DVector::from_fn(s, |_, _| rng.random_range(-1.0..1.0));
        let w = lstd_solve(&psi, &psi_next, &r, 0.7).unwrap().weights;
        residual = residual.max(psi.tr_mul(&(&psi * &w - (&r + &psi_next * &w * 0.7))).amax());
    }
    let cfg = ExperimentConfig { n: 20, sparsity: 0.15, fake_sources: 4, mitigators: 4, ..Default::default() };
    let (mut terminated, mut worst_iters, mut last_change) = (true, 0, 0.0f64);
    for seed in 0..5 {
        let net = generate_network(&cfg, seed).unwrap();
        let env = Environment::new(net.model.clone(), 1.0, 2).unwrap();
        let feasible_at = |t: usize, k: usize| net.feasible(draw_budgets(&cfg, 10, derive_seed(seed, &[t as u64]))[k]);
        let samples = collect_samples(&env, 500, 10, &feasible_at, seed).unwrap();
        for kind in KINDS {
            let t = policy_iteration(&env, kind, 0.7, &samples, IterationOptions::default()).unwrap();
            let change = *t.weight_changes.last().unwrap();
            terminated &= t.converged && t.weight_changes.len() <= 50 && change < 0.1;
            worst_iters = worst_iters.max(t.weight_changes.len());
            last_change = last_change.max(change);
        }
    }
    outcome(
        residual < 1e-6 && terminated,
        format!("projected residual {residual:.2e}; n=20 iteration: at most {worst_iters} iterations, final change {last_change:.3}"),
    )
}

fn grid_max(f: &dyn Fn(&DVector<f64>) -> f64, set: &FeasibleSet, h: f64) -> f64 {
    let n = set.n();
    let steps: Vec<usize> = (0..n).map(|i| (set.cap()[i] / h).floor() as usize).collect();
    let mut idx = vec![0usize; n];
    let mut best = f64::NEG_INFINITY;
    loop {
        let u = DVector::from_fn(n, |i, _| idx[i] as f64 * h);
        if set.price().dot(&u) <= set.budget() + 1e-12 {
            best = best.max(f(&u));
        }
        let mut k = 0;
        while k < n {
            idx[k] += 1;
            if idx[k] <= steps[k] {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if k == n {
            return best;
        }
    }
}

fn optimizer_oracle() -> Outcome {
    let mut rng = rng_from(606);
    let h = 0.01;
    let (mut linear_ok, mut qp_ok, mut worst_qp) = (0, 0, f64::NEG_INFINITY);
    let instances = 200;
    for _ in 0..instances {
        let n = rng.random_range(1..=3);
        let price = DVector::from_fn(n, |_, _| rng.random_range(0.5..2.0));
        let cap = DVector::from_fn(n, |_, _| rng.random_range(0.0..1.0));
        let set = FeasibleSet::new(price, rng.random_range(0.0..2.0), cap, vec![true; n]).unwrap();
        let g = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let u = solve_linear(&g, &set);
        let grid = grid_max(&|v| g.dot(v), &set, h);
        let v = g.dot(&u);
        if set.contains(&u, 1e-9) && v >= grid - 1e-12 && v <= grid + 2.0 * h * g.amax() * n as f64 + 1e-12 {
            linear_ok += 1;
        }
        let l = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let q = -(l.transpose() * &l) - DMatrix::identity(n, n) * 0.05;
        let f = |x: &DVector<f64>| g.dot(x) + x.dot(&(&q * x));
        let sol = solve_concave_qp(&g, &q, &set);
        let gap = grid_max(&f, &set, h) - f(&sol.u);
        worst_qp = worst_qp.max(gap);
        if set.contains(&sol.u, 1e-9) && gap <= 1e-3 {
            qp_ok += 1;
        }
    }
    outcome(
        linear_ok == instances && qp_ok == instances,
        format!("linear {linear_ok}/{instances}, concave QP {qp_ok}/{instances} (largest grid excess {worst_qp:.2e})"),
    )
}

fn policy_ordering() -> Outcome {
    let mut passed = true;
    let mut parts = Vec::new();
    for kind in KINDS {
        let cfg = ExperimentConfig {
            n: 100,
            networks: 10,
            eval_runs: 50,
            objective: kind,
            methods: vec![Method::Ltd, Method::Cec, Method::Rnd],
            ..Default::default()
        };
        let rep = run_benchmark(&cfg).unwrap();
        let (ltd, cec, rnd) = (rep.totals(Method::Ltd), rep.totals(Method::Cec), rep.totals(Method::Rnd));
        let complete = ltd.len() == 500 && cec.len() == 500 && rnd.len() == 500;
        let values = |xs: &[((usize, usize), f64)]| xs.iter().map(|x| x.1).collect::<Vec<_>>();
        let (l, c, r) = (values(&ltd), values(&cec), values(&rnd));
        let p = paired_t_test_greater(&l, &r);
        let (ml, mc, mr) = (mean(&l), mean(&c), mean(&r));
        let ok = complete && mean(&l) > mean(&r) && p < 0.05 && ml >= mc;
        passed &= ok;
        parts.push(format!(
            "{kind}: LTD {ml:.4} CEC {mc:.4} RND {mr:.4}, ratio LTD/RND {:.3}, p {p:.1e}, LTD>=CEC {}",
            ml / mr,
            if ml >= mc { "yes" } else { "no" }
        ));
    }
    outcome(passed, parts.join("; "))
}

fn convergence_trend() -> Outcome {
    let mut passed = true;
    let mut parts = Vec::new();
    for kind in KINDS {
        let cfg = ExperimentConfig { n: 50, objective: kind, ..Default::default() };
        let rep = run_convergence(&cfg).unwrap();
        let ok = rep.trend_significant(0.05) && rep.plateau();
        passed &= ok;
        parts.push(format!(
            "{kind}: slope {:.4} p {:.1e}, tail change {:.4} vs noise {:.4}",
            rep.slope, rep.p_decreasing, rep.tail_change, rep.noise_floor
        ));
    }
    outcome(passed, parts.join("; "))
}

fn mle_recovery() -> Outcome {
    let model = random_model(21, 5, 0.5, 1.0);
    let zero = DVector::zeros(5);
    let carry = HistoryCarry::zeros(5);
    let logs: Vec<EventLog> = (0..500)
        .map(|w| simulate_stage(&model, Process::Fake, &carry, &zero, (0.0, 10.0), 21_000_000 + w).unwrap())
        .collect();
    let fit = fit_mle(&logs, 5, 1.0, MleOptions::default()).unwrap();
    let err = fit.relative_error(&model, Process::Fake);
    outcome(fit.converged && err < 0.2, format!("relative error {:.1}% on 500 windows", 100.0 * err))
}

fn run_cli(args: &[&str], config: &Path, out: &Path) -> bool {
    Command::new(env!("CARGO_BIN_EXE_hawkes-mitigate"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--seed")
        .arg("11")
        .arg("--out")
        .arg(out)
        .stdout(Stdio::null())
        .status()
        .map(|s| s.code() == Some(0) || (args[0] == "validate-moments" && s.code() == Some(1)))
        .unwrap_or(false)
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("config.json");
    let small = r#"{
  "n": 20, "sparsity": 0.15, "fake_sources": 4, "mitigators": 4, "stages": 4,
  "networks": 2, "eval_runs": 3, "lstd_samples": 40, "max_policy_iterations": 5,
  "validation": { "simulations": 20 },
  "convergence": { "sample_counts": [5, 20], "rollouts": 5, "replicates": 2 },
  "prediction": { "trajectories": 4, "replicates": 2 }
}"#;
    std::fs::write(&config, small).unwrap();
    let commands: [&[&str]; 7] = [
        &["gen-network"],
        &["validate-moments"],
        &["train"],
        &["benchmark"],
        &["convergence"],
        &["predict-rank"],
        &["simulate"],
    ];
    let mut failures = Vec::new();
    for cmd in commands {
        let (a, b) = (tmp.path().join(format!("{}-a", cmd[0])), tmp.path().join(format!("{}-b", cmd[0])));
        let ran = run_cli(cmd, &config, &a) && run_cli(cmd, &config, &b);
        if !ran {
            failures.push(format!("{} did not run", cmd[0]));
            continue;
        }
        let (fa, fb) = (dir_bytes(&a), dir_bytes(&b));
        if fa.is_empty() || fa != fb {
            failures.push(format!("{} output differs", cmd[0]));
        }
    }
    let detail = if failures.is_empty() {
        format!("{} subcommands byte-identical across two runs", commands.len())
    } else {
        failures.join(", ")
    };
    outcome(failures.is_empty(), detail)
}

fn main() {
    let checks: [(&str, fn() -> Outcome); 10] = [
        ("second-order statistics", second_moments),
        ("poisson limits", poisson_limits),
        ("response backends", response_backends),
        ("expected-reward oracles", expected_rewards),
        ("lstd fixed point", lstd_fixed_point),
        ("optimizer oracle", optimizer_oracle),
        ("policy ordering", policy_ordering),
        ("convergence trend", convergence_trend),
        ("mle recovery", mle_recovery),
        ("determinism", determinism),
    ];
    let mut passed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            outcome(false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        passed += usize::from(result.passed);
        println!(
            "{} [{}] {name}: {} ({:.1}s)",
            if result.passed { "PASS" } else { "FAIL" },
            i + 1,
            result.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {passed}/{} criteria passed", checks.len());
}
