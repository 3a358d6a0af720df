use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use hawkes_mitigation::harness::{self, ExperimentConfig, Method, SweepAxis};
use hawkes_mitigation::lstd::PolicyFile;
use hawkes_mitigation::mdp::RewardKind;
use nalgebra::DVector;

#[derive(Parser)]
#[command(name = "hawkes-mitigate", version, about = "Fake-news mitigation experiments on synthetic Hawkes networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON experiment config; omitted fields keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Comma-separated methods: ltd,cec,opl,cls,exp,rnd.
    #[arg(long)]
    methods: Option<String>,
    /// Reward to maximize: corr or diff.
    #[arg(long)]
    objective: Option<RewardKind>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic network and write it as JSON.
    GenNetwork(Common),
    /// Compare closed-form second moments with simulation.
    ValidateMoments(Common),
    /// Train the linear policy on the first replicate network.
    Train(Common),
    /// Compare methods over replicate networks.
    Benchmark {
        #[command(flatten)]
        common: Common,
        /// Sweep axis: n, campaign, sparsity or stage_length.
        #[arg(long)]
        sweep: Option<SweepAxis>,
    },
    /// Value-estimate error against the number of training samples.
    Convergence(Common),
    /// Rank correlation between realized objective and closeness to each method.
    PredictRank(Common),
    /// Simulate one trajectory per method and write it as JSON lines.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Policy written by `train`; trained afresh when omitted.
        #[arg(long)]
        policy: Option<PathBuf>,
    },
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(m) = &common.methods {
        cfg.methods = Method::parse_list(m)?;
    }
    if let Some(k) = common.objective {
        cfg.objective = k;
    }
    cfg.validate()?;
    std::fs::create_dir_all(&common.out).with_context(|| format!("creating {}", common.out.display()))?;
    Ok(cfg)
}

fn out(common: &Common, name: &str) -> PathBuf {
    common.out.join(name)
}

fn report(path: &Path) {
    println!("wrote {}", path.display());
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::GenNetwork(c) => {
            let cfg = load(&c)?;
            let net = harness::generate_network(&cfg, cfg.seed)?;
            let path = out(&c, "network.json");
            harness::write_json(&path, &net)?;
            println!(
                "n = {}, edges = {}, spectral radius = {:.4}",
                net.model.n(),
                net.model.excitation().iter().filter(|a| **a > 0.0).count(),
                net.model.spectral_radius()
            );
            report(&path);
        }
        Command::ValidateMoments(c) => {
            let cfg = load(&c)?;
            let rep = harness::validate_moments(&cfg)?;
            let path = out(&c, "moments.csv");
            harness::write_csv(&path, &rep.rows)?;
            println!(
                "{}/{} bins within {} standard errors ({:.1}%): {}",
                rep.within_band,
                rep.rows.len(),
                cfg.validation.band,
                100.0 * rep.fraction_within,
                if rep.passed { "PASS" } else { "FAIL" }
            );
            report(&path);
            return Ok(rep.passed);
        }
        Command::Train(c) => {
            let cfg = load(&c)?;
            let rep = harness::train_policy(&cfg)?;
            let policy = out(&c, "policy.json");
            let network = out(&c, "network.json");
            let log = out(&c, "training.csv");
            harness::write_json(&policy, &rep.policy)?;
            harness::write_json(&network, &rep.network)?;
            harness::write_csv(&log, &rep.iterations)?;
            println!(
                "{} iterations, converged = {}, regularized = {}",
                rep.iterations.len(),
                rep.converged,
                rep.regularized
            );
            for p in [&policy, &network, &log] {
                report(p);
            }
        }
        Command::Benchmark { common: c, sweep } => {
            let mut cfg = load(&c)?;
            if sweep.is_some() {
                cfg.sweep = sweep;
            }
            let rep = harness::run_benchmark(&cfg)?;
            let rows = out(&c, "benchmark.csv");
            let summary = out(&c, "benchmark_summary.csv");
            harness::write_csv(&rows, &rep.rows)?;
            harness::write_csv(&summary, &rep.summary)?;
            for s in &rep.summary {
                let value = s.sweep_value.map_or(String::new(), |v| format!("{}={v} ", s.sweep));
                let ratio = s.ratio_vs_rnd.map_or("-".into(), |r| format!("{r:.3}"));
                println!("{value}{:>4}: mean {:.5}  ratio {ratio}", s.method, s.mean_total);
            }
            report(&rows);
            report(&summary);
        }
        Command::Convergence(c) => {
            let cfg = load(&c)?;
            let rep = harness::run_convergence(&cfg)?;
            let path = out(&c, "convergence.csv");
            harness::write_csv(&path, &rep.rows)?;
            for (s, e) in &rep.mean_error {
                println!("S = {s:>6}: mean error {e:.5}");
            }
            println!("slope on ln S = {:.5} (p = {:.4}); tail change {:.5} vs noise {:.5}", rep.slope, rep.p_decreasing, rep.tail_change, rep.noise_floor);
            report(&path);
        }
        Command::PredictRank(c) => {
            let cfg = load(&c)?;
            let rep = harness::run_predict_rank(&cfg)?;
            let path = out(&c, "predict_rank.csv");
            harness::write_csv(&path, &rep.rows)?;
            for (m, r) in &rep.mean_spearman {
                println!("{m:>4}: mean rank correlation {r:.4}");
            }
            report(&path);
        }
        Command::Simulate { common: c, policy } => {
            let cfg = load(&c)?;
            let weights = match policy {
                Some(p) => {
                    let file: PolicyFile = harness::read_json(&p).with_context(|| format!("reading {}", p.display()))?;
                    if file.kind != cfg.objective {
                        bail!("policy was trained for `{}`, config asks for `{}`", file.kind, cfg.objective);
                    }
                    Some(DVector::from_vec(file.w))
                }
                None => None,
            };
            let recs = harness::simulate_methods(&cfg, weights)?;
            let path = out(&c, "trajectories.jsonl");
            harness::write_jsonl(&path, &recs)?;
            report(&path);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
