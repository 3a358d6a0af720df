use rayon::prelude::*;
use serde::Serialize;

use super::config::{ExperimentConfig, Method};
use super::replicate::Replicate;
use super::{stream, VERSION};
use crate::error::Result;
use crate::mdp::features;
use crate::rng::derive_seed;
use crate::stats::{mean, slope_test_decreasing, std_dev};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub network: usize,
    #[serde(rename = "S")]
    pub samples: usize,
    /// Learned value of the empty-history state.
    pub estimate: f64,
    /// Mean discounted return of the learned policy from that state.
    pub emp_mean: f64,
    pub emp_sd: f64,
    pub error: f64,
    pub iterations: usize,
    pub converged: bool,
    pub status: String,
    pub config_hash: String,
    pub version: String,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    /// Mean error per sample count, in increasing `S`.
    pub mean_error: Vec<(usize, f64)>,
    /// Least-squares slope of error on `ln S` and its one-sided p-value for a decrease.
    pub slope: f64,
    pub p_decreasing: f64,
    /// Mean error change between the two largest sample counts.
    pub tail_change: f64,
    /// Twice the typical standard error of the empirical value.
    pub noise_floor: f64,
}

impl ConvergenceReport {
    pub fn trend_significant(&self, level: f64) -> bool {
        self.slope < 0.0 && self.p_decreasing < level
    }

    pub fn plateau(&self) -> bool {
        self.tail_change.abs() <= self.noise_floor
    }
}

/// Learned value at the empty-history state against the empirical return of
/// the learned policy, for each sample count. Sample sets are nested: a
/// larger `S` extends the trajectories used by a smaller one.
pub fn run_convergence(cfg: &ExperimentConfig) -> Result<ConvergenceReport> {
    cfg.validate()?;
    let conv = &cfg.convergence;
    let hash = cfg.hash();
    let mut counts = conv.sample_counts.clone();
    counts.sort_unstable();
    counts.dedup();
    let reps: Vec<Replicate> = (0..conv.replicates).map(|r| Replicate::new(cfg, r)).collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..reps.len()).flat_map(|r| counts.iter().map(move |&s| (r, s))).collect();
    let train_seed = derive_seed(cfg.seed, &[stream::CONVERGENCE]);
    let mut rows: Vec<ConvergenceRow> = jobs
        .into_par_iter()
        .map(|(r, s)| {
            let rep = &reps[r];
            let mut row = ConvergenceRow {
                network: r,
                samples: s,
                estimate: f64::NAN,
                emp_mean: f64::NAN,
                emp_sd: f64::NAN,
                error: f64::NAN,
                iterations: 0,
                converged: false,
                status: "ok".into(),
                config_hash: hash.clone(),
                version: VERSION.into(),
                seed: cfg.seed,
            };
            let outcome = rep.train(cfg, cfg.objective, s, train_seed).and_then(|t| {
                let est = features(&rep.env.initial_state()).dot(&t.weights);
                let runs = rep.evaluate(cfg, cfg.objective, Method::Ltd, Some(&t.weights), conv.rollouts)?;
                let totals: Vec<f64> =
                    runs.into_iter().map(|r| r.map(|ro| ro.total.get(cfg.objective))).collect::<Result<_>>()?;
                Ok((t, est, totals))
            });
            match outcome {
                Ok((t, est, totals)) => {
                    row.estimate = est;
                    row.emp_mean = mean(&totals);
                    row.emp_sd = std_dev(&totals);
                    row.error = (est - row.emp_mean).abs();
                    row.iterations = t.weight_changes.len();
                    row.converged = t.converged;
                }
                Err(e) => {
                    log::warn!("network {r}, S = {s}: {e}");
                    row.status = e.to_string();
                }
            }
            row
        })
        .collect();
    rows.sort_by_key(|r| (r.samples, r.network));

    let ok: Vec<&ConvergenceRow> = rows.iter().filter(|r| r.error.is_finite()).collect();
    let mean_error: Vec<(usize, f64)> = counts
        .iter()
        .map(|&s| (s, mean(&ok.iter().filter(|r| r.samples == s).map(|r| r.error).collect::<Vec<_>>())))
        .collect();
    let (slope, p_decreasing) = if ok.len() >= 3 {
        let x: Vec<f64> = ok.iter().map(|r| (r.samples as f64).ln()).collect();
        let y: Vec<f64> = ok.iter().map(|r| r.error).collect();
        slope_test_decreasing(&x, &y)
    } else {
        (f64::NAN, f64::NAN)
    };
    let (tail_change, noise_floor) = if counts.len() >= 2 {
        let (a, b) = (counts[counts.len() - 2], counts[counts.len() - 1]);
        let errs = |s: usize| mean_error.iter().find(|(c, _)| *c == s).map_or(f64::NAN, |(_, e)| *e);
        let se: Vec<f64> = ok
            .iter()
            .filter(|r| r.samples == a || r.samples == b)
            .map(|r| r.emp_sd / (conv.rollouts as f64).sqrt())
            .collect();
        (errs(b) - errs(a), 2.0 * mean(&se))
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(ConvergenceReport { rows, mean_error, slope, p_decreasing, tail_change, noise_floor })
}
