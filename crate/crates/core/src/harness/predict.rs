use std::collections::BTreeMap;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{ExperimentConfig, Method};
use super::replicate::Replicate;
use super::{stream, VERSION};
use crate::baselines::rnd_policy;
use crate::error::Result;
use crate::hawkes::{fit_base_rates, HistoryCarry, Process};
use crate::mdp::{FeasibleSet, StageState};
use crate::rng::derive_seed;
use crate::stats::{mean, spearman};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankRow {
    pub network: usize,
    pub method: Method,
    /// Rank correlation of realized objective against closeness to the method.
    pub spearman: f64,
    pub mean_mse: f64,
    pub trajectories: usize,
    pub status: String,
    pub config_hash: String,
    pub version: String,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct RankReport {
    pub rows: Vec<RankRow>,
    /// Mean correlation per method over replicates.
    pub mean_spearman: BTreeMap<Method, f64>,
}

/// One observed random-policy trajectory.
struct Observed {
    states: Vec<StageState>,
    feasible: Vec<FeasibleSet>,
    /// Exogenous mitigation intensity per stage inferred from the event logs.
    inferred: Vec<DVector<f64>>,
    objective: f64,
}

fn observe(cfg: &ExperimentConfig, rep: &Replicate, t: usize) -> Result<Observed> {
    let env = &rep.env;
    let model = env.model();
    let base = model.base_rate(Process::Mitigation);
    let path = |tag: u64, k: usize| derive_seed(cfg.seed, &[stream::PREDICT, rep.index as u64, t as u64, k as u64, tag]);
    let mut state = env.initial_state();
    let mut out = Observed { states: vec![], feasible: vec![], inferred: vec![], objective: 0.0 };
    let mut factor = 1.0;
    for k in 0..cfg.stages {
        let feasible = rep.feasible(k);
        let u = rnd_policy(&feasible, path(0, k));
        let tr = env.step(&state, &u, path(1, k))?;
        let carry = HistoryCarry::new(state.carry(Process::Mitigation).clone())?;
        let total = fit_base_rates(model, &tr.log_m, Process::Mitigation, &carry);
        let inferred = DVector::from_fn(env.n(), |i, _| {
            if feasible.mitigators()[i] {
                (total[i] - base[i]).max(0.0)
            } else {
                0.0
            }
        });
        out.objective += factor * tr.rewards.get(cfg.objective);
        factor *= cfg.discount;
        out.states.push(state);
        out.feasible.push(feasible);
        out.inferred.push(inferred);
        state = tr.next;
    }
    Ok(out)
}

/// Random-policy trajectories ranked by realized objective and by how closely
/// their inferred interventions follow each method's prescriptions.
pub fn run_predict_rank(cfg: &ExperimentConfig) -> Result<RankReport> {
    cfg.validate()?;
    let pc = &cfg.prediction;
    let hash = cfg.hash();
    let per_rep: Vec<Vec<RankRow>> = (0..pc.replicates)
        .into_par_iter()
        .map(|r| {
            let rep = Replicate::new(cfg, r)?;
            let trajectories: Vec<Observed> =
                (0..pc.trajectories).into_par_iter().map(|t| observe(cfg, &rep, t)).collect::<Result<_>>()?;
            let objective: Vec<f64> = trajectories.iter().map(|o| o.objective).collect();
            let weights = if cfg.methods.contains(&Method::Ltd) {
                Some(rep.train(cfg, cfg.objective, cfg.lstd_samples, cfg.seed)?.weights)
            } else {
                None
            };
            let mitigators: Vec<usize> = rep.net.mitigators.clone();
            let mut rows = Vec::new();
            for &method in &cfg.methods {
                let mse: Result<Vec<f64>> = rep.with_controller(cfg, cfg.objective, method, weights.as_ref(), |make| {
                    trajectories
                        .par_iter()
                        .enumerate()
                        .map(|(t, o)| {
                            let ctl = make(t);
                            let mut err = Vec::new();
                            for k in 0..o.states.len() {
                                let u = ctl.act(&o.states[k], &o.feasible[k])?;
                                err.extend(mitigators.iter().map(|&i| (u[i] - o.inferred[k][i]).powi(2)));
                            }
                            Ok(mean(&err))
                        })
                        .collect()
                });
                let (rho, mean_mse, status) = match mse {
                    Ok(m) => {
                        let closeness: Vec<f64> = m.iter().map(|x| -x).collect();
                        (spearman(&objective, &closeness), mean(&m), "ok".to_string())
                    }
                    Err(e) => (f64::NAN, f64::NAN, e.to_string()),
                };
                rows.push(RankRow {
                    network: r,
                    method,
                    spearman: rho,
                    mean_mse,
                    trajectories: trajectories.len(),
                    status,
                    config_hash: hash.clone(),
                    version: VERSION.into(),
                    seed: cfg.seed,
                });
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    let mut rows: Vec<RankRow> = per_rep.into_iter().flatten().collect();
    rows.sort_by_key(|r| (r.method, r.network));
    let mut mean_spearman = BTreeMap::new();
    for &m in &cfg.methods {
        let xs: Vec<f64> = rows.iter().filter(|r| r.method == m && r.spearman.is_finite()).map(|r| r.spearman).collect();
        mean_spearman.insert(m, mean(&xs));
    }
    Ok(RankReport { rows, mean_spearman })
}
