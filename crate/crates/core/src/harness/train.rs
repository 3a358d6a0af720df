use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Method};
use super::network::SyntheticNetwork;
use super::replicate::Replicate;
use super::VERSION;
use crate::error::{Error, Result};
use crate::lstd::PolicyFile;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRow {
    pub iteration: usize,
    pub weight_change: f64,
    pub config_hash: String,
    pub version: String,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub network: SyntheticNetwork,
    pub policy: PolicyFile,
    pub converged: bool,
    pub regularized: bool,
    pub iterations: Vec<IterationRow>,
}

/// Trains the linear policy on the first replicate network.
pub fn train_policy(cfg: &ExperimentConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let rep = Replicate::new(cfg, 0)?;
    let trained = rep.train(cfg, cfg.objective, cfg.lstd_samples, cfg.seed)?;
    let hash = cfg.hash();
    let iterations = trained
        .weight_changes
        .iter()
        .enumerate()
        .map(|(i, &d)| IterationRow {
            iteration: i + 1,
            weight_change: d,
            config_hash: hash.clone(),
            version: VERSION.into(),
            seed: cfg.seed,
        })
        .collect();
    let policy = PolicyFile {
        w: trained.weights.iter().copied().collect(),
        gamma: cfg.discount,
        kind: cfg.objective,
        feasible: rep.feasible(0),
        model_hash: rep.net.model.content_hash(),
    };
    Ok(TrainReport {
        network: rep.net,
        policy,
        converged: trained.converged,
        regularized: trained.regularized,
        iterations,
    })
}

/// One stage of one simulated trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub method: Method,
    pub run: usize,
    pub k: usize,
    pub u: Vec<f64>,
    #[serde(rename = "R_corr")]
    pub r_corr: f64,
    #[serde(rename = "R_diff")]
    pub r_diff: f64,
    pub z_m: Vec<f64>,
    pub z_f: Vec<f64>,
    pub config_hash: String,
    pub version: String,
    pub seed: u64,
}

/// Closed-loop trajectories of each requested method on the first replicate
/// network under common seeds. `weights` overrides the trained LTD policy.
pub fn simulate_methods(cfg: &ExperimentConfig, weights: Option<DVector<f64>>) -> Result<Vec<TrajectoryRecord>> {
    cfg.validate()?;
    let rep = Replicate::new(cfg, 0)?;
    let weights = match weights {
        Some(w) if w.len() != rep.env.feature_dim() => {
            return Err(Error::Config(format!("policy has {} weights, expected {}", w.len(), rep.env.feature_dim())));
        }
        Some(w) => Some(w),
        None if cfg.methods.contains(&Method::Ltd) => {
            Some(rep.train(cfg, cfg.objective, cfg.lstd_samples, cfg.seed)?.weights)
        }
        None => None,
    };
    let hash = cfg.hash();
    let mut out = Vec::new();
    for &method in &cfg.methods {
        for (run, rollout) in rep.evaluate(cfg, cfg.objective, method, weights.as_ref(), 1)?.into_iter().enumerate() {
            for rec in rollout?.records {
                out.push(TrajectoryRecord {
                    method,
                    run,
                    k: rec.k,
                    u: rec.u,
                    r_corr: rec.r_corr,
                    r_diff: rec.r_diff,
                    z_m: rec.z_m,
                    z_f: rec.z_f,
                    config_hash: hash.clone(),
                    version: VERSION.into(),
                    seed: cfg.seed,
                });
            }
        }
    }
    Ok(out)
}
