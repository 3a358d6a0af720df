use nalgebra::DVector;
use rayon::prelude::*;

use super::config::{ExperimentConfig, Method};
use super::network::{draw_budgets, generate_network, SyntheticNetwork};
use super::stream;
use crate::baselines::{
    CePlanner, CecController, CentralityCache, ClosenessController, ExposureController, OpenLoopController,
    RandomController,
};
use crate::error::Result;
use crate::lstd::{
    collect_samples, policy_iteration, run_mitigation, Controller, IterationOptions, LinearPolicy, Rollout,
    TrainedPolicy,
};
use crate::mdp::{Environment, FeasibleSet, RewardKind};
use crate::rng::derive_seed;

/// One generated network with its evaluation budgets.
pub(crate) struct Replicate {
    pub index: usize,
    pub net: SyntheticNetwork,
    pub env: Environment,
    pub budgets: Vec<f64>,
    cache: std::sync::OnceLock<CentralityCache>,
}

impl Replicate {
    pub fn new(cfg: &ExperimentConfig, index: usize) -> Result<Self> {
        let net = generate_network(cfg, derive_seed(cfg.seed, &[stream::NETWORK, index as u64]))?;
        let env = Environment::new(net.model.clone(), cfg.stage_length, cfg.memory)?;
        let budgets = draw_budgets(cfg, cfg.stages, derive_seed(cfg.seed, &[stream::BUDGET, index as u64]));
        Ok(Self { index, net, env, budgets, cache: std::sync::OnceLock::new() })
    }

    pub fn feasible(&self, stage: usize) -> FeasibleSet {
        self.net.feasible(self.budgets[stage.min(self.budgets.len() - 1)])
    }

    pub fn schedule(&self) -> Vec<FeasibleSet> {
        (0..self.budgets.len()).map(|k| self.feasible(k)).collect()
    }

    fn cache(&self) -> &CentralityCache {
        self.cache.get_or_init(|| CentralityCache::new(self.net.model.follows()))
    }

    /// Policy iteration on `samples` random-policy states. Sample budgets are
    /// drawn per trajectory from the same law as the evaluation budgets.
    pub fn train(&self, cfg: &ExperimentConfig, kind: RewardKind, samples: usize, seed: u64) -> Result<TrainedPolicy> {
        let r = self.index as u64;
        let feasible_at = |t: usize, k: usize| {
            let b = draw_budgets(cfg, cfg.stages, derive_seed(seed, &[stream::SAMPLE_BUDGET, r, t as u64]));
            self.net.feasible(b[k.min(b.len() - 1)])
        };
        let data = collect_samples(&self.env, samples, cfg.stages, &feasible_at, derive_seed(seed, &[stream::SAMPLES, r]))?;
        let opts = IterationOptions { max_iterations: cfg.max_policy_iterations, tolerance: cfg.policy_tolerance };
        policy_iteration(&self.env, kind, cfg.discount, &data, opts)
    }

    /// Evaluation seed of run `run`; shared by every method.
    pub fn eval_seed(&self, cfg: &ExperimentConfig, run: usize) -> u64 {
        derive_seed(cfg.seed, &[stream::EVAL, self.index as u64, run as u64])
    }

    /// Closed-loop rollouts of `method` over `runs` common seeds.
    pub fn evaluate(
        &self,
        cfg: &ExperimentConfig,
        kind: RewardKind,
        method: Method,
        weights: Option<&DVector<f64>>,
        runs: usize,
    ) -> Result<Vec<Result<Rollout>>> {
        self.with_controller(cfg, kind, method, weights, |make| {
            Ok((0..runs)
                .into_par_iter()
                .map(|run| {
                    let ctl = make(run);
                    let feasible_at = |k: usize| self.feasible(k);
                    run_mitigation(&self.env, ctl.as_ref(), &feasible_at, cfg.stages, cfg.discount, self.eval_seed(cfg, run))
                })
                .collect())
        })
    }

    /// Builds the controller of `method` and hands `f` a per-run factory.
    pub fn with_controller<'s, T>(
        &'s self,
        cfg: &ExperimentConfig,
        kind: RewardKind,
        method: Method,
        weights: Option<&DVector<f64>>,
        f: impl FnOnce(&(dyn Fn(usize) -> Box<dyn Controller + 's> + Sync)) -> Result<T>,
    ) -> Result<T> {
        let r = self.index as u64;
        match method {
            Method::Ltd => {
                let w = weights.ok_or_else(|| crate::Error::Config("LTD needs trained weights".into()))?;
                let policy = LinearPolicy { env: &self.env, weights: w.clone(), discount: cfg.discount, kind };
                f(&|_| Box::new(policy.clone()))
            }
            Method::Cec => {
                let mk = || CePlanner::new(&self.env, kind, cfg.plan_reward, cfg.discount, cfg.cec_horizon);
                mk()?;
                f(&|_| Box::new(CecController { planner: mk().expect("planner built above") }))
            }
            Method::Opl => {
                let planner = CePlanner::new(&self.env, kind, cfg.plan_reward, cfg.discount, cfg.stages)?;
                let ctl = OpenLoopController::new(&planner, &self.env.initial_state(), &self.schedule())?;
                f(&|_| Box::new(OpenLoopController { actions: ctl.actions.clone() }))
            }
            Method::Cls => {
                let cache = self.cache();
                f(&|_| Box::new(ClosenessController { cache }))
            }
            Method::Exp => {
                let cache = self.cache();
                let follows = self.net.model.follows();
                f(&|_| Box::new(ExposureController { cache, follows }))
            }
            Method::Rnd => f(&|run| {
                Box::new(RandomController { seed: derive_seed(cfg.seed, &[stream::RANDOM_POLICY, r, run as u64]) })
            }),
        }
    }
}
