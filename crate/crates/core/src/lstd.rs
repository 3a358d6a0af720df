//! LSTD(0) policy evaluation with model-based one-step improvement, and the
//! closed-loop mitigation rollout.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::rnd_policy;
use crate::error::{domain, Error, Result};
use crate::mdp::{features, Environment, FeasibleSet, RewardKind, RewardPair, StageRecord, StageState};
use crate::optimize::{solve, Solution};
use crate::rng::derive_seed;

/// Anything that maps an observed state to an intervention.
pub trait Controller: Sync {
    fn act(&self, state: &StageState, feasible: &FeasibleSet) -> Result<DVector<f64>>;
}

/// One sampled state together with the feasible set in force at its stage.
#[derive(Debug, Clone)]
pub struct Sample {
    pub trajectory: usize,
    pub state: StageState,
    pub feasible: FeasibleSet,
}

/// Rolls random-policy trajectories of `horizon` stages from the zero state
/// and keeps the first `count` visited states in (trajectory, stage) order.
pub fn collect_samples(
    env: &Environment,
    count: usize,
    horizon: usize,
    feasible_at: &(dyn Fn(usize, usize) -> FeasibleSet + Sync),
    seed: u64,
) -> Result<Vec<Sample>> {
    if count == 0 || horizon == 0 {
        return domain("need at least one sample and one stage");
    }
    let trajectories = count.div_ceil(horizon);
    let per_traj: Vec<Vec<Sample>> = (0..trajectories)
        .into_par_iter()
        .map(|r| {
            let mut out = Vec::with_capacity(horizon);
            let mut state = env.initial_state();
            let take = horizon.min(count - r * horizon);
            for k in 0..take {
                let feasible = feasible_at(r, k);
                out.push(Sample { trajectory: r, state: state.clone(), feasible: feasible.clone() });
                if k + 1 < take {
                    let u = rnd_policy(&feasible, derive_seed(seed, &[r as u64, k as u64, 0]));
                    state = env.step(&state, &u, derive_seed(seed, &[r as u64, k as u64, 1]))?.next;
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(per_traj.into_iter().flatten().collect())
}

#[derive(Debug, Clone)]
pub struct LstdSolution {
    pub weights: DVector<f64>,
    /// Whether the ridge fallback was needed.
    pub regularized: bool,
}

const MAX_CONDITION: f64 = 1e12;
const RIDGE: f64 = 1e-8;

/// Solves `Ψᵀ(Ψ − γΨ')w = Ψᵀr`. When the system is rank deficient or its
/// condition number exceeds `1e12`, a ridge of `1e-8` times the mean absolute
/// diagonal is added.
pub fn lstd_solve(psi: &DMatrix<f64>, psi_next: &DMatrix<f64>, rewards: &DVector<f64>, discount: f64) -> Result<LstdSolution> {
    let (s, d) = psi.shape();
    if psi_next.shape() != (s, d) || rewards.len() != s {
        return domain("sample matrices have inconsistent shapes");
    }
    let a = psi.tr_mul(&(psi - psi_next * discount));
    let b = psi.tr_mul(rewards);
    let mut regularized = s < d;
    if !regularized {
        match a.clone().lu().try_inverse() {
            Some(inv) => {
                let cond = crate::linalg::norm1(&a) * crate::linalg::norm1(&inv);
                regularized = !(cond <= MAX_CONDITION);
            }
            None => regularized = true,
        }
    }
    let system = if regularized {
        let scale = a.diagonal().iter().map(|x| x.abs()).sum::<f64>() / d as f64;
        let ridge = RIDGE * if scale > 0.0 { scale } else { 1.0 };
        log::debug!("LSTD system ill-conditioned, adding ridge {ridge:.3e}");
        &a + DMatrix::identity(d, d) * ridge
    } else {
        a
    };
    let weights = system.lu().solve(&b).ok_or_else(|| Error::Singular("LSTD system".into()))?;
    if weights.iter().any(|x| !x.is_finite()) {
        return Err(Error::Singular("LSTD system".into()));
    }
    Ok(LstdSolution { weights, regularized })
}

/// Linear value function `V(x) = ψ(x)ᵀw` with greedy one-step improvement.
#[derive(Debug, Clone)]
pub struct LinearPolicy<'a> {
    pub env: &'a Environment,
    pub weights: DVector<f64>,
    pub discount: f64,
    pub kind: RewardKind,
}

impl LinearPolicy<'_> {
    pub fn value(&self, state: &StageState) -> f64 {
        features(state).dot(&self.weights)
    }

    /// `E[V(x')]` under intervention `u`.
    pub fn expected_next_value(&self, state: &StageState, u: &DVector<f64>) -> f64 {
        self.env.expected_next_features(state, u).dot(&self.weights)
    }

    /// `argmax_u E[R(x, u)] + γ E[V(x')]` over the feasible set.
    pub fn improve(&self, state: &StageState, feasible: &FeasibleSet) -> Solution {
        policy_improvement(self.env, self.kind, self.discount, &self.weights, state, feasible)
    }
}

impl Controller for LinearPolicy<'_> {
    fn act(&self, state: &StageState, feasible: &FeasibleSet) -> Result<DVector<f64>> {
        Ok(self.improve(state, feasible).u)
    }
}

pub fn policy_improvement(
    env: &Environment,
    kind: RewardKind,
    discount: f64,
    weights: &DVector<f64>,
    state: &StageState,
    feasible: &FeasibleSet,
) -> Solution {
    let objective = env
        .reward_objective(kind, state)
        .plus(&env.next_value_objective(state, weights).scaled(discount));
    solve(&objective, feasible)
}

/// LSTD evaluation of the greedy policy for `weights` on the sample set.
pub fn policy_evaluation(
    env: &Environment,
    kind: RewardKind,
    discount: f64,
    weights: &DVector<f64>,
    samples: &[Sample],
) -> Result<LstdSolution> {
    let d = env.feature_dim();
    let rows: Vec<(DVector<f64>, DVector<f64>, f64)> = samples
        .par_iter()
        .map(|s| {
            let sol = policy_improvement(env, kind, discount, weights, &s.state, &s.feasible);
            let reward = env.reward_objective(kind, &s.state).value(&sol.u);
            (features(&s.state), env.expected_next_features(&s.state, &sol.u), reward)
        })
        .collect();
    let mut psi = DMatrix::zeros(rows.len(), d);
    let mut psi_next = DMatrix::zeros(rows.len(), d);
    let mut r = DVector::zeros(rows.len());
    for (i, (p, q, reward)) in rows.into_iter().enumerate() {
        psi.set_row(i, &p.transpose());
        psi_next.set_row(i, &q.transpose());
        r[i] = reward;
    }
    lstd_solve(&psi, &psi_next, &r, discount)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct IterationOptions {
    pub max_iterations: usize,
    /// Stop once `‖Δw‖` drops below this.
    pub tolerance: f64,
}

impl Default for IterationOptions {
    fn default() -> Self {
        Self { max_iterations: 50, tolerance: 0.1 }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedPolicy {
    pub weights: DVector<f64>,
    pub converged: bool,
    /// `‖Δw‖` after each iteration.
    pub weight_changes: Vec<f64>,
    pub regularized: bool,
}

/// Alternates LSTD evaluation and greedy improvement starting from `w = 0`.
pub fn policy_iteration(
    env: &Environment,
    kind: RewardKind,
    discount: f64,
    samples: &[Sample],
    opts: IterationOptions,
) -> Result<TrainedPolicy> {
    if !(discount > 0.0 && discount <= 1.0) {
        return domain("discount must lie in (0, 1]");
    }
    let mut weights = DVector::zeros(env.feature_dim());
    let mut changes = Vec::new();
    let mut regularized = false;
    for it in 0..opts.max_iterations {
        let sol = policy_evaluation(env, kind, discount, &weights, samples)?;
        regularized |= sol.regularized;
        let change = (&sol.weights - &weights).norm();
        log::info!("policy iteration {it}: |dw| = {change:.4e}");
        changes.push(change);
        weights = sol.weights;
        if change < opts.tolerance {
            return Ok(TrainedPolicy { weights, converged: true, weight_changes: changes, regularized });
        }
    }
    log::warn!("policy iteration stopped at the iteration cap");
    Ok(TrainedPolicy { weights, converged: false, weight_changes: changes, regularized })
}

/// Serialized form of a trained policy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyFile {
    pub w: Vec<f64>,
    pub gamma: f64,
    pub kind: RewardKind,
    pub feasible: FeasibleSet,
    pub model_hash: String,
}

#[derive(Debug, Clone)]
pub struct Rollout {
    pub records: Vec<StageRecord>,
    /// Discounted totals `Σ_k γ^k R^k` of both reward kinds.
    pub total: RewardPair,
}

/// Closed-loop rollout: observe, act, simulate, for `stages` stages from the
/// zero state. Stage `k` uses simulator seed `derive_seed(seed, [k])`, so all
/// controllers run against the same random streams.
pub fn run_mitigation(
    env: &Environment,
    controller: &dyn Controller,
    feasible_at: &dyn Fn(usize) -> FeasibleSet,
    stages: usize,
    discount: f64,
    seed: u64,
) -> Result<Rollout> {
    let mut state = env.initial_state();
    let mut records = Vec::with_capacity(stages);
    let mut total = RewardPair { correlation: 0.0, difference: 0.0 };
    let mut factor = 1.0;
    for k in 0..stages {
        let feasible = feasible_at(k);
        let u = controller.act(&state, &feasible)?;
        if !feasible.contains(&u, 1e-9) {
            return domain(format!("controller returned an infeasible intervention at stage {k}"));
        }
        let tr = env.step(&state, &u, derive_seed(seed, &[k as u64]))?;
        total.correlation += factor * tr.rewards.correlation;
        total.difference += factor * tr.rewards.difference;
        factor *= discount;
        let n = env.n();
        records.push(StageRecord {
            k,
            u: u.iter().copied().collect(),
            r_corr: tr.rewards.correlation,
            r_diff: tr.rewards.difference,
            z_m: tr.next.counts(crate::hawkes::Process::Mitigation).rows(0, n).iter().copied().collect(),
            z_f: tr.next.counts(crate::hawkes::Process::Fake).rows(0, n).iter().copied().collect(),
        });
        state = tr.next;
    }
    Ok(Rollout { records, total })
}
