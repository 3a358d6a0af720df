//! Comparison allocators: random, closeness, exposure-weighted closeness,
//! open-loop planning and certainty-equivalent lookahead.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::hawkes::Process;
use crate::lstd::Controller;
use crate::mdp::{Environment, FeasibleSet, RewardKind, StageState};
use crate::optimize::{project_feasible, solve, Objective};
use crate::rng::rng_from;

/// Uniform draw on `[0, α]` per mitigator, projected onto the budget.
pub fn rnd_policy(feasible: &FeasibleSet, seed: u64) -> DVector<f64> {
    let mut rng = rng_from(seed);
    let mut u = DVector::zeros(feasible.n());
    for i in feasible.free() {
        u[i] = rng.random::<f64>() * feasible.cap()[i];
    }
    project_feasible(&u, feasible)
}

/// Shortest-path distances along influence edges (`i → j` when `j` follows
/// `i`) and closeness centrality. Unreachable pairs get distance `n`.
#[derive(Debug, Clone)]
pub struct CentralityCache {
    distance: DMatrix<f64>,
    closeness: DVector<f64>,
}

impl CentralityCache {
    pub fn new(follows: &DMatrix<f64>) -> Self {
        let n = follows.nrows();
        let followers: Vec<Vec<usize>> = (0..n).map(|i| (0..n).filter(|&j| j != i && follows[(j, i)] != 0.0).collect()).collect();
        let mut distance = DMatrix::from_element(n, n, n as f64);
        for src in 0..n {
            distance[(src, src)] = 0.0;
            let mut queue = VecDeque::from([src]);
            let mut seen = vec![false; n];
            seen[src] = true;
            while let Some(i) = queue.pop_front() {
                for &j in &followers[i] {
                    if !seen[j] {
                        seen[j] = true;
                        distance[(src, j)] = distance[(src, i)] + 1.0;
                        queue.push_back(j);
                    }
                }
            }
        }
        let closeness = DVector::from_fn(n, |i, _| {
            let total: f64 = distance.row(i).sum();
            if total > 0.0 { 1.0 / total } else { 0.0 }
        });
        Self { distance, closeness }
    }

    pub fn distance(&self) -> &DMatrix<f64> {
        &self.distance
    }

    pub fn closeness(&self) -> &DVector<f64> {
        &self.closeness
    }
}

/// `u_i = min(α_i, s·score_i)` on mitigators with `s` chosen so the spend is
/// `min(C, Σ c_i α_i)` over the positively scored mitigators.
pub fn water_fill(scores: &DVector<f64>, feasible: &FeasibleSet) -> DVector<f64> {
    let idx: Vec<usize> = feasible.free().filter(|&i| scores[i] > 0.0 && feasible.cap()[i] > 0.0).collect();
    let mut u = DVector::zeros(feasible.n());
    if idx.is_empty() {
        return u;
    }
    let price = feasible.price();
    let cap = feasible.cap();
    let spend = |s: f64| idx.iter().map(|&i| price[i] * cap[i].min(s * scores[i])).sum::<f64>();
    let full: f64 = idx.iter().map(|&i| price[i] * cap[i]).sum();
    let target = feasible.budget().min(full);
    let s = if target >= full {
        idx.iter().map(|&i| cap[i] / scores[i]).fold(0.0, f64::max)
    } else {
        let (mut lo, mut hi) = (0.0, 1.0);
        while spend(hi) < target {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if spend(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    for &i in &idx {
        u[i] = cap[i].min(s * scores[i]);
    }
    u
}

pub fn cls_policy(cache: &CentralityCache, feasible: &FeasibleSet) -> DVector<f64> {
    water_fill(cache.closeness(), feasible)
}

/// Closeness weighted by recent fake-news exposure:
/// `score_i = Σ_j F_j / dis(i, j)` with `F = B · (fake counts over the stored
/// intervals)`. A node's own exposure enters with distance one. Falls back to
/// closeness when no exposure has been observed.
pub fn exp_policy(cache: &CentralityCache, follows: &DMatrix<f64>, state: &StageState, feasible: &FeasibleSet) -> DVector<f64> {
    let exposure = follows * state.recent_total(Process::Fake);
    if exposure.iter().all(|x| *x <= 0.0) {
        return cls_policy(cache, feasible);
    }
    let n = feasible.n();
    let d = cache.distance();
    let scores = DVector::from_fn(n, |i, _| (0..n).map(|j| exposure[j] / d[(i, j)].max(1.0)).sum());
    water_fill(&scores, feasible)
}

/// How the planner scores a stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanReward {
    /// Expected reward including the count-variance terms.
    Exact,
    /// Reward evaluated at the expected counts.
    CertaintyEquivalent,
}

#[derive(Debug, Clone)]
pub struct Plan {
    pub actions: Vec<DVector<f64>>,
    pub value: f64,
    pub converged: bool,
}

/// Open-loop planner over the mean dynamics. Expected mitigation counts at
/// stage `j` move with the intervention at stage `k ≤ j` through the lag
/// operator `L_{j−k}` (`L_0 = Γ`, `L_d = Υ e^{CΔ(d−1)} Υ A'`), and the
/// carries through `Y_d = e^{CΔ(d−1)} Υ A'`.
#[derive(Debug)]
pub struct CePlanner<'a> {
    env: &'a Environment,
    kind: RewardKind,
    mode: PlanReward,
    discount: f64,
    count_lags: Vec<DMatrix<f64>>,
    carry_lags: Vec<DMatrix<f64>>,
    curvature: Vec<DMatrix<f64>>,
}

const PLAN_TOL: f64 = 1e-6;
const PLAN_MAX_SWEEPS: usize = 200;

impl<'a> CePlanner<'a> {
    pub fn new(env: &'a Environment, kind: RewardKind, mode: PlanReward, discount: f64, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return domain("planning horizon must be at least one stage");
        }
        let ctx = env.moments();
        let upsilon = ctx.carry_to_counts();
        let injected = upsilon * ctx.coupling();
        let mut count_lags = vec![ctx.rate_to_counts().clone()];
        let mut carry_lags = vec![DMatrix::zeros(env.n(), env.n())];
        let mut carry = injected;
        for _ in 1..horizon {
            count_lags.push(upsilon * &carry);
            carry_lags.push(carry.clone());
            carry = ctx.stage_propagator() * carry;
        }
        let curvature = match kind {
            RewardKind::Correlation => Vec::new(),
            RewardKind::Difference => count_lags.iter().map(|l| l.transpose() * env.weight() * l).collect(),
        };
        Ok(Self { env, kind, mode, discount, count_lags, carry_lags, curvature })
    }

    pub fn horizon(&self) -> usize {
        self.count_lags.len()
    }

    /// Expected counts and carries along the plan with all interventions zero.
    fn baseline(&self, start: &StageState, stages: usize) -> Vec<StageState> {
        let zero = DVector::zeros(self.env.n());
        let mut out = vec![start.clone()];
        for _ in 1..stages {
            let next = self.env.expected_next_state(out.last().unwrap(), &zero);
            out.push(next);
        }
        out
    }

    /// Expected mitigation counts at each stage for the given plan.
    fn counts(&self, base: &[StageState], actions: &[DVector<f64>], skip: Option<usize>) -> Vec<DVector<f64>> {
        let zero = DVector::zeros(self.env.n());
        (0..actions.len())
            .map(|j| {
                let mut z = self.env.expected_counts(&base[j], Process::Mitigation, &zero);
                for (k, u) in actions.iter().enumerate().take(j + 1) {
                    if Some(k) != skip {
                        z += &self.count_lags[j - k] * u;
                    }
                }
                z
            })
            .collect()
    }

    fn fake_counts(&self, base: &[StageState]) -> Vec<DVector<f64>> {
        let zero = DVector::zeros(self.env.n());
        base.iter().map(|s| self.env.expected_counts(s, Process::Fake, &zero)).collect()
    }

    /// Discounted planning objective of a full plan.
    pub fn objective(&self, start: &StageState, actions: &[DVector<f64>]) -> f64 {
        let base = self.baseline(start, actions.len());
        let zm = self.counts(&base, actions, None);
        let zf = self.fake_counts(&base);
        let n = self.env.n() as f64;
        let w = self.env.weight();
        let mut total = 0.0;
        let mut factor = 1.0;
        for j in 0..actions.len() {
            let r = match self.kind {
                RewardKind::Correlation => zm[j].dot(&(w * &zf[j])) / n,
                RewardKind::Difference => {
                    let d = &zm[j] - &zf[j];
                    let mut r = -d.dot(&(w * &d)) / n;
                    if self.mode == PlanReward::Exact {
                        let var = self.env.count_variance();
                        let carry = self.carry_with(&base, actions, j);
                        let mu_m = self.env.model().base_rate(Process::Mitigation) + &actions[j];
                        r -= var.trace(&mu_m, &carry) / n;
                        r -= var.trace(self.env.model().base_rate(Process::Fake), base[j].carry(Process::Fake)) / n;
                    }
                    r
                }
            };
            total += factor * r;
            factor *= self.discount;
        }
        total
    }

    fn carry_with(&self, base: &[StageState], actions: &[DVector<f64>], j: usize) -> DVector<f64> {
        let mut y = base[j].carry(Process::Mitigation).clone();
        for (k, u) in actions.iter().enumerate().take(j) {
            y += &self.carry_lags[j - k] * u;
        }
        y
    }

    /// Block-coordinate ascent over the per-stage interventions.
    pub fn plan(&self, start: &StageState, feasible: &[FeasibleSet]) -> Result<Plan> {
        let stages = feasible.len();
        if stages == 0 || stages > self.horizon() {
            return domain(format!("plan length must be in 1..={}", self.horizon()));
        }
        let n = self.env.n();
        let nf = n as f64;
        let w = self.env.weight();
        let base = self.baseline(start, stages);
        let zf = self.fake_counts(&base);
        let var = match (self.kind, self.mode) {
            (RewardKind::Difference, PlanReward::Exact) => Some(self.env.count_variance()),
            _ => None,
        };
        let mut actions = vec![DVector::zeros(n); stages];
        let mut value = self.objective(start, &actions);
        let mut converged = false;
        for _ in 0..PLAN_MAX_SWEEPS {
            for k in 0..stages {
                let zm = self.counts(&base, &actions, Some(k));
                let mut linear = DVector::zeros(n);
                let mut quadratic = DMatrix::zeros(n, n);
                let mut factor = self.discount.powi(k as i32);
                for j in k..stages {
                    let lag = &self.count_lags[j - k];
                    match self.kind {
                        RewardKind::Correlation => linear += lag.tr_mul(&(w * &zf[j])) * (factor / nf),
                        RewardKind::Difference => {
                            linear -= lag.tr_mul(&(w * (&zm[j] - &zf[j]))) * (2.0 * factor / nf);
                            quadratic -= &self.curvature[j - k] * (factor / nf);
                            if let Some(var) = &var {
                                if j == k {
                                    linear -= &var.rate * (factor / nf);
                                } else {
                                    linear -= self.carry_lags[j - k].tr_mul(&var.carry) * (factor / nf);
                                }
                            }
                        }
                    }
                    factor *= self.discount;
                }
                let quadratic = (self.kind == RewardKind::Difference).then_some(quadratic);
                actions[k] = solve(&Objective { constant: 0.0, linear, quadratic }, &feasible[k]).u;
            }
            let next = self.objective(start, &actions);
            let gain = next - value;
            value = next;
            if gain < PLAN_TOL * value.abs().max(1.0) {
                converged = true;
                break;
            }
        }
        if !converged {
            log::warn!("certainty-equivalent plan hit the sweep cap");
        }
        Ok(Plan { actions, value, converged })
    }
}

pub struct RandomController {
    pub seed: u64,
}

impl Controller for RandomController {
    fn act(&self, state: &StageState, feasible: &FeasibleSet) -> Result<DVector<f64>> {
        Ok(rnd_policy(feasible, crate::rng::derive_seed(self.seed, &[state.stage as u64])))
    }
}

pub struct ClosenessController<'a> {
    pub cache: &'a CentralityCache,
}

impl Controller for ClosenessController<'_> {
    fn act(&self, _: &StageState, feasible: &FeasibleSet) -> Result<DVector<f64>> {
        Ok(cls_policy(self.cache, feasible))
    }
}

pub struct ExposureController<'a> {
    pub cache: &'a CentralityCache,
    pub follows: &'a DMatrix<f64>,
}

impl Controller for ExposureController<'_> {
    fn act(&self, state: &StageState, feasible: &FeasibleSet) -> Result<DVector<f64>> {
        Ok(exp_policy(self.cache, self.follows, state, feasible))
    }
}

/// Receding-horizon certainty-equivalent control: plan over the horizon with
/// the current feasible set repeated, apply the first action.
pub struct CecController<'a> {
    pub planner: CePlanner<'a>,
}

impl Controller for CecController<'_> {
    fn act(&self, state: &StageState, feasible: &FeasibleSet) -> Result<DVector<f64>> {
        let sets = vec![feasible.clone(); self.planner.horizon()];
        Ok(self.planner.plan(state, &sets)?.actions.swap_remove(0))
    }
}

/// Open-loop plan computed once from the initial state.
pub struct OpenLoopController {
    pub actions: Vec<DVector<f64>>,
}

impl OpenLoopController {
    pub fn new(planner: &CePlanner<'_>, start: &StageState, feasible: &[FeasibleSet]) -> Result<Self> {
        Ok(Self { actions: planner.plan(start, feasible)?.actions })
    }
}

impl Controller for OpenLoopController {
    fn act(&self, state: &StageState, feasible: &FeasibleSet) -> Result<DVector<f64>> {
        let u = self
            .actions
            .get(state.stage)
            .cloned()
            .unwrap_or_else(|| DVector::zeros(feasible.n()));
        Ok(project_feasible(&u, feasible))
    }
}
