//! Stage-level decision process around the two independent campaigns.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::hawkes::{simulate_stage, EventLog, HistoryCarry, NetworkModel, Process};
use crate::moments::{expected_next_carry, CountVariance, MomentContext};
use crate::optimize::Objective;
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardKind {
    /// `(1/n) Mᵀ F` of the two exposure vectors.
    #[serde(rename = "corr")]
    Correlation,
    /// `−(1/n) ‖M − F‖²`.
    #[serde(rename = "diff")]
    Difference,
}

impl std::str::FromStr for RewardKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "corr" | "correlation" => Ok(Self::Correlation),
            "diff" | "difference" => Ok(Self::Difference),
            _ => Err(Error::Config(format!("unknown objective `{s}`"))),
        }
    }
}

impl std::fmt::Display for RewardKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Correlation => "corr",
            Self::Difference => "diff",
        })
    }
}

/// Allowed interventions at one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibleSet {
    price: DVector<f64>,
    budget: f64,
    cap: DVector<f64>,
    mitigators: Vec<bool>,
}

impl FeasibleSet {
    pub fn new(price: DVector<f64>, budget: f64, cap: DVector<f64>, mitigators: Vec<bool>) -> Result<Self> {
        let n = price.len();
        if cap.len() != n || mitigators.len() != n {
            return domain("price, cap and mitigator mask must have the same length");
        }
        if !(budget >= 0.0 && budget.is_finite()) {
            return domain("budget must be finite and nonnegative");
        }
        if cap.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
            return domain("caps must be finite and nonnegative");
        }
        if (0..n).any(|i| mitigators[i] && !(price[i] > 0.0 && price[i].is_finite())) {
            return domain("mitigator prices must be positive");
        }
        Ok(Self { price, budget, cap, mitigators })
    }

    pub fn n(&self) -> usize {
        self.price.len()
    }

    pub fn price(&self) -> &DVector<f64> {
        &self.price
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn cap(&self) -> &DVector<f64> {
        &self.cap
    }

    pub fn mitigators(&self) -> &[bool] {
        &self.mitigators
    }

    /// Indices allowed to carry a positive intervention.
    pub fn free(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n()).filter(|&i| self.mitigators[i])
    }

    pub fn with_budget(&self, budget: f64) -> Result<Self> {
        Self::new(self.price.clone(), budget, self.cap.clone(), self.mitigators.clone())
    }

    pub fn contains(&self, u: &DVector<f64>, tol: f64) -> bool {
        u.len() == self.n()
            && (0..self.n()).all(|i| {
                let hi = if self.mitigators[i] { self.cap[i] } else { 0.0 };
                u[i] >= -tol && u[i] <= hi + tol
            })
            && self.price.dot(u) <= self.budget + tol
    }
}

/// Observation at a stage boundary: carries of both processes and the counts
/// in the `L` most recent intervals, newest block first
/// (`counts[l·n + i]` is node `i` in the `(l+1)`-th interval back).
///
/// Realized states hold integer counts; planning code also builds states with
/// expected (fractional) counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageState {
    pub stage: usize,
    pub clock: f64,
    carry_m: DVector<f64>,
    carry_f: DVector<f64>,
    counts_m: DVector<f64>,
    counts_f: DVector<f64>,
}

impl StageState {
    pub fn initial(n: usize, memory: usize) -> Self {
        Self {
            stage: 0,
            clock: 0.0,
            carry_m: DVector::zeros(n),
            carry_f: DVector::zeros(n),
            counts_m: DVector::zeros(n * memory),
            counts_f: DVector::zeros(n * memory),
        }
    }

    pub fn new(
        stage: usize,
        clock: f64,
        carry_m: DVector<f64>,
        carry_f: DVector<f64>,
        counts_m: DVector<f64>,
        counts_f: DVector<f64>,
    ) -> Result<Self> {
        let n = carry_m.len();
        if carry_f.len() != n || n == 0 || counts_m.len() != counts_f.len() || counts_m.len() % n != 0 || counts_m.is_empty() {
            return domain("state blocks have inconsistent sizes");
        }
        let all = carry_m.iter().chain(carry_f.iter()).chain(counts_m.iter()).chain(counts_f.iter());
        if all.clone().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return domain("state entries must be finite and nonnegative");
        }
        Ok(Self { stage, clock, carry_m, carry_f, counts_m, counts_f })
    }

    pub fn n(&self) -> usize {
        self.carry_m.len()
    }

    pub fn memory(&self) -> usize {
        self.counts_m.len() / self.n()
    }

    pub fn carry(&self, p: Process) -> &DVector<f64> {
        match p {
            Process::Mitigation => &self.carry_m,
            Process::Fake => &self.carry_f,
        }
    }

    pub fn counts(&self, p: Process) -> &DVector<f64> {
        match p {
            Process::Mitigation => &self.counts_m,
            Process::Fake => &self.counts_f,
        }
    }

    /// Counts per node summed over the stored intervals.
    pub fn recent_total(&self, p: Process) -> DVector<f64> {
        let n = self.n();
        let c = self.counts(p);
        DVector::from_fn(n, |i, _| (0..self.memory()).map(|l| c[l * n + i]).sum())
    }

    /// Next state with `newest` pushed in front of the stored blocks.
    pub fn advanced(&self, carry_m: DVector<f64>, carry_f: DVector<f64>, newest_m: &DVector<f64>, newest_f: &DVector<f64>, stage_length: f64) -> Self {
        Self {
            stage: self.stage + 1,
            clock: self.clock + stage_length,
            carry_m,
            carry_f,
            counts_m: shift_in(&self.counts_m, newest_m),
            counts_f: shift_in(&self.counts_f, newest_f),
        }
    }
}

fn shift_in(blocks: &DVector<f64>, newest: &DVector<f64>) -> DVector<f64> {
    let n = newest.len();
    let mut out = DVector::zeros(blocks.len());
    out.rows_mut(0, n).copy_from(newest);
    let keep = blocks.len() - n;
    out.rows_mut(n, keep).copy_from(&blocks.rows(0, keep));
    out
}

/// `ψ = [z_M; z_F; 1]`.
pub fn features(state: &StageState) -> DVector<f64> {
    let k = state.counts_m.len();
    let mut psi = DVector::zeros(2 * k + 1);
    psi.rows_mut(0, k).copy_from(&state.counts_m);
    psi.rows_mut(k, k).copy_from(&state.counts_f);
    psi[2 * k] = 1.0;
    psi
}

pub fn feature_dim(n: usize, memory: usize) -> usize {
    2 * n * memory + 1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardPair {
    pub correlation: f64,
    pub difference: f64,
}

impl RewardPair {
    pub fn get(&self, kind: RewardKind) -> f64 {
        match kind {
            RewardKind::Correlation => self.correlation,
            RewardKind::Difference => self.difference,
        }
    }
}

/// Rewards from per-node stage counts, with exposures `B · counts`.
pub fn reward_from_counts(counts_m: &DVector<f64>, counts_f: &DVector<f64>, follows: &DMatrix<f64>) -> RewardPair {
    let n = counts_m.len() as f64;
    let m = follows * counts_m;
    let f = follows * counts_f;
    RewardPair { correlation: m.dot(&f) / n, difference: -(&m - &f).norm_squared() / n }
}

/// Reward of one stage from the two processes' logs.
pub fn realized_reward(kind: RewardKind, log_m: &EventLog, log_f: &EventLog, follows: &DMatrix<f64>) -> f64 {
    let n = follows.nrows();
    let cm = count_vector(log_m, n, Process::Mitigation);
    let cf = count_vector(log_f, n, Process::Fake);
    reward_from_counts(&cm, &cf, follows).get(kind)
}

fn count_vector(log: &EventLog, n: usize, tag: Process) -> DVector<f64> {
    DVector::from_iterator(n, log.counts(n, tag).into_iter().map(|c| c as f64))
}

/// Outcome of one simulated stage.
#[derive(Debug, Clone)]
pub struct Transition {
    pub next: StageState,
    pub rewards: RewardPair,
    pub log_m: EventLog,
    pub log_f: EventLog,
}

/// Per-stage trajectory record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageRecord {
    pub k: usize,
    pub u: Vec<f64>,
    #[serde(rename = "R_corr")]
    pub r_corr: f64,
    #[serde(rename = "R_diff")]
    pub r_diff: f64,
    pub z_m: Vec<f64>,
    pub z_f: Vec<f64>,
}

/// The model plus the cached stage operators needed for planning.
#[derive(Debug)]
pub struct Environment {
    model: NetworkModel,
    moments: MomentContext,
    memory: usize,
    weight: DMatrix<f64>,
    variance: OnceLock<CountVariance>,
    gram: OnceLock<DMatrix<f64>>,
}

impl Environment {
    pub fn new(model: NetworkModel, stage_length: f64, memory: usize) -> Result<Self> {
        if memory == 0 {
            return domain("memory must be at least one interval");
        }
        let moments = MomentContext::new(&model, stage_length)?;
        let weight = model.follows().transpose() * model.follows();
        Ok(Self { model, moments, memory, weight, variance: OnceLock::new(), gram: OnceLock::new() })
    }

    pub fn model(&self) -> &NetworkModel {
        &self.model
    }

    pub fn moments(&self) -> &MomentContext {
        &self.moments
    }

    pub fn n(&self) -> usize {
        self.model.n()
    }

    pub fn memory(&self) -> usize {
        self.memory
    }

    pub fn stage_length(&self) -> f64 {
        self.moments.stage_length()
    }

    pub fn feature_dim(&self) -> usize {
        feature_dim(self.n(), self.memory)
    }

    pub fn initial_state(&self) -> StageState {
        StageState::initial(self.n(), self.memory)
    }

    /// `BᵀB`.
    pub fn weight(&self) -> &DMatrix<f64> {
        &self.weight
    }

    /// `tr(BᵀB·Cov(z))` as an affine function of rate and carry.
    pub fn count_variance(&self) -> &CountVariance {
        self.variance.get_or_init(|| CountVariance::new(&self.moments, &self.weight))
    }

    fn gram(&self) -> &DMatrix<f64> {
        self.gram.get_or_init(|| {
            let g = self.moments.rate_to_counts();
            g.transpose() * &self.weight * g
        })
    }

    /// Expected stage counts of `p` from `state` with intervention `u`.
    pub fn expected_counts(&self, state: &StageState, p: Process, u: &DVector<f64>) -> DVector<f64> {
        let mu = self.model.base_rate(p) + u;
        crate::moments::stage_mean_counts(&self.moments, &mu, state.carry(p))
    }

    /// Expected reward as an objective in `u`.
    pub fn reward_objective(&self, kind: RewardKind, state: &StageState) -> Objective {
        let n = self.n() as f64;
        let zero = DVector::zeros(self.n());
        let gamma = self.moments.rate_to_counts();
        let m0 = self.expected_counts(state, Process::Mitigation, &zero);
        let mf = self.expected_counts(state, Process::Fake, &zero);
        let w_mf = &self.weight * &mf;
        match kind {
            RewardKind::Correlation => Objective::linear(m0.dot(&w_mf) / n, gamma.tr_mul(&w_mf) / n),
            RewardKind::Difference => {
                let var = self.count_variance();
                let mu_m = self.model.base_rate(Process::Mitigation);
                let mu_f = self.model.base_rate(Process::Fake);
                let w_m0 = &self.weight * &m0;
                let var_m = var.trace(mu_m, state.carry(Process::Mitigation));
                let var_f = var.trace(mu_f, state.carry(Process::Fake));
                let constant = -(m0.dot(&w_m0) + var_m) / n - (mf.dot(&w_mf) + var_f) / n + 2.0 * m0.dot(&w_mf) / n;
                let linear = (gamma.tr_mul(&w_mf) * 2.0 - gamma.tr_mul(&w_m0) * 2.0 - &var.rate) / n;
                Objective { constant, linear, quadratic: Some(-self.gram() / n) }
            }
        }
    }

    /// `E[R(x, u)]`; `u` must lie in `feasible`.
    pub fn expected_reward(&self, kind: RewardKind, state: &StageState, u: &DVector<f64>, feasible: &FeasibleSet) -> Result<f64> {
        if !feasible.contains(u, 1e-9) {
            return domain("intervention is not feasible");
        }
        Ok(self.reward_objective(kind, state).value(u))
    }

    /// Expected next state: stage means fill the newest blocks, carries follow
    /// their expected recursion.
    pub fn expected_next_state(&self, state: &StageState, u: &DVector<f64>) -> StageState {
        let mu_m = self.model.base_rate(Process::Mitigation) + u;
        let mu_f = self.model.base_rate(Process::Fake).clone();
        let zm = self.expected_counts(state, Process::Mitigation, u);
        let zf = self.expected_counts(state, Process::Fake, &DVector::zeros(self.n()));
        let ym = expected_next_carry(&self.moments, &mu_m, state.carry(Process::Mitigation));
        let yf = expected_next_carry(&self.moments, &mu_f, state.carry(Process::Fake));
        state.advanced(ym.map(|v| v.max(0.0)), yf.map(|v| v.max(0.0)), &zm, &zf, self.stage_length())
    }

    /// `E[ψ(x')]`, affine in `u`.
    pub fn expected_next_features(&self, state: &StageState, u: &DVector<f64>) -> DVector<f64> {
        let n = self.n();
        let k = n * self.memory;
        let zm = self.expected_counts(state, Process::Mitigation, u);
        let zf = self.expected_counts(state, Process::Fake, &DVector::zeros(n));
        let mut psi = DVector::zeros(2 * k + 1);
        psi.rows_mut(0, k).copy_from(&shift_in(state.counts(Process::Mitigation), &zm));
        psi.rows_mut(k, k).copy_from(&shift_in(state.counts(Process::Fake), &zf));
        psi[2 * k] = 1.0;
        psi
    }

    /// `E[ψ(x')ᵀ w]` as an objective in `u`.
    pub fn next_value_objective(&self, state: &StageState, weights: &DVector<f64>) -> Objective {
        let n = self.n();
        let zero = DVector::zeros(n);
        let constant = self.expected_next_features(state, &zero).dot(weights);
        let linear = self.moments.rate_to_counts().tr_mul(&weights.rows(0, n).into_owned());
        Objective::linear(constant, linear)
    }

    /// Simulates both processes over one stage from `state`.
    pub fn step(&self, state: &StageState, u: &DVector<f64>, seed: u64) -> Result<Transition> {
        let n = self.n();
        let window = (state.clock, state.clock + self.stage_length());
        let carry_m = HistoryCarry::new(state.carry(Process::Mitigation).clone())?;
        let carry_f = HistoryCarry::new(state.carry(Process::Fake).clone())?;
        let log_m = simulate_stage(&self.model, Process::Mitigation, &carry_m, u, window, derive_seed(seed, &[0]))?;
        let log_f = simulate_stage(&self.model, Process::Fake, &carry_f, &DVector::zeros(n), window, derive_seed(seed, &[1]))?;
        let next_m = carry_m.advance(&self.model, &log_m, Process::Mitigation, window.1);
        let next_f = carry_f.advance(&self.model, &log_f, Process::Fake, window.1);
        let cm = count_vector(&log_m, n, Process::Mitigation);
        let cf = count_vector(&log_f, n, Process::Fake);
        let rewards = reward_from_counts(&cm, &cf, self.model.follows());
        let next = state.advanced(next_m.values().clone(), next_f.values().clone(), &cm, &cf, self.stage_length());
        Ok(Transition { next, rewards, log_m, log_f })
    }
}
