//! Maximum-likelihood estimation of `(A, μ)` with the decay held fixed.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::log::EventLog;
use super::model::{NetworkModel, Process};
use super::process::HistoryCarry;
use crate::error::{domain, Result};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MleOptions {
    pub max_iter: usize,
    /// Stop when half the Newton decrement falls below this.
    pub tol: f64,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self { max_iter: 200, tol: 1e-9 }
    }
}

#[derive(Debug, Clone)]
pub struct MleFit {
    pub excitation: DMatrix<f64>,
    pub base_rate: DVector<f64>,
    pub log_likelihood: f64,
    pub initial_log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl MleFit {
    /// Mean of the relative L2 errors of the base rates and of the
    /// excitation matrix against a reference model.
    pub fn relative_error(&self, truth: &NetworkModel, tag: Process) -> f64 {
        let mu = truth.base_rate(tag);
        let a = truth.excitation();
        let rel = |d: f64, r: f64| if r > 0.0 { d / r } else { d };
        0.5 * (rel((&self.base_rate - mu).norm(), mu.norm()) + rel((&self.excitation - a).norm(), a.norm()))
    }
}

/// Sufficient statistics for one target node `j`: for every event at `j`,
/// the vector of decayed kernel sums from earlier events at each source.
struct NodeData {
    kernels: Vec<Vec<f64>>,
}

struct Problem {
    n: usize,
    total_time: f64,
    /// `Σ_{events at i} (1 − e^{−ω(t_end − s)})/ω`
    source_mass: Vec<f64>,
    per_node: Vec<NodeData>,
}

impl Problem {
    fn build(logs: &[EventLog], n: usize, decay: f64) -> Self {
        let mut per_node: Vec<NodeData> = (0..n).map(|_| NodeData { kernels: Vec::new() }).collect();
        let mut source_mass = vec![0.0; n];
        let mut total_time = 0.0;
        for log in logs {
            total_time += log.duration();
            let mut r = vec![0.0; n];
            let mut r_time = log.t_start();
            let mut pending: Vec<usize> = Vec::new();
            for e in log.events() {
                if e.t > r_time {
                    for i in pending.drain(..) {
                        r[i] += 1.0;
                    }
                    let k = (-decay * (e.t - r_time)).exp();
                    r.iter_mut().for_each(|v| *v *= k);
                    r_time = e.t;
                }
                per_node[e.node].kernels.push(r.clone());
                pending.push(e.node);
                source_mass[e.node] += (1.0 - (-decay * (log.t_end() - e.t)).exp()) / decay;
            }
        }
        Self { n, total_time, source_mass, per_node }
    }

    /// Parameters for node `j` are packed as `[μ_j, a_{0j}, …, a_{n−1,j}]`.
    fn value(&self, j: usize, p: &[f64]) -> f64 {
        let mut f = -p[0] * self.total_time;
        for i in 0..self.n {
            f -= p[i + 1] * self.source_mass[i];
        }
        for r in &self.per_node[j].kernels {
            let lam = p[0] + r.iter().zip(&p[1..]).map(|(x, a)| x * a).sum::<f64>();
            if !(lam > 0.0) {
                return f64::NEG_INFINITY;
            }
            f += lam.ln();
        }
        f
    }

    /// Gradient and Hessian of the node-`j` objective.
    fn derivatives(&self, j: usize, p: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let d = self.n + 1;
        let mut g = DVector::zeros(d);
        let mut h = DMatrix::zeros(d, d);
        g[0] = -self.total_time;
        for i in 0..self.n {
            g[i + 1] = -self.source_mass[i];
        }
        let mut x = DVector::zeros(d);
        for r in &self.per_node[j].kernels {
            x[0] = 1.0;
            for i in 0..self.n {
                x[i + 1] = r[i];
            }
            let lam = x.iter().zip(p).map(|(a, b)| a * b).sum::<f64>();
            g.axpy(1.0 / lam, &x, 1.0);
            h.ger(-1.0 / (lam * lam), &x, &x, 1.0);
        }
        (g, h)
    }
}

/// Fits `(A, μ)` by projected Newton ascent with backtracking, starting
/// from `μ` = empirical rates and `A = 0`. The likelihood separates over
/// target nodes, so each column of `A` (with its `μ_j`) is fitted on its own.
///
/// All events in `logs` are treated as one process; carries are taken as zero.
pub fn fit_mle(logs: &[EventLog], n: usize, decay: f64, opts: MleOptions) -> Result<MleFit> {
    if logs.is_empty() {
        return domain("need at least one log");
    }
    if !(decay > 0.0) {
        return domain("decay must be positive");
    }
    if logs.iter().flat_map(|l| l.events()).any(|e| e.node >= n) {
        return domain("event node out of range");
    }
    let problem = Problem::build(logs, n, decay);
    let mut excitation = DMatrix::zeros(n, n);
    let mut base = DVector::zeros(n);
    let mut ll0 = 0.0;
    let mut ll = 0.0;
    let mut iterations = 0;
    let mut converged = true;

    for j in 0..n {
        let count = problem.per_node[j].kernels.len() as f64;
        let mut p = vec![0.0; n + 1];
        p[0] = if problem.total_time > 0.0 { count / problem.total_time } else { 0.0 };
        let mut f = problem.value(j, &p);
        ll0 += f;
        if count == 0.0 {
            // All gradients are nonpositive at zero: the projection keeps p = 0.
            p[0] = 0.0;
            ll += problem.value(j, &p);
            continue;
        }
        // Sources that never fire leave their weight unidentified; pin them at zero.
        let fixed: Vec<bool> = (0..=n).map(|k| k > 0 && problem.source_mass[k - 1] == 0.0).collect();
        let mut done = false;
        for it in 0..opts.max_iter {
            iterations = iterations.max(it + 1);
            let (g, h) = problem.derivatives(j, &p);
            // Projected Newton: variables at the bound with a descent gradient stay put.
            let free: Vec<usize> = (0..=n).filter(|&k| !fixed[k] && !(p[k] <= 1e-14 && g[k] <= 0.0)).collect();
            if free.is_empty() {
                done = true;
                break;
            }
            let gf = DVector::from_iterator(free.len(), free.iter().map(|&k| g[k]));
            let mut neg_h = DMatrix::from_fn(free.len(), free.len(), |a, b| -h[(free[a], free[b])]);
            let ridge = 1e-12 * (neg_h.trace() / free.len() as f64).max(1e-300);
            for k in 0..free.len() {
                neg_h[(k, k)] += ridge;
            }
            let Some(chol) = neg_h.cholesky() else {
                break;
            };
            let dir = chol.solve(&gf);
            let decrement = gf.dot(&dir);
            if decrement < 2.0 * opts.tol {
                done = true;
                break;
            }
            let mut s = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let mut cand = p.clone();
                for (a, &k) in free.iter().enumerate() {
                    cand[k] = (p[k] + s * dir[a]).max(0.0);
                }
                let fc = problem.value(j, &cand);
                let gain: f64 = free.iter().map(|&k| g[k] * (cand[k] - p[k])).sum();
                if fc.is_finite() && fc >= f + 1e-4 * gain {
                    p = cand;
                    f = fc;
                    accepted = true;
                    break;
                }
                s *= 0.5;
            }
            if !accepted {
                done = true;
                break;
            }
        }
        if !done {
            converged = false;
            log::warn!("MLE for node {j} hit the iteration cap");
        }
        base[j] = p[0];
        for i in 0..n {
            excitation[(i, j)] = p[i + 1];
        }
        ll += f;
    }
    Ok(MleFit {
        excitation,
        base_rate: base,
        log_likelihood: ll,
        initial_log_likelihood: ll0,
        iterations,
        converged,
    })
}

/// Per-node MLE of the total exogenous rate on one log, holding `A` and the
/// incoming carry fixed. Solves `Σ_ℓ 1/(b + x_ℓ) = T` for each node by bisection.
pub fn fit_base_rates(model: &NetworkModel, log: &EventLog, tag: Process, carry: &HistoryCarry) -> DVector<f64> {
    let n = model.n();
    let w = model.decay();
    let a = model.excitation();
    let span = log.duration();
    let mut excitations: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut x = carry.values().clone();
    let mut x_time = log.t_start();
    let mut pending: Vec<usize> = Vec::new();
    for e in log.tagged(tag) {
        if e.t > x_time {
            for i in pending.drain(..) {
                for k in 0..n {
                    x[k] += a[(i, k)];
                }
            }
            x *= (-w * (e.t - x_time)).exp();
            x_time = e.t;
        }
        excitations[e.node].push(x[e.node]);
        pending.push(e.node);
    }
    DVector::from_iterator(
        n,
        excitations.iter().map(|xs| {
            if xs.is_empty() || span <= 0.0 {
                return 0.0;
            }
            let score = |b: f64| xs.iter().map(|x| 1.0 / (b + x)).sum::<f64>() - span;
            if xs.iter().all(|x| *x > 0.0) && score(0.0) <= 0.0 {
                return 0.0;
            }
            let (mut lo, mut hi) = (0.0, xs.len() as f64 / span);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if score(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        }),
    )
}
