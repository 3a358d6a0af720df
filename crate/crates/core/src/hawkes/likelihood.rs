use nalgebra::DVector;

use super::log::EventLog;
use super::model::{NetworkModel, Process};
use super::process::HistoryCarry;
use crate::error::{domain, Result};

/// Point-process log-likelihood of the `tag` events in `log`:
/// `Σ_ℓ log λ_{i_ℓ}(t_ℓ) − Σ_j ∫ λ_j dt`, with the compensator in closed form.
///
/// Returns `-∞` (and logs a warning) when some event lands on a zero intensity.
pub fn log_likelihood(
    model: &NetworkModel,
    log: &EventLog,
    tag: Process,
    carry: &HistoryCarry,
    u: &DVector<f64>,
) -> Result<f64> {
    let n = model.n();
    if u.len() != n || carry.values().len() != n {
        return domain("carry and intervention must have length n");
    }
    let base = model.base_rate(tag) + u;
    let w = model.decay();
    let a = model.excitation();
    let t0 = log.t_start();
    let t1 = log.t_end();
    let span = t1 - t0;

    let mut compensator = base.sum() * span + carry.values().sum() * (1.0 - (-w * span).exp()) / w;

    let mut x = carry.values().clone();
    let mut x_time = t0;
    let mut pending: Vec<usize> = Vec::new();
    let mut sum_log = 0.0;
    for e in log.tagged(tag) {
        if e.t > x_time {
            for i in pending.drain(..) {
                for j in 0..n {
                    x[j] += a[(i, j)];
                }
            }
            x *= (-w * (e.t - x_time)).exp();
            x_time = e.t;
        }
        let lambda = base[e.node] + x[e.node];
        if !(lambda > 0.0) {
            log::warn!("zero intensity at event t = {} on node {}", e.t, e.node);
            return Ok(f64::NEG_INFINITY);
        }
        sum_log += lambda.ln();
        pending.push(e.node);
        let tail = (1.0 - (-w * (t1 - e.t)).exp()) / w;
        compensator += tail * a.row(e.node).sum();
    }
    Ok(sum_log - compensator)
}
