//! Conditional intensity, exact simulation by thinning, and stage-boundary
//! carries for the exponential-kernel process.

use nalgebra::DVector;
use rand::Rng as _;
use rand_distr::{Distribution, Exp1};

use super::log::{Event, EventLog};
use super::model::{NetworkModel, Process};
use crate::error::{domain, Error, Result};
use crate::rng::{rng_from, Rng};

/// Residual endogenous intensity per node at a stage boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryCarry {
    y: DVector<f64>,
}

impl HistoryCarry {
    pub fn zeros(n: usize) -> Self {
        Self { y: DVector::zeros(n) }
    }

    pub fn new(y: DVector<f64>) -> Result<Self> {
        if y.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return domain("carry must be finite and nonnegative");
        }
        Ok(Self { y })
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.y
    }

    /// Carry at `t_end` after the events of `tag` in `log`, starting from
    /// `self` at `log.t_start()`:
    /// `y' = y e^{-ω(t_end - t_start)} + Σ_{events (s, i), s < t_end} a_{i·} e^{-ω(t_end - s)}`.
    pub fn advance(&self, model: &NetworkModel, log: &EventLog, tag: Process, t_end: f64) -> Self {
        let mut y = excitation_at(model, log, tag, self, t_end);
        y.iter_mut().for_each(|v| *v = v.max(0.0));
        Self { y }
    }
}

fn check_input(model: &NetworkModel, tag: Process, carry: &HistoryCarry, u: &DVector<f64>) -> Result<()> {
    let n = model.n();
    if carry.y.len() != n || u.len() != n {
        return Err(Error::Domain("carry and intervention must have length n".into()));
    }
    if u.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
        return domain("intervention must be finite and nonnegative");
    }
    if tag == Process::Fake && u.iter().any(|v| *v != 0.0) {
        return domain("the fake process takes no intervention");
    }
    Ok(())
}

/// Endogenous part of the intensity at `t` (events strictly before `t`).
fn excitation_at(model: &NetworkModel, log: &EventLog, tag: Process, carry: &HistoryCarry, t: f64) -> DVector<f64> {
    let w = model.decay();
    let a = model.excitation();
    let mut x = &carry.y * (-w * (t - log.t_start())).exp();
    for e in log.tagged(tag).filter(|e| e.t < t) {
        let k = (-w * (t - e.t)).exp();
        for j in 0..model.n() {
            x[j] += a[(e.node, j)] * k;
        }
    }
    x
}

/// `λ(t) = μ + u + y e^{-ω(t - t_start)} + Σ_{(s,i), s<t} a_{i·} e^{-ω(t-s)}`.
pub fn conditional_intensity(
    model: &NetworkModel,
    log: &EventLog,
    tag: Process,
    carry: &HistoryCarry,
    u: &DVector<f64>,
    t: f64,
) -> Result<DVector<f64>> {
    check_input(model, tag, carry, u)?;
    if !(t >= log.t_start() && t <= log.t_end()) {
        return domain(format!("t = {t} outside [{}, {}]", log.t_start(), log.t_end()));
    }
    Ok(model.base_rate(tag) + u + excitation_at(model, log, tag, carry, t))
}

/// Exact sample of one process on `[t0, t1)` by Ogata thinning.
pub fn simulate_stage(
    model: &NetworkModel,
    tag: Process,
    carry: &HistoryCarry,
    u: &DVector<f64>,
    window: (f64, f64),
    seed: u64,
) -> Result<EventLog> {
    check_input(model, tag, carry, u)?;
    if !(window.0 <= window.1) {
        return domain("window must be ordered");
    }
    let base = model.base_rate(tag) + u;
    let mut rng = rng_from(seed);
    Ok(simulate_with_base(model, tag, &base, carry.values(), window, &mut rng))
}

pub(crate) fn simulate_with_base(
    model: &NetworkModel,
    tag: Process,
    base: &DVector<f64>,
    carry: &DVector<f64>,
    (t0, t1): (f64, f64),
    rng: &mut Rng,
) -> EventLog {
    let n = model.n();
    let w = model.decay();
    let a = model.excitation();
    let base_total: f64 = base.iter().sum();
    let mut x = carry.clone();
    let mut log = EventLog::empty(t0, t1);
    let mut t = t0;
    loop {
        // Intensities only decay until the next event, so the current total
        // bounds the intensity over the next waiting time.
        let bound = base_total + x.iter().sum::<f64>();
        if bound <= 0.0 {
            break;
        }
        let wait: f64 = Exp1.sample(rng);
        let next = t + wait / bound;
        if next >= t1 {
            break;
        }
        x *= (-w * (next - t)).exp();
        t = next;
        let v = rng.random::<f64>() * bound;
        let mut acc = 0.0;
        for j in 0..n {
            acc += base[j] + x[j];
            if v < acc {
                log.push_unchecked(Event { t, node: j, tag });
                for k in 0..n {
                    x[k] += a[(j, k)];
                }
                break;
            }
        }
    }
    log
}
