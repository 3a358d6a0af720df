//! Trapezoid solver for Volterra equations of the second kind with the
//! exponential kernel `K e^{−ωτ}`.

use nalgebra::{DMatrix, DVector};

use super::{check_dims, MomentContext};
use crate::error::{domain, Result};
use crate::linalg::inverse;

/// Solves `X(t) = F(t) + ∫₀ᵗ K e^{−ω(t−s)} X(s) ds` on the grid `t_k = k·h`.
///
/// The trapezoid sum over the history is carried recursively, which the
/// exponential kernel allows, so a solve over `N` steps costs `O(N)` matrix
/// products instead of `O(N²)`.
#[derive(Debug, Clone)]
pub struct ExpKernelVolterra {
    kernel: DMatrix<f64>,
    decay: f64,
    step: f64,
    lhs_inv: DMatrix<f64>,
}

impl ExpKernelVolterra {
    pub fn new(kernel: DMatrix<f64>, decay: f64, step: f64) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) {
            return domain("grid step must be positive");
        }
        let n = kernel.nrows();
        let lhs = DMatrix::identity(n, n) - &kernel * (0.5 * step);
        let lhs_inv = inverse(&lhs, "trapezoid step matrix")?;
        Ok(Self { kernel, decay, step, lhs_inv })
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// Values at `t_0, …, t_steps`. `forcing(t)` must return matrices of a fixed shape.
    pub fn solve(&self, forcing: impl Fn(f64) -> DMatrix<f64>, steps: usize) -> Vec<DMatrix<f64>> {
        let h = self.step;
        let damp = (-self.decay * h).exp();
        let x0 = forcing(0.0);
        let mut out = Vec::with_capacity(steps + 1);
        let mut history = DMatrix::zeros(x0.nrows(), x0.ncols());
        out.push(x0);
        for k in 1..=steps {
            history = (&history + &out[k - 1]) * damp;
            let t = k as f64 * h;
            let tail = &history - &out[0] * (0.5 * (-self.decay * t).exp());
            let rhs = forcing(t) + &self.kernel * tail * h;
            out.push(&self.lhs_inv * rhs);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ResponseBackend {
    ClosedForm,
    /// Trapezoid solution of the renewal equation with grid step at most `step`.
    Volterra { step: f64 },
}

/// Response matrix at lag `tau > 0`: entry `(i, j)` is the expected rate of
/// node-`i` events at lag `tau` that descend from one event at node `j`.
///
/// It solves `R(τ) = Φ(τ) + ∫₀^τ Φ(τ−s) R(s) ds` with `Φ(τ) = A' e^{−ωτ}`;
/// the closed form is `e^{Cτ} A'`.
pub fn response_function(ctx: &MomentContext, tau: f64, backend: ResponseBackend) -> Result<DMatrix<f64>> {
    if !(tau > 0.0 && tau.is_finite()) {
        return domain(format!("response lag must be positive, got {tau}"));
    }
    match backend {
        ResponseBackend::ClosedForm => Ok(ctx.propagator(tau) * ctx.coupling()),
        ResponseBackend::Volterra { step } => {
            if !(step > 0.0) {
                return domain("grid step must be positive");
            }
            let steps = (tau / step).ceil().max(1.0) as usize;
            let grid = response_grid(ctx, tau, steps)?;
            Ok(grid.into_iter().last().unwrap())
        }
    }
}

/// Numeric response on `τ_k = k·horizon/steps`, `k = 0..=steps`.
pub fn response_grid(ctx: &MomentContext, horizon: f64, steps: usize) -> Result<Vec<DMatrix<f64>>> {
    if !(horizon > 0.0) || steps == 0 {
        return domain("response grid needs a positive horizon and at least one step");
    }
    let solver = ExpKernelVolterra::new(ctx.coupling().clone(), ctx.decay(), horizon / steps as f64)?;
    let w = ctx.decay();
    Ok(solver.solve(|t| ctx.coupling() * (-w * t).exp(), steps))
}

/// Mean intensity on `t_k = k·Δ/steps` across one stage, with the incoming
/// carry treated as a decaying deterministic input.
pub fn mean_intensity_grid(
    ctx: &MomentContext,
    mu: &DVector<f64>,
    carry: &DVector<f64>,
    steps: usize,
) -> Result<Vec<DVector<f64>>> {
    check_dims(ctx, mu, carry);
    if steps == 0 {
        return domain("mean grid needs at least one step");
    }
    let solver = ExpKernelVolterra::new(ctx.coupling().clone(), ctx.decay(), ctx.stage_length() / steps as f64)?;
    let w = ctx.decay();
    let n = ctx.n();
    let sol = solver.solve(|t| DMatrix::from_column_slice(n, 1, (mu + carry * (-w * t).exp()).as_slice()), steps);
    Ok(sol.into_iter().map(|m| m.column(0).into_owned()).collect())
}
