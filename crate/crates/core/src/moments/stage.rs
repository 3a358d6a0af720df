//! Second moments of whole-stage counts.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::volterra::mean_intensity_grid;
use super::{check_dims, composite_nodes, MomentContext};
use crate::error::{domain, Result};
use crate::linalg::expm;
use crate::quadrature::{trapezoid_weights, GaussLegendre};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct QuadratureOptions {
    /// Grid intervals per axis for the coarse pass; the check uses twice this.
    pub grid: usize,
    /// Largest accepted relative change between the two grids.
    pub tolerance: f64,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        Self { grid: 64, tolerance: 1e-3 }
    }
}

#[derive(Debug, Clone)]
pub struct StageSecondMoment {
    /// `E[z zᵀ]`, Richardson-extrapolated from the two grids.
    pub second_moment: DMatrix<f64>,
    pub mean_counts: DVector<f64>,
    /// Frobenius relative change between the coarse and fine grids.
    pub relative_change: f64,
    pub converged: bool,
}

impl StageSecondMoment {
    pub fn covariance(&self) -> DMatrix<f64> {
        &self.second_moment - &self.mean_counts * self.mean_counts.transpose()
    }
}

pub fn stage_second_moment(ctx: &MomentContext, mu: &DVector<f64>, carry: &DVector<f64>) -> Result<StageSecondMoment> {
    stage_second_moment_with(ctx, mu, carry, QuadratureOptions::default())
}

/// `E[z zᵀ]` for the stage counts by tensor-product trapezoid quadrature of
/// the pairwise density, with the mean intensity taken from the Volterra solver.
pub fn stage_second_moment_with(
    ctx: &MomentContext,
    mu: &DVector<f64>,
    carry: &DVector<f64>,
    opts: QuadratureOptions,
) -> Result<StageSecondMoment> {
    check_dims(ctx, mu, carry);
    if opts.grid == 0 {
        return domain("quadrature grid must have at least one interval");
    }
    let (coarse, coarse_mean) = trapezoid_moment(ctx, mu, carry, opts.grid)?;
    let (fine, fine_mean) = trapezoid_moment(ctx, mu, carry, 2 * opts.grid)?;
    let scale = fine.norm();
    let relative_change = if scale > 0.0 { (&fine - &coarse).norm() / scale } else { 0.0 };
    let converged = relative_change < opts.tolerance;
    if !converged {
        log::warn!("stage second moment: relative change {relative_change:.2e} between grids");
    }
    let second = (&fine * 4.0 - &coarse) / 3.0;
    let mean = (&fine_mean * 4.0 - &coarse_mean) / 3.0;
    Ok(StageSecondMoment {
        second_moment: 0.5 * (&second + second.transpose()),
        mean_counts: mean,
        relative_change,
        converged,
    })
}

/// One trapezoid pass with `m` intervals per axis.
///
/// Writing the lower-triangle sum `Σ_{a>b} w_a w_b e^{C(a−b)h} Q_b` as
/// `Σ_b w_b S_b Q_b` with `S_b = e^{Ch}(w_{b+1} I + S_{b+1})` keeps the cost
/// linear in `m`. On the diagonal the two one-sided limits are averaged.
fn trapezoid_moment(
    ctx: &MomentContext,
    mu: &DVector<f64>,
    carry: &DVector<f64>,
    m: usize,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let n = ctx.n();
    let h = ctx.stage_length() / m as f64;
    let eta = mean_intensity_grid(ctx, mu, carry, m)?;
    let w = trapezoid_weights(m, h);
    let step = expm(&(ctx.generator() * h));
    let a = ctx.coupling();

    let jumps: Vec<DMatrix<f64>> = eta.iter().map(|e| a * DMatrix::from_diagonal(e) * a.transpose()).collect();
    let mut hist = DMatrix::zeros(n, n);
    let mut q = Vec::with_capacity(m + 1);
    for b in 0..=m {
        if b > 0 {
            hist = &step * (&hist + &jumps[b - 1] * (0.5 * h)) * step.transpose() + &jumps[b] * (0.5 * h);
        }
        q.push(a * DMatrix::from_diagonal(&eta[b]) + &hist);
    }

    let mut lower = DMatrix::zeros(n, n);
    let mut diag = DMatrix::zeros(n, n);
    let mut tail = DMatrix::zeros(n, n);
    for b in (0..=m).rev() {
        if b < m {
            tail = &step * (DMatrix::identity(n, n) * w[b + 1] + &tail);
            lower += &tail * &q[b] * w[b];
        }
        diag += (&q[b] + q[b].transpose()) * (0.5 * w[b] * w[b]);
    }
    let mean: DVector<f64> = eta.iter().zip(&w).fold(DVector::zeros(n), |acc, (e, wt)| acc + e * *wt);
    let second = &lower + lower.transpose() + diag + &mean * mean.transpose() + DMatrix::from_diagonal(&mean);
    Ok((second, mean))
}

/// Nodes on `[0, Δ]` and `e^{Ct}` at each; the node set is symmetric about `Δ/2`.
fn stage_nodes(ctx: &MomentContext) -> (Vec<(f64, f64)>, Vec<DMatrix<f64>>) {
    let rule = GaussLegendre::new(16);
    let nodes = composite_nodes(&rule, 0.0, ctx.stage_length(), 0.5);
    let props = nodes.iter().map(|(t, _)| ctx.propagator(*t)).collect();
    (nodes, props)
}

/// Exact stage-count covariance
/// `∫₀^Δ R(Δ−t) diag(η(t)) R(Δ−t)ᵀ dt` with `R(s) = I + C⁻¹(e^{Cs} − I) A'`,
/// evaluated by Gauss–Legendre quadrature.
pub fn stage_covariance(ctx: &MomentContext, mu: &DVector<f64>, carry: &DVector<f64>) -> DMatrix<f64> {
    check_dims(ctx, mu, carry);
    let n = ctx.n();
    let (nodes, props) = stage_nodes(ctx);
    let k = nodes.len();
    let mut cov = DMatrix::zeros(n, n);
    for (idx, (_, w)) in nodes.iter().enumerate() {
        let eta = ctx.mean_from_propagator(&props[idx], mu, carry);
        let r = total_response(ctx, &props[k - 1 - idx]);
        let mut scaled = r.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= eta[j].max(0.0);
        }
        cov += scaled * r.transpose() * *w;
    }
    0.5 * (&cov + cov.transpose())
}

/// `I + C⁻¹(e^{Cs} − I)A'` given `e^{Cs}`.
fn total_response(ctx: &MomentContext, prop: &DMatrix<f64>) -> DMatrix<f64> {
    let n = ctx.n();
    DMatrix::identity(n, n) + ctx.generator_inv() * (prop - DMatrix::identity(n, n)) * ctx.coupling()
}

/// `tr(W Cov(z))` as an affine function of the exogenous rate and the carry.
///
/// The covariance is linear in the mean intensity, so
/// `tr(W Cov) = rate·mu + carry·y` for fixed `W`.
#[derive(Debug, Clone)]
pub struct CountVariance {
    pub rate: DVector<f64>,
    pub carry: DVector<f64>,
}

impl CountVariance {
    pub fn new(ctx: &MomentContext, weight: &DMatrix<f64>) -> Self {
        let n = ctx.n();
        let (nodes, props) = stage_nodes(ctx);
        let k = nodes.len();
        let mut rate = DVector::zeros(n);
        let mut carry = DVector::zeros(n);
        for (idx, (_, w)) in nodes.iter().enumerate() {
            let r = total_response(ctx, &props[k - 1 - idx]);
            let wr = weight * &r;
            let h = DVector::from_iterator(n, (0..n).map(|i| r.column(i).dot(&wr.column(i))));
            carry += props[idx].tr_mul(&h) * *w;
            rate += ctx.rate_response(&props[idx]).tr_mul(&h) * *w;
        }
        Self { rate, carry }
    }

    pub fn trace(&self, mu: &DVector<f64>, carry: &DVector<f64>) -> f64 {
        self.rate.dot(mu) + self.carry.dot(carry)
    }
}
