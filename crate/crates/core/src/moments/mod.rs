//! Transient first- and second-order statistics of the stage counts.
//!
//! Everything here is written in the intensity orientation: matrices act on
//! column vectors of per-node rates, so the excitation matrix enters
//! transposed (see [`NetworkModel::intensity_coupling`]).

#[cfg(test)]
pub(crate) mod oracle;
mod second_order;
mod stage;
mod volterra;

use nalgebra::{DMatrix, DVector};

use crate::error::{domain, Result};
use crate::hawkes::NetworkModel;
use crate::linalg::{expm, inverse};
use crate::quadrature::GaussLegendre;

pub use second_order::{binned_second_moment, history_covariance, second_order_density, PairDensity};
pub use stage::{
    stage_covariance, stage_second_moment, stage_second_moment_with, CountVariance, QuadratureOptions,
    StageSecondMoment,
};
pub use volterra::{mean_intensity_grid, response_function, response_grid, ExpKernelVolterra, ResponseBackend};

/// Precomputed stage operators for one model and one stage length.
#[derive(Debug, Clone)]
pub struct MomentContext {
    decay: f64,
    stage_length: f64,
    coupling: DMatrix<f64>,
    generator: DMatrix<f64>,
    generator_inv: DMatrix<f64>,
    stage_propagator: DMatrix<f64>,
    carry_to_counts: DMatrix<f64>,
    rate_to_counts: DMatrix<f64>,
}

impl MomentContext {
    pub fn new(model: &NetworkModel, stage_length: f64) -> Result<Self> {
        Self::from_coupling(model.intensity_coupling(), model.decay(), stage_length)
    }

    /// Builds the context from a coupling matrix already in intensity orientation.
    pub fn from_coupling(coupling: DMatrix<f64>, decay: f64, stage_length: f64) -> Result<Self> {
        if !(stage_length > 0.0 && stage_length.is_finite()) {
            return domain("stage length must be positive");
        }
        if !(decay > 0.0) {
            return domain("decay must be positive");
        }
        let n = coupling.nrows();
        let generator = &coupling - DMatrix::identity(n, n) * decay;
        let generator_inv = inverse(&generator, "coupling minus decay")?;
        let stage_propagator = expm(&(&generator * stage_length));
        let carry_to_counts = &generator_inv * (&stage_propagator - DMatrix::identity(n, n));
        let rate_to_counts = &carry_to_counts
            + &generator_inv * (&carry_to_counts - DMatrix::identity(n, n) * stage_length) * decay;
        Ok(Self {
            decay,
            stage_length,
            coupling,
            generator,
            generator_inv,
            stage_propagator,
            carry_to_counts,
            rate_to_counts,
        })
    }

    pub fn n(&self) -> usize {
        self.coupling.nrows()
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn stage_length(&self) -> f64 {
        self.stage_length
    }

    /// `A'`, the excitation matrix acting on intensity vectors.
    pub fn coupling(&self) -> &DMatrix<f64> {
        &self.coupling
    }

    /// `C = A' − ωI`.
    pub fn generator(&self) -> &DMatrix<f64> {
        &self.generator
    }

    pub fn generator_inv(&self) -> &DMatrix<f64> {
        &self.generator_inv
    }

    /// `e^{CΔ}`.
    pub fn stage_propagator(&self) -> &DMatrix<f64> {
        &self.stage_propagator
    }

    /// `Υ`: expected stage counts per unit of incoming carry.
    pub fn carry_to_counts(&self) -> &DMatrix<f64> {
        &self.carry_to_counts
    }

    /// `Γ`: expected stage counts per unit of constant exogenous rate.
    pub fn rate_to_counts(&self) -> &DMatrix<f64> {
        &self.rate_to_counts
    }

    /// `e^{Ct}`.
    pub fn propagator(&self, t: f64) -> DMatrix<f64> {
        expm(&(&self.generator * t))
    }

    /// `C⁻¹(e^{Ct} − I)`, the integral of the propagator over `[0, t]`.
    pub fn integrated_propagator(&self, t: f64) -> DMatrix<f64> {
        let n = self.n();
        &self.generator_inv * (self.propagator(t) - DMatrix::identity(n, n))
    }

    /// Mean intensity at `t` per unit exogenous rate, given `e^{Ct}`.
    pub(crate) fn rate_response(&self, prop: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.n();
        prop + &self.generator_inv * (prop - DMatrix::identity(n, n)) * self.decay
    }

    fn mean_from_propagator(&self, prop: &DMatrix<f64>, mu: &DVector<f64>, carry: &DVector<f64>) -> DVector<f64> {
        prop * carry + self.rate_response(prop) * mu
    }

    /// Expected counts in `[t0, t1]` within a stage started with `carry`.
    pub fn expected_counts_between(&self, mu: &DVector<f64>, carry: &DVector<f64>, t0: f64, t1: f64) -> DVector<f64> {
        let n = self.n();
        let diff = &self.generator_inv * (self.propagator(t1) - self.propagator(t0));
        let rate = &diff + &self.generator_inv * (&diff - DMatrix::identity(n, n) * (t1 - t0)) * self.decay;
        &diff * carry + rate * mu
    }
}

pub(crate) fn check_dims(ctx: &MomentContext, mu: &DVector<f64>, carry: &DVector<f64>) {
    assert_eq!(mu.len(), ctx.n(), "rate vector has wrong length");
    assert_eq!(carry.len(), ctx.n(), "carry vector has wrong length");
}

/// Mean intensity at time `t` after a stage start with zero carry and
/// constant exogenous rate `mu`.
pub fn mean_intensity(ctx: &MomentContext, mu: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
    mean_intensity_with_carry(ctx, mu, &DVector::zeros(ctx.n()), t)
}

/// Mean intensity at time `t` after a stage start with the given carry.
pub fn mean_intensity_with_carry(
    ctx: &MomentContext,
    mu: &DVector<f64>,
    carry: &DVector<f64>,
    t: f64,
) -> Result<DVector<f64>> {
    if !(t >= 0.0) {
        return domain(format!("mean intensity needs t >= 0, got {t}"));
    }
    check_dims(ctx, mu, carry);
    Ok(ctx.mean_from_propagator(&ctx.propagator(t), mu, carry))
}

/// Expected per-node counts over one stage: `Γ·mu + Υ·carry`.
pub fn stage_mean_counts(ctx: &MomentContext, mu: &DVector<f64>, carry: &DVector<f64>) -> DVector<f64> {
    check_dims(ctx, mu, carry);
    &ctx.rate_to_counts * mu + &ctx.carry_to_counts * carry
}

/// Expected carry at the end of the stage.
pub fn expected_next_carry(ctx: &MomentContext, mu: &DVector<f64>, carry: &DVector<f64>) -> DVector<f64> {
    check_dims(ctx, mu, carry);
    &ctx.stage_propagator * carry + &ctx.carry_to_counts * (&ctx.coupling * mu)
}

/// Gauss–Legendre nodes on `[a, b]` split into panels of length at most `panel`.
pub(crate) fn composite_nodes(rule: &GaussLegendre, a: f64, b: f64, panel: f64) -> Vec<(f64, f64)> {
    if b <= a {
        return Vec::new();
    }
    let panels = ((b - a) / panel).ceil().max(1.0) as usize;
    let width = (b - a) / panels as f64;
    (0..panels)
        .flat_map(|p| {
            let lo = a + p as f64 * width;
            rule.on(lo, lo + width).collect::<Vec<_>>()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dvec;
    use approx::assert_relative_eq;

    fn scalar(a: f64, w: f64, delta: f64) -> MomentContext {
        MomentContext::from_coupling(DMatrix::from_element(1, 1, a), w, delta).unwrap()
    }

    #[test]
    fn poisson_limit_of_stage_operators() {
        let ctx = MomentContext::from_coupling(DMatrix::zeros(3, 3), 1.7, 2.5).unwrap();
        let g = ctx.rate_to_counts();
        assert!(crate::linalg::max_abs_diff(g, &(DMatrix::identity(3, 3) * 2.5)) < 1e-12);
        let z = stage_mean_counts(&ctx, &dvec(&[2.0, 0.0, 1.0]), &DVector::zeros(3));
        assert_relative_eq!(z[0], 5.0, epsilon = 1e-12);
        assert_relative_eq!(z[2], 2.5, epsilon = 1e-12);
    }

    #[test]
    fn decaying_carry_integral() {
        let ctx = scalar(0.0, 2.0, 1.0);
        let z = stage_mean_counts(&ctx, &dvec(&[0.0]), &dvec(&[1.0]));
        assert_relative_eq!(z[0], (1.0 - (-2.0f64).exp()) / 2.0, epsilon = 1e-14);
    }

    #[test]
    fn scalar_mean_intensity() {
        let ctx = scalar(0.5, 1.0, 1.0);
        let eta = mean_intensity(&ctx, &dvec(&[1.0]), 1.0).unwrap();
        assert_relative_eq!(eta[0], 2.0 - (-0.5f64).exp(), epsilon = 1e-13);
        assert!(mean_intensity(&ctx, &dvec(&[1.0]), -0.1).is_err());
        let zero = mean_intensity(&ctx, &dvec(&[0.0]), 0.7).unwrap();
        assert_eq!(zero[0], 0.0);
    }

    #[test]
    fn stage_counts_integrate_mean_intensity() {
        let a = DMatrix::from_row_slice(3, 3, &[0.1, 0.3, 0.0, 0.0, 0.2, 0.25, 0.4, 0.0, 0.1]);
        let ctx = MomentContext::from_coupling(a, 1.3, 1.6).unwrap();
        let mu = dvec(&[0.4, 0.1, 0.9]);
        let y = dvec(&[0.3, 0.0, 1.2]);
        let gl = GaussLegendre::new(30);
        let mut integral = DVector::zeros(3);
        for (t, w) in gl.on(0.0, 1.6) {
            integral += mean_intensity_with_carry(&ctx, &mu, &y, t).unwrap() * w;
        }
        let z = stage_mean_counts(&ctx, &mu, &y);
        for i in 0..3 {
            assert_relative_eq!(integral[i], z[i], max_relative = 1e-10);
        }
        let part = ctx.expected_counts_between(&mu, &y, 0.0, 0.7) + ctx.expected_counts_between(&mu, &y, 0.7, 1.6);
        for i in 0..3 {
            assert_relative_eq!(part[i], z[i], max_relative = 1e-10);
        }
    }

    #[test]
    fn next_carry_matches_mean_minus_base() {
        // The carry is the part of the mean intensity above the exogenous rate.
        let a = DMatrix::from_row_slice(2, 2, &[0.2, 0.5, 0.1, 0.3]);
        let ctx = MomentContext::from_coupling(a, 1.0, 0.8).unwrap();
        let mu = dvec(&[0.5, 0.2]);
        let y = dvec(&[0.1, 0.6]);
        let next = expected_next_carry(&ctx, &mu, &y);
        let eta = mean_intensity_with_carry(&ctx, &mu, &y, 0.8).unwrap();
        for i in 0..2 {
            assert_relative_eq!(next[i], eta[i] - mu[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn rejects_bad_stage_length() {
        assert!(MomentContext::from_coupling(DMatrix::zeros(1, 1), 1.0, 0.0).is_err());
    }
}
