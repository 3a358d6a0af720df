//! Pairwise second-order density `E[dN(t) dN(t')ᵀ]` within one stage.
//!
//! For `t > t'` the continuous part is
//! `e^{C(t−t')} (A' Σ(t') + P(t')) + η(t) η(t')ᵀ`, where `Σ = diag(η)` and
//! `P(t')` is the covariance of the endogenous intensity at `t'`. `P` vanishes
//! at the stage start, so with `t' = 0` the formula reduces to the response
//! matrix times `Σ(0)`. Later reference times need `P` to account for the
//! randomness already accumulated in the history.

use nalgebra::{DMatrix, DVector};

use super::{check_dims, composite_nodes, MomentContext};
use crate::error::{domain, Result};
use crate::quadrature::GaussLegendre;

const PANEL: f64 = 0.5;
const ORDER: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct PairDensity {
    /// Continuous part; on `t = t'` the average of the two one-sided limits.
    pub continuous: DMatrix<f64>,
    /// Diagonal point mass `diag(η(t))`, present only when `t = t'`.
    pub atom: Option<DMatrix<f64>>,
}

/// Covariance of the endogenous intensity at time `t` of the stage:
/// `P(t) = ∫₀ᵗ e^{C(t−s)} A' diag(η(s)) A'ᵀ e^{C(t−s)ᵀ} ds`.
pub fn history_covariance(ctx: &MomentContext, mu: &DVector<f64>, carry: &DVector<f64>, t: f64) -> Result<DMatrix<f64>> {
    if !(t >= 0.0) {
        return domain("time must be nonnegative");
    }
    check_dims(ctx, mu, carry);
    let n = ctx.n();
    let rule = GaussLegendre::new(ORDER);
    let mut p = DMatrix::zeros(n, n);
    for (s, w) in composite_nodes(&rule, 0.0, t, PANEL) {
        let eta = ctx.mean_from_propagator(&ctx.propagator(s), mu, carry);
        let jump = scale_columns(ctx.coupling(), &eta);
        let prop = ctx.propagator(t - s);
        let left = &prop * jump;
        let right = &prop * ctx.coupling();
        p += left * right.transpose() * w;
    }
    Ok(0.5 * (&p + p.transpose()))
}

/// `A' diag(η) + P` at reference time `s`, together with `η(s)`.
fn lagged_source(ctx: &MomentContext, mu: &DVector<f64>, carry: &DVector<f64>, s: f64) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let eta = ctx.mean_from_propagator(&ctx.propagator(s), mu, carry);
    let q = scale_columns(ctx.coupling(), &eta) + history_covariance(ctx, mu, carry, s)?;
    Ok((q, eta))
}

fn scale_columns(m: &DMatrix<f64>, v: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col *= v[j];
    }
    out
}

/// Second-order density of the stage counting process at `(t, t')`.
pub fn second_order_density(
    ctx: &MomentContext,
    mu: &DVector<f64>,
    carry: &DVector<f64>,
    t: f64,
    t_prime: f64,
) -> Result<PairDensity> {
    if !(t >= 0.0 && t_prime >= 0.0) {
        return domain("times must be nonnegative");
    }
    check_dims(ctx, mu, carry);
    if t < t_prime {
        let d = second_order_density(ctx, mu, carry, t_prime, t)?;
        return Ok(PairDensity { continuous: d.continuous.transpose(), atom: d.atom });
    }
    let (q, eta_ref) = lagged_source(ctx, mu, carry, t_prime)?;
    if t == t_prime {
        let continuous = (&q + q.transpose()) * 0.5 + &eta_ref * eta_ref.transpose();
        return Ok(PairDensity { continuous, atom: Some(DMatrix::from_diagonal(&eta_ref)) });
    }
    let eta = ctx.mean_from_propagator(&ctx.propagator(t), mu, carry);
    let continuous = ctx.propagator(t - t_prime) * q + eta * eta_ref.transpose();
    Ok(PairDensity { continuous, atom: None })
}

/// `E[N(t_bin) N(s_bin)ᵀ]` for two time bins of one stage, point mass included.
///
/// The bins must be identical or non-overlapping.
pub fn binned_second_moment(
    ctx: &MomentContext,
    mu: &DVector<f64>,
    carry: &DVector<f64>,
    t_bin: (f64, f64),
    s_bin: (f64, f64),
) -> Result<DMatrix<f64>> {
    check_dims(ctx, mu, carry);
    for (lo, hi) in [t_bin, s_bin] {
        if !(lo >= 0.0 && hi > lo) {
            return domain("bins must be nonempty subsets of [0, ∞)");
        }
    }
    let (a, b) = t_bin;
    let (c, d) = s_bin;
    let m_t = ctx.expected_counts_between(mu, carry, a, b);
    let m_s = ctx.expected_counts_between(mu, carry, c, d);
    let rule = GaussLegendre::new(ORDER);
    let inv = ctx.generator_inv();
    if t_bin == s_bin {
        let mut x = DMatrix::zeros(ctx.n(), ctx.n());
        for (s, w) in composite_nodes(&rule, a, b, PANEL) {
            let (q, _) = lagged_source(ctx, mu, carry, s)?;
            x += ctx.integrated_propagator(b - s) * q * w;
        }
        return Ok(&x + x.transpose() + &m_t * m_t.transpose() + DMatrix::from_diagonal(&m_t));
    }
    if a >= d {
        let mut x = DMatrix::zeros(ctx.n(), ctx.n());
        for (s, w) in composite_nodes(&rule, c, d, PANEL) {
            let (q, _) = lagged_source(ctx, mu, carry, s)?;
            x += inv * (ctx.propagator(b - s) - ctx.propagator(a - s)) * q * w;
        }
        return Ok(x + m_t * m_s.transpose());
    }
    if b <= c {
        return Ok(binned_second_moment(ctx, mu, carry, s_bin, t_bin)?.transpose());
    }
    domain("bins overlap partially")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{dvec, max_abs_diff};
    use crate::moments::oracle::moment_ode;

    fn ctx3() -> MomentContext {
        let a = DMatrix::from_row_slice(3, 3, &[0.1, 0.3, 0.0, 0.0, 0.2, 0.25, 0.4, 0.0, 0.1]);
        MomentContext::from_coupling(a, 1.3, 1.0).unwrap()
    }

    #[test]
    fn poisson_density_is_product() {
        let ctx = MomentContext::from_coupling(DMatrix::zeros(2, 2), 1.0, 1.0).unwrap();
        let mu = dvec(&[0.5, 2.0]);
        let zero = DVector::zeros(2);
        let d = second_order_density(&ctx, &mu, &zero, 0.8, 0.3).unwrap();
        assert!(max_abs_diff(&d.continuous, &(&mu * mu.transpose())) < 1e-14);
        assert!(d.atom.is_none());
        let d = second_order_density(&ctx, &mu, &zero, 0.4, 0.4).unwrap();
        assert_eq!(d.atom.unwrap(), DMatrix::from_diagonal(&mu));
    }

    #[test]
    fn symmetry_relation() {
        let ctx = ctx3();
        let mu = dvec(&[0.4, 0.1, 0.9]);
        let y = dvec(&[0.3, 0.0, 1.2]);
        for (t, s) in [(0.9, 0.2), (1.7, 0.0), (0.3, 0.25)] {
            let d1 = second_order_density(&ctx, &mu, &y, t, s).unwrap();
            let d2 = second_order_density(&ctx, &mu, &y, s, t).unwrap();
            assert_eq!(d1.continuous, d2.continuous.transpose());
        }
        let d = second_order_density(&ctx, &mu, &y, 0.5, 0.5).unwrap();
        assert!(max_abs_diff(&d.continuous, &d.continuous.transpose()) < 1e-14);
    }

    #[test]
    fn stage_start_density_is_response_times_rate() {
        let ctx = ctx3();
        let mu = dvec(&[0.4, 0.1, 0.9]);
        let y = DVector::zeros(3);
        let d = second_order_density(&ctx, &mu, &y, 0.7, 0.0).unwrap();
        let r = crate::moments::response_function(&ctx, 0.7, crate::moments::ResponseBackend::ClosedForm).unwrap();
        let eta = crate::moments::mean_intensity(&ctx, &mu, 0.7).unwrap();
        let want = r * DMatrix::from_diagonal(&mu) + eta * mu.transpose();
        assert!(max_abs_diff(&d.continuous, &want) < 1e-12);
    }

    #[test]
    fn history_covariance_matches_moment_ode() {
        let ctx = ctx3();
        let mu = dvec(&[0.4, 0.1, 0.9]);
        let y = dvec(&[0.3, 0.0, 1.2]);
        let ode = moment_ode(&ctx, &mu, &y, 1.0, 4000);
        let p = history_covariance(&ctx, &mu, &y, 1.0).unwrap();
        let v_cov = &ode.vv - &ode.v * ode.v.transpose();
        assert!(max_abs_diff(&p, &v_cov) < 1e-9, "{p} {v_cov}");
    }

    #[test]
    fn whole_stage_bin_matches_moment_ode() {
        let ctx = ctx3();
        let mu = dvec(&[0.4, 0.1, 0.9]);
        let y = dvec(&[0.3, 0.0, 1.2]);
        let ode = moment_ode(&ctx, &mu, &y, 1.0, 4000);
        let got = binned_second_moment(&ctx, &mu, &y, (0.0, 1.0), (0.0, 1.0)).unwrap();
        assert!(max_abs_diff(&got, &ode.nn) < 1e-9);
    }

    #[test]
    fn bins_add_up() {
        // E[N(0,1) N(0,1)ᵀ] = Σ over the four sub-bin pairs of [0,.4) ∪ [.4,1).
        let ctx = ctx3();
        let mu = dvec(&[0.4, 0.1, 0.9]);
        let y = dvec(&[0.3, 0.0, 1.2]);
        let lo = (0.0, 0.4);
        let hi = (0.4, 1.0);
        let sum = binned_second_moment(&ctx, &mu, &y, lo, lo).unwrap()
            + binned_second_moment(&ctx, &mu, &y, hi, hi).unwrap()
            + binned_second_moment(&ctx, &mu, &y, lo, hi).unwrap()
            + binned_second_moment(&ctx, &mu, &y, hi, lo).unwrap();
        let whole = binned_second_moment(&ctx, &mu, &y, (0.0, 1.0), (0.0, 1.0)).unwrap();
        assert!(max_abs_diff(&sum, &whole) < 1e-10);
        assert!(binned_second_moment(&ctx, &mu, &y, (0.0, 0.5), (0.3, 0.8)).is_err());
    }

    #[test]
    fn scalar_variance_value() {
        let ctx = MomentContext::from_coupling(DMatrix::from_element(1, 1, 0.5), 1.0, 1.0).unwrap();
        let mu = dvec(&[1.0]);
        let zero = dvec(&[0.0]);
        let m2 = binned_second_moment(&ctx, &mu, &zero, (0.0, 1.0), (0.0, 1.0)).unwrap()[(0, 0)];
        let mean = crate::moments::stage_mean_counts(&ctx, &mu, &zero)[0];
        assert!((m2 - mean * mean - 1.769_80).abs() < 1e-5, "{}", m2 - mean * mean);
    }
}
