//! Moment ODEs for `(N, v)` integrated with RK4, used as an independent oracle.

use nalgebra::{DMatrix, DVector};

use super::MomentContext;

pub(crate) struct Moments {
    pub n: DVector<f64>,
    pub v: DVector<f64>,
    pub nn: DMatrix<f64>,
    pub nv: DMatrix<f64>,
    pub vv: DMatrix<f64>,
}

impl Moments {
    fn axpy(&self, h: f64, d: &Moments) -> Moments {
        Moments {
            n: &self.n + &d.n * h,
            v: &self.v + &d.v * h,
            nn: &self.nn + &d.nn * h,
            nv: &self.nv + &d.nv * h,
            vv: &self.vv + &d.vv * h,
        }
    }
}

fn rhs(a: &DMatrix<f64>, w: f64, mu: &DVector<f64>, s: &Moments) -> Moments {
    let lam = mu + &s.v;
    let diag = DMatrix::from_diagonal(&lam);
    let n_lam = &s.n * mu.transpose() + &s.nv;
    let lam_v = mu * s.v.transpose() + &s.vv;
    Moments {
        n: lam.clone(),
        v: -&s.v * w + a * &lam,
        nn: &n_lam + n_lam.transpose() + &diag,
        nv: -&s.nv * w + &n_lam * a.transpose() + &lam_v + &diag * a.transpose(),
        vv: -&s.vv * (2.0 * w) + a * &lam_v + lam_v.transpose() * a.transpose() + a * &diag * a.transpose(),
    }
}

/// Raw moments of stage counts `N(t)` and endogenous intensity `v(t)` at `t`.
pub(crate) fn moment_ode(ctx: &MomentContext, mu: &DVector<f64>, carry: &DVector<f64>, t: f64, steps: usize) -> Moments {
    let n = ctx.n();
    let a = ctx.coupling();
    let w = ctx.decay();
    let mut s = Moments {
        n: DVector::zeros(n),
        v: carry.clone(),
        nn: DMatrix::zeros(n, n),
        nv: DMatrix::zeros(n, n),
        vv: carry * carry.transpose(),
    };
    let h = t / steps as f64;
    for _ in 0..steps {
        let k1 = rhs(a, w, mu, &s);
        let k2 = rhs(a, w, mu, &s.axpy(0.5 * h, &k1));
        let k3 = rhs(a, w, mu, &s.axpy(0.5 * h, &k2));
        let k4 = rhs(a, w, mu, &s.axpy(h, &k3));
        s = s.axpy(h / 6.0, &k1).axpy(h / 3.0, &k2).axpy(h / 3.0, &k3).axpy(h / 6.0, &k4);
    }
    s
}
