//! Allocation solvers over the per-stage feasible set
//! `{u : cᵀu ≤ C, 0 ≤ u ≤ α, u_i = 0 off the mitigators}`.

use nalgebra::{DMatrix, DVector};

use crate::mdp::FeasibleSet;

/// `constant + linearᵀu + uᵀ quadratic u`, with `quadratic` negative semidefinite.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub constant: f64,
    pub linear: DVector<f64>,
    pub quadratic: Option<DMatrix<f64>>,
}

impl Objective {
    pub fn linear(constant: f64, linear: DVector<f64>) -> Self {
        Self { constant, linear, quadratic: None }
    }

    pub fn value(&self, u: &DVector<f64>) -> f64 {
        let mut v = self.constant + self.linear.dot(u);
        if let Some(q) = &self.quadratic {
            v += u.dot(&(q * u));
        }
        v
    }

    /// Sum of two objectives on the same variables.
    pub fn plus(mut self, other: &Objective) -> Self {
        self.constant += other.constant;
        self.linear += &other.linear;
        self.quadratic = match (self.quadratic.take(), &other.quadratic) {
            (Some(a), Some(b)) => Some(a + b),
            (Some(a), None) => Some(a),
            (None, Some(b)) => Some(b.clone()),
            (None, None) => None,
        };
        self
    }

    pub fn scaled(mut self, factor: f64) -> Self {
        self.constant *= factor;
        self.linear *= factor;
        if let Some(q) = self.quadratic.as_mut() {
            *q *= factor;
        }
        self
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub u: DVector<f64>,
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Maximizes the objective over the feasible set.
pub fn solve(objective: &Objective, feasible: &FeasibleSet) -> Solution {
    match &objective.quadratic {
        Some(q) if q.iter().any(|x| *x != 0.0) => {
            let mut s = solve_concave_qp(&objective.linear, q, feasible);
            s.value += objective.constant;
            s
        }
        _ => {
            let u = solve_linear(&objective.linear, feasible);
            Solution { value: objective.value(&u), u, converged: true, iterations: 0 }
        }
    }
}

/// Greedy fractional knapsack: fill mitigators in decreasing `g_i / c_i`
/// (ties by index) until the budget runs out. Nodes with `g_i ≤ 0` stay at 0.
pub fn solve_linear(g: &DVector<f64>, feasible: &FeasibleSet) -> DVector<f64> {
    let n = feasible.n();
    let mut order: Vec<usize> = feasible.free().filter(|&i| g[i] > 0.0 && feasible.cap()[i] > 0.0).collect();
    let ratio = |i: usize| {
        let c = feasible.price()[i];
        if c > 0.0 { g[i] / c } else { f64::INFINITY }
    };
    order.sort_by(|&a, &b| ratio(b).total_cmp(&ratio(a)).then(a.cmp(&b)));
    let mut u = DVector::zeros(n);
    let mut left = feasible.budget();
    for i in order {
        let c = feasible.price()[i];
        let cap = feasible.cap()[i];
        let take = if c > 0.0 { cap.min(left / c) } else { cap };
        if take <= 0.0 {
            break;
        }
        u[i] = take;
        left = (left - take * c).max(0.0);
    }
    u
}

/// Euclidean projection onto the feasible set: `clip(u − νc, 0, α)` on the
/// mitigators with the budget multiplier `ν ≥ 0` found by bisection.
pub fn project_feasible(u_raw: &DVector<f64>, feasible: &FeasibleSet) -> DVector<f64> {
    let free: Vec<usize> = feasible.free().collect();
    let sub = DVector::from_iterator(free.len(), free.iter().map(|&i| u_raw[i]));
    let projected = project_reduced(&sub, &Reduced::new(feasible, &free));
    let mut u = DVector::zeros(feasible.n());
    for (k, &i) in free.iter().enumerate() {
        u[i] = projected[k];
    }
    u
}

/// Feasible set restricted to the mitigator coordinates.
struct Reduced {
    price: DVector<f64>,
    cap: DVector<f64>,
    budget: f64,
}

impl Reduced {
    fn new(feasible: &FeasibleSet, free: &[usize]) -> Self {
        Self {
            price: DVector::from_iterator(free.len(), free.iter().map(|&i| feasible.price()[i])),
            cap: DVector::from_iterator(free.len(), free.iter().map(|&i| feasible.cap()[i])),
            budget: feasible.budget(),
        }
    }
}

fn project_reduced(u: &DVector<f64>, set: &Reduced) -> DVector<f64> {
    let clip = |nu: f64| DVector::from_fn(u.len(), |i, _| (u[i] - nu * set.price[i]).clamp(0.0, set.cap[i]));
    let spend = |v: &DVector<f64>| set.price.dot(v);
    let boxed = clip(0.0);
    if spend(&boxed) <= set.budget {
        return boxed;
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    while spend(&clip(hi)) > set.budget {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if spend(&clip(mid)) > set.budget {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi.max(1.0) {
            break;
        }
    }
    clip(hi)
}

const QP_TOL: f64 = 1e-6;
const QP_MAX_ITER: usize = 10_000;

/// Maximizes `gᵀu + uᵀQu` (`Q ⪯ 0`) by accelerated projected gradient ascent
/// with backtracking and adaptive restart. Returns the best iterate; `converged`
/// reports whether the projected-gradient norm fell below `1e-6`.
pub fn solve_concave_qp(g: &DVector<f64>, q: &DMatrix<f64>, feasible: &FeasibleSet) -> Solution {
    let free: Vec<usize> = feasible.free().collect();
    let n = feasible.n();
    let k = free.len();
    let set = Reduced::new(feasible, &free);
    let gf = DVector::from_iterator(k, free.iter().map(|&i| g[i]));
    let qf = DMatrix::from_fn(k, k, |a, b| 0.5 * (q[(free[a], free[b])] + q[(free[b], free[a])]));
    let value = |u: &DVector<f64>| gf.dot(u) + u.dot(&(&qf * u));
    let grad = |u: &DVector<f64>| &gf + &qf * u * 2.0;

    let mut x = project_reduced(&DVector::zeros(k), &set);
    let mut fx = value(&x);
    let mut best = (x.clone(), fx);
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut step = 1.0 / (2.0 * qf.norm()).max(1e-12);
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..QP_MAX_ITER {
        iterations = it + 1;
        let gx = grad(&x);
        let residual = (project_reduced(&(&x + &gx), &set) - &x).norm();
        if residual < QP_TOL {
            converged = true;
            break;
        }
        let gy = grad(&y);
        let fy = value(&y);
        let mut next;
        loop {
            next = project_reduced(&(&y + &gy * step), &set);
            let d = &next - &y;
            if value(&next) >= fy + gy.dot(&d) - d.norm_squared() / (2.0 * step) - 1e-15 * fy.abs() {
                break;
            }
            step *= 0.5;
            if step < 1e-300 {
                break;
            }
        }
        let f_next = value(&next);
        if f_next < fx {
            // Restart momentum when the objective drops.
            t = 1.0;
            y = x.clone();
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = &next + (&next - &x) * ((t - 1.0) / t_next);
        t = t_next;
        x = next;
        fx = f_next;
        if fx > best.1 {
            best = (x.clone(), fx);
        }
    }
    if !converged {
        log::warn!("concave QP stopped after {iterations} iterations");
    }
    let mut u = DVector::zeros(n);
    for (a, &i) in free.iter().enumerate() {
        u[i] = best.0[a];
    }
    Solution { u, value: best.1, converged, iterations }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dvec;
    use rand::Rng;

    fn feasible(price: &[f64], budget: f64, cap: &[f64]) -> FeasibleSet {
        FeasibleSet::new(dvec(price), budget, dvec(cap), vec![true; price.len()]).unwrap()
    }

    /// Best objective over the grid `{0, 0.01, …}` restricted to feasible points.
    pub(crate) fn grid_best(f: &dyn Fn(&DVector<f64>) -> f64, set: &FeasibleSet) -> f64 {
        let free: Vec<usize> = set.free().collect();
        let mut best = f64::NEG_INFINITY;
        let mut u = DVector::zeros(set.n());
        fn rec(k: usize, free: &[usize], u: &mut DVector<f64>, set: &FeasibleSet, f: &dyn Fn(&DVector<f64>) -> f64, best: &mut f64) {
            if k == free.len() {
                if set.price().dot(u) <= set.budget() + 1e-12 {
                    *best = best.max(f(u));
                }
                return;
            }
            let i = free[k];
            let steps = (set.cap()[i] / 0.01).floor() as usize;
            for s in 0..=steps {
                u[i] = s as f64 * 0.01;
                rec(k + 1, free, u, set, f, best);
            }
            u[i] = 0.0;
        }
        rec(0, &free, &mut u, set, f, &mut best);
        best
    }

    #[test]
    fn linear_examples() {
        let set = feasible(&[1.0, 1.0], 1.0, &[2.0, 2.0]);
        assert_eq!(solve_linear(&dvec(&[3.0, 1.0]), &set), dvec(&[1.0, 0.0]));
        assert_eq!(solve_linear(&dvec(&[-1.0, 0.0]), &set), dvec(&[0.0, 0.0]));
        // ties go to the lower index
        assert_eq!(solve_linear(&dvec(&[2.0, 2.0]), &set), dvec(&[1.0, 0.0]));
    }

    #[test]
    fn masked_nodes_stay_zero() {
        let set = FeasibleSet::new(dvec(&[1.0, 1.0]), 5.0, dvec(&[1.0, 1.0]), vec![false, true]).unwrap();
        assert_eq!(solve_linear(&dvec(&[5.0, 1.0]), &set), dvec(&[0.0, 1.0]));
        assert_eq!(project_feasible(&dvec(&[3.0, 3.0]), &set), dvec(&[0.0, 1.0]));
    }

    #[test]
    fn projection_examples() {
        let set = feasible(&[1.0, 2.0], 10.0, &[1.0, 1.5]);
        let u = dvec(&[0.5, 1.0]);
        assert_eq!(project_feasible(&u, &set), u);
        assert_eq!(project_feasible(&dvec(&[2.0, 3.0]), &set), dvec(&[1.0, 1.5]));
        let tight = feasible(&[1.0, 2.0], 1.0, &[1.0, 1.5]);
        let p = project_feasible(&dvec(&[2.0, 3.0]), &tight);
        assert!((tight.price().dot(&p) - 1.0).abs() < 1e-9);
        assert!(tight.contains(&p, 1e-9));
        assert_eq!(project_feasible(&p, &tight), p);
    }

    #[test]
    fn qp_interior_optimum() {
        let set = feasible(&[1.0, 1.0], 100.0, &[5.0, 5.0]);
        let g = dvec(&[1.0, 2.0]);
        let s = solve_concave_qp(&g, &(-DMatrix::identity(2, 2)), &set);
        assert!((s.u[0] - 0.5).abs() < 1e-5 && (s.u[1] - 1.0).abs() < 1e-5, "{}", s.u);
        assert!(s.converged);
    }

    #[test]
    fn qp_with_zero_quadratic_matches_linear() {
        let set = feasible(&[1.0, 2.0, 0.5], 1.5, &[1.0, 1.0, 1.0]);
        let g = dvec(&[1.0, 3.0, 0.2]);
        let qp = solve_concave_qp(&g, &DMatrix::zeros(3, 3), &set);
        let lin = solve_linear(&g, &set);
        assert!((qp.value - g.dot(&lin)).abs() < 1e-5);
    }

    #[test]
    fn random_instances_match_grid() {
        let mut rng = crate::rng::rng_from(17);
        for _ in 0..20 {
            let k = rng.random_range(1..=3);
            let price: Vec<f64> = (0..k).map(|_| rng.random_range(0.5..2.0)).collect();
            let cap: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..0.6)).collect();
            let set = feasible(&price, rng.random_range(0.0..1.0), &cap);
            let g = DVector::from_fn(k, |_, _| rng.random_range(-1.0..2.0));
            let m = DMatrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
            let q = -(&m * m.transpose());
            let lin = solve_linear(&g, &set);
            let lin_best = grid_best(&|u| g.dot(u), &set);
            assert!(g.dot(&lin) >= lin_best - 1e-12);
            assert!(g.dot(&lin) - lin_best <= g.amax() * 0.01 * k as f64 + 1e-12);
            let s = solve_concave_qp(&g, &q, &set);
            let qp_best = grid_best(&|u| g.dot(u) + u.dot(&(&q * u)), &set);
            assert!(s.value >= qp_best - 1e-3, "{} < {}", s.value, qp_best);
            assert!(set.contains(&s.u, 1e-9));
        }
    }
}
