#![allow(dead_code)]

use hawkes_mitigation::hawkes::{spectral_radius, NetworkModel};
use hawkes_mitigation::mdp::FeasibleSet;
use hawkes_mitigation::rng::rng_from;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Dense random stable model with radius `rho` and a random follower matrix.
pub fn random_model(seed: u64, n: usize, rho: f64, decay: f64) -> NetworkModel {
    let mut rng = rng_from(seed);
    let mut a = DMatrix::from_fn(n, n, |_, _| if rng.random_bool(0.7) { rng.random_range(0.0..0.5) } else { 0.0 });
    let r = spectral_radius(&a, decay);
    if r > 0.0 {
        a *= rho / r;
    }
    let mu_f = DVector::from_fn(n, |_, _| rng.random_range(0.2..1.0));
    let mu_m = DVector::from_fn(n, |_, _| rng.random_range(0.2..1.0));
    let b = DMatrix::from_fn(n, n, |i, j| if i == j || rng.random_bool(0.4) { 1.0 } else { 0.0 });
    NetworkModel::new(a, decay, mu_f, mu_m, b).unwrap()
}

pub fn open_set(n: usize, budget: f64, cap: f64) -> FeasibleSet {
    FeasibleSet::new(DVector::from_element(n, 1.0), budget, DVector::from_element(n, cap), vec![true; n]).unwrap()
}
