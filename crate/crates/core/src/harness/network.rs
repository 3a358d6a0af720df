use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::hawkes::{spectral_radius, NetworkModel};
use crate::mdp::FeasibleSet;
use crate::rng::rng_from;

/// A generated network with its campaign roles and intervention limits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticNetwork {
    pub model: NetworkModel,
    pub fake_sources: Vec<usize>,
    pub mitigators: Vec<usize>,
    pub target_radius: f64,
    /// Prices, caps and mitigator mask; the budget is set per stage.
    pub limits: FeasibleSet,
}

impl SyntheticNetwork {
    pub fn feasible(&self, budget: f64) -> FeasibleSet {
        self.limits.with_budget(budget).expect("budget draws are nonnegative")
    }
}

/// Random excitation matrix with edges kept at rate `sparsity`, rescaled to a
/// random target spectral radius. Returns the matrix and the target.
pub fn random_excitation(
    n: usize,
    sparsity: f64,
    decay: f64,
    cfg: &ExperimentConfig,
    rng: &mut crate::rng::Rng,
) -> (DMatrix<f64>, f64) {
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.random_bool(sparsity) {
                a[(i, j)] = cfg.excitation.sample(rng);
            }
        }
    }
    let target = cfg.spectral_radius.sample(rng);
    let rho = spectral_radius(&a, decay);
    if rho > 0.0 {
        a *= target / rho;
    }
    (a, target)
}

/// `b_ij = 1` iff `j` influences `i`, plus self-loops.
pub fn follower_matrix(excitation: &DMatrix<f64>) -> DMatrix<f64> {
    let n = excitation.nrows();
    DMatrix::from_fn(n, n, |i, j| if i == j || excitation[(j, i)] > 0.0 { 1.0 } else { 0.0 })
}

pub fn generate_network(cfg: &ExperimentConfig, seed: u64) -> Result<SyntheticNetwork> {
    cfg.validate()?;
    if cfg.mitigators == 0 {
        return Err(Error::Config("empty mitigator set".into()));
    }
    let n = cfg.n;
    let mut rng = rng_from(seed);
    let (a, target_radius) = random_excitation(n, cfg.sparsity, cfg.decay, cfg, &mut rng);
    let follows = follower_matrix(&a);

    let picked = sample(&mut rng, n, cfg.fake_sources + cfg.mitigators).into_vec();
    let mut fake_sources = picked[..cfg.fake_sources].to_vec();
    let mut mitigators = picked[cfg.fake_sources..].to_vec();
    fake_sources.sort_unstable();
    mitigators.sort_unstable();

    let mut mu_fake = DVector::zeros(n);
    for &i in &fake_sources {
        mu_fake[i] = cfg.base_rate.sample(&mut rng);
    }
    let mut mu_mitigation = DVector::zeros(n);
    let mut cap = DVector::zeros(n);
    let mut price = DVector::from_element(n, 1.0);
    let mut mask = vec![false; n];
    for &i in &mitigators {
        mu_mitigation[i] = cfg.base_rate.sample(&mut rng);
        cap[i] = cfg.cap.sample(&mut rng);
        price[i] = cfg.price.sample(&mut rng);
        mask[i] = true;
    }
    let model = NetworkModel::new(a, cfg.decay, mu_fake, mu_mitigation, follows)?;
    let limits = FeasibleSet::new(price, 0.0, cap, mask)?;
    Ok(SyntheticNetwork { model, fake_sources, mitigators, target_radius, limits })
}

/// Per-stage budgets `n · U` for one replicate.
pub fn draw_budgets(cfg: &ExperimentConfig, stages: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_from(seed);
    let scale = cfg.n as f64;
    match cfg.budget_redraw {
        super::config::BudgetRedraw::PerStage => {
            (0..stages).map(|_| scale * cfg.budget_per_node.sample(&mut rng)).collect()
        }
        super::config::BudgetRedraw::PerReplicate => {
            vec![scale * cfg.budget_per_node.sample(&mut rng); stages]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{mean, std_err};

    fn small() -> ExperimentConfig {
        ExperimentConfig { n: 40, fake_sources: 5, mitigators: 5, ..Default::default() }
    }

    #[test]
    fn empty_mask_gives_identity_followers() {
        let cfg = ExperimentConfig { sparsity: 0.0, ..small() };
        let net = generate_network(&cfg, 1).unwrap();
        assert!(net.model.excitation().iter().all(|a| *a == 0.0));
        assert_eq!(net.model.follows(), &DMatrix::identity(40, 40));
    }

    #[test]
    fn radius_hits_target() {
        let cfg = ExperimentConfig { sparsity: 0.1, ..small() };
        for seed in 0..10 {
            let net = generate_network(&cfg, seed).unwrap();
            let rho = net.model.spectral_radius();
            assert!((rho - net.target_radius).abs() < 1e-6, "{rho} vs {}", net.target_radius);
            assert!((0.3..0.9).contains(&net.target_radius));
        }
    }

    #[test]
    fn edge_density_matches_rate() {
        let cfg = ExperimentConfig { sparsity: 0.05, ..small() };
        let dens: Vec<f64> = (0..100)
            .map(|s| {
                let a = generate_network(&cfg, s).unwrap().model.excitation().clone();
                a.iter().filter(|x| **x > 0.0).count() as f64 / (40.0 * 39.0)
            })
            .collect();
        assert!((mean(&dens) - 0.05).abs() < 3.0 * std_err(&dens));
    }

    #[test]
    fn roles_are_disjoint_and_rates_confined() {
        let net = generate_network(&small(), 3).unwrap();
        assert_eq!(net.fake_sources.len(), 5);
        assert_eq!(net.mitigators.len(), 5);
        assert!(net.fake_sources.iter().all(|i| !net.mitigators.contains(i)));
        let mu_f = net.model.base_rate(crate::hawkes::Process::Fake);
        for i in 0..40 {
            if !net.fake_sources.contains(&i) {
                assert_eq!(mu_f[i], 0.0);
            }
            assert_eq!(net.limits.mitigators()[i], net.mitigators.contains(&i));
        }
        let a = net.model.excitation();
        let b = net.model.follows();
        for i in 0..40 {
            for j in 0..40 {
                assert_eq!(b[(i, j)] == 1.0, i == j || a[(j, i)] > 0.0);
            }
        }
    }

    #[test]
    fn empty_mitigator_set_is_rejected() {
        let cfg = ExperimentConfig { mitigators: 0, ..small() };
        assert!(matches!(generate_network(&cfg, 0), Err(Error::Config(_))));
    }

    #[test]
    fn generation_is_seeded() {
        let a = generate_network(&small(), 9).unwrap();
        let b = generate_network(&small(), 9).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.mitigators, b.mitigators);
    }
}
