use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Which of the two competing campaigns a process or event belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Process {
    #[serde(rename = "F")]
    Fake,
    #[serde(rename = "M")]
    Mitigation,
}

/// Directed influence network driving both campaigns.
///
/// `excitation[(i, j)]` is the jump in node `j`'s intensity caused by an event
/// at node `i`, so `λ_j(t) = μ_j + Σ_i a_ij Σ_{s<t, node(s)=i} e^{-ω(t-s)}`.
/// The transpose that acts on intensity vectors is only ever produced by
/// [`NetworkModel::intensity_coupling`].
///
/// `follows[(i, j)] = 1` when user `i` follows user `j`; the diagonal is one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetworkModelWire", into = "NetworkModelWire")]
pub struct NetworkModel {
    excitation: DMatrix<f64>,
    decay: f64,
    mu_fake: DVector<f64>,
    mu_mitigation: DVector<f64>,
    follows: DMatrix<f64>,
}

impl NetworkModel {
    pub fn new(
        excitation: DMatrix<f64>,
        decay: f64,
        mu_fake: DVector<f64>,
        mu_mitigation: DVector<f64>,
        follows: DMatrix<f64>,
    ) -> Result<Self> {
        let n = excitation.nrows();
        let bad = |m: &str| Err(Error::InvalidModel(m.to_string()));
        if excitation.ncols() != n || follows.nrows() != n || follows.ncols() != n {
            return bad("excitation and follower matrices must be n×n");
        }
        if mu_fake.len() != n || mu_mitigation.len() != n {
            return bad("base-rate vectors must have length n");
        }
        if !(decay > 0.0 && decay.is_finite()) {
            return bad("decay must be positive and finite");
        }
        if excitation.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
            return bad("excitation entries must be finite and nonnegative");
        }
        if mu_fake.iter().chain(mu_mitigation.iter()).any(|m| !(*m >= 0.0 && m.is_finite())) {
            return bad("base rates must be finite and nonnegative");
        }
        if follows.iter().any(|b| *b != 0.0 && *b != 1.0) {
            return bad("follower matrix must be binary");
        }
        if (0..n).any(|i| follows[(i, i)] != 1.0) {
            return bad("every user follows itself");
        }
        let rho = spectral_radius(&excitation, decay);
        if rho >= 1.0 {
            return Err(Error::InvalidModel(format!(
                "unstable: spectral radius of A/ω is {rho:.6}"
            )));
        }
        Ok(Self { excitation, decay, mu_fake, mu_mitigation, follows })
    }

    /// Model where nobody follows anybody but themselves.
    pub fn without_followers(
        excitation: DMatrix<f64>,
        decay: f64,
        mu_fake: DVector<f64>,
        mu_mitigation: DVector<f64>,
    ) -> Result<Self> {
        let n = excitation.nrows();
        Self::new(excitation, decay, mu_fake, mu_mitigation, DMatrix::identity(n, n))
    }

    pub fn n(&self) -> usize {
        self.excitation.nrows()
    }

    pub fn excitation(&self) -> &DMatrix<f64> {
        &self.excitation
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn base_rate(&self, process: Process) -> &DVector<f64> {
        match process {
            Process::Fake => &self.mu_fake,
            Process::Mitigation => &self.mu_mitigation,
        }
    }

    pub fn follows(&self) -> &DMatrix<f64> {
        &self.follows
    }

    /// `Aᵀ`: maps a vector of per-node event kernels onto intensity increments.
    pub fn intensity_coupling(&self) -> DMatrix<f64> {
        self.excitation.transpose()
    }

    pub fn spectral_radius(&self) -> f64 {
        spectral_radius(&self.excitation, self.decay)
    }

    /// Short content hash of the JSON form.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("model serializes");
        short_hash(&json)
    }
}

pub(crate) fn short_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize, Deserialize)]
struct NetworkModelWire {
    n: usize,
    decay: f64,
    /// Row-major `A`.
    excitation: Vec<f64>,
    mu_fake: Vec<f64>,
    mu_mitigation: Vec<f64>,
    /// `follows[i]` lists every `j` with `b_ij = 1`.
    follows: Vec<Vec<usize>>,
}

impl From<NetworkModel> for NetworkModelWire {
    fn from(m: NetworkModel) -> Self {
        let n = m.n();
        let excitation = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| m.excitation[(i, j)])
            .collect();
        let follows = (0..n)
            .map(|i| (0..n).filter(|&j| m.follows[(i, j)] == 1.0).collect())
            .collect();
        Self {
            n,
            decay: m.decay,
            excitation,
            mu_fake: m.mu_fake.iter().copied().collect(),
            mu_mitigation: m.mu_mitigation.iter().copied().collect(),
            follows,
        }
    }
}

impl TryFrom<NetworkModelWire> for NetworkModel {
    type Error = Error;

    fn try_from(w: NetworkModelWire) -> Result<Self> {
        let n = w.n;
        if w.excitation.len() != n * n || w.follows.len() != n {
            return Err(Error::InvalidModel("wire dimensions disagree with n".into()));
        }
        let mut follows = DMatrix::zeros(n, n);
        for (i, row) in w.follows.iter().enumerate() {
            for &j in row {
                if j >= n {
                    return Err(Error::InvalidModel(format!("follower index {j} out of range")));
                }
                follows[(i, j)] = 1.0;
            }
        }
        NetworkModel::new(
            DMatrix::from_row_slice(n, n, &w.excitation),
            w.decay,
            DVector::from_vec(w.mu_fake),
            DVector::from_vec(w.mu_mitigation),
            follows,
        )
    }
}

/// Spectral radius of `A/ω` for a nonnegative square `A`.
///
/// The radius is the largest over the strongly connected components of the
/// support graph; acyclic parts contribute nothing. Each irreducible block is
/// handled by power iteration on `B/ω + I`, which is primitive, stopped by the
/// Collatz–Wielandt bounds, with a dense eigenvalue fallback.
pub fn spectral_radius(a: &DMatrix<f64>, decay: f64) -> f64 {
    let n = a.nrows();
    let mut graph = DiGraph::<(), ()>::new();
    let nodes: Vec<_> = (0..n).map(|_| graph.add_node(())).collect();
    for i in 0..n {
        for j in 0..n {
            if a[(i, j)] != 0.0 {
                graph.add_edge(nodes[i], nodes[j], ());
            }
        }
    }
    tarjan_scc(&graph)
        .into_iter()
        .map(|comp| {
            let idx: Vec<usize> = comp.iter().map(|v| v.index()).collect();
            if idx.len() == 1 {
                return a[(idx[0], idx[0])] / decay;
            }
            let block = DMatrix::from_fn(idx.len(), idx.len(), |r, c| a[(idx[r], idx[c])] / decay);
            irreducible_radius(&block)
        })
        .fold(0.0, f64::max)
}

fn irreducible_radius(b: &DMatrix<f64>) -> f64 {
    let n = b.nrows();
    let m = b + DMatrix::identity(n, n);
    let mut x = DVector::from_element(n, 1.0 / n as f64);
    for _ in 0..20_000 {
        let y = &m * &x;
        let norm: f64 = y.iter().sum();
        let ratios = y.iter().zip(x.iter()).map(|(yi, xi)| yi / xi);
        let (lower, upper) = ratios.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r), hi.max(r)));
        x = y / norm;
        if upper - lower <= 1e-12 * upper {
            return (0.5 * (upper + lower) - 1.0).max(0.0);
        }
    }
    b.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}
