use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::baselines::PlanReward;
use crate::error::{Error, Result};
use crate::hawkes::short_hash;
use crate::mdp::RewardKind;
use crate::rng::Rng;

/// Uniform law on `[lo, hi]`; `lo == hi` is a point mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Uniform {
    pub lo: f64,
    pub hi: f64,
}

impl Uniform {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn sample(&self, rng: &mut Rng) -> f64 {
        if self.hi > self.lo {
            rng.random_range(self.lo..self.hi)
        } else {
            self.lo
        }
    }

    fn check(&self, name: &str, min: f64) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi && self.lo >= min) {
            return Err(Error::Config(format!("{name}: invalid uniform law [{}, {}]", self.lo, self.hi)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ltd,
    Cec,
    Opl,
    Cls,
    Exp,
    Rnd,
}

impl Method {
    pub const ALL: [Method; 6] = [Method::Ltd, Method::Cec, Method::Opl, Method::Cls, Method::Exp, Method::Rnd];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ltd => "ltd",
            Method::Cec => "cec",
            Method::Opl => "opl",
            Method::Cls => "cls",
            Method::Exp => "exp",
            Method::Rnd => "rnd",
        }
    }

    /// Parses a comma-separated list such as `ltd,cec,rnd`.
    pub fn parse_list(s: &str) -> Result<Vec<Method>> {
        let mut out: Vec<Method> = s
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(str::parse)
            .collect::<Result<_>>()?;
        out.sort();
        out.dedup();
        if out.is_empty() {
            return Err(Error::Config("empty method list".into()));
        }
        Ok(out)
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// When the per-stage budget is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetRedraw {
    /// A fresh draw for every stage of a replicate.
    PerStage,
    /// One draw reused by all stages of a replicate.
    PerReplicate,
}

/// Swept parameter of the benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Number of users.
    N,
    /// Number of mitigator (and fake-source) nodes.
    Campaign,
    /// Edge probability.
    Sparsity,
    /// Stage length.
    StageLength,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::N => "n",
            SweepAxis::Campaign => "campaign",
            SweepAxis::Sparsity => "sparsity",
            SweepAxis::StageLength => "stage_length",
        }
    }

    pub fn default_values(self) -> Vec<f64> {
        match self {
            SweepAxis::N => vec![50.0, 100.0, 200.0, 300.0],
            SweepAxis::Campaign => vec![10.0, 20.0, 30.0, 40.0],
            SweepAxis::Sparsity => vec![0.01, 0.02, 0.05, 0.1],
            SweepAxis::StageLength => vec![0.5, 1.0, 2.0, 4.0],
        }
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "n" | "size" => Ok(SweepAxis::N),
            "campaign" | "mitigators" => Ok(SweepAxis::Campaign),
            "sparsity" | "p" => Ok(SweepAxis::Sparsity),
            "stage_length" | "stage-length" | "delta" => Ok(SweepAxis::StageLength),
            _ => Err(Error::Config(format!("unknown sweep axis `{s}`"))),
        }
    }
}

/// Settings of the second-order moment check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationConfig {
    pub n: usize,
    pub sparsity: f64,
    pub simulations: usize,
    pub pairs: usize,
    pub horizon: f64,
    pub bin_width: f64,
    pub base_rate: Uniform,
    /// Band half-width in standard errors.
    pub band: f64,
    /// Minimum fraction of bins inside the band.
    pub pass_fraction: f64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            n: 10,
            sparsity: 0.3,
            simulations: 100,
            pairs: 4,
            horizon: 2.0,
            bin_width: 0.1,
            base_rate: Uniform::new(0.5, 1.0),
            band: 3.0,
            pass_fraction: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceConfig {
    pub sample_counts: Vec<usize>,
    pub rollouts: usize,
    pub replicates: usize,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self { sample_counts: vec![1, 50, 100, 250, 500, 1000, 2000, 4000, 8000], rollouts: 100, replicates: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictionConfig {
    pub trajectories: usize,
    pub replicates: usize,
}

impl Default for PredictionConfig {
    fn default() -> Self {
        Self { trajectories: 12, replicates: 10 }
    }
}

/// Full description of a synthetic experiment. Every field has a default, so
/// a config file only lists what it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n: usize,
    pub sparsity: f64,
    pub decay: f64,
    pub stage_length: f64,
    /// Width of the count blocks kept in the state; must equal `stage_length`.
    pub feature_interval: f64,
    pub memory: usize,
    pub discount: f64,
    pub stages: usize,
    pub eval_runs: usize,
    pub networks: usize,
    pub lstd_samples: usize,
    pub max_policy_iterations: usize,
    pub policy_tolerance: f64,
    pub fake_sources: usize,
    pub mitigators: usize,
    pub excitation: Uniform,
    pub spectral_radius: Uniform,
    pub base_rate: Uniform,
    pub cap: Uniform,
    pub price: Uniform,
    /// Per-stage budget is `n` times a draw from this law.
    pub budget_per_node: Uniform,
    pub budget_redraw: BudgetRedraw,
    pub cec_horizon: usize,
    pub plan_reward: PlanReward,
    pub objective: RewardKind,
    pub methods: Vec<Method>,
    pub seed: u64,
    pub sweep: Option<SweepAxis>,
    pub sweep_values: Option<Vec<f64>>,
    pub validation: ValidationConfig,
    pub convergence: ConvergenceConfig,
    pub prediction: PredictionConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n: 300,
            sparsity: 0.02,
            decay: 1.0,
            stage_length: 1.0,
            feature_interval: 1.0,
            memory: 2,
            discount: 0.7,
            stages: 10,
            eval_runs: 50,
            networks: 10,
            lstd_samples: 1000,
            max_policy_iterations: 50,
            policy_tolerance: 0.1,
            fake_sources: 20,
            mitigators: 20,
            excitation: Uniform::new(0.0, 0.5),
            spectral_radius: Uniform::new(0.3, 0.9),
            base_rate: Uniform::new(0.0, 0.1),
            cap: Uniform::new(0.0, 0.5),
            price: Uniform::new(1.0, 1.0),
            budget_per_node: Uniform::new(0.0, 0.5),
            budget_redraw: BudgetRedraw::PerStage,
            cec_horizon: 2,
            plan_reward: PlanReward::CertaintyEquivalent,
            objective: RewardKind::Correlation,
            methods: Method::ALL.to_vec(),
            seed: 0,
            sweep: None,
            sweep_values: None,
            validation: ValidationConfig::default(),
            convergence: ConvergenceConfig::default(),
            prediction: PredictionConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n == 0 {
            return bad("n must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.sparsity) {
            return bad(format!("sparsity {} outside [0, 1]", self.sparsity));
        }
        if !(self.decay > 0.0 && self.decay.is_finite()) {
            return bad("decay must be positive".into());
        }
        if !(self.stage_length > 0.0 && self.stage_length.is_finite()) {
            return bad("stage length must be positive".into());
        }
        if (self.feature_interval - self.stage_length).abs() > 1e-12 {
            return bad("feature interval must equal the stage length".into());
        }
        if self.memory == 0 {
            return bad("memory must be at least one block".into());
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return bad("discount must lie in (0, 1]".into());
        }
        if self.stages == 0 {
            return bad("need at least one stage".into());
        }
        if self.eval_runs == 0 || self.networks == 0 || self.lstd_samples == 0 {
            return bad("evaluation runs, networks and samples must be positive".into());
        }
        if self.mitigators == 0 {
            return bad("empty mitigator set".into());
        }
        if self.fake_sources + self.mitigators > self.n {
            return bad(format!(
                "{} fake sources plus {} mitigators exceed n = {}",
                self.fake_sources, self.mitigators, self.n
            ));
        }
        self.excitation.check("excitation", 0.0)?;
        self.spectral_radius.check("spectral_radius", 0.0)?;
        if self.spectral_radius.hi >= 1.0 {
            return bad("target spectral radius must stay below one".into());
        }
        self.base_rate.check("base_rate", 0.0)?;
        self.cap.check("cap", 0.0)?;
        self.price.check("price", 0.0)?;
        if self.price.lo <= 0.0 {
            return bad("prices must be positive".into());
        }
        self.budget_per_node.check("budget_per_node", 0.0)?;
        if self.cec_horizon == 0 {
            return bad("planning horizon must be positive".into());
        }
        if self.methods.is_empty() {
            return bad("empty method list".into());
        }
        let v = &self.validation;
        if v.n == 0 || v.simulations < 2 || v.pairs == 0 || !(v.bin_width > 0.0) || !(v.horizon >= v.bin_width) {
            return bad("invalid moment-validation settings".into());
        }
        v.base_rate.check("validation.base_rate", 0.0)?;
        if self.convergence.sample_counts.is_empty() || self.convergence.sample_counts.contains(&0) {
            return bad("sample counts must be positive".into());
        }
        if self.convergence.rollouts == 0 || self.convergence.replicates == 0 {
            return bad("convergence needs rollouts and replicates".into());
        }
        if self.prediction.trajectories < 2 || self.prediction.replicates == 0 {
            return bad("prediction needs at least two trajectories".into());
        }
        Ok(())
    }

    /// Short hash of the canonical JSON form.
    pub fn hash(&self) -> String {
        short_hash(&serde_json::to_vec(self).expect("config serializes"))
    }

    /// Copy with one sweep coordinate applied.
    pub fn with_axis(&self, axis: SweepAxis, value: f64) -> Result<Self> {
        let mut c = self.clone();
        match axis {
            SweepAxis::N => c.n = value.round() as usize,
            SweepAxis::Campaign => {
                c.mitigators = value.round() as usize;
                c.fake_sources = value.round() as usize;
            }
            SweepAxis::Sparsity => c.sparsity = value,
            SweepAxis::StageLength => {
                c.stage_length = value;
                c.feature_interval = value;
            }
        }
        c.validate()?;
        Ok(c)
    }
}
