use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use super::config::{ExperimentConfig, Method};
use super::replicate::Replicate;
use super::VERSION;
use crate::error::Result;
use crate::stats::{mean, paired_t_test_greater, std_dev};

/// Discounted total of one method on one evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkRow {
    pub sweep: String,
    pub sweep_value: Option<f64>,
    pub network: usize,
    pub method: Method,
    pub run: usize,
    pub objective: String,
    pub total: f64,
    /// `ok`, or the error that stopped this run.
    pub status: String,
    pub config_hash: String,
    pub version: String,
    pub seed: u64,
}

/// Per-(sweep value, method) aggregate over networks and runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub sweep: String,
    pub sweep_value: Option<f64>,
    pub method: Method,
    pub objective: String,
    pub runs: usize,
    pub failed: usize,
    pub mean_total: f64,
    pub sd_total: f64,
    /// Mean total over the mean total of the random policy.
    pub ratio_vs_rnd: Option<f64>,
    /// One-sided paired test of `method > RND` over the common runs.
    pub p_vs_rnd: Option<f64>,
    pub config_hash: String,
    pub version: String,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct BenchmarkReport {
    pub rows: Vec<BenchmarkRow>,
    pub summary: Vec<SummaryRow>,
}

impl BenchmarkReport {
    /// Successful totals of `method` keyed by (network, run).
    pub fn totals(&self, method: Method) -> Vec<((usize, usize), f64)> {
        self.rows
            .iter()
            .filter(|r| r.method == method && r.status == "ok")
            .map(|r| ((r.network, r.run), r.total))
            .collect()
    }
}

/// Runs every requested method on every replicate network, over the sweep
/// values if a sweep axis is set.
pub fn run_benchmark(cfg: &ExperimentConfig) -> Result<BenchmarkReport> {
    cfg.validate()?;
    let points: Vec<(String, Option<f64>, ExperimentConfig)> = match cfg.sweep {
        None => vec![("none".into(), None, cfg.clone())],
        Some(axis) => cfg
            .sweep_values
            .clone()
            .unwrap_or_else(|| axis.default_values())
            .into_iter()
            .map(|v| Ok((axis.name().to_string(), Some(v), cfg.with_axis(axis, v)?)))
            .collect::<Result<_>>()?,
    };
    let hash = cfg.hash();
    let mut rows = Vec::new();
    for (sweep, value, point) in &points {
        let per_net: Vec<Vec<BenchmarkRow>> = (0..point.networks)
            .into_par_iter()
            .map(|r| benchmark_network(point, r, sweep, *value, &hash))
            .collect::<Result<_>>()?;
        rows.extend(per_net.into_iter().flatten());
    }
    rows.sort_by(|a, b| {
        a.sweep_value
            .partial_cmp(&b.sweep_value)
            .expect("sweep values are finite")
            .then(a.method.cmp(&b.method))
            .then(a.network.cmp(&b.network))
            .then(a.run.cmp(&b.run))
    });
    let summary = summarize(cfg, &rows);
    Ok(BenchmarkReport { rows, summary })
}

fn benchmark_network(cfg: &ExperimentConfig, r: usize, sweep: &str, value: Option<f64>, hash: &str) -> Result<Vec<BenchmarkRow>> {
    let rep = Replicate::new(cfg, r)?;
    let kind = cfg.objective;
    let weights = if cfg.methods.contains(&Method::Ltd) {
        match rep.train(cfg, kind, cfg.lstd_samples, cfg.seed) {
            Ok(t) => {
                log::info!("network {r}: policy iteration took {} steps", t.weight_changes.len());
                Ok(t.weights)
            }
            Err(e) => Err(e.to_string()),
        }
    } else {
        Err("not trained".into())
    };
    let mut out = Vec::new();
    for &method in &cfg.methods {
        let results = match (&weights, method) {
            (Err(e), Method::Ltd) => vec![Err(e.clone()); cfg.eval_runs],
            _ => match rep.evaluate(cfg, kind, method, weights.as_ref().ok(), cfg.eval_runs) {
                Ok(v) => v.into_iter().map(|x| x.map(|ro| ro.total.get(kind)).map_err(|e| e.to_string())).collect(),
                Err(e) => vec![Err(e.to_string()); cfg.eval_runs],
            },
        };
        for (run, res) in results.into_iter().enumerate() {
            let (total, status) = match res {
                Ok(t) => (t, "ok".to_string()),
                Err(e) => {
                    log::warn!("network {r}, {method}, run {run}: {e}");
                    (f64::NAN, e)
                }
            };
            out.push(BenchmarkRow {
                sweep: sweep.to_string(),
                sweep_value: value,
                network: r,
                method,
                run,
                objective: kind.to_string(),
                total,
                status,
                config_hash: hash.to_string(),
                version: VERSION.into(),
                seed: cfg.seed,
            });
        }
    }
    Ok(out)
}

fn summarize(cfg: &ExperimentConfig, rows: &[BenchmarkRow]) -> Vec<SummaryRow> {
    type Key = (u64, Method);
    let mut groups: BTreeMap<Key, Vec<&BenchmarkRow>> = BTreeMap::new();
    for r in rows {
        let v = r.sweep_value.map_or(0, f64::to_bits);
        groups.entry((v, r.method)).or_default().push(r);
    }
    let mut out = Vec::new();
    for (&(v, method), group) in &groups {
        let ok: BTreeMap<(usize, usize), f64> =
            group.iter().filter(|r| r.status == "ok").map(|r| ((r.network, r.run), r.total)).collect();
        let totals: Vec<f64> = ok.values().copied().collect();
        let m = mean(&totals);
        let rnd: Option<BTreeMap<(usize, usize), f64>> = groups.get(&(v, Method::Rnd)).map(|g| {
            g.iter().filter(|r| r.status == "ok").map(|r| ((r.network, r.run), r.total)).collect()
        });
        let (ratio, p) = match &rnd {
            Some(rnd) if !rnd.is_empty() => {
                let base = mean(&rnd.values().copied().collect::<Vec<_>>());
                // undefined when the random policy earns exactly zero
                let ratio = if method == Method::Rnd {
                    Some(1.0)
                } else {
                    Some(m / base).filter(|r| r.is_finite())
                };
                let (a, b): (Vec<f64>, Vec<f64>) =
                    ok.iter().filter_map(|(k, x)| rnd.get(k).map(|y| (*x, *y))).unzip();
                let p = if method == Method::Rnd || a.len() < 2 { None } else { Some(paired_t_test_greater(&a, &b)) };
                (ratio, p)
            }
            _ => (None, None),
        };
        let first = group[0];
        out.push(SummaryRow {
            sweep: first.sweep.clone(),
            sweep_value: first.sweep_value,
            method,
            objective: first.objective.clone(),
            runs: group.len(),
            failed: group.len() - ok.len(),
            mean_total: m,
            sd_total: std_dev(&totals),
            ratio_vs_rnd: ratio,
            p_vs_rnd: p,
            config_hash: first.config_hash.clone(),
            version: VERSION.into(),
            seed: cfg.seed,
        });
    }
    out.sort_by(|a, b| {
        a.sweep_value.partial_cmp(&b.sweep_value).expect("finite").then(a.method.cmp(&b.method))
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig {
            n: 12,
            sparsity: 0.2,
            fake_sources: 3,
            mitigators: 3,
            stages: 3,
            eval_runs: 4,
            networks: 2,
            lstd_samples: 30,
            ..Default::default()
        }
    }

    #[test]
    fn random_only_has_unit_ratio() {
        let cfg = ExperimentConfig { methods: vec![Method::Rnd], ..tiny() };
        let rep = run_benchmark(&cfg).unwrap();
        assert_eq!(rep.rows.len(), 8);
        assert_eq!(rep.summary.len(), 1);
        assert_eq!(rep.summary[0].ratio_vs_rnd, Some(1.0));
    }

    #[test]
    fn all_methods_run_and_share_seeds() {
        let cfg = tiny();
        let a = run_benchmark(&cfg).unwrap();
        assert_eq!(a.rows.len(), 6 * 8);
        assert!(a.rows.iter().all(|r| r.status == "ok"), "{:?}", a.rows.iter().find(|r| r.status != "ok"));
        let b = run_benchmark(&cfg).unwrap();
        assert_eq!(a.rows, b.rows);
    }

    #[test]
    fn sweep_covers_each_value() {
        let cfg = ExperimentConfig {
            methods: vec![Method::Cls, Method::Rnd],
            sweep: Some(super::super::SweepAxis::StageLength),
            sweep_values: Some(vec![0.5, 2.0]),
            networks: 1,
            ..tiny()
        };
        let rep = run_benchmark(&cfg).unwrap();
        assert_eq!(rep.summary.len(), 4);
        assert_eq!(rep.rows.len(), 2 * 2 * 4);
    }
}
