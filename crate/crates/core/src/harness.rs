//! Seeded experiment driver: parameter sweeps over scenario ensembles and
//! the quantizer comparison run, with flat CSV output.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{run_policy, Policy, PolicyResult};
use crate::config::ExperimentConfig;
use crate::dl::{train, LossRow, QuantizerKind, TestSet, TrainedPolicy};
use crate::error::{invalid, Error, Result};
use crate::scenario::{Scenario, ScenarioConfig, ScenarioSampler, MBIT};
use crate::seed::derive_seed;
use crate::solver::SolverOptions;

/// Version written in the first column of every result row.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    /// Cache capacity in Mbit.
    CacheCapacityMbits,
    /// Deadline in seconds.
    DeadlineS,
    NumServices,
    /// BS weight `beta_0`.
    WeightBs,
}

impl SweepParameter {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParameter::CacheCapacityMbits => "cache_capacity_mbits",
            SweepParameter::DeadlineS => "deadline_s",
            SweepParameter::NumServices => "num_services",
            SweepParameter::WeightBs => "weight_bs",
        }
    }

    pub fn apply(self, base: &ScenarioConfig, value: f64) -> Result<ScenarioConfig> {
        let mut c = base.clone();
        match self {
            SweepParameter::CacheCapacityMbits => c.cache_capacity_mbits = value,
            SweepParameter::DeadlineS => c.deadline_s = value,
            SweepParameter::NumServices => {
                if !(value >= 1.0 && value.fract() == 0.0) {
                    return Err(invalid("num_services", format!("sweep value {value} is not a positive integer")));
                }
                c.num_services = value as usize;
            }
            SweepParameter::WeightBs => c.weight_bs = value,
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
    pub replications: usize,
    pub policies: Vec<Policy>,
    /// Write measured wall times; off gives byte-identical output per seed.
    pub timing: bool,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            parameter: SweepParameter::DeadlineS,
            values: vec![2.8, 2.9, 3.0, 3.1, 3.2, 3.3, 3.4, 3.5],
            replications: 20,
            policies: vec![Policy::No, Policy::Popular, Policy::Greedy, Policy::All],
            timing: true,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(invalid("sweep.values", "grid must not be empty"));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("sweep.values", "grid values must be finite"));
        }
        if self.replications == 0 {
            return Err(invalid("sweep.replications", "must be >= 1"));
        }
        if self.policies.is_empty() {
            return Err(invalid("sweep.policies", "need at least one policy"));
        }
        Ok(())
    }
}

/// One policy on one scenario. Failed runs keep their row with the message
/// in `error` and NaN energies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub schema_version: u32,
    pub parameter: String,
    pub value: f64,
    pub replication: usize,
    pub seed: u64,
    pub policy: String,
    pub status: String,
    pub decision: String,
    pub weighted_energy_kj: f64,
    pub compute_kj: f64,
    pub download_kj: f64,
    pub offload_kj: f64,
    pub solver_calls: usize,
    pub solver_iterations: usize,
    pub wall_time_s: f64,
    pub error: String,
}

impl ResultRow {
    pub fn new(parameter: &str, value: f64, replication: usize, seed: u64, policy: &str, outcome: &Result<PolicyResult>) -> Self {
        let mut row = Self {
            schema_version: SCHEMA_VERSION,
            parameter: parameter.to_string(),
            value,
            replication,
            seed,
            policy: policy.to_string(),
            status: "error".into(),
            decision: String::new(),
            weighted_energy_kj: f64::NAN,
            compute_kj: f64::NAN,
            download_kj: f64::NAN,
            offload_kj: f64::NAN,
            solver_calls: 0,
            solver_iterations: 0,
            wall_time_s: 0.0,
            error: String::new(),
        };
        match outcome {
            Ok(r) => {
                row.status = "ok".into();
                row.decision = r.decision.to_string();
                row.weighted_energy_kj = r.energy.weighted_total / 1e3;
                row.compute_kj = r.energy.compute / 1e3;
                row.download_kj = r.energy.download / 1e3;
                row.offload_kj = r.energy.offload_total() / 1e3;
                row.solver_calls = r.stats.solver_calls;
                row.solver_iterations = r.stats.iterations;
                row.wall_time_s = r.stats.runtime_secs;
            }
            Err(e) => row.error = e.to_string(),
        }
        row
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

/// Runs a named policy; the learned one needs a trained network.
pub fn evaluate_policy(
    s: &Scenario,
    policy: Policy,
    opts: &SolverOptions,
    limit: usize,
    learned: Option<&TrainedPolicy>,
    seed: u64,
) -> Result<PolicyResult> {
    match (policy, learned) {
        (Policy::Learned, Some(p)) => p.infer(s, opts, &mut ChaCha8Rng::seed_from_u64(seed)),
        _ => run_policy(s, policy, opts, limit),
    }
}

/// Scenario seed of replication `r`. Shared by every grid point, so the
/// curves of a sweep are compared on common random numbers.
pub fn replication_seed(master: u64, r: usize) -> u64 {
    derive_seed(master, &format!("rep/{r}"))
}

/// Every grid point times every replication times every policy, rows in
/// (grid point, replication, policy) order whatever the worker count.
pub fn run_sweep(
    spec: &SweepSpec,
    base: &ScenarioConfig,
    opts: &SolverOptions,
    limit: usize,
    learned: Option<&TrainedPolicy>,
    master: u64,
) -> Result<Vec<ResultRow>> {
    spec.validate()?;
    let name = spec.parameter.as_str();
    let samplers: Vec<std::result::Result<ScenarioSampler, String>> = spec
        .values
        .iter()
        .map(|&v| {
            spec.parameter
                .apply(base, v)
                .and_then(ScenarioSampler::new)
                .map_err(|e| e.to_string())
        })
        .collect();
    let tasks: Vec<(usize, usize)> = (0..spec.values.len())
        .flat_map(|i| (0..spec.replications).map(move |r| (i, r)))
        .collect();
    let rows: Vec<Vec<ResultRow>> = tasks
        .par_iter()
        .map(|&(i, r)| {
            let value = spec.values[i];
            let seed = replication_seed(master, r);
            let scenario = samplers[i]
                .as_ref()
                .map_err(|e| Error::Solver(e.clone()))
                .and_then(|s| s.sample_seeded(seed));
            spec.policies
                .iter()
                .map(|&p| {
                    let outcome = scenario.as_ref().map_err(|e| Error::Solver(e.to_string())).and_then(|s| {
                        let learned_seed = derive_seed(master, &format!("sweep/{i}/rep/{r}/learned"));
                        evaluate_policy(s, p, opts, limit, learned, learned_seed)
                    });
                    let mut row = ResultRow::new(name, value, r, seed, p.as_str(), &outcome);
                    if !spec.timing {
                        row.wall_time_s = 0.0;
                    }
                    row
                })
                .collect()
        })
        .collect();
    Ok(rows.into_iter().flatten().collect())
}

/// Mean and standard error of the weighted energy per grid point and policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub schema_version: u32,
    pub parameter: String,
    pub value: f64,
    pub policy: String,
    pub replications_ok: usize,
    pub replications_failed: usize,
    pub mean_kj: f64,
    pub stderr_kj: f64,
}

/// With `common_support`, a replication only counts if every one of its
/// rows succeeded, at every grid point and for every policy.
pub fn summarize(rows: &[ResultRow], common_support: bool) -> Vec<SummaryRow> {
    let failed_reps: std::collections::HashSet<usize> =
        rows.iter().filter(|r| !r.is_ok()).map(|r| r.replication).collect();
    let mut keys: Vec<(f64, String, String)> = Vec::new();
    for r in rows {
        let k = (r.value, r.policy.clone(), r.parameter.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(value, policy, parameter)| {
            let group: Vec<&ResultRow> = rows
                .iter()
                .filter(|r| r.value == value && r.policy == policy && r.parameter == parameter)
                .collect();
            let used: Vec<f64> = group
                .iter()
                .filter(|r| r.is_ok() && !(common_support && failed_reps.contains(&r.replication)))
                .map(|r| r.weighted_energy_kj)
                .collect();
            let n = used.len() as f64;
            let mean = used.iter().sum::<f64>() / n;
            let stderr = if used.len() > 1 {
                (used.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
            } else {
                f64::NAN
            };
            SummaryRow {
                schema_version: SCHEMA_VERSION,
                parameter,
                value,
                policy,
                replications_ok: used.len(),
                replications_failed: group.len() - used.len(),
                mean_kj: if used.is_empty() { f64::NAN } else { mean },
                stderr_kj: stderr,
            }
        })
        .collect()
}

/// CSV with a header row.
pub fn write_csv<W: Write, T: Serialize>(out: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Loss trace with exactly the columns `iteration,train_loss,test_loss`.
/// The header is written even for an empty trace.
pub fn write_loss_trace<W: Write>(out: W, rows: &[LossRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(["iteration", "train_loss", "test_loss"])?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Outcome of training both quantizers on one scenario stream.
#[derive(Debug, Clone)]
pub struct TrainingReport {
    pub runs: Vec<TrainingRun>,
    pub test: TestSet,
    /// Per test scenario: each learned variant and each configured baseline.
    pub comparison: Vec<ResultRow>,
}

#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub kind: QuantizerKind,
    pub policy: TrainedPolicy,
    pub trace: Vec<LossRow>,
    pub unlabeled: usize,
}

pub fn learned_name(kind: QuantizerKind) -> String {
    format!("learned_{}", kind.as_str())
}

/// Trains the stochastic and the order-preserving variants from the same
/// seed (same scenarios, same initial weights), tracks both against one
/// exhaustively labeled test set, then compares them with the baselines on
/// that set.
pub fn run_training_experiment(cfg: &ExperimentConfig, seed: u64) -> Result<TrainingReport> {
    cfg.validate()?;
    let sampler = ScenarioSampler::new(cfg.scenario.clone())?;
    let test = TestSet::build(&sampler, derive_seed(seed, "test"), cfg.test_size, &cfg.solver, cfg.exhaustive_limit)?;
    let mut runs = Vec::new();
    for kind in [QuantizerKind::Stochastic, QuantizerKind::OrderPreserving] {
        let mut tc = cfg.train.clone();
        tc.quantizer.kind = kind;
        let out = train(&sampler, &tc, &cfg.solver, seed, Some(&test))?;
        runs.push(TrainingRun {
            kind,
            policy: out.policy,
            trace: out.trace,
            unlabeled: out.unlabeled,
        });
    }
    let mut comparison = Vec::new();
    for (i, item) in test.items.iter().enumerate() {
        let s = &item.scenario;
        let value = i as f64;
        let scenario_seed = derive_seed(derive_seed(seed, "test"), &format!("test/{i}"));
        for run in &runs {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("compare/{i}")));
            let r = run.policy.infer(s, &cfg.solver, &mut rng);
            comparison.push(ResultRow::new("test_scenario", value, i, scenario_seed, &learned_name(run.kind), &r));
        }
        for &p in &cfg.policies {
            let r = match p {
                Policy::Optimal => Ok(item.optimal.clone()),
                Policy::Learned => continue,
                _ => run_policy(s, p, &cfg.solver, cfg.exhaustive_limit),
            };
            comparison.push(ResultRow::new("test_scenario", value, i, scenario_seed, p.as_str(), &r));
        }
    }
    Ok(TrainingReport { runs, test, comparison })
}

/// Sum of output sizes in Mbit for a sampled scenario; a capacity at or
/// above it makes every policy cache everything.
pub fn total_output_mbits(s: &Scenario) -> f64 {
    s.total_output_bits() / MBIT
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ScenarioConfig {
        ScenarioConfig {
            num_services: 4,
            num_locations: 2,
            cache_capacity_mbits: 50.0,
            ..Default::default()
        }
    }

    #[test]
    fn parameters_apply() {
        let c = SweepParameter::NumServices.apply(&small(), 6.0).unwrap();
        assert_eq!(c.num_services, 6);
        assert!(SweepParameter::NumServices.apply(&small(), 2.5).is_err());
        assert_eq!(SweepParameter::WeightBs.apply(&small(), 0.3).unwrap().weight_bs, 0.3);
    }

    #[test]
    fn rows_keep_errors() {
        let r = ResultRow::new("x", 1.0, 0, 9, "no", &Err(Error::Infeasible("nothing fits".into())));
        assert!(!r.is_ok());
        assert!(r.weighted_energy_kj.is_nan());
        assert!(r.error.contains("nothing fits"));
    }

    #[test]
    fn summary_common_support_drops_failed_replications() {
        let ok = |value: f64, rep: usize, e: f64| {
            let mut r = ResultRow::new("p", value, rep, 0, "a", &Err(Error::Solver(String::new())));
            r.status = "ok".into();
            r.weighted_energy_kj = e;
            r
        };
        let mut bad = ok(2.0, 1, 0.0);
        bad.status = "error".into();
        let rows = vec![ok(1.0, 0, 1.0), ok(1.0, 1, 3.0), ok(2.0, 0, 2.0), bad];
        let all = summarize(&rows, false);
        assert_eq!(all[0].mean_kj, 2.0);
        let common = summarize(&rows, true);
        assert_eq!(common[0].mean_kj, 1.0);
        assert_eq!(common[0].replications_failed, 1);
    }
}
