//! Labeling, replay buffer, training loop, inference and checkpoints.

use std::collections::VecDeque;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mlp::{sgd_momentum_step, Mlp, Normalizer};
use super::quantize::{quantize, Budget, QuantizerConfig};
use crate::baselines::{optimal_caching, Policy, PolicyResult, SolveStats};
use crate::energy::CachingDecision;
use crate::error::{invalid, Error, Result};
use crate::scenario::{Scenario, ScenarioSampler};
use crate::seed::derive_seed;
use crate::solver::{solve_allocation, SolveResult, SolverOptions, Status};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Iterations between parameter updates.
    pub train_interval: usize,
    pub buffer_capacity: usize,
    pub hidden: Vec<usize>,
    /// Scenarios drawn to fit the input standardization.
    pub normalizer_samples: usize,
    pub quantizer: QuantizerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 3000,
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 128,
            train_interval: 10,
            buffer_capacity: 1024,
            hidden: vec![160, 120, 80],
            normalizer_samples: 1000,
            quantizer: QuantizerConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning_rate", "must be finite and > 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(invalid("momentum", "must lie in [0, 1)"));
        }
        if self.batch_size == 0 || self.train_interval == 0 || self.normalizer_samples == 0 {
            return Err(invalid("train", "batch_size, train_interval and normalizer_samples must be positive"));
        }
        if self.buffer_capacity < self.batch_size {
            return Err(invalid("buffer_capacity", "must hold at least one mini-batch"));
        }
        if self.hidden.contains(&0) {
            return Err(invalid("hidden", "layer widths must be positive"));
        }
        self.quantizer.validate()
    }
}

/// Latest `capacity` (input, label) pairs; the oldest is evicted first.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    entries: VecDeque<(Vec<f64>, Vec<f64>)>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            entries: VecDeque::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, features: Vec<f64>, label: Vec<f64>) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back((features, label));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&(Vec<f64>, Vec<f64>)> {
        self.entries.get(i)
    }

    /// `size` distinct entries chosen uniformly.
    pub fn sample<R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> Vec<(Vec<f64>, Vec<f64>)> {
        index::sample(rng, self.entries.len(), size.min(self.entries.len()))
            .into_iter()
            .map(|i| self.entries[i].clone())
            .collect()
    }
}

/// Best candidate found by [`label_step`].
#[derive(Debug, Clone)]
pub struct Label {
    /// Position of the winner in the candidate list.
    pub index: usize,
    pub decision: CachingDecision,
    pub solve: SolveResult,
    /// Candidates without a feasible allocation, or whose solve hit the
    /// iteration limit.
    pub discarded: usize,
    pub stats: SolveStats,
}

impl Label {
    pub fn energy(&self) -> f64 {
        self.solve.objective
    }
}

/// Solves every candidate and keeps the lowest energy, ties to the earlier
/// candidate. `None` when no candidate admits a feasible allocation.
pub fn label_step(s: &Scenario, candidates: &[CachingDecision], opts: &SolverOptions) -> Result<Option<Label>> {
    let started = Instant::now();
    let solved: Vec<Result<SolveResult>> = candidates.par_iter().map(|d| solve_allocation(s, d, opts)).collect();
    let mut stats = SolveStats::default();
    let mut best: Option<(usize, SolveResult)> = None;
    let mut discarded = 0;
    for (i, r) in solved.into_iter().enumerate() {
        let r = r?;
        stats.solver_calls += 1;
        stats.iterations += r.iterations;
        if r.status != Status::Optimal {
            discarded += 1;
            continue;
        }
        if best.as_ref().map_or(true, |(_, b)| r.objective < b.objective) {
            best = Some((i, r));
        }
    }
    stats.runtime_secs = started.elapsed().as_secs_f64();
    Ok(best.map(|(index, solve)| Label {
        index,
        decision: candidates[index].clone(),
        solve,
        discarded,
        stats,
    }))
}

/// Network, input standardization and quantizer settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedPolicy {
    pub mlp: Mlp,
    pub normalizer: Normalizer,
    pub quantizer: QuantizerConfig,
}

impl TrainedPolicy {
    pub fn inputs(&self, s: &Scenario) -> Vec<f64> {
        self.normalizer.apply(&s.features())
    }

    pub fn logits(&self, s: &Scenario) -> Result<Vec<f64>> {
        let f = self.mlp.forward(&self.inputs(s))?;
        if f.logits.len() != s.num_services() {
            return Err(Error::Dimension(format!(
                "network scores {} services, scenario has {}",
                f.logits.len(),
                s.num_services()
            )));
        }
        Ok(f.logits)
    }

    pub fn candidates<R: Rng + ?Sized>(&self, s: &Scenario, rng: &mut R) -> Result<Vec<CachingDecision>> {
        quantize(&self.logits(s)?, &Budget::of(s), &self.quantizer, rng)
    }

    /// Scores, quantizes and returns the best candidate with its allocation.
    pub fn infer<R: Rng + ?Sized>(&self, s: &Scenario, opts: &SolverOptions, rng: &mut R) -> Result<PolicyResult> {
        let started = Instant::now();
        let candidates = self.candidates(s, rng)?;
        let label = label_step(s, &candidates, opts)?
            .ok_or_else(|| Error::Infeasible("no candidate admits a feasible allocation".into()))?;
        let energy = label
            .solve
            .energy
            .clone()
            .ok_or_else(|| Error::Solver("optimal solve without an energy breakdown".into()))?;
        let mut stats = label.stats;
        stats.runtime_secs = started.elapsed().as_secs_f64();
        Ok(PolicyResult {
            policy: Policy::Learned,
            decision: label.decision,
            energy,
            allocation: label.solve.allocation,
            capacity_exempt: false,
            stats,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format_version: Checkpoint::VERSION,
            dims: self.mlp.dims().to_vec(),
            params: self.mlp.params().to_vec(),
            feature_mean: self.normalizer.mean.clone(),
            feature_std: self.normalizer.std.clone(),
            quantizer: self.quantizer.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(&self.to_checkpoint())?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        serde_json::from_str::<Checkpoint>(&fs::read_to_string(path)?)?.into_policy()
    }
}

/// JSON checkpoint. `params` holds, layer after layer, the `out x in`
/// weight matrix in row-major order followed by the `out` biases, for the
/// layer widths in `dims`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub dims: Vec<usize>,
    pub params: Vec<f64>,
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub quantizer: QuantizerConfig,
}

impl Checkpoint {
    pub const VERSION: u32 = 1;

    pub fn into_policy(self) -> Result<TrainedPolicy> {
        if self.format_version != Self::VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {} is not supported (expected {})",
                self.format_version,
                Self::VERSION
            )));
        }
        let mlp = Mlp::from_params(&self.dims, self.params).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let d = mlp.input_dim();
        if self.feature_mean.len() != d || self.feature_std.len() != d {
            return Err(Error::Checkpoint(format!("standardization must have {d} entries")));
        }
        if self.feature_std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Checkpoint("feature scales must be positive".into()));
        }
        self.quantizer.validate()?;
        Ok(TrainedPolicy {
            mlp,
            normalizer: Normalizer {
                mean: self.feature_mean,
                std: self.feature_std,
            },
            quantizer: self.quantizer,
        })
    }
}

/// Held-out scenario with its exhaustive-optimal decision.
#[derive(Debug, Clone)]
pub struct LabeledScenario {
    pub scenario: Scenario,
    pub optimal: PolicyResult,
}

#[derive(Debug, Clone, Default)]
pub struct TestSet {
    pub items: Vec<LabeledScenario>,
    /// Draws dropped because no capacity-feasible decision was feasible.
    pub skipped: usize,
}

impl TestSet {
    /// Draws `size` scenarios from the seed's held-out stream and labels
    /// each by exhaustive search.
    pub fn build(sampler: &ScenarioSampler, seed: u64, size: usize, opts: &SolverOptions, limit: usize) -> Result<Self> {
        let mut set = TestSet::default();
        for i in 0..size {
            let s = sampler.sample_seeded(derive_seed(seed, &format!("test/{i}")))?;
            match optimal_caching(&s, opts, limit) {
                Ok(optimal) => set.items.push(LabeledScenario { scenario: s, optimal }),
                Err(Error::Infeasible(_)) => set.skipped += 1,
                Err(e) => return Err(e),
            }
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Squared error between the network scores and the optimal decisions.
    pub fn loss(&self, policy: &TrainedPolicy) -> Result<f64> {
        let batch: Vec<(Vec<f64>, Vec<f64>)> = self
            .items
            .iter()
            .map(|it| (policy.inputs(&it.scenario), it.optimal.decision.as_f64()))
            .collect();
        policy.mlp.loss(&batch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub iteration: usize,
    /// Mini-batch loss before the update.
    pub train_loss: f64,
    /// Held-out loss after the update; NaN without a test set.
    pub test_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: TrainedPolicy,
    pub trace: Vec<LossRow>,
    /// Iterations where no candidate was feasible and nothing was stored.
    pub unlabeled: usize,
    pub stats: SolveStats,
}

/// Scenario drawn at training iteration `t`.
pub fn training_scenario(sampler: &ScenarioSampler, seed: u64, t: usize) -> Result<Scenario> {
    sampler.sample_seeded(derive_seed(seed, &format!("train/{t}")))
}

/// Offline training. At every iteration a fresh scenario is scored,
/// quantized and labeled; every `train_interval` iterations, once a full
/// mini-batch is stored, one momentum step is taken on a uniformly drawn
/// mini-batch.
pub fn train(
    sampler: &ScenarioSampler,
    cfg: &TrainConfig,
    opts: &SolverOptions,
    seed: u64,
    test: Option<&TestSet>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let inputs: Vec<Vec<f64>> = (0..cfg.normalizer_samples)
        .map(|i| Ok(sampler.sample_seeded(derive_seed(seed, &format!("normalizer/{i}")))?.features()))
        .collect::<Result<_>>()?;
    let normalizer = Normalizer::fit(&inputs)?;
    let mut dims = vec![inputs[0].len()];
    dims.extend(&cfg.hidden);
    dims.push(sampler.config().num_services);
    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "init"));
    let mut policy = TrainedPolicy {
        mlp: Mlp::new(&dims, &mut init_rng)?,
        normalizer,
        quantizer: cfg.quantizer.clone(),
    };
    let mut quant_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "quantize"));
    let mut batch_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "batch"));
    let mut velocity = vec![0.0; policy.mlp.params().len()];
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity);
    let mut trace = Vec::new();
    let mut unlabeled = 0;
    let mut stats = SolveStats::default();

    for t in 1..=cfg.iterations {
        let s = training_scenario(sampler, seed, t)?;
        let candidates = policy.candidates(&s, &mut quant_rng)?;
        match label_step(&s, &candidates, opts)? {
            Some(label) => {
                stats.solver_calls += label.stats.solver_calls;
                stats.iterations += label.stats.iterations;
                buffer.push(policy.inputs(&s), label.decision.as_f64());
            }
            None => {
                stats.solver_calls += candidates.len();
                unlabeled += 1;
            }
        }
        if t % cfg.train_interval == 0 && buffer.len() >= cfg.batch_size {
            let batch = buffer.sample(cfg.batch_size, &mut batch_rng);
            let (train_loss, grad) = policy.mlp.loss_and_grad(&batch)?;
            sgd_momentum_step(policy.mlp.params_mut(), &grad, &mut velocity, cfg.learning_rate, cfg.momentum);
            let test_loss = match test {
                Some(set) if !set.is_empty() => set.loss(&policy)?,
                _ => f64::NAN,
            };
            trace.push(LossRow {
                iteration: t,
                train_loss,
                test_loss,
            });
        }
    }
    stats.runtime_secs = started.elapsed().as_secs_f64();
    Ok(TrainOutcome {
        policy,
        trace,
        unlabeled,
        stats,
    })
}
