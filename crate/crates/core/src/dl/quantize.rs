//! Turning relaxed scores into capacity-feasible binary candidates.

use std::collections::HashSet;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::mlp::sigmoid;
use crate::energy::CachingDecision;
use crate::error::{invalid, Result};
use crate::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantizerKind {
    /// Bernoulli draws from noisy sigmoid scores.
    Stochastic,
    /// Thresholds that keep the score order in every candidate.
    OrderPreserving,
}

impl QuantizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            QuantizerKind::Stochastic => "stochastic",
            QuantizerKind::OrderPreserving => "order_preserving",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantizerConfig {
    pub kind: QuantizerKind,
    /// Raw draws per call (M).
    pub raw_samples: usize,
    /// Candidates handed to the solver (J).
    pub candidates: usize,
    /// Standard deviation of the Gaussian logit noise.
    pub noise_std: f64,
    /// Extra rounds of M draws when fewer than J distinct feasible
    /// candidates turned up.
    pub resample_rounds: usize,
}

impl Default for QuantizerConfig {
    fn default() -> Self {
        Self {
            kind: QuantizerKind::Stochastic,
            raw_samples: 100,
            candidates: 10,
            noise_std: 1.0,
            resample_rounds: 10,
        }
    }
}

impl QuantizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.candidates == 0 || self.candidates > self.raw_samples {
            return Err(invalid("quantizer", "need 1 <= candidates <= raw_samples"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(invalid("noise_std", "must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Result sizes and cache capacity.
#[derive(Debug, Clone, PartialEq)]
pub struct Budget {
    pub sizes: Vec<f64>,
    pub capacity: f64,
}

impl Budget {
    pub fn of(s: &Scenario) -> Self {
        Self {
            sizes: s.services().iter().map(|v| v.output_bits).collect(),
            capacity: s.constants().cache_capacity,
        }
    }

    fn used(&self, d: &[bool]) -> f64 {
        self.sizes.iter().zip(d).filter(|(_, &b)| b).map(|(r, _)| r).sum()
    }

    pub fn fits(&self, d: &[bool]) -> bool {
        self.used(d) <= self.capacity
    }
}

/// Walks the uncached services by descending score and caches each one that
/// still fits. Never uncaches anything.
pub fn repair(decision: &[bool], scores: &[f64], budget: &Budget) -> Vec<bool> {
    let mut d = decision.to_vec();
    let mut zeros: Vec<usize> = (0..d.len()).filter(|&l| !d[l]).collect();
    zeros.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]).then(i.cmp(&j)));
    for l in zeros {
        d[l] = true;
        if !budget.fits(&d) {
            d[l] = false;
        }
    }
    d
}

/// Repairs, then drops repeats keeping first occurrences.
fn finalize(raw: Vec<Vec<bool>>, scores: &[f64], budget: &Budget) -> Vec<CachingDecision> {
    let mut seen = HashSet::new();
    raw.into_iter()
        .map(|d| repair(&d, scores, budget))
        .filter(|d| seen.insert(d.clone()))
        .map(CachingDecision::new)
        .collect()
}

/// Candidates from Bernoulli draws with probabilities `sigmoid(logit + n)`,
/// fresh noise `n` per draw, plus one noise-free draw. Up to J distinct
/// capacity-feasible draws are kept, chosen uniformly; the all-zeros
/// decision fills in when the draws never produce one. Every candidate is
/// then repaired.
pub fn stochastic_quantize<R: Rng + ?Sized>(
    logits: &[f64],
    budget: &Budget,
    cfg: &QuantizerConfig,
    rng: &mut R,
) -> Result<Vec<CachingDecision>> {
    cfg.validate()?;
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| invalid("noise_std", e.to_string()))?;
    let scores: Vec<f64> = logits.iter().map(|&z| sigmoid(z)).collect();
    let draw = |rng: &mut R, noisy: bool| -> Vec<bool> {
        logits
            .iter()
            .map(|&z| {
                let z = if noisy { z + noise.sample(rng) } else { z };
                rng.gen::<f64>() < sigmoid(z)
            })
            .collect()
    };
    let mut seen = HashSet::new();
    let mut pool: Vec<Vec<bool>> = Vec::new();
    let mut push = |d: Vec<bool>, pool: &mut Vec<Vec<bool>>| {
        if budget.fits(&d) && seen.insert(d.clone()) {
            pool.push(d);
        }
    };
    let clean = draw(rng, false);
    let clean_fits = budget.fits(&clean);
    push(clean, &mut pool);
    for round in 0..=cfg.resample_rounds {
        let first = round == 0;
        for _ in 0..cfg.raw_samples - usize::from(first) {
            let d = draw(rng, true);
            push(d, &mut pool);
        }
        if pool.len() >= cfg.candidates {
            break;
        }
    }
    let mut chosen: Vec<Vec<bool>> = if pool.len() > cfg.candidates {
        // The noise-free draw is always kept when feasible.
        let keep = usize::from(clean_fits);
        let picks = index::sample(rng, pool.len() - keep, cfg.candidates - keep);
        let mut c: Vec<Vec<bool>> = pool[..keep].to_vec();
        let mut idx = picks.into_vec();
        idx.sort_unstable();
        c.extend(idx.into_iter().map(|i| pool[i + keep].clone()));
        c
    } else {
        pool
    };
    if chosen.len() < cfg.candidates && !chosen.iter().any(|d| d.iter().all(|&b| !b)) {
        chosen.push(vec![false; logits.len()]);
    }
    Ok(finalize(chosen, &scores, budget))
}

/// Candidate `k` caches the `k` highest-scoring services, `k = 0..J`.
pub fn score_prefixes(scores: &[f64], candidates: usize) -> Vec<Vec<bool>> {
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]).then(i.cmp(&j)));
    (0..candidates.min(n + 1))
        .map(|k| {
            let mut d = vec![false; n];
            for &l in &order[..k] {
                d[l] = true;
            }
            d
        })
        .collect()
}

/// Score prefixes that fit the cache, each repaired.
pub fn order_preserving_quantize(scores: &[f64], budget: &Budget, candidates: usize) -> Vec<CachingDecision> {
    let raw = score_prefixes(scores, candidates).into_iter().filter(|d| budget.fits(d)).collect();
    finalize(raw, scores, budget)
}

/// Candidates for the configured quantizer.
pub fn quantize<R: Rng + ?Sized>(
    logits: &[f64],
    budget: &Budget,
    cfg: &QuantizerConfig,
    rng: &mut R,
) -> Result<Vec<CachingDecision>> {
    match cfg.kind {
        QuantizerKind::Stochastic => stochastic_quantize(logits, budget, cfg, rng),
        QuantizerKind::OrderPreserving => {
            cfg.validate()?;
            let scores: Vec<f64> = logits.iter().map(|&z| sigmoid(z)).collect();
            Ok(order_preserving_quantize(&scores, budget, cfg.candidates))
        }
    }
}
