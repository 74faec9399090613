//! Reference cache-placement policies. Each returns its decision together
//! with the optimal allocation energy for that decision.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::{computes, service_energies, shannon_rate, CachingDecision, EnergyBreakdown, ResourceAllocation};
use crate::error::{Error, Result};
use crate::scenario::Scenario;
use crate::solver::{solve_allocation, SolveResult, SolverOptions, Status};

/// Largest library the exhaustive search accepts by default.
pub const DEFAULT_EXHAUSTIVE_LIMIT: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    No,
    All,
    Popular,
    Greedy,
    Optimal,
    Learned,
    /// Knapsack placement of the one-service-per-location case.
    Special,
}

impl Policy {
    pub const BASELINES: [Policy; 5] = [Policy::No, Policy::All, Policy::Popular, Policy::Greedy, Policy::Optimal];

    pub fn as_str(self) -> &'static str {
        match self {
            Policy::No => "no",
            Policy::All => "all",
            Policy::Popular => "popular",
            Policy::Greedy => "greedy",
            Policy::Optimal => "optimal",
            Policy::Learned => "learned",
            Policy::Special => "special",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Policy::No, Policy::All, Policy::Popular, Policy::Greedy, Policy::Optimal, Policy::Learned, Policy::Special]
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| crate::error::invalid("policy", format!("unknown policy {s:?}")))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub solver_calls: usize,
    pub iterations: usize,
    pub runtime_secs: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyResult {
    pub policy: Policy,
    pub decision: CachingDecision,
    pub energy: EnergyBreakdown,
    pub allocation: ResourceAllocation,
    /// True when the decision ignores the cache capacity (all-caching bound).
    pub capacity_exempt: bool,
    pub stats: SolveStats,
}

impl PolicyResult {
    pub fn total(&self) -> f64 {
        self.energy.weighted_total
    }
}

/// Outcome of solving one decision: `None` when it admits no feasible
/// allocation.
fn solve_decision(
    s: &Scenario,
    decision: &CachingDecision,
    opts: &SolverOptions,
    stats: &mut SolveStats,
) -> Result<Option<SolveResult>> {
    let r = solve_allocation(s, decision, opts)?;
    stats.solver_calls += 1;
    stats.iterations += r.iterations;
    match r.status {
        Status::Optimal => Ok(Some(r)),
        Status::Infeasible => Ok(None),
        Status::IterationLimit => Err(Error::Solver(format!(
            "decision {decision}: iteration limit after {} iterations (gap {:.3e})",
            r.iterations,
            r.gap()
        ))),
    }
}

fn into_result(
    policy: Policy,
    decision: CachingDecision,
    solved: Option<SolveResult>,
    mut stats: SolveStats,
    started: Instant,
) -> Result<PolicyResult> {
    let r = solved.ok_or_else(|| Error::Infeasible(format!("{policy} caching: decision {decision} has no feasible allocation")))?;
    let energy = r
        .energy
        .ok_or_else(|| Error::Solver("optimal solve without an energy breakdown".into()))?;
    stats.runtime_secs = started.elapsed().as_secs_f64();
    Ok(PolicyResult {
        policy,
        capacity_exempt: policy == Policy::All,
        decision,
        energy,
        allocation: r.allocation,
        stats,
    })
}

/// Solves an arbitrary decision and packages it as a policy result.
pub fn evaluate_decision(
    s: &Scenario,
    policy: Policy,
    decision: CachingDecision,
    opts: &SolverOptions,
) -> Result<PolicyResult> {
    let started = Instant::now();
    let mut stats = SolveStats::default();
    let solved = solve_decision(s, &decision, opts, &mut stats)?;
    into_result(policy, decision, solved, stats, started)
}

pub fn no_caching(s: &Scenario, opts: &SolverOptions) -> Result<PolicyResult> {
    evaluate_decision(s, Policy::No, CachingDecision::none(s.num_services()), opts)
}

/// Every result cached regardless of capacity: a lower bound on energy.
pub fn all_caching(s: &Scenario, opts: &SolverOptions) -> Result<PolicyResult> {
    evaluate_decision(s, Policy::All, CachingDecision::all(s.num_services()), opts)
}

/// Services ordered by request probability, highest first, ties by index.
pub fn popularity_order(s: &Scenario) -> Vec<usize> {
    let mut order: Vec<usize> = (0..s.num_services()).collect();
    order.sort_by(|&i, &j| s.request_prob(j).total_cmp(&s.request_prob(i)).then(i.cmp(&j)));
    order
}

/// Caches in popularity order and stops at the first service that no
/// longer fits.
pub fn popular_decision(s: &Scenario) -> CachingDecision {
    let mut d = CachingDecision::none(s.num_services());
    for l in popularity_order(s) {
        d.set(l, true);
        if !d.fits(s) {
            d.set(l, false);
            break;
        }
    }
    d
}

pub fn popular_caching(s: &Scenario, opts: &SolverOptions) -> Result<PolicyResult> {
    evaluate_decision(s, Policy::Popular, popular_decision(s), opts)
}

/// Equal band shares, full-speed computing and rate-limited transfer times.
/// Only used to rank services when a decision has no feasible allocation.
pub fn equal_split_allocation(s: &Scenario, d: &CachingDecision) -> ResourceAllocation {
    let (n, k_count) = (s.num_services(), s.num_locations());
    let c = s.constants();
    let mut a = ResourceAllocation::zeros(n, k_count);
    let live: Vec<usize> = (0..n).filter(|&l| computes(s, d, l)).collect();
    let requested: Vec<usize> = (0..n).filter(|&l| s.request_prob(l) > 0.0).collect();
    for &l in &live {
        let svc = s.service(l);
        a.alpha_off[l] = 1.0 / live.len() as f64;
        a.t_c[l] = svc.cycles() / c.max_core_freq;
        for k in 0..k_count {
            a.t_off[l][k] = svc.input_bits / shannon_rate(a.alpha_off[l], s.offload_snr(k), c.bandwidth_offload);
        }
    }
    for &l in &requested {
        a.alpha_dl[l] = 1.0 / requested.len() as f64;
        for j in 0..k_count {
            a.t_dl[l][j] = s.service(l).output_bits / shannon_rate(a.alpha_dl[l], s.broadcast_snr(l, j), c.bandwidth_download);
        }
    }
    a
}

/// Repeatedly caches the uncached service with the largest expected energy
/// under the current decision, until that service no longer fits. While the
/// decision has no feasible allocation, energies are taken at
/// [`equal_split_allocation`] instead.
pub fn greedy_caching(s: &Scenario, opts: &SolverOptions) -> Result<PolicyResult> {
    let started = Instant::now();
    let mut stats = SolveStats::default();
    let mut d = CachingDecision::none(s.num_services());
    loop {
        let solved = solve_decision(s, &d, opts, &mut stats)?;
        let energies = match &solved {
            Some(r) => service_energies(s, &d, &r.allocation)?,
            None => service_energies(s, &d, &equal_split_allocation(s, &d))?,
        };
        let next = (0..s.num_services())
            .filter(|&l| !d.is_cached(l))
            .max_by(|&i, &j| energies[i].total_cmp(&energies[j]).then(j.cmp(&i)));
        let Some(l) = next else {
            return into_result(Policy::Greedy, d, solved, stats, started);
        };
        d.set(l, true);
        if !d.fits(s) {
            d.set(l, false);
            return into_result(Policy::Greedy, d, solved, stats, started);
        }
    }
}

/// Order used to pick among decisions: lower energy, then fewer cached
/// services, then lexicographically smaller vector.
fn preference(a: (&CachingDecision, f64), b: (&CachingDecision, f64)) -> Ordering {
    let tie = 1e-12 * a.1.abs().max(b.1.abs());
    if (a.1 - b.1).abs() > tie {
        return a.1.total_cmp(&b.1);
    }
    a.0.count().cmp(&b.0.count()).then_with(|| a.0.cmp(b.0))
}

/// Exhaustive search over every capacity-feasible decision.
pub fn optimal_caching(s: &Scenario, opts: &SolverOptions, limit: usize) -> Result<PolicyResult> {
    let n = s.num_services();
    if n > limit || n >= 64 {
        return Err(Error::LimitExceeded { services: n, limit });
    }
    let started = Instant::now();
    let decisions: Vec<CachingDecision> = (0..1u64 << n)
        .map(|m| CachingDecision::from_mask(m, n))
        .filter(|d| d.fits(s))
        .collect();
    let solved: Vec<(SolveStats, Result<Option<SolveResult>>)> = decisions
        .par_iter()
        .map(|d| {
            let mut st = SolveStats::default();
            let r = solve_decision(s, d, opts, &mut st);
            (st, r)
        })
        .collect();
    let mut stats = SolveStats::default();
    let mut best: Option<(CachingDecision, SolveResult)> = None;
    for (d, (st, r)) in decisions.into_iter().zip(solved) {
        stats.solver_calls += st.solver_calls;
        stats.iterations += st.iterations;
        let Some(r) = r? else { continue };
        let better = best
            .as_ref()
            .map_or(true, |(bd, br)| preference((&d, r.objective), (bd, br.objective)) == Ordering::Less);
        if better {
            best = Some((d, r));
        }
    }
    match best {
        Some((d, r)) => into_result(Policy::Optimal, d, Some(r), stats, started),
        None => Err(Error::Infeasible("no capacity-feasible decision admits a feasible allocation".into())),
    }
}

/// Runs one of the reference policies.
pub fn run_policy(s: &Scenario, policy: Policy, opts: &SolverOptions, limit: usize) -> Result<PolicyResult> {
    match policy {
        Policy::No => no_caching(s, opts),
        Policy::All => all_caching(s, opts),
        Policy::Popular => popular_caching(s, opts),
        Policy::Greedy => greedy_caching(s, opts),
        Policy::Optimal => optimal_caching(s, opts, limit),
        Policy::Learned => Err(crate::error::invalid("policy", "the learned policy needs a trained model")),
        Policy::Special => crate::special::SpecialScenario::new(s.clone())
            .and_then(|ss| crate::special::solve_special(&ss, opts))
            .map(|o| o.result),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{PreferenceProfile, ScenarioConfig, ServiceSpec, MBIT};

    /// `columns[k]` is the request distribution at location `k`.
    fn scenario(columns: Vec<Vec<f64>>, outputs: &[f64], capacity: f64) -> Scenario {
        let l = outputs.len();
        let k = columns.len();
        let pmf = (0..l).map(|i| columns.iter().map(|c| c[i]).collect()).collect();
        let services = outputs
            .iter()
            .map(|&r| ServiceSpec::new(1000.0, 7.0 * MBIT, r * MBIT, 2.8).unwrap())
            .collect();
        let cfg = ScenarioConfig {
            num_services: l,
            num_locations: k,
            ..Default::default()
        };
        let mut c = cfg.constants();
        c.cache_capacity = capacity * MBIT;
        let prefs = PreferenceProfile::new(pmf).unwrap();
        Scenario::new(services, c, prefs, vec![20000.0; k], vec![20000.0; k]).unwrap()
    }

    #[test]
    fn popular_with_uniform_popularity_takes_lowest_indices() {
        let s = scenario(vec![vec![0.25; 4]; 2], &[21.0; 4], 50.0);
        assert_eq!(popular_decision(&s).to_string(), "1100");
    }

    #[test]
    fn popular_follows_hand_sorted_order() {
        // Request probabilities 1-(1-p)^2 rank services 2, 0, 3, 1.
        let col = vec![0.3, 0.1, 0.4, 0.2];
        let s = scenario(vec![col.clone(), col], &[21.0, 21.0, 21.0, 21.0], 64.0);
        assert_eq!(popularity_order(&s), vec![2, 0, 3, 1]);
        assert_eq!(popular_decision(&s).to_string(), "1011");
    }

    #[test]
    fn popular_stops_at_first_violation() {
        // Service 2 (largest) does not fit after service 0; service 1 would.
        let col = vec![0.4, 0.1, 0.3, 0.2];
        let s = scenario(vec![col.clone(), col], &[21.0, 5.0, 30.0, 5.0], 40.0);
        assert_eq!(popular_decision(&s).to_string(), "1000");
    }

    #[test]
    fn policy_names_round_trip() {
        for p in Policy::BASELINES {
            assert_eq!(p.as_str().parse::<Policy>().unwrap(), p);
        }
        assert!("sometimes".parse::<Policy>().is_err());
    }

    #[test]
    fn preference_breaks_ties_by_size_then_order() {
        let a = CachingDecision::new(vec![true, false]);
        let b = CachingDecision::new(vec![false, true]);
        let c = CachingDecision::new(vec![true, true]);
        assert_eq!(preference((&b, 1.0), (&a, 1.0)), Ordering::Less);
        assert_eq!(preference((&a, 1.0), (&c, 1.0)), Ordering::Less);
        assert_eq!(preference((&c, 0.5), (&a, 1.0)), Ordering::Less);
    }
}
