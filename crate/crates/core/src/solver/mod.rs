//! Optimal bandwidth/time allocation for a fixed caching decision by
//! Lagrangian dual decomposition and the ellipsoid method.

pub mod dual;
pub mod ellipsoid;
mod full;
pub mod kkt;
pub(crate) mod model;
mod structured;

use serde::{Deserialize, Serialize};

pub use dual::{bandwidth_derivative, dual_function, optimal_bandwidth, primal_times, DualEvaluation, DualPoint, PrimalTimes};
pub use ellipsoid::{CutOutcome, Ellipsoid};
pub use kkt::{kkt_residuals, KktReport};

use crate::energy::{
    check_feasible_with, expected_energy, shannon_rate, CachingDecision, EnergyBreakdown, ResourceAllocation,
};
use crate::error::{Error, Result};
use crate::scenario::Scenario;
use model::ServiceModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DualMethod {
    /// Ellipsoid over the two bandwidth prices; per-service problems are
    /// solved to optimality for each price pair.
    #[default]
    Structured,
    /// Ellipsoid over every multiplier, with closed-form time minimizers and
    /// bisection for the bandwidth fractions. Slow; meant for small instances.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub method: DualMethod,
    /// Relative duality gap required for an `optimal` status.
    pub gap_tolerance: f64,
    /// Relative duality gap at which iteration stops.
    pub stop_gap: f64,
    /// Defaults to `2000 * (2KL + 2L + 2)`.
    pub max_iter: Option<usize>,
    /// Radius of the initial ball, in normalized dual units.
    pub initial_radius: f64,
    /// Every coordinate of the initial center, in normalized dual units.
    pub initial_center: f64,
    /// Stop once the trace of the shape matrix falls below this.
    pub trace_tolerance: f64,
    pub feasibility_tolerance: f64,
    /// Margin kept between deadline and frequency multipliers (full method).
    pub domain_margin: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            method: DualMethod::Structured,
            gap_tolerance: 1e-3,
            stop_gap: 1e-6,
            max_iter: None,
            initial_radius: 1e3,
            initial_center: 1.0,
            trace_tolerance: 1e-12,
            feasibility_tolerance: crate::energy::FEASIBILITY_TOL,
            domain_margin: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    #[serde(rename = "optimal")]
    Optimal,
    #[serde(rename = "infeasible")]
    Infeasible,
    #[serde(rename = "iteration-limit")]
    IterationLimit,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Optimal => "optimal",
            Status::Infeasible => "infeasible",
            Status::IterationLimit => "iteration-limit",
        }
    }
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveResult {
    pub allocation: ResourceAllocation,
    pub energy: Option<EnergyBreakdown>,
    /// Weighted expected energy of `allocation`; infinite when no feasible
    /// allocation was found.
    pub objective: f64,
    /// Best dual bound found.
    pub dual_objective: f64,
    pub iterations: usize,
    pub status: Status,
    /// Multipliers recovered at the best dual point.
    pub duals: Option<DualPoint>,
}

impl SolveResult {
    pub fn gap(&self) -> f64 {
        (self.objective - self.dual_objective) / self.objective.abs().max(1e-12)
    }

    pub fn is_optimal(&self) -> bool {
        self.status == Status::Optimal
    }

    /// Objective of an optimal solve, or a solver error.
    pub fn optimal_energy(&self) -> Result<f64> {
        if self.is_optimal() {
            Ok(self.objective)
        } else {
            Err(Error::Solver(format!(
                "status {} after {} iterations (gap {:.3e})",
                self.status,
                self.iterations,
                self.gap()
            )))
        }
    }

    pub(crate) fn infeasible(s: &Scenario, iterations: usize) -> Self {
        Self {
            allocation: ResourceAllocation::zeros(s.num_services(), s.num_locations()),
            energy: None,
            objective: f64::INFINITY,
            dual_objective: f64::INFINITY,
            iterations,
            status: Status::Infeasible,
            duals: None,
        }
    }
}

/// A primal point built from bandwidth fractions with every rate
/// constraint and the deadline active.
#[derive(Debug, Clone)]
pub(crate) struct Candidate {
    pub allocation: ResourceAllocation,
    pub energy: f64,
}

pub(crate) struct CandidateBuilder<'a> {
    s: &'a Scenario,
    decision: &'a CachingDecision,
    models: &'a [ServiceModel],
}

impl<'a> CandidateBuilder<'a> {
    pub fn new(s: &'a Scenario, decision: &'a CachingDecision, models: &'a [ServiceModel]) -> Self {
        Self { s, decision, models }
    }

    /// Times for given fractions; `None` if some service cannot meet its
    /// deadline with a compute time of at least `C Q / f_max`.
    fn allocate(&self, a: &[f64], b: &[f64], strict: bool) -> Option<ResourceAllocation> {
        let k_count = self.s.num_locations();
        let mut alloc = ResourceAllocation::zeros(self.models.len(), k_count);
        let norm = |v: &[f64]| {
            let sum: f64 = v.iter().sum();
            let f = if sum > 1.0 { 1.0 / sum } else { 1.0 };
            v.iter().map(|x| x * f).collect::<Vec<_>>()
        };
        let a = norm(a);
        let b = norm(b);
        for m in self.models.iter().filter(|m| m.requested) {
            let l = m.index;
            let mut slack = m.deadline;
            if let Some(up) = &m.up {
                if !(a[l] > 0.0) {
                    return None;
                }
                alloc.alpha_off[l] = a[l];
                for k in 0..k_count {
                    alloc.t_off[l][k] = up.bits / shannon_rate(a[l], up.snr[k], up.bandwidth);
                }
                slack -= alloc.t_off[l][up.worst];
            }
            let down = m.down();
            if !(b[l] > 0.0) {
                return None;
            }
            alloc.alpha_dl[l] = b[l];
            for j in 0..k_count {
                alloc.t_dl[l][j] = down.bits / shannon_rate(b[l], down.snr[j], down.bandwidth);
            }
            slack -= alloc.t_dl[l][down.worst];
            let floor = m.min_compute;
            if strict && slack < floor - 1e-9 * m.deadline {
                return None;
            }
            alloc.t_c[l] = if m.computes { slack.max(floor).max(1e-9 * m.deadline) } else { 0.0 };
        }
        Some(alloc)
    }

    pub fn build(&self, a: &[f64], b: &[f64]) -> Option<Candidate> {
        let allocation = self.allocate(a, b, true)?;
        let energy = expected_energy(self.s, self.decision, &allocation).ok()?.weighted_total;
        energy.is_finite().then_some(Candidate { allocation, energy })
    }

    /// Energy of an equal bandwidth split, used to normalize dual units.
    pub fn energy_scale(&self) -> f64 {
        let n_up = self.models.iter().filter(|m| m.computes).count().max(1) as f64;
        let n_down = self.models.iter().filter(|m| m.requested).count().max(1) as f64;
        let a: Vec<f64> = self.models.iter().map(|m| if m.computes { 1.0 / n_up } else { 0.0 }).collect();
        let b: Vec<f64> = self.models.iter().map(|m| if m.requested { 1.0 / n_down } else { 0.0 }).collect();
        self.allocate(&a, &b, false)
            .and_then(|alloc| expected_energy(self.s, self.decision, &alloc).ok())
            .map(|e| e.weighted_total)
            .filter(|e| e.is_finite() && *e > 0.0)
            .unwrap_or(1.0)
    }
}

/// Energy no feasible allocation can exceed: compute at its floor time and
/// every transfer lasting the whole deadline. A dual value above this
/// certifies infeasibility.
pub(crate) fn energy_ceiling(models: &[ServiceModel]) -> f64 {
    models
        .iter()
        .filter(|m| m.requested)
        .map(|m| {
            let compute = if m.computes { m.compute_coef / (m.min_compute * m.min_compute) } else { 0.0 };
            let up: f64 = m.up.as_ref().map_or(0.0, |u| u.cost.iter().sum());
            let down: f64 = m.down().cost.iter().sum();
            compute + (up + down) * m.deadline
        })
        .sum()
}

/// Necessary condition: each service alone, with the full bands, meets its
/// deadline at maximum core frequency.
pub fn precheck(s: &Scenario, decision: &CachingDecision) -> bool {
    model::build(s, decision).iter().filter(|m| m.requested).all(|m| {
        let up = m.up.as_ref().map_or(0.0, |u| u.worst_time(1.0));
        up + m.min_compute + m.down().worst_time(1.0) <= m.deadline
    })
}

pub(crate) fn finish(
    s: &Scenario,
    decision: &CachingDecision,
    opts: &SolverOptions,
    primal: Option<Candidate>,
    dual_bound: f64,
    duals: Option<DualPoint>,
    iterations: usize,
) -> SolveResult {
    let Some(best) = primal else {
        return SolveResult::infeasible(s, iterations);
    };
    let energy = expected_energy(s, decision, &best.allocation).ok();
    let mut result = SolveResult {
        allocation: best.allocation,
        energy,
        objective: best.energy,
        dual_objective: dual_bound,
        iterations,
        status: Status::IterationLimit,
        duals,
    };
    let feasible = check_feasible_with(s, decision, &result.allocation, opts.feasibility_tolerance).allocation_feasible();
    if feasible && result.gap() <= opts.gap_tolerance {
        result.status = Status::Optimal;
    }
    result
}

/// Solves the bandwidth/time allocation for a fixed caching decision. The
/// cache capacity is not enforced here.
pub fn solve_allocation(s: &Scenario, decision: &CachingDecision, opts: &SolverOptions) -> Result<SolveResult> {
    if decision.len() != s.num_services() {
        return Err(Error::Dimension(format!(
            "decision has {} entries for {} services",
            decision.len(),
            s.num_services()
        )));
    }
    if !precheck(s, decision) {
        return Ok(SolveResult::infeasible(s, 0));
    }
    let models = model::build(s, decision);
    if models.iter().all(|m| !m.requested) {
        let alloc = ResourceAllocation::zeros(s.num_services(), s.num_locations());
        let energy = expected_energy(s, decision, &alloc)?;
        return Ok(SolveResult {
            allocation: alloc,
            objective: energy.weighted_total,
            dual_objective: energy.weighted_total,
            energy: Some(energy),
            iterations: 0,
            status: Status::Optimal,
            duals: Some(DualPoint::zeros(s.num_services(), s.num_locations())),
        });
    }
    let max_iter = opts
        .max_iter
        .unwrap_or(2000 * DualPoint::dimension(s.num_services(), s.num_locations()));
    Ok(match opts.method {
        DualMethod::Structured => structured::solve(s, decision, &models, opts, max_iter),
        DualMethod::Full => full::solve(s, decision, &models, opts, max_iter),
    })
}
