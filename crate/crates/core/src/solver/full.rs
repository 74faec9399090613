//! Ellipsoid method over the complete multiplier vector.
//!
//! Coordinates are normalized by their natural units (energy scale `E`,
//! deadline `T`, data sizes `Q` and `R`) so one ball covers all of them.
//! Multipliers of services that are never requested, and offload-rate
//! multipliers of cached services, are fixed at zero.

use super::dual::{evaluate, DualPoint};
use super::ellipsoid::{CutOutcome, Ellipsoid};
use super::model::ServiceModel;
use super::{energy_ceiling, finish, Candidate, CandidateBuilder, SolveResult, SolverOptions};
use crate::energy::CachingDecision;
use crate::scenario::Scenario;

#[derive(Debug, Clone, Copy)]
enum Coord {
    Mu(usize),
    Eta(usize),
    Omega(usize, usize),
    Gamma(usize, usize),
    Sigma,
    Epsilon,
}

struct Layout {
    coords: Vec<Coord>,
    scale: Vec<f64>,
    /// `(mu index, eta index, margin)` pairs requiring `mu - eta >= margin`.
    gaps: Vec<(usize, usize, f64)>,
    services: usize,
    locations: usize,
}

impl Layout {
    fn new(models: &[ServiceModel], locations: usize, energy: f64, margin: f64) -> Self {
        let mut coords = Vec::new();
        let mut scale = Vec::new();
        let mut gaps = Vec::new();
        for m in models.iter().filter(|m| m.requested) {
            let l = m.index;
            let mu = coords.len();
            coords.push(Coord::Mu(l));
            scale.push(energy / m.deadline);
            coords.push(Coord::Eta(l));
            scale.push(energy / m.deadline);
            gaps.push((mu, mu + 1, if m.compute_coef > 0.0 { margin } else { 0.0 }));
            if let Some(up) = &m.up {
                for k in 0..locations {
                    coords.push(Coord::Omega(l, k));
                    scale.push(energy * m.deadline / up.bits);
                }
            }
            for j in 0..locations {
                coords.push(Coord::Gamma(l, j));
                scale.push(energy * m.deadline / m.down().bits);
            }
        }
        coords.push(Coord::Sigma);
        scale.push(energy);
        coords.push(Coord::Epsilon);
        scale.push(energy);
        Self {
            coords,
            scale,
            gaps,
            services: models.len(),
            locations,
        }
    }

    fn to_duals(&self, x: &[f64]) -> DualPoint {
        let mut d = DualPoint::zeros(self.services, self.locations);
        for ((c, &v), &sc) in self.coords.iter().zip(x).zip(&self.scale) {
            let v = v * sc;
            match *c {
                Coord::Mu(l) => d.mu[l] = v,
                Coord::Eta(l) => d.eta[l] = v,
                Coord::Omega(l, k) => d.omega[l][k] = v,
                Coord::Gamma(l, j) => d.gamma[l][j] = v,
                Coord::Sigma => d.sigma = v,
                Coord::Epsilon => d.epsilon = v,
            }
        }
        d
    }

    fn gradient(&self, sub: &DualPoint) -> Vec<f64> {
        self.coords
            .iter()
            .zip(&self.scale)
            .map(|(c, &sc)| {
                sc * match *c {
                    Coord::Mu(l) => sub.mu[l],
                    Coord::Eta(l) => sub.eta[l],
                    Coord::Omega(l, k) => sub.omega[l][k],
                    Coord::Gamma(l, j) => sub.gamma[l][j],
                    Coord::Sigma => sub.sigma,
                    Coord::Epsilon => sub.epsilon,
                }
            })
            .collect()
    }
}

/// First violated domain constraint at `x`, as a deep cut.
fn domain_cut(layout: &Layout, x: &[f64]) -> Option<(Vec<f64>, f64)> {
    let n = x.len();
    if let Some(i) = (0..n).filter(|&i| x[i] < 0.0).min_by(|&i, &j| x[i].total_cmp(&x[j])) {
        let mut g = vec![0.0; n];
        g[i] = -1.0;
        return Some((g, -x[i]));
    }
    for &(mu, eta, margin) in &layout.gaps {
        let depth = x[eta] - x[mu] + margin;
        if depth > 0.0 || (margin > 0.0 && x[mu] - x[eta] <= margin) {
            let mut g = vec![0.0; n];
            g[eta] = 1.0;
            g[mu] = -1.0;
            return Some((g, depth.max(0.0)));
        }
    }
    None
}

pub(crate) fn solve(
    s: &Scenario,
    decision: &CachingDecision,
    models: &[ServiceModel],
    opts: &SolverOptions,
    max_iter: usize,
) -> SolveResult {
    let builder = CandidateBuilder::new(s, decision, models);
    let energy = builder.energy_scale();
    let layout = Layout::new(models, s.num_locations(), energy, opts.domain_margin);
    let n = layout.coords.len();
    let ceiling = energy_ceiling(models);
    let mut ell = Ellipsoid::ball(vec![opts.initial_center; n], opts.initial_radius);
    let mut best_dual = f64::NEG_INFINITY;
    let mut best_duals = None;
    let mut best_primal: Option<Candidate> = None;
    let mut iterations = 0;

    while iterations < max_iter {
        iterations += 1;
        let x = ell.center().to_vec();
        let outcome = if let Some((g, depth)) = domain_cut(&layout, &x) {
            ell.cut(&g, depth)
        } else {
            let duals = layout.to_duals(&x);
            let Ok(ev) = evaluate(models, &duals, s.num_locations()) else {
                break;
            };
            if ev.value > best_dual {
                best_dual = ev.value;
                best_duals = Some(duals);
            }
            if best_dual > ceiling * (1.0 + 1e-9) {
                return SolveResult::infeasible(s, iterations);
            }
            if let Some(c) = builder.build(&ev.alpha_off, &ev.alpha_dl) {
                if best_primal.as_ref().map_or(true, |p| c.energy < p.energy) {
                    best_primal = Some(c);
                }
            }
            if let Some(p) = &best_primal {
                if p.energy - best_dual <= opts.stop_gap * p.energy.abs() {
                    break;
                }
            }
            let g: Vec<f64> = layout.gradient(&ev.subgradient).iter().map(|v| -v).collect();
            if g.iter().all(|&v| v == 0.0) {
                break;
            }
            ell.cut(&g, (best_dual - ev.value).max(0.0))
        };
        if outcome != CutOutcome::Updated || ell.trace() <= opts.trace_tolerance {
            break;
        }
    }
    finish(s, decision, opts, best_primal, best_dual, best_duals, iterations)
}
