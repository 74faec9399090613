//! Dual decomposition over the two bandwidth budgets only.
//!
//! For fixed prices `(sigma, epsilon)` each service solves a smooth convex
//! problem in its two bandwidth fractions, with the rate constraints active
//! and the deadline absorbed into the compute time. The reduced dual
//! `h(sigma, epsilon) = sum_l phi_l - sigma - epsilon` is maximized by the
//! ellipsoid method; deadline, frequency and rate multipliers are recovered
//! from the per-service optimality conditions.

use super::ellipsoid::{CutOutcome, Ellipsoid};
use super::model::{ServiceModel, Side, SideEval};
use super::{energy_ceiling, finish, Candidate, CandidateBuilder, SolveResult, SolverOptions};
use crate::energy::CachingDecision;
use crate::scenario::Scenario;
use crate::solver::dual::DualPoint;

const MIN_FRACTION: f64 = 1e-12;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Warm {
    pub a: f64,
    pub b: f64,
    /// Unconstrained side minimizers.
    pub a0: f64,
    pub b0: f64,
}

impl Default for Warm {
    fn default() -> Self {
        Self {
            a: 1.0,
            b: 1.0,
            a0: 0.5,
            b0: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct InnerSolution {
    pub a: f64,
    pub b: f64,
    pub mu: f64,
    pub eta: f64,
    /// `phi_l` at the minimizer, including `sigma a + epsilon b`.
    pub value: f64,
}

/// Minimizer over `(0, 1]` of `sum_k c_k tau_k(a) + mu tau_w(a) + price a`.
pub(crate) fn argmin_side(side: &Side, mu: f64, price: f64, warm: f64) -> f64 {
    // Derivative, its slope, and the magnitude of its terms.
    let deriv = |a: f64| {
        let e = side.eval(a);
        let d = e.dcost + mu * e.dtw + price;
        (d, e.d2cost + mu * e.d2tw, e.dcost.abs() + mu * e.dtw.abs() + price)
    };
    let (mut lo, mut hi) = (MIN_FRACTION, 1.0);
    let (mut lo_known, mut hi_known) = (false, false);
    let mut a = if warm > MIN_FRACTION && warm < 1.0 { warm } else { 0.5 };
    for _ in 0..200 {
        let (d, d2, mag) = deriv(a);
        if d.abs() <= 1e-13 * mag {
            return a;
        }
        if d < 0.0 {
            lo = a;
            lo_known = true;
        } else {
            hi = a;
            hi_known = true;
        }
        let newton = a - d / d2;
        let mut next = if d2 > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            (lo * hi).sqrt()
        };
        // Endpoints are only examined when the iterate heads for them.
        if !hi_known && next >= 0.5 * (1.0 + a) {
            if deriv(1.0).0 <= 0.0 {
                return 1.0;
            }
            hi_known = true;
            next = next.min(0.5 * (1.0 + a));
        }
        if !lo_known && next <= 2.0 * MIN_FRACTION.max(a * 1e-3) {
            if deriv(MIN_FRACTION).0 >= 0.0 {
                return MIN_FRACTION;
            }
            lo_known = true;
        }
        if (next - a).abs() <= 1e-14 * a || hi - lo <= 1e-15 * hi {
            return next;
        }
        a = next;
    }
    a
}

struct Phi<'a> {
    coef: f64,
    deadline: f64,
    up: &'a Side,
    down: &'a Side,
    sigma: f64,
    epsilon: f64,
}

struct PhiEval {
    value: f64,
    grad: [f64; 2],
    hess: [f64; 3],
}

impl Phi<'_> {
    fn value(&self, a: f64, b: f64) -> Option<f64> {
        let ea = self.up.eval(a);
        let eb = self.down.eval(b);
        let s = self.deadline - ea.tw - eb.tw;
        (s > 0.0).then(|| self.coef / (s * s) + ea.cost + eb.cost + self.sigma * a + self.epsilon * b)
    }

    fn eval(&self, a: f64, b: f64) -> Option<PhiEval> {
        let ea = self.up.eval(a);
        let eb = self.down.eval(b);
        let s = self.deadline - ea.tw - eb.tw;
        if !(s > 0.0) {
            return None;
        }
        let k2 = 2.0 * self.coef / (s * s * s);
        let k6 = 3.0 * k2 / s;
        Some(PhiEval {
            value: self.coef / (s * s) + ea.cost + eb.cost + self.sigma * a + self.epsilon * b,
            grad: [k2 * ea.dtw + ea.dcost + self.sigma, k2 * eb.dtw + eb.dcost + self.epsilon],
            hess: [
                k6 * ea.dtw * ea.dtw + k2 * ea.d2tw + ea.d2cost,
                k6 * ea.dtw * eb.dtw,
                k6 * eb.dtw * eb.dtw + k2 * eb.d2tw + eb.d2cost,
            ],
        })
    }

    /// Damped projected Newton on `(0, 1]^2`.
    fn minimize(&self, start: (f64, f64)) -> (f64, f64) {
        let (mut a, mut b) = start;
        if self.value(a, b).is_none() {
            (a, b) = (1.0, 1.0);
        }
        for _ in 0..100 {
            let Some(e) = self.eval(a, b) else { break };
            let fix_a = a >= 1.0 && e.grad[0] < 0.0;
            let fix_b = b >= 1.0 && e.grad[1] < 0.0;
            let (da, db) = match (fix_a, fix_b) {
                (true, true) => break,
                (true, false) => (0.0, -e.grad[1] / e.hess[2]),
                (false, true) => (-e.grad[0] / e.hess[0], 0.0),
                (false, false) => {
                    let det = e.hess[0] * e.hess[2] - e.hess[1] * e.hess[1];
                    if det > 0.0 {
                        (
                            -(e.hess[2] * e.grad[0] - e.hess[1] * e.grad[1]) / det,
                            -(e.hess[0] * e.grad[1] - e.hess[1] * e.grad[0]) / det,
                        )
                    } else {
                        (-e.grad[0] / e.hess[0], -e.grad[1] / e.hess[2])
                    }
                }
            };
            let decrement = -(e.grad[0] * da + e.grad[1] * db);
            if !(decrement > 0.0) || (da.abs() <= 1e-14 * a && db.abs() <= 1e-14 * b) {
                break;
            }
            if decrement <= 1e-10 * e.value {
                // Quadratic region: value changes fall below rounding, so take
                // the full step without a line search.
                let na = (a + da).clamp(MIN_FRACTION, 1.0);
                let nb = (b + db).clamp(MIN_FRACTION, 1.0);
                if self.value(na, nb).is_none() || (na == a && nb == b) {
                    break;
                }
                a = na;
                b = nb;
                continue;
            }
            let mut t = 1.0;
            let mut moved = false;
            while t > 1e-12 {
                let na = (a + t * da).clamp(MIN_FRACTION, 1.0);
                let nb = (b + t * db).clamp(MIN_FRACTION, 1.0);
                if let Some(v) = self.value(na, nb) {
                    let pred = e.grad[0] * (na - a) + e.grad[1] * (nb - b);
                    if v <= e.value + 1e-4 * pred {
                        moved = na != a || nb != b;
                        a = na;
                        b = nb;
                        break;
                    }
                }
                t *= 0.5;
            }
            if !moved {
                break;
            }
        }
        (a, b)
    }
}

/// Minimizes `g(a) + h(b)`, the priced side costs, over the deadline
/// boundary `tau_w(a) + rho_w(b) = budget`. `(a0, b0)` are the unconstrained
/// minimizers of `g` and `h` and must violate the deadline. Along the
/// boundary `b` is a convex decreasing function of `a`; on the interval
/// where `a >= a0` and `b(a) >= b0` the restricted objective is convex and
/// contains the optimum. Returns `(a, b, mu)`.
fn boundary_min(up: &Side, down: &Side, sigma: f64, epsilon: f64, budget: f64, a0: f64, b0: f64, warm: f64) -> (f64, f64, f64) {
    let a_lo = up.fraction_for_time(budget - down.worst_time(1.0)).unwrap_or(1.0);
    let a_hi = up.fraction_for_time(budget - down.worst_time(b0)).unwrap_or(1.0);
    let mut lo = a_lo.max(a0).min(1.0);
    let mut hi = a_hi.min(1.0).max(lo);

    // First and second derivative of the restricted objective at `a`.
    let eval = |a: f64| {
        let ea = up.eval(a);
        let b = down.fraction_for_time(budget - ea.tw).unwrap_or(1.0);
        let eb = down.eval(b);
        let bp = -ea.dtw / eb.dtw;
        let bpp = -(ea.d2tw + eb.d2tw * bp * bp) / eb.dtw;
        let gp = ea.dcost + sigma;
        let hp = eb.dcost + epsilon;
        let f1 = gp + hp * bp;
        let f2 = ea.d2cost + eb.d2cost * bp * bp + hp * bpp;
        (f1, f2, gp.abs() + (hp * bp).abs(), b, ea, eb)
    };
    let finish = |a: f64, b: f64, ea: SideEval, eb: SideEval| {
        let mu = if a < 1.0 {
            (ea.dcost + sigma) / -ea.dtw
        } else {
            (eb.dcost + epsilon) / -eb.dtw
        };
        (a, b, mu.max(0.0))
    };

    if hi - lo <= 1e-15 * hi {
        let (_, _, _, b, ea, eb) = eval(hi);
        return finish(hi, b, ea, eb);
    }
    let mut a = if warm > lo && warm < hi { warm } else { 0.5 * (lo + hi) };
    for _ in 0..200 {
        let (f1, f2, mag, b, ea, eb) = eval(a);
        if f1.abs() <= 1e-13 * mag {
            return finish(a, b, ea, eb);
        }
        if f1 < 0.0 {
            lo = a;
        } else {
            hi = a;
        }
        let newton = a - f1 / f2;
        let next = if f2 > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - a).abs() <= 1e-15 * a || hi - lo <= 1e-15 * hi {
            let (_, _, _, b, ea, eb) = eval(next);
            return finish(next, b, ea, eb);
        }
        a = next;
    }
    let (_, _, _, b, ea, eb) = eval(a);
    finish(a, b, ea, eb)
}

/// Per-service minimizer of `phi_l` for bandwidth prices `(sigma, epsilon)`.
pub(crate) fn solve_inner(m: &ServiceModel, sigma: f64, epsilon: f64, warm: &mut Warm) -> InnerSolution {
    if !m.requested {
        return InnerSolution::default();
    }
    let down = m.down();
    let sol = match &m.up {
        None => {
            // Cached: only the download fraction, deadline on the broadcast.
            let b0 = argmin_side(down, 0.0, epsilon, warm.b0);
            warm.b0 = b0;
            let (b, mu) = if down.worst_time(b0) <= m.deadline {
                (b0, 0.0)
            } else {
                let b = down.fraction_for_time(m.deadline).unwrap_or(1.0);
                let eb = down.eval(b);
                (b, ((eb.dcost + epsilon) / -eb.dtw).max(0.0))
            };
            InnerSolution {
                a: 0.0,
                b,
                mu,
                eta: 0.0,
                value: down.eval(b).cost + epsilon * b,
            }
        }
        Some(up) => {
            let budget = m.deadline - m.min_compute;
            // Compute time pinned at its floor; bandwidth from the side costs
            // alone, pushed onto the deadline boundary if needed.
            let pinned = |warm: &mut Warm| {
                let a0 = argmin_side(up, 0.0, sigma, warm.a0);
                let b0 = argmin_side(down, 0.0, epsilon, warm.b0);
                warm.a0 = a0;
                warm.b0 = b0;
                let (a, b, mu) = if up.worst_time(a0) + down.worst_time(b0) <= budget {
                    (a0, b0, 0.0)
                } else {
                    boundary_min(up, down, sigma, epsilon, budget, a0, b0, warm.a)
                };
                let t_c = m.min_compute;
                let fixed = if m.compute_coef > 0.0 { m.compute_coef / (t_c * t_c) } else { 0.0 };
                let value = fixed + up.eval(a).cost + down.eval(b).cost + sigma * a + epsilon * b;
                (a, b, mu, value)
            };
            if m.compute_coef > 0.0 {
                let phi = Phi {
                    coef: m.compute_coef,
                    deadline: m.deadline,
                    up,
                    down,
                    sigma,
                    epsilon,
                };
                let (a, b) = phi.minimize((warm.a, warm.b));
                let s = m.deadline - up.worst_time(a) - down.worst_time(b);
                if s >= m.min_compute {
                    InnerSolution {
                        a,
                        b,
                        mu: 2.0 * m.compute_coef / s.powi(3),
                        eta: 0.0,
                        value: phi.value(a, b).unwrap_or(f64::INFINITY),
                    }
                } else {
                    let (a, b, mu, value) = pinned(warm);
                    let floor = 2.0 * m.compute_coef / m.min_compute.powi(3);
                    let mu = mu.max(floor);
                    InnerSolution {
                        a,
                        b,
                        mu,
                        eta: mu - floor,
                        value,
                    }
                }
            } else {
                let (a, b, mu, value) = pinned(warm);
                InnerSolution {
                    a,
                    b,
                    mu,
                    eta: mu,
                    value,
                }
            }
        }
    };
    warm.a = if sol.a > 0.0 { sol.a } else { warm.a };
    warm.b = sol.b;
    sol
}

/// Multipliers implied by the inner solutions at prices `(sigma, epsilon)`.
pub(crate) fn recover_duals(
    models: &[ServiceModel],
    inner: &[InnerSolution],
    sigma: f64,
    epsilon: f64,
    locations: usize,
) -> DualPoint {
    let mut d = DualPoint::zeros(models.len(), locations);
    d.sigma = sigma;
    d.epsilon = epsilon;
    for (m, sol) in models.iter().zip(inner) {
        if !m.requested {
            continue;
        }
        let l = m.index;
        d.mu[l] = sol.mu;
        d.eta[l] = sol.eta;
        if let Some(up) = &m.up {
            for k in 0..locations {
                let t = up.time(sol.a, k);
                let e = up.cost[k] + if k == up.worst { sol.mu } else { 0.0 };
                d.omega[l][k] = e * t * t / up.bits;
            }
        }
        let down = m.down();
        for j in 0..locations {
            let t = down.time(sol.b, j);
            let e = down.cost[j] + if j == down.worst { sol.mu } else { 0.0 };
            d.gamma[l][j] = e * t * t / down.bits;
        }
    }
    d
}

pub(crate) fn solve(
    s: &Scenario,
    decision: &CachingDecision,
    models: &[ServiceModel],
    opts: &SolverOptions,
    max_iter: usize,
) -> SolveResult {
    let builder = CandidateBuilder::new(s, decision, models);
    let scale = builder.energy_scale();
    let ceiling = energy_ceiling(models);
    let mut ell = Ellipsoid::ball(vec![opts.initial_center; 2], opts.initial_radius);
    let mut warm = vec![Warm::default(); models.len()];
    let mut inner = vec![InnerSolution::default(); models.len()];
    let mut best_dual = f64::NEG_INFINITY;
    let mut best_duals: Option<DualPoint> = None;
    let mut best_primal: Option<Candidate> = None;
    let mut iterations = 0;

    while iterations < max_iter {
        iterations += 1;
        let c = ell.center().to_vec();
        let outcome = if c[0] < 0.0 {
            ell.cut(&[-1.0, 0.0], -c[0])
        } else if c[1] < 0.0 {
            ell.cut(&[0.0, -1.0], -c[1])
        } else {
            let (sigma, epsilon) = (c[0] * scale, c[1] * scale);
            let mut value = -sigma - epsilon;
            let (mut sum_a, mut sum_b) = (0.0, 0.0);
            for (m, (w, out)) in models.iter().zip(warm.iter_mut().zip(inner.iter_mut())) {
                *out = solve_inner(m, sigma, epsilon, w);
                value += out.value;
                sum_a += out.a;
                sum_b += out.b;
            }
            if value > best_dual {
                best_dual = value;
                best_duals = Some(recover_duals(models, &inner, sigma, epsilon, s.num_locations()));
            }
            if best_dual > ceiling * (1.0 + 1e-9) {
                return SolveResult::infeasible(s, iterations);
            }
            let a: Vec<f64> = inner.iter().map(|x| x.a).collect();
            let b: Vec<f64> = inner.iter().map(|x| x.b).collect();
            if let Some(cand) = builder.build(&a, &b) {
                if best_primal.as_ref().map_or(true, |p| cand.energy < p.energy) {
                    best_primal = Some(cand);
                }
            }
            if let Some(p) = &best_primal {
                if p.energy - best_dual <= opts.stop_gap * p.energy.abs() {
                    break;
                }
            }
            // Maximize h: keep {x : -g^T (x - c) + (best - h(c)) <= 0}.
            let g = [-(sum_a - 1.0) * scale, -(sum_b - 1.0) * scale];
            if g[0] == 0.0 && g[1] == 0.0 {
                break;
            }
            ell.cut(&g, (best_dual - value).max(0.0))
        };
        if outcome != CutOutcome::Updated || ell.trace() <= opts.trace_tolerance {
            break;
        }
    }
    if let Some(d) = &best_duals {
        if let Some((value, cand, duals)) = polish(s, &builder, models, d.sigma, d.epsilon, &mut warm) {
            best_dual = best_dual.max(value);
            if best_primal.as_ref().map_or(true, |p| cand.energy <= p.energy * (1.0 + opts.stop_gap)) {
                best_primal = Some(cand);
                best_duals = Some(duals);
            }
        }
    }
    finish(s, decision, opts, best_primal, best_dual, best_duals, iterations)
}

/// Newton on the budget residuals `(sum a - 1, sum b - 1)` in log prices,
/// started from the best dual point. At the root the inner minimizers form a
/// primal point whose recovered multipliers match it exactly.
fn polish(
    s: &Scenario,
    builder: &CandidateBuilder,
    models: &[ServiceModel],
    sigma: f64,
    epsilon: f64,
    warm: &mut [Warm],
) -> Option<(f64, Candidate, DualPoint)> {
    let has_up = models.iter().any(|m| m.requested && m.up.is_some());
    let eval = |x: [f64; 2], warm: &mut [Warm]| {
        let (sg, ep) = (if has_up { x[0].exp() } else { 0.0 }, x[1].exp());
        let inner: Vec<InnerSolution> = models
            .iter()
            .zip(warm.iter_mut())
            .map(|(m, w)| solve_inner(m, sg, ep, w))
            .collect();
        let ra = if has_up { inner.iter().map(|x| x.a).sum::<f64>() - 1.0 } else { 0.0 };
        let rb = inner.iter().map(|x| x.b).sum::<f64>() - 1.0;
        ([ra, rb], inner, sg, ep)
    };
    let norm = |r: [f64; 2]| r[0].abs().max(r[1].abs());
    let mut x = [sigma.max(1e-300).ln(), epsilon.max(1e-300).ln()];
    let (mut r, mut inner, mut sg, mut ep) = eval(x, warm);
    for _ in 0..50 {
        if norm(r) <= 1e-13 {
            break;
        }
        let h = 1e-6;
        let mut jac = [[0.0; 2]; 2];
        for c in 0..2 {
            if c == 0 && !has_up {
                jac[0][0] = 1.0;
                continue;
            }
            let mut xp = x;
            xp[c] += h;
            let (rp, ..) = eval(xp, &mut warm.to_vec());
            jac[0][c] = (rp[0] - r[0]) / h;
            jac[1][c] = (rp[1] - r[1]) / h;
        }
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        let scale = (jac[0][0] * jac[1][1]).abs().max((jac[0][1] * jac[1][0]).abs());
        let dx = if det.is_finite() && det.abs() > 1e-12 * scale {
            [
                -(jac[1][1] * r[0] - jac[0][1] * r[1]) / det,
                -(-jac[1][0] * r[0] + jac[0][0] * r[1]) / det,
            ]
        } else {
            // A fraction pinned at 1 makes its budget row flat.
            let diag = |c: usize| if jac[c][c] != 0.0 { -r[c] / jac[c][c] } else { 0.0 };
            [diag(0), diag(1)]
        };
        if !(dx[0].is_finite() && dx[1].is_finite()) {
            return None;
        }
        let mut step = 1.0;
        let improved = loop {
            let xn = [x[0] + step * dx[0], x[1] + step * dx[1]];
            let trial = eval(xn, warm);
            if norm(trial.0) < norm(r) {
                x = xn;
                (r, inner, sg, ep) = trial;
                break true;
            }
            step *= 0.5;
            if step < 1e-6 {
                break false;
            }
        };
        if !improved {
            // Inner solves are only accurate to about 1e-11.
            break;
        }
    }
    if norm(r) > 1e-9 {
        return None;
    }
    let value = inner.iter().map(|x| x.value).sum::<f64>() - sg - ep;
    let a: Vec<f64> = inner.iter().map(|x| x.a).collect();
    let b: Vec<f64> = inner.iter().map(|x| x.b).collect();
    let cand = builder.build(&a, &b)?;
    Some((value, cand, recover_duals(models, &inner, sg, ep, s.num_locations())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn side(cost: Vec<f64>, worst: usize) -> Side {
        Side {
            bits: 7e6,
            bandwidth: 1e7,
            snr: vec![3000.0, 1500.0, 400.0],
            cost,
            worst,
        }
    }

    #[test]
    fn side_argmin_is_stationary() {
        let sd = side(vec![0.05, 0.03, 0.02], 2);
        for &(mu, price) in &[(0.0, 0.01), (0.5, 0.2), (3.0, 1.0)] {
            let a = argmin_side(&sd, mu, price, 0.5);
            let e = sd.eval(a);
            let d = e.dcost + mu * e.dtw + price;
            if a < 1.0 {
                assert!(d.abs() <= 1e-9 * (e.dcost.abs() + mu * e.dtw.abs() + price), "d={d}");
            } else {
                assert!(d <= 0.0);
            }
        }
    }

    #[test]
    fn newton_beats_a_dense_grid() {
        let up = side(vec![0.05, 0.03, 0.02], 2);
        let mut down = side(vec![0.1, 0.1, 0.2], 2);
        down.bits = 21e6;
        let phi = Phi {
            coef: 171.5,
            deadline: 2.8,
            up: &up,
            down: &down,
            sigma: 0.4,
            epsilon: 0.6,
        };
        let (a, b) = phi.minimize((1.0, 1.0));
        let v = phi.value(a, b).unwrap();
        let mut grid_best = f64::INFINITY;
        for i in 1..=400 {
            for j in 1..=400 {
                if let Some(g) = phi.value(i as f64 / 400.0, j as f64 / 400.0) {
                    grid_best = grid_best.min(g);
                }
            }
        }
        assert!(v <= grid_best + 1e-12 * grid_best);
        assert!(v >= grid_best * (1.0 - 1e-3));
    }
}
