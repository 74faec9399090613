//! One-service-per-location case: closed-form allocation for given
//! multipliers, the slack-deadline dual system, knapsack cache placement and
//! the end-to-end pipeline.

use std::f64::consts::{E, LN_2};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baselines::{evaluate_decision, Policy, PolicyResult};
use crate::energy::{shannon_rate, CachingDecision, ResourceAllocation};
use crate::error::{invalid, Error, Result};
use crate::scenario::Scenario;
use crate::solver::SolverOptions;

/// Principal branch of the Lambert W function on `[-1/e, inf)`.
pub fn lambert_w0(x: f64) -> Result<f64> {
    let branch = -1.0 / E;
    if x.is_nan() || x < branch - 1e-12 {
        return Err(Error::LambertDomain(x));
    }
    if x <= branch {
        return Ok(-1.0);
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == f64::INFINITY {
        return Ok(f64::INFINITY);
    }
    let mut w = if x < -0.25 {
        // Series about the branch point.
        let p = (2.0 * (E * x + 1.0)).max(0.0).sqrt();
        -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p
    } else if x < 3.0 {
        x.ln_1p() * (1.0 - x.ln_1p() / (2.0 + x.ln_1p()))
    } else {
        let l = x.ln();
        l - l.ln()
    };
    // Halley steps until the residual meets 1e-12 max(1, |x|), then until
    // the iterate stops moving.
    for _ in 0..100 {
        let ew = w.exp();
        let f = w * ew - x;
        if f == 0.0 {
            break;
        }
        let wp1 = w + 1.0;
        if wp1 <= 0.0 {
            break;
        }
        let step = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1));
        let next = (w - step).max(-1.0);
        let settled = f.abs() <= 1e-12 * x.abs().max(1.0) && (next - w).abs() <= 4.0 * f64::EPSILON * w.abs();
        w = next;
        if settled {
            break;
        }
    }
    Ok(w)
}

/// `ln(1 - y) + y`, by its series for small `y` where the direct form
/// cancels.
fn log1m_plus(y: f64) -> f64 {
    if y >= 0.05 {
        return (-y).ln_1p() + y;
    }
    let mut term = y;
    let mut sum = 0.0;
    for n in 2..40 {
        term *= y;
        let add = term / n as f64;
        sum += add;
        if add <= 1e-17 * sum {
            break;
        }
    }
    -sum
}

/// `1 + W0(-exp(-1 - delta))` for `delta >= 0`, computed without the
/// cancellation the direct form suffers near the branch point. It is the
/// root `y` in `[0, 1)` of `ln(1 - y) + y + delta = 0`.
pub fn branch_offset(delta: f64) -> f64 {
    if !(delta > 0.0) {
        return 0.0;
    }
    if delta > 700.0 {
        return 1.0;
    }
    let h = |y: f64| log1m_plus(y) + delta;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut y = if delta < 0.3 {
        let r = (2.0 * delta).sqrt();
        r - r * r / 3.0
    } else {
        1.0 - (-1.0 - delta).exp()
    };
    for _ in 0..200 {
        if !(y > lo && y < hi) {
            y = 0.5 * (lo + hi);
        }
        let v = h(y);
        if v == 0.0 {
            return y;
        }
        if v > 0.0 {
            lo = y;
        } else {
            hi = y;
        }
        let slope = -y / (1.0 - y);
        let next = y - v / slope;
        if (next - y).abs() <= 1e-16 * y.max(1e-300) || hi - lo <= f64::EPSILON * hi {
            return next.clamp(lo, hi);
        }
        y = next;
    }
    y
}

/// `z` in `expm1(z) = snr / alpha`: the log-SNR per unit band at the
/// bandwidth optimum for price ratio `price / (weight * B)`.
fn log_snr(price: f64, weight: f64, bandwidth: f64) -> f64 {
    if weight <= 0.0 {
        return f64::INFINITY;
    }
    let delta = price * LN_2 / (weight * bandwidth);
    branch_offset(delta) + delta
}

/// Closed-form bandwidth fraction for one link.
pub fn closed_form_fraction(snr: f64, price: f64, weight: f64, bandwidth: f64) -> f64 {
    let z = log_snr(price, weight, bandwidth);
    if z == f64::INFINITY {
        return 0.0;
    }
    (snr / z.exp_m1()).min(1.0)
}

/// A scenario where the users at location `k` only ever request service `k`.
#[derive(Debug, Clone)]
pub struct SpecialScenario {
    scenario: Scenario,
    /// Internal location requesting each service.
    location: Vec<usize>,
    /// Downlink position of that location.
    position: Vec<usize>,
}

/// One transfer direction of one service.
#[derive(Debug, Clone, Copy)]
pub struct Link {
    pub bits: f64,
    pub snr: f64,
    /// Weight times transmit power.
    pub cost: f64,
    pub bandwidth: f64,
}

impl Link {
    /// `f(omega, sigma)` of the slack-deadline system: zero when the
    /// rate constraint is active at the time and fraction the multipliers
    /// imply.
    pub fn equation(&self, omega: f64, sigma: f64) -> f64 {
        self.equation_scale() - self.equation_rhs(omega, sigma)
    }

    fn equation_scale(&self) -> f64 {
        self.bandwidth * self.snr / (LN_2 * (self.bits * self.cost).sqrt())
    }

    fn equation_rhs(&self, omega: f64, sigma: f64) -> f64 {
        let z = log_snr(sigma, omega, self.bandwidth);
        if z == 0.0 {
            return 1.0 / omega.sqrt();
        }
        z.exp_m1() / (z * omega.sqrt())
    }

    /// Unclamped fraction implied by `(omega, sigma)`.
    fn fraction(&self, omega: f64, sigma: f64) -> f64 {
        let z = log_snr(sigma, omega, self.bandwidth);
        self.snr / z.exp_m1()
    }

    fn time(&self, alpha: f64) -> f64 {
        self.bits / shannon_rate(alpha, self.snr, self.bandwidth)
    }
}

impl SpecialScenario {
    pub fn new(scenario: Scenario) -> Result<Self> {
        let n = scenario.num_services();
        if scenario.num_locations() != n {
            return Err(invalid("special scenario", "needs as many locations as services"));
        }
        let mut location = Vec::with_capacity(n);
        let mut position = Vec::with_capacity(n);
        let order = &scenario.channels().downlink_order;
        for l in 0..n {
            let row: Vec<f64> = (0..n).map(|k| scenario.offload_prob(l, k)).collect();
            let Some(k) = row.iter().position(|&p| p == 1.0) else {
                return Err(invalid("special scenario", format!("service {l} is not requested by exactly one location")));
            };
            if row.iter().filter(|&&p| p != 0.0).count() != 1 || location.contains(&k) {
                return Err(invalid("special scenario", "preferences must be a one-to-one pattern"));
            }
            location.push(k);
            position.push(order.iter().position(|&j| j == k).expect("location appears in the downlink order"));
        }
        Ok(Self {
            scenario,
            location,
            position,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    /// Internal location whose users request service `k`.
    pub fn location(&self, k: usize) -> usize {
        self.location[k]
    }

    /// Downlink position of that location.
    pub fn position(&self, k: usize) -> usize {
        self.position[k]
    }

    pub fn len(&self) -> usize {
        self.location.len()
    }

    pub fn is_empty(&self) -> bool {
        self.location.is_empty()
    }

    pub fn uplink(&self, k: usize) -> Link {
        let c = self.scenario.constants();
        let loc = self.location[k];
        Link {
            bits: self.scenario.service(k).input_bits,
            snr: self.scenario.offload_snr(loc),
            cost: c.weight_user[loc] * c.tx_power_user[loc],
            bandwidth: c.bandwidth_offload,
        }
    }

    pub fn downlink(&self, k: usize) -> Link {
        let c = self.scenario.constants();
        Link {
            bits: self.scenario.service(k).output_bits,
            snr: self.scenario.broadcast_snr(k, self.position[k]),
            cost: c.weight_bs * c.tx_power_bs[k],
            bandwidth: c.bandwidth_download,
        }
    }

    /// `beta_0 kappa (C Q)^3`.
    fn compute_coef(&self, k: usize) -> f64 {
        let c = self.scenario.constants();
        c.weight_bs * c.capacitance * self.scenario.service(k).cycles().powi(3)
    }

    fn min_compute(&self, k: usize) -> f64 {
        self.scenario.service(k).cycles() / self.scenario.constants().max_core_freq
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecialDuals {
    pub mu: Vec<f64>,
    pub eta: Vec<f64>,
    pub omega: Vec<f64>,
    pub gamma: Vec<f64>,
    pub sigma: f64,
    pub epsilon: f64,
}

impl SpecialDuals {
    fn check(&self, n: usize) -> Result<()> {
        if [&self.mu, &self.eta, &self.omega, &self.gamma].iter().any(|v| v.len() != n) {
            return Err(Error::Dimension(format!("special duals must have {n} entries per vector")));
        }
        let all = self
            .mu
            .iter()
            .chain(&self.eta)
            .chain(&self.omega)
            .chain(&self.gamma)
            .chain([&self.sigma, &self.epsilon]);
        if all.clone().any(|v| !(*v >= 0.0)) {
            return Err(invalid("duals", "multipliers must be non-negative"));
        }
        Ok(())
    }
}

/// Per-service allocation of the special case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecialAllocation {
    pub alpha_off: Vec<f64>,
    pub alpha_dl: Vec<f64>,
    pub t_c: Vec<f64>,
    pub t_off: Vec<f64>,
    pub t_dl: Vec<f64>,
}

impl SpecialAllocation {
    /// Same allocation in the general per-location layout.
    pub fn to_general(&self, s: &SpecialScenario) -> ResourceAllocation {
        let n = s.len();
        let mut a = ResourceAllocation::zeros(n, n);
        for k in 0..n {
            a.alpha_off[k] = self.alpha_off[k];
            a.alpha_dl[k] = self.alpha_dl[k];
            a.t_c[k] = self.t_c[k];
            a.t_off[k][s.location[k]] = self.t_off[k];
            a.t_dl[k][s.position[k]] = self.t_dl[k];
        }
        a
    }
}

/// Minimizer of the special-case Lagrangian at the given multipliers.
pub fn kkt_special(duals: &SpecialDuals, s: &SpecialScenario, decision: &CachingDecision) -> Result<SpecialAllocation> {
    let n = s.len();
    duals.check(n)?;
    if decision.len() != n {
        return Err(Error::Dimension(format!("decision has {} entries for {n} services", decision.len())));
    }
    let mut out = SpecialAllocation {
        alpha_off: vec![0.0; n],
        alpha_dl: vec![0.0; n],
        t_c: vec![0.0; n],
        t_off: vec![0.0; n],
        t_dl: vec![0.0; n],
    };
    for k in 0..n {
        let (mu, eta) = (duals.mu[k], duals.eta[k]);
        let down = s.downlink(k);
        out.t_dl[k] = (duals.gamma[k] * down.bits / (down.cost + mu)).sqrt();
        out.alpha_dl[k] = closed_form_fraction(down.snr, duals.epsilon, duals.gamma[k], down.bandwidth);
        if decision.is_cached(k) {
            continue;
        }
        let up = s.uplink(k);
        out.t_off[k] = (duals.omega[k] * up.bits / (up.cost + mu)).sqrt();
        out.alpha_off[k] = closed_form_fraction(up.snr, duals.sigma, duals.omega[k], up.bandwidth);
        let gap = mu - eta;
        if !(gap > 0.0) {
            return Err(Error::Unbounded { service: k, gap });
        }
        out.t_c[k] = (2.0 * s.compute_coef(k) / gap).cbrt();
    }
    Ok(out)
}

/// Multipliers solving the slack-deadline system for both directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualSystemSolution {
    pub omega: Vec<f64>,
    pub sigma: f64,
    pub gamma: Vec<f64>,
    pub epsilon: f64,
    /// Largest relative residual of the per-link equations and the
    /// band-sum residual.
    pub residual: f64,
}

/// Bisection in log space; `f` must be non-decreasing with
/// `f(lo) <= 0 < f(hi)`.
fn log_bisect(mut lo: f64, mut hi: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    for _ in 0..400 {
        let mid = (lo * hi).sqrt();
        if !(mid > lo && mid < hi) || hi / lo - 1.0 <= 4.0 * f64::EPSILON {
            break;
        }
        if f(mid) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if -f(lo) <= f(hi) {
        lo
    } else {
        hi
    }
}

/// Root in `omega` of `f(omega, sigma)` for one link. The root at
/// `sigma = 0` bounds it from below; the upper end is grown by factors of
/// ten.
fn solve_link(link: &Link, sigma: f64) -> Result<f64> {
    let scale = link.equation_scale();
    let floor = (1.0 / scale).powi(2);
    let mut lo = floor * (1.0 - 1e-12);
    let mut hi = floor * 10.0;
    for _ in 0..400 {
        if link.equation(hi, sigma) > 0.0 {
            break;
        }
        lo = hi;
        hi *= 10.0;
    }
    if !(link.equation(hi, sigma) > 0.0) || link.equation(lo, sigma) > 0.0 {
        return Err(Error::BracketFailure("per-link rate equation"));
    }
    Ok(log_bisect(lo, hi, |w| link.equation(w, sigma)))
}

/// Solves `f(omega_k, sigma) = 0` for every link and `sum_k alpha_k = 1`,
/// by bisection on `sigma` around per-link bisections on `omega_k`.
fn solve_side(links: &[Link]) -> Result<(Vec<f64>, f64, f64)> {
    let omegas = |sigma: f64| links.iter().map(|l| solve_link(l, sigma)).collect::<Result<Vec<_>>>();
    // Non-increasing in sigma: total fraction minus one.
    let excess = |sigma: f64| -> Result<f64> {
        let w = omegas(sigma)?;
        Ok(links.iter().zip(&w).map(|(l, &w)| l.fraction(w, sigma)).sum::<f64>() - 1.0)
    };
    let mut lo = 1.0;
    let mut hi = 1.0;
    let mut tries = 0;
    while excess(lo)? <= 0.0 {
        lo *= 0.1;
        tries += 1;
        if tries > 400 {
            return Err(Error::BracketFailure("band-sum equation (lower end)"));
        }
    }
    while excess(hi)? > 0.0 {
        hi *= 10.0;
        tries += 1;
        if tries > 800 {
            return Err(Error::BracketFailure("band-sum equation (upper end)"));
        }
    }
    // Bisect on -excess, which is non-decreasing.
    let mut fail = None;
    let sigma = log_bisect(lo, hi, |s| match excess(s) {
        Ok(v) => -v,
        Err(e) => {
            fail.get_or_insert(e);
            0.0
        }
    });
    if let Some(e) = fail {
        return Err(e);
    }
    let w = omegas(sigma)?;
    let mut residual = excess(sigma)?.abs();
    for (l, &wk) in links.iter().zip(&w) {
        residual = residual.max(l.equation(wk, sigma).abs() / l.equation_scale());
    }
    Ok((w, sigma, residual))
}

/// Multipliers of the rate and band constraints with every deadline slack
/// and nothing cached.
pub fn solve_dual_system(s: &SpecialScenario) -> Result<DualSystemSolution> {
    let up: Vec<Link> = (0..s.len()).map(|k| s.uplink(k)).collect();
    let down: Vec<Link> = (0..s.len()).map(|k| s.downlink(k)).collect();
    let (omega, sigma, r_up) = solve_side(&up)?;
    let (gamma, epsilon, r_down) = solve_side(&down)?;
    Ok(DualSystemSolution {
        omega,
        sigma,
        gamma,
        epsilon,
        residual: r_up.max(r_down),
    })
}

/// Times held fixed while the cache placement is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedTimes {
    pub alpha_off: Vec<f64>,
    pub alpha_dl: Vec<f64>,
    pub t_c: Vec<f64>,
    pub t_off: Vec<f64>,
    pub t_dl: Vec<f64>,
}

impl FixedTimes {
    /// Full core frequency and rate-active transfers at the fractions the
    /// dual system implies.
    pub fn from_duals(s: &SpecialScenario, d: &DualSystemSolution) -> Self {
        let n = s.len();
        let mut t = FixedTimes {
            alpha_off: vec![0.0; n],
            alpha_dl: vec![0.0; n],
            t_c: vec![0.0; n],
            t_off: vec![0.0; n],
            t_dl: vec![0.0; n],
        };
        for k in 0..n {
            let (up, down) = (s.uplink(k), s.downlink(k));
            t.alpha_off[k] = closed_form_fraction(up.snr, d.sigma, d.omega[k], up.bandwidth);
            t.alpha_dl[k] = closed_form_fraction(down.snr, d.epsilon, d.gamma[k], down.bandwidth);
            t.t_c[k] = s.min_compute(k);
            t.t_off[k] = up.time(t.alpha_off[k]);
            t.t_dl[k] = down.time(t.alpha_dl[k]);
        }
        t
    }

    /// Services whose fixed times overrun their deadline, i.e. where the
    /// slack-deadline assumption fails.
    pub fn deadline_violations(&self, s: &SpecialScenario) -> Vec<usize> {
        (0..s.len())
            .filter(|&k| self.t_off[k] + self.t_c[k] + self.t_dl[k] > s.scenario.service(k).deadline)
            .collect()
    }

    /// Energy saved by caching each service: compute plus offload.
    pub fn savings(&self, s: &SpecialScenario) -> Vec<f64> {
        (0..s.len())
            .map(|k| s.compute_coef(k) / self.t_c[k].powi(2) + s.uplink(k).cost * self.t_off[k])
            .collect()
    }
}

/// 0/1 knapsack by depth-first branch and bound with the fractional
/// relaxation as bound. Returns the chosen items.
pub fn knapsack(values: &[f64], weights: &[f64], capacity: f64) -> Vec<bool> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).filter(|&i| values[i] > 0.0).collect();
    order.sort_by(|&i, &j| (values[j] / weights[j]).total_cmp(&(values[i] / weights[i])).then(i.cmp(&j)));

    struct Search<'a> {
        order: &'a [usize],
        values: &'a [f64],
        weights: &'a [f64],
        take: Vec<bool>,
        best: f64,
        best_take: Vec<bool>,
    }

    impl Search<'_> {
        fn bound(&self, depth: usize, mut room: f64, mut value: f64) -> f64 {
            for &i in &self.order[depth..] {
                if self.weights[i] <= room {
                    room -= self.weights[i];
                    value += self.values[i];
                } else {
                    return value + self.values[i] * room / self.weights[i];
                }
            }
            value
        }

        fn go(&mut self, depth: usize, room: f64, value: f64) {
            if value > self.best {
                self.best = value;
                self.best_take.clone_from(&self.take);
            }
            if depth == self.order.len() || self.bound(depth, room, value) <= self.best {
                return;
            }
            let i = self.order[depth];
            if self.weights[i] <= room {
                self.take[i] = true;
                self.go(depth + 1, room - self.weights[i], value + self.values[i]);
                self.take[i] = false;
            }
            self.go(depth + 1, room, value);
        }
    }

    let mut search = Search {
        order: &order,
        values,
        weights,
        take: vec![false; n],
        best: 0.0,
        best_take: vec![false; n],
    };
    search.go(0, capacity, 0.0);
    search.best_take
}

/// Cache placement minimizing compute and offload energy at fixed times
/// under the capacity.
pub fn ilp_cache_placement(s: &SpecialScenario, times: &FixedTimes) -> CachingDecision {
    let savings = times.savings(s);
    let sizes: Vec<f64> = s.scenario.services().iter().map(|v| v.output_bits).collect();
    CachingDecision::new(knapsack(&savings, &sizes, s.scenario.constants().cache_capacity))
}

/// Objective of the placement problem: energy not saved by caching.
pub fn placement_objective(s: &SpecialScenario, times: &FixedTimes, decision: &CachingDecision) -> f64 {
    times
        .savings(s)
        .iter()
        .enumerate()
        .filter(|&(k, _)| !decision.is_cached(k))
        .map(|(_, v)| v)
        .sum()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpecialOutcome {
    pub result: PolicyResult,
    pub duals: DualSystemSolution,
    pub times: FixedTimes,
    /// Services where the slack-deadline assumption behind the fixed times
    /// does not hold.
    pub deadline_violations: Vec<usize>,
}

/// Dual system, fixed times, knapsack placement, then the exact allocation
/// for the chosen placement.
pub fn solve_special(s: &SpecialScenario, opts: &SolverOptions) -> Result<SpecialOutcome> {
    let started = Instant::now();
    let duals = solve_dual_system(s)?;
    let times = FixedTimes::from_duals(s, &duals);
    let decision = ilp_cache_placement(s, &times);
    let mut result = evaluate_decision(&s.scenario, Policy::Special, decision, opts)?;
    result.stats.runtime_secs = started.elapsed().as_secs_f64();
    Ok(SpecialOutcome {
        deadline_violations: times.deadline_violations(s),
        result,
        duals,
        times,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{sample_scenario, ScenarioConfig};
    use crate::solver::bandwidth_derivative;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn special(n: usize, seed: u64) -> SpecialScenario {
        let cfg = ScenarioConfig {
            num_services: n,
            num_locations: n,
            ..ScenarioConfig::special_case()
        };
        SpecialScenario::new(sample_scenario(&cfg, seed).unwrap()).unwrap()
    }

    #[test]
    fn lambert_known_values() {
        assert_eq!(lambert_w0(0.0).unwrap(), 0.0);
        assert!((lambert_w0(E).unwrap() - 1.0).abs() < 1e-14);
        assert_eq!(lambert_w0(-1.0 / E).unwrap(), -1.0);
        assert!(matches!(lambert_w0(-0.5), Err(Error::LambertDomain(_))));
    }

    #[test]
    fn branch_offset_matches_lambert() {
        for &d in &[1e-3, 0.05, 0.5, 2.0, 10.0] {
            let w = lambert_w0(-(-1.0 - d as f64).exp()).unwrap();
            assert!((branch_offset(d) - (1.0 + w)).abs() < 1e-9, "delta {d}");
        }
        // Tiny offsets stay accurate where the direct form cancels.
        let r = (2e-14f64).sqrt();
        assert!((branch_offset(1e-14) - (r - r * r / 3.0)).abs() <= 1e-12 * r);
    }

    #[test]
    fn fraction_solves_the_bandwidth_condition() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let snr = 10f64.powf(rng.gen_range(1.0..4.0));
            let weight = 10f64.powf(rng.gen_range(-9.0..-6.0));
            let price = 10f64.powf(rng.gen_range(-2.0..2.0));
            let a = closed_form_fraction(snr, price, weight, 1e7);
            let f = |x: f64| bandwidth_derivative(x, &[weight], &[snr], price, 1e7);
            if a >= 1.0 {
                assert!(f(1.0) >= 0.0);
                continue;
            }
            let (mut lo, mut hi) = (1e-15, 1.0);
            for _ in 0..200 {
                let m = 0.5 * (lo + hi);
                if f(m) > 0.0 {
                    lo = m
                } else {
                    hi = m
                }
            }
            assert!((a - lo).abs() <= 1e-8 * lo.max(1e-3), "{a} vs {lo}");
        }
    }

    #[test]
    fn cached_service_has_no_offload() {
        let s = special(3, 1);
        let d = SpecialDuals {
            mu: vec![2.0; 3],
            eta: vec![1.0; 3],
            omega: vec![1e-9; 3],
            gamma: vec![1e-9; 3],
            sigma: 1.0,
            epsilon: 1.0,
        };
        let a = kkt_special(&d, &s, &CachingDecision::new(vec![true, false, true])).unwrap();
        assert_eq!(a.t_off[0], 0.0);
        assert_eq!(a.t_c[2], 0.0);
        assert!(a.t_off[1] > 0.0);
    }

    #[test]
    fn unbounded_compute_is_reported() {
        let s = special(2, 1);
        let d = SpecialDuals {
            mu: vec![1.0; 2],
            eta: vec![1.0; 2],
            omega: vec![1e-9; 2],
            gamma: vec![1e-9; 2],
            sigma: 1.0,
            epsilon: 1.0,
        };
        assert!(matches!(
            kkt_special(&d, &s, &CachingDecision::none(2)),
            Err(Error::Unbounded { service: 0, .. })
        ));
    }

    #[test]
    fn equation_is_monotone() {
        let s = special(4, 2);
        for k in 0..4 {
            let l = s.uplink(k);
            let base = (1.0 / l.equation_scale()).powi(2);
            for &sigma in &[1e-3, 1.0, 100.0] {
                let mut prev = f64::NEG_INFINITY;
                for i in 0..60 {
                    let w = base * 10f64.powf(i as f64 / 6.0);
                    let v = l.equation(w, sigma);
                    assert!(v >= prev - 1e-12 * l.equation_scale());
                    prev = v;
                }
            }
            for i in 0..60 {
                let w = base * 10.0;
                let lo = l.equation(w, 10f64.powf(i as f64 / 10.0 - 3.0));
                let hi = l.equation(w, 10f64.powf((i + 1) as f64 / 10.0 - 3.0));
                assert!(hi <= lo + 1e-12 * l.equation_scale());
            }
        }
    }

    #[test]
    fn dual_system_residuals_and_active_band() {
        for seed in 0..4 {
            let s = special(5, seed);
            let d = solve_dual_system(&s).unwrap();
            assert!(d.residual <= 1e-8, "residual {}", d.residual);
            let t = FixedTimes::from_duals(&s, &d);
            let sum: f64 = t.alpha_off.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-6, "sum {sum}");
            let sum: f64 = t.alpha_dl.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-6, "sum {sum}");
        }
    }

    #[test]
    fn single_link_system_uses_the_full_band() {
        // One link: the band constraint forces alpha = 1, so sigma solves
        // F(1) = 0 with omega fixed by the rate equation at alpha = 1.
        let s = special(1, 3);
        let d = solve_dual_system(&s).unwrap();
        let l = s.uplink(0);
        let t = l.time(1.0);
        let omega = l.cost * t * t / l.bits;
        assert!((d.omega[0] - omega).abs() <= 1e-8 * omega);
        let sigma = bandwidth_derivative(1.0, &[omega], &[l.snr], 0.0, l.bandwidth);
        assert!((d.sigma - sigma).abs() <= 1e-6 * sigma);
    }

    #[test]
    fn knapsack_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let n = rng.gen_range(1..=12);
            let v: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..10.0)).collect();
            let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..5.0)).collect();
            let cap = rng.gen_range(0.0..20.0);
            let pick = knapsack(&v, &w, cap);
            let value = |p: &[bool]| (0..n).filter(|&i| p[i]).map(|i| v[i]).sum::<f64>();
            let weight: f64 = (0..n).filter(|&i| pick[i]).map(|i| w[i]).sum();
            assert!(weight <= cap);
            let mut best = 0.0f64;
            for m in 0..1u32 << n {
                let p: Vec<bool> = (0..n).map(|i| m >> i & 1 == 1).collect();
                let wt: f64 = (0..n).filter(|&i| p[i]).map(|i| w[i]).sum();
                if wt <= cap {
                    best = best.max(value(&p));
                }
            }
            assert!((value(&pick) - best).abs() <= 1e-12 * best.max(1.0));
        }
    }

    #[test]
    fn placement_extremes() {
        let s = special(4, 4);
        let t = FixedTimes::from_duals(&s, &solve_dual_system(&s).unwrap());
        let none = SpecialScenario::new(s.scenario.with_cache_capacity(0.0)).unwrap();
        assert_eq!(ilp_cache_placement(&none, &t).count(), 0);
        let all = SpecialScenario::new(s.scenario.with_cache_capacity(s.scenario.total_output_bits())).unwrap();
        assert_eq!(ilp_cache_placement(&all, &t).count(), 4);
    }
}
