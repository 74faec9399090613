//! Lagrangian dual of the fixed-decision problem: closed-form time
//! minimizers, the bandwidth rule and the dual function with its
//! supergradient.

use serde::{Deserialize, Serialize};

use super::model::{self, rate_derivs, ServiceModel};
use crate::energy::{shannon_rate, CachingDecision};
use crate::error::{Error, Result};
use crate::scenario::Scenario;

/// Multipliers for the deadline (`mu`), minimum compute time (`eta`), offload
/// rate (`omega[l][k]`, internal location), download rate (`gamma[l][j]`,
/// downlink position) and the two bandwidth budgets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualPoint {
    pub mu: Vec<f64>,
    pub eta: Vec<f64>,
    pub omega: Vec<Vec<f64>>,
    pub gamma: Vec<Vec<f64>>,
    pub sigma: f64,
    pub epsilon: f64,
}

impl DualPoint {
    pub fn zeros(services: usize, locations: usize) -> Self {
        Self {
            mu: vec![0.0; services],
            eta: vec![0.0; services],
            omega: vec![vec![0.0; locations]; services],
            gamma: vec![vec![0.0; locations]; services],
            sigma: 0.0,
            epsilon: 0.0,
        }
    }

    pub fn filled(services: usize, locations: usize, value: f64) -> Self {
        Self {
            mu: vec![value; services],
            eta: vec![value; services],
            omega: vec![vec![value; locations]; services],
            gamma: vec![vec![value; locations]; services],
            sigma: value,
            epsilon: value,
        }
    }

    /// `2KL + 2L + 2`.
    pub fn dimension(services: usize, locations: usize) -> usize {
        2 * services * locations + 2 * services + 2
    }

    pub fn is_nonnegative(&self) -> bool {
        self.flatten().iter().all(|&x| x >= 0.0)
    }

    /// `(mu, eta, omega row-major, gamma row-major, sigma, epsilon)`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.mu.clone();
        v.extend(&self.eta);
        v.extend(self.omega.iter().flatten());
        v.extend(self.gamma.iter().flatten());
        v.push(self.sigma);
        v.push(self.epsilon);
        v
    }

    pub fn unflatten(v: &[f64], services: usize, locations: usize) -> Result<Self> {
        if v.len() != Self::dimension(services, locations) {
            return Err(Error::Dimension("dual vector length".into()));
        }
        let (l, k) = (services, locations);
        let rows = |off: usize| (0..l).map(|i| v[off + i * k..off + (i + 1) * k].to_vec()).collect();
        Ok(Self {
            mu: v[..l].to_vec(),
            eta: v[l..2 * l].to_vec(),
            omega: rows(2 * l),
            gamma: rows(2 * l + l * k),
            sigma: v[2 * l + 2 * l * k],
            epsilon: v[2 * l + 2 * l * k + 1],
        })
    }
}

/// Time minimizers of the Lagrangian for fixed multipliers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimalTimes {
    pub t_c: Vec<f64>,
    pub t_off: Vec<Vec<f64>>,
    pub t_dl: Vec<Vec<f64>>,
}

/// `F(a) = sum_k (w_k B / ln 2) (ln(1 + x_k/a) - x_k/(a + x_k)) - price`.
pub fn bandwidth_derivative(alpha: f64, weights: &[f64], snr: &[f64], price: f64, bandwidth: f64) -> f64 {
    weights
        .iter()
        .zip(snr)
        .filter(|(&w, _)| w != 0.0)
        .map(|(&w, &x)| w * rate_derivs(alpha, x, bandwidth).1)
        .sum::<f64>()
        - price
}

fn bandwidth_second(alpha: f64, weights: &[f64], snr: &[f64], bandwidth: f64) -> f64 {
    weights
        .iter()
        .zip(snr)
        .filter(|(&w, _)| w != 0.0)
        .map(|(&w, &x)| w * rate_derivs(alpha, x, bandwidth).2)
        .sum()
}

/// Minimizer over `[0, 1]` of `price * a - sum_k w_k r_k(a)`: 0 when every
/// weight is 0, 1 when `F(1) > 0`, otherwise the root of `F`.
pub fn optimal_bandwidth(weights: &[f64], snr: &[f64], price: f64, bandwidth: f64) -> f64 {
    optimal_bandwidth_tol(weights, snr, price, bandwidth, 1e-10)
}

pub(crate) fn optimal_bandwidth_tol(weights: &[f64], snr: &[f64], price: f64, bandwidth: f64, tol: f64) -> f64 {
    if weights.iter().all(|&w| w == 0.0) {
        return 0.0;
    }
    if bandwidth_derivative(1.0, weights, snr, price, bandwidth) > 0.0 {
        return 1.0;
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if bandwidth_derivative(mid, weights, snr, price, bandwidth) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // Newton polish inside the final bracket.
    let mut a = 0.5 * (lo + hi);
    for _ in 0..3 {
        if a <= 0.0 {
            break;
        }
        let f = bandwidth_derivative(a, weights, snr, price, bandwidth);
        let d = bandwidth_second(a, weights, snr, bandwidth);
        if !(d < 0.0) {
            break;
        }
        let next = a - f / d;
        if !(next > lo.max(0.0) && next < hi) {
            break;
        }
        a = next;
    }
    a
}

/// Minimizes `e t + w bits / t` over `t >= 0`; returns `(t, value)`.
fn pair_min(e: f64, w: f64, bits: f64) -> (f64, f64) {
    if w == 0.0 || bits == 0.0 {
        (0.0, 0.0)
    } else if e == 0.0 {
        (f64::INFINITY, 0.0)
    } else {
        let t = (w * bits / e).sqrt();
        (t, 2.0 * (w * bits * e).sqrt())
    }
}

/// Compute-time minimizer: `(2A / (mu - eta))^{1/3}`.
fn compute_min(m: &ServiceModel, gap: f64) -> Result<(f64, f64)> {
    if m.compute_coef > 0.0 {
        if !(gap > 0.0) {
            return Err(Error::Unbounded { service: m.index, gap });
        }
        let t = (2.0 * m.compute_coef / gap).cbrt();
        Ok((t, m.compute_coef / (t * t) + gap * t))
    } else if gap < 0.0 {
        Err(Error::Unbounded { service: m.index, gap })
    } else {
        Ok((0.0, 0.0))
    }
}

fn check_shape(d: &DualPoint, s: &Scenario) -> Result<()> {
    let (l, k) = (s.num_services(), s.num_locations());
    let ok = d.mu.len() == l
        && d.eta.len() == l
        && d.omega.len() == l
        && d.gamma.len() == l
        && d.omega.iter().chain(&d.gamma).all(|r| r.len() == k);
    if ok {
        Ok(())
    } else {
        Err(Error::Dimension(format!("dual point does not match {l} services x {k} locations")))
    }
}

fn negative_check(d: &DualPoint) -> Result<()> {
    if d.is_nonnegative() {
        Ok(())
    } else {
        Err(crate::error::invalid("duals", "multipliers must be non-negative"))
    }
}

/// Closed-form time minimizers. Services that are never requested get zero
/// times; cached services get zero compute and offload times.
pub fn primal_times(duals: &DualPoint, s: &Scenario, decision: &CachingDecision) -> Result<PrimalTimes> {
    check_shape(duals, s)?;
    negative_check(duals)?;
    let models = model::build(s, decision);
    let k_count = s.num_locations();
    let mut out = PrimalTimes {
        t_c: vec![0.0; models.len()],
        t_off: vec![vec![0.0; k_count]; models.len()],
        t_dl: vec![vec![0.0; k_count]; models.len()],
    };
    for m in models.iter().filter(|m| m.requested) {
        let l = m.index;
        let mu = duals.mu[l];
        out.t_c[l] = compute_min(m, mu - duals.eta[l])?.0;
        if let Some(up) = &m.up {
            for k in 0..k_count {
                let e = up.cost[k] + if k == up.worst { mu } else { 0.0 };
                out.t_off[l][k] = pair_min(e, duals.omega[l][k], up.bits).0;
            }
        }
        let down = m.down();
        for j in 0..k_count {
            let e = down.cost[j] + if j == down.worst { mu } else { 0.0 };
            out.t_dl[l][j] = pair_min(e, duals.gamma[l][j], down.bits).0;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct DualEvaluation {
    pub value: f64,
    /// Constraint slacks at the Lagrangian minimizer, laid out like the duals.
    pub subgradient: DualPoint,
    pub times: PrimalTimes,
    pub alpha_off: Vec<f64>,
    pub alpha_dl: Vec<f64>,
}

/// Finite stand-ins for zero/infinite minimizers inside slack expressions.
fn clamp_time(t: f64, deadline: f64) -> f64 {
    t.clamp(1e-9 * deadline, 1e6 * deadline)
}

/// Dual function `g(D) = min_P L(P, D)` over `alpha in [0, 1]`, `t >= 0`.
pub fn dual_function(duals: &DualPoint, s: &Scenario, decision: &CachingDecision) -> Result<DualEvaluation> {
    check_shape(duals, s)?;
    negative_check(duals)?;
    evaluate(&model::build(s, decision), duals, s.num_locations())
}

pub(crate) fn evaluate(models: &[ServiceModel], duals: &DualPoint, k_count: usize) -> Result<DualEvaluation> {
    let l_count = models.len();
    let mut times = PrimalTimes {
        t_c: vec![0.0; l_count],
        t_off: vec![vec![0.0; k_count]; l_count],
        t_dl: vec![vec![0.0; k_count]; l_count],
    };
    let mut sub = DualPoint::zeros(l_count, k_count);
    let mut alpha_off = vec![0.0; l_count];
    let mut alpha_dl = vec![0.0; l_count];
    let mut value = -duals.sigma - duals.epsilon;

    for m in models.iter().filter(|m| m.requested) {
        let l = m.index;
        let (mu, eta) = (duals.mu[l], duals.eta[l]);
        let (tc, vc) = compute_min(m, mu - eta)?;
        times.t_c[l] = tc;
        value += vc - mu * m.deadline + eta * m.min_compute;
        let mut latency = tc;
        sub.eta[l] = m.min_compute - tc;

        if let Some(up) = &m.up {
            let a = optimal_bandwidth(&duals.omega[l], &up.snr, duals.sigma, up.bandwidth);
            alpha_off[l] = a;
            value += duals.sigma * a;
            for k in 0..k_count {
                let w = duals.omega[l][k];
                let e = up.cost[k] + if k == up.worst { mu } else { 0.0 };
                let (t, v) = pair_min(e, w, up.bits);
                let r = shannon_rate(a, up.snr[k], up.bandwidth);
                times.t_off[l][k] = t;
                value += v - w * r;
                sub.omega[l][k] = up.bits / clamp_time(t, m.deadline) - r;
                if k == up.worst {
                    latency += clamp_time(t, m.deadline);
                }
            }
        } else {
            // Cached: the offload-rate constraints are vacuous.
            for k in 0..k_count {
                sub.omega[l][k] = 0.0;
            }
        }

        let down = m.down();
        let b = optimal_bandwidth(&duals.gamma[l], &down.snr, duals.epsilon, down.bandwidth);
        alpha_dl[l] = b;
        value += duals.epsilon * b;
        for j in 0..k_count {
            let w = duals.gamma[l][j];
            let e = down.cost[j] + if j == down.worst { mu } else { 0.0 };
            let (t, v) = pair_min(e, w, down.bits);
            let r = shannon_rate(b, down.snr[j], down.bandwidth);
            times.t_dl[l][j] = t;
            value += v - w * r;
            sub.gamma[l][j] = down.bits / clamp_time(t, m.deadline) - r;
            if j == down.worst {
                latency += clamp_time(t, m.deadline);
            }
        }
        sub.mu[l] = latency - m.deadline;
    }
    sub.sigma = alpha_off.iter().sum::<f64>() - 1.0;
    sub.epsilon = alpha_dl.iter().sum::<f64>() - 1.0;
    Ok(DualEvaluation {
        value,
        subgradient: sub,
        times,
        alpha_off,
        alpha_dl,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{sample_scenario, ScenarioConfig};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_give_negative_derivative_and_zero_alpha() {
        let f = bandwidth_derivative(0.3, &[0.0, 0.0], &[10.0, 5.0], 2.0, 1e7);
        assert_eq!(f, -2.0);
        assert_eq!(optimal_bandwidth(&[0.0, 0.0], &[10.0, 5.0], 2.0, 1e7), 0.0);
    }

    #[test]
    fn derivative_blows_up_near_zero() {
        assert!(bandwidth_derivative(1e-9, &[1.0], &[1.0], 0.0, 1e7) > 1e6);
    }

    #[test]
    fn saturates_at_one_for_large_weights() {
        assert_eq!(optimal_bandwidth(&[1.0], &[100.0], 1.0, 1e7), 1.0);
    }

    #[test]
    fn interior_root_has_small_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let w: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..1e-6)).collect();
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(10.0..1e4)).collect();
            let price = rng.gen_range(1.0..50.0);
            let a = optimal_bandwidth(&w, &x, price, 1e7);
            if a < 1.0 {
                let f = bandwidth_derivative(a, &w, &x, price, 1e7);
                assert!(f.abs() <= 1e-6 * price, "F({a}) = {f}");
            }
        }
    }

    #[test]
    fn derivative_is_non_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let w: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..1.0)).collect();
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(0.1..1e4)).collect();
            assert!(bandwidth_derivative(0.1, &w, &x, 0.5, 1e7) >= bandwidth_derivative(0.9, &w, &x, 0.5, 1e7));
        }
    }

    #[test]
    fn stationarity_of_reciprocal_pair() {
        let (t, v) = pair_min(1.0, 4.0, 1.0);
        assert_eq!(t, 2.0);
        assert_eq!(v, 4.0);
        assert_eq!(pair_min(3.0, 0.0, 7.0).0, 0.0);
    }

    fn small() -> (Scenario, CachingDecision) {
        let cfg = ScenarioConfig {
            num_services: 2,
            num_locations: 2,
            cache_capacity_mbits: 0.0,
            ..Default::default()
        };
        (sample_scenario(&cfg, 3).unwrap(), CachingDecision::none(2))
    }

    fn random_duals(rng: &mut ChaCha8Rng, s: &Scenario) -> DualPoint {
        let (l, k) = (s.num_services(), s.num_locations());
        let mut d = DualPoint::zeros(l, k);
        for i in 0..l {
            d.eta[i] = rng.gen_range(0.0..50.0);
            d.mu[i] = d.eta[i] + rng.gen_range(1.0..500.0);
            for j in 0..k {
                d.omega[i][j] = rng.gen_range(0.0..1e-5);
                d.gamma[i][j] = rng.gen_range(0.0..1e-5);
            }
        }
        d.sigma = rng.gen_range(0.0..100.0);
        d.epsilon = rng.gen_range(0.0..100.0);
        d
    }

    #[test]
    fn times_match_grid_search_of_scalar_subproblems() {
        let (s, none) = small();
        let models = model::build(&s, &none);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let d = random_duals(&mut rng, &s);
            let t = primal_times(&d, &s, &none).unwrap();
            for m in &models {
                let l = m.index;
                let tmax = 10.0 * m.deadline;
                let grid = |f: &dyn Fn(f64) -> f64| {
                    let mut best = (f64::INFINITY, 0.0);
                    for i in 1..=200_000 {
                        let x = tmax * i as f64 / 200_000.0;
                        let v = f(x);
                        if v < best.0 {
                            best = (v, x);
                        }
                    }
                    best.1
                };
                let gap = d.mu[l] - d.eta[l];
                let a = m.compute_coef;
                let tc = grid(&|x| a / (x * x) + gap * x);
                if t.t_c[l] < tmax {
                    assert!((tc - t.t_c[l]).abs() / t.t_c[l] < 1e-3, "{tc} vs {}", t.t_c[l]);
                }
                let up = m.up();
                for k in 0..2 {
                    let e = up.cost[k] + if k == up.worst { d.mu[l] } else { 0.0 };
                    let w = d.omega[l][k];
                    let opt = grid(&|x| e * x + w * up.bits / x);
                    if t.t_off[l][k] < tmax {
                        assert!((opt - t.t_off[l][k]).abs() / t.t_off[l][k] < 1e-3);
                    }
                }
            }
        }
    }

    #[test]
    fn unbounded_when_gap_not_positive() {
        let (s, none) = small();
        let mut d = DualPoint::filled(2, 2, 1.0);
        d.mu[0] = 2.0;
        d.mu[1] = 0.5;
        assert!(matches!(dual_function(&d, &s, &none), Err(Error::Unbounded { service: 1, .. })));
    }

    #[test]
    fn tiny_gap_stays_finite() {
        let (s, none) = small();
        let mut d = DualPoint::filled(2, 2, 1e-6);
        d.mu = vec![1.0 + 1e-12; 2];
        d.eta = vec![1.0; 2];
        let ev = dual_function(&d, &s, &none).unwrap();
        assert!(ev.value.is_finite());
        assert!(ev.times.t_c.iter().all(|&t| t > 100.0 * s.service(0).deadline));
    }

    #[test]
    fn concave_and_supergradient() {
        let (s, none) = small();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let d1 = random_duals(&mut rng, &s);
            let d2 = random_duals(&mut rng, &s);
            let v1 = d1.flatten();
            let v2 = d2.flatten();
            let mid: Vec<f64> = v1.iter().zip(&v2).map(|(a, b)| 0.5 * (a + b)).collect();
            let dm = DualPoint::unflatten(&mid, 2, 2).unwrap();
            let g1 = dual_function(&d1, &s, &none).unwrap();
            let g2 = dual_function(&d2, &s, &none).unwrap();
            let gm = dual_function(&dm, &s, &none).unwrap();
            let scale = g1.value.abs().max(g2.value.abs()).max(1.0);
            assert!(gm.value >= 0.5 * (g1.value + g2.value) - 1e-9 * scale);
            let lin: f64 = g1
                .subgradient
                .flatten()
                .iter()
                .zip(v2.iter().zip(&v1))
                .map(|(g, (b, a))| g * (b - a))
                .sum();
            assert!(g2.value <= g1.value + lin + 1e-9 * scale, "{} > {} + {}", g2.value, g1.value, lin);
        }
    }
}
