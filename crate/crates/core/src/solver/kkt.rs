//! Post-solve optimality check: stationarity of the Lagrangian in every time
//! variable and bandwidth fraction, plus complementary slackness.
//!
//! Stationarity rows are scaled by the magnitude of their terms, so each lies
//! in `[0, 1]`. Complementary-slackness products are divided by the
//! allocation's weighted energy.

use serde::{Deserialize, Serialize};

use super::dual::{bandwidth_derivative, DualPoint};
use super::model::{self, rate_derivs};
use crate::energy::{expected_energy, shannon_rate, CachingDecision, ResourceAllocation};
use crate::error::Result;
use crate::scenario::Scenario;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    pub compute_time: f64,
    pub offload_time: f64,
    pub download_time: f64,
    pub bandwidth: f64,
    pub complementary: f64,
}

impl KktReport {
    pub fn max_stationarity(&self) -> f64 {
        self.compute_time
            .max(self.offload_time)
            .max(self.download_time)
            .max(self.bandwidth)
    }

    pub fn max(&self) -> f64 {
        self.max_stationarity().max(self.complementary)
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num.abs() / den
    } else {
        0.0
    }
}

/// Residual of `F(a) = 0` for interior `a`, or of `F(1) >= 0` at the bound.
fn bandwidth_row(a: f64, weights: &[f64], snr: &[f64], price: f64, bandwidth: f64) -> f64 {
    if a <= 0.0 {
        return 0.0;
    }
    let f = bandwidth_derivative(a, weights, snr, price, bandwidth);
    let mag: f64 = weights
        .iter()
        .zip(snr)
        .map(|(&w, &x)| (w * rate_derivs(a, x, bandwidth).1).abs())
        .sum::<f64>()
        + price;
    if a >= 1.0 {
        ratio(f.min(0.0), mag)
    } else {
        ratio(f, mag)
    }
}

pub fn kkt_residuals(
    s: &Scenario,
    decision: &CachingDecision,
    alloc: &ResourceAllocation,
    duals: &DualPoint,
) -> Result<KktReport> {
    let models = model::build(s, decision);
    let energy = expected_energy(s, decision, alloc)?.weighted_total.max(1e-300);
    let k_count = s.num_locations();
    let mut r = KktReport::default();
    let mut cs = 0.0f64;

    // Rows of e t + w bits / t; cost-free links only report their multiplier.
    let time_row = |e: f64, w: f64, bits: f64, t: f64| {
        if e == 0.0 {
            w * bits / t / energy
        } else {
            let pull = w * bits / (t * t);
            ratio(e - pull, e + pull)
        }
    };

    for m in models.iter().filter(|m| m.requested) {
        let l = m.index;
        let mu = duals.mu[l];
        let eta = duals.eta[l];
        let mut latency = 0.0;
        if let Some(up) = &m.up {
            let t = alloc.t_c[l];
            let push = 2.0 * m.compute_coef / t.powi(3);
            r.compute_time = r.compute_time.max(ratio(mu - eta - push, push + mu + eta));
            cs = cs.max(eta * (t - m.min_compute).abs() / energy);
            latency += t + alloc.t_off[l][up.worst];
            let a = alloc.alpha_off[l];
            for k in 0..k_count {
                let e = up.cost[k] + if k == up.worst { mu } else { 0.0 };
                let t = alloc.t_off[l][k];
                r.offload_time = r.offload_time.max(time_row(e, duals.omega[l][k], up.bits, t));
                let gap = up.bits - shannon_rate(a, up.snr[k], up.bandwidth) * t;
                cs = cs.max(duals.omega[l][k] * gap.abs() / t / energy);
            }
            r.bandwidth = r
                .bandwidth
                .max(bandwidth_row(a, &duals.omega[l], &up.snr, duals.sigma, up.bandwidth));
        }
        let down = m.down();
        let b = alloc.alpha_dl[l];
        for j in 0..k_count {
            let e = down.cost[j] + if j == down.worst { mu } else { 0.0 };
            let t = alloc.t_dl[l][j];
            r.download_time = r.download_time.max(time_row(e, duals.gamma[l][j], down.bits, t));
            let gap = down.bits - shannon_rate(b, down.snr[j], down.bandwidth) * t;
            cs = cs.max(duals.gamma[l][j] * gap.abs() / t / energy);
        }
        r.bandwidth = r
            .bandwidth
            .max(bandwidth_row(b, &duals.gamma[l], &down.snr, duals.epsilon, down.bandwidth));
        latency += alloc.t_dl[l][down.worst];
        cs = cs.max(mu * (m.deadline - latency).abs() / energy);
    }
    let sum_a: f64 = alloc.alpha_off.iter().sum();
    let sum_b: f64 = alloc.alpha_dl.iter().sum();
    cs = cs.max(duals.sigma * (1.0 - sum_a).abs() / energy);
    cs = cs.max(duals.epsilon * (1.0 - sum_b).abs() / energy);
    r.complementary = cs;
    Ok(r)
}
