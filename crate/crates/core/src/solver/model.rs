//! Per-service coefficients of the fixed-decision problem, in the form the
//! dual solvers consume.

use std::f64::consts::LN_2;

use crate::energy::{computes, CachingDecision};
use crate::scenario::Scenario;

/// One transmission direction of a service: transfer `bits` over links with
/// the given SNRs, paying `cost[k]` per second spent on link `k`.
#[derive(Debug, Clone)]
pub(crate) struct Side {
    pub bits: f64,
    pub bandwidth: f64,
    pub snr: Vec<f64>,
    pub cost: Vec<f64>,
    /// Link whose transfer time enters the deadline.
    pub worst: usize,
}

/// `r`, `r'`, `r''` of `a B log2(1 + x/a)` with respect to `a`.
#[inline]
pub(crate) fn rate_derivs(a: f64, x: f64, bandwidth: f64) -> (f64, f64, f64) {
    let k = bandwidth / LN_2;
    let l = (x / a).ln_1p();
    let apx = a + x;
    (k * a * l, k * (l - x / apx), -k * x * x / (a * apx * apx))
}

/// `tau = bits / r` and its first two derivatives.
#[inline]
pub(crate) fn time_derivs(a: f64, x: f64, bandwidth: f64, bits: f64) -> (f64, f64, f64) {
    let (r, r1, r2) = rate_derivs(a, x, bandwidth);
    let inv = 1.0 / r;
    let t = bits * inv;
    (t, -t * r1 * inv, t * inv * inv * (2.0 * r1 * r1 - r * r2))
}

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct SideEval {
    /// `sum_k cost_k tau_k` and derivatives.
    pub cost: f64,
    pub dcost: f64,
    pub d2cost: f64,
    /// Worst-link time and derivatives.
    pub tw: f64,
    pub dtw: f64,
    pub d2tw: f64,
}

impl Side {
    pub fn time(&self, a: f64, k: usize) -> f64 {
        self.bits / rate_derivs(a, self.snr[k], self.bandwidth).0
    }

    pub fn worst_time(&self, a: f64) -> f64 {
        self.time(a, self.worst)
    }

    /// Smallest fraction whose worst-link time is at most `time`; `None` if
    /// even the full band is too slow.
    pub fn fraction_for_time(&self, time: f64) -> Option<f64> {
        if !(time > 0.0) {
            return None;
        }
        let target = self.bits / time;
        let x = self.snr[self.worst];
        let (r1, _, _) = rate_derivs(1.0, x, self.bandwidth);
        if r1 < target {
            return None;
        }
        if r1 == target {
            return Some(1.0);
        }
        // The rate is concave and increasing, so a Newton step from the right
        // lands left of the root and the iterates then climb to it.
        let mut a = 1.0;
        for _ in 0..200 {
            let (r, dr, _) = rate_derivs(a, x, self.bandwidth);
            let step = a - (r - target) / dr;
            let next = if step > 0.0 { step } else { 0.5 * a };
            if (next - a).abs() <= 1e-15 * a {
                return Some(next.min(1.0));
            }
            a = next;
        }
        Some(a.min(1.0))
    }

    pub fn eval(&self, a: f64) -> SideEval {
        let mut e = SideEval::default();
        for k in 0..self.snr.len() {
            let c = self.cost[k];
            if c == 0.0 && k != self.worst {
                continue;
            }
            let (t, t1, t2) = time_derivs(a, self.snr[k], self.bandwidth, self.bits);
            e.cost += c * t;
            e.dcost += c * t1;
            e.d2cost += c * t2;
            if k == self.worst {
                e.tw = t;
                e.dtw = t1;
                e.d2tw = t2;
            }
        }
        e
    }
}

#[derive(Debug, Clone)]
pub(crate) struct ServiceModel {
    pub index: usize,
    /// Never requested: no variables, no constraints.
    pub requested: bool,
    /// Uncached and requested: compute and offload are live.
    pub computes: bool,
    /// `beta_0 kappa (C Q)^3 Pr(requested)` for computing services.
    pub compute_coef: f64,
    /// `C Q / f_max` for computing services, 0 otherwise.
    pub min_compute: f64,
    pub deadline: f64,
    pub up: Option<Side>,
    pub down: Option<Side>,
}

impl ServiceModel {
    #[cfg(test)]
    pub fn up(&self) -> &Side {
        self.up.as_ref().expect("computing service has an uplink side")
    }

    pub fn down(&self) -> &Side {
        self.down.as_ref().expect("requested service has a downlink side")
    }
}

pub(crate) fn build(s: &Scenario, decision: &CachingDecision) -> Vec<ServiceModel> {
    let c = s.constants();
    let k_count = s.num_locations();
    (0..s.num_services())
        .map(|l| {
            let svc = s.service(l);
            let requested = s.request_prob(l) > 0.0;
            let live = computes(s, decision, l);
            let up = live.then(|| Side {
                bits: svc.input_bits,
                bandwidth: c.bandwidth_offload,
                snr: (0..k_count).map(|k| s.offload_snr(k)).collect(),
                cost: (0..k_count)
                    .map(|k| c.weight_user[k] * c.tx_power_user[k] * s.offload_prob(l, k))
                    .collect(),
                worst: s.worst_offload(l).expect("requested service has an offload location"),
            });
            let down = requested.then(|| Side {
                bits: svc.output_bits,
                bandwidth: c.bandwidth_download,
                snr: (0..k_count).map(|j| s.broadcast_snr(l, j)).collect(),
                cost: (0..k_count)
                    .map(|j| c.weight_bs * c.tx_power_bs[l] * s.broadcast_prob(l, j))
                    .collect(),
                worst: s.worst_broadcast(l).expect("requested service has a broadcast position"),
            });
            ServiceModel {
                index: l,
                requested,
                computes: live,
                compute_coef: if live {
                    c.weight_bs * c.capacitance * svc.cycles().powi(3) * s.request_prob(l)
                } else {
                    0.0
                },
                min_compute: if live { svc.cycles() / c.max_core_freq } else { 0.0 },
                deadline: svc.deadline,
                up,
                down,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivatives_match_finite_differences() {
        let (x, bw, bits) = (2500.0, 1e7, 7e6);
        for &a in &[0.01, 0.2, 0.9] {
            let h = 1e-6 * a;
            let (r, r1, r2) = rate_derivs(a, x, bw);
            let (rp, r1p, _) = rate_derivs(a + h, x, bw);
            let (rm, r1m, _) = rate_derivs(a - h, x, bw);
            assert!(((rp - rm) / (2.0 * h) - r1).abs() / r1.abs() < 1e-6);
            assert!(((r1p - r1m) / (2.0 * h) - r2).abs() / r2.abs() < 1e-5);
            assert!((r - a * bw * (1.0 + x / a).log2()).abs() / r < 1e-12);
            let (_, t1, t2) = time_derivs(a, x, bw, bits);
            let (tp, t1p, _) = time_derivs(a + h, x, bw, bits);
            let (tm, t1m, _) = time_derivs(a - h, x, bw, bits);
            assert!(((tp - tm) / (2.0 * h) - t1).abs() / t1.abs() < 1e-6);
            assert!(((t1p - t1m) / (2.0 * h) - t2).abs() / t2.abs() < 1e-5);
        }
    }
}
