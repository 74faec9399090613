//! Rates, expected energy terms and constraint checks for a fixed caching
//! decision and resource allocation.

use std::f64::consts::LN_2;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::Scenario;

/// Relative slack allowed on every inequality constraint.
pub const FEASIBILITY_TOL: f64 = 1e-6;

/// `alpha * B * log2(1 + snr / alpha)`, with the `alpha -> 0` limit taken as 0.
pub fn offload_rate(alpha: f64, power: f64, gain: f64, bandwidth: f64) -> f64 {
    shannon_rate(alpha, power * gain, bandwidth)
}

/// Broadcast rate of a service towards a location with downlink gain `gain`.
pub fn download_rate(alpha: f64, power: f64, gain: f64, bandwidth: f64) -> f64 {
    shannon_rate(alpha, power * gain, bandwidth)
}

pub(crate) fn shannon_rate(alpha: f64, snr: f64, bandwidth: f64) -> f64 {
    if alpha <= 0.0 || snr <= 0.0 {
        return 0.0;
    }
    alpha * bandwidth * (snr / alpha).ln_1p() / LN_2
}

/// Binary cache placement vector.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CachingDecision(Vec<bool>);

impl CachingDecision {
    pub fn new(bits: Vec<bool>) -> Self {
        Self(bits)
    }

    pub fn none(len: usize) -> Self {
        Self(vec![false; len])
    }

    pub fn all(len: usize) -> Self {
        Self(vec![true; len])
    }

    /// Bit `l` of `mask` is service `l`.
    pub fn from_mask(mask: u64, len: usize) -> Self {
        Self((0..len).map(|l| mask >> l & 1 == 1).collect())
    }

    pub fn mask(&self) -> u64 {
        self.0
            .iter()
            .enumerate()
            .fold(0, |m, (l, &b)| if b { m | 1 << l } else { m })
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_cached(&self, l: usize) -> bool {
        self.0[l]
    }

    pub fn set(&mut self, l: usize, cached: bool) {
        self.0[l] = cached;
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&b| f64::from(u8::from(b))).collect()
    }

    pub fn cached_bits(&self, s: &Scenario) -> f64 {
        s.services()
            .iter()
            .zip(&self.0)
            .filter(|(_, &b)| b)
            .map(|(svc, _)| svc.output_bits)
            .sum()
    }

    /// `sum_l I_l R_l <= S`.
    pub fn fits(&self, s: &Scenario) -> bool {
        self.cached_bits(s) <= s.constants().cache_capacity
    }
}

impl std::str::FromStr for CachingDecision {
    type Err = Error;

    /// A string of `0` and `1`, one character per service.
    fn from_str(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                _ => Err(crate::error::invalid("decision", format!("{s:?} is not a 0/1 string"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }
}

impl fmt::Display for CachingDecision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// Bandwidth fractions and time allocations.
///
/// `t_off[l][k]` is indexed by internal (uplink-sorted) location and
/// `t_dl[l][j]` by downlink position. Cached services carry zero offload and
/// compute times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceAllocation {
    pub alpha_off: Vec<f64>,
    pub alpha_dl: Vec<f64>,
    pub t_c: Vec<f64>,
    pub t_off: Vec<Vec<f64>>,
    pub t_dl: Vec<Vec<f64>>,
}

impl ResourceAllocation {
    pub fn zeros(services: usize, locations: usize) -> Self {
        Self {
            alpha_off: vec![0.0; services],
            alpha_dl: vec![0.0; services],
            t_c: vec![0.0; services],
            t_off: vec![vec![0.0; locations]; services],
            t_dl: vec![vec![0.0; locations]; services],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub compute: f64,
    pub download: f64,
    /// Expected offload energy per location, in the caller's location order.
    pub offload: Vec<f64>,
    pub weighted_total: f64,
}

impl EnergyBreakdown {
    pub fn offload_total(&self) -> f64 {
        self.offload.iter().sum()
    }

    pub fn csv_header(locations: usize) -> Vec<String> {
        let mut h = vec!["E_c".to_string(), "E_dl".to_string()];
        h.extend((1..=locations).map(|k| format!("E_off_{k}")));
        h.push("weighted_total".into());
        h
    }

    pub fn csv_record(&self) -> Vec<String> {
        let mut r = vec![fmt_f64(self.compute), fmt_f64(self.download)];
        r.extend(self.offload.iter().map(|&e| fmt_f64(e)));
        r.push(fmt_f64(self.weighted_total));
        r
    }
}

pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{x:.12e}")
}

/// `(1 - I_l) * Pr(service l requested) > 0`: the compute and offload terms
/// of service `l` are live.
pub fn computes(s: &Scenario, decision: &CachingDecision, l: usize) -> bool {
    !decision.is_cached(l) && s.request_prob(l) > 0.0
}

/// Weighted expected energy attributed to each service.
pub fn service_energies(s: &Scenario, decision: &CachingDecision, alloc: &ResourceAllocation) -> Result<Vec<f64>> {
    check_dims(s, decision, alloc)?;
    let c = s.constants();
    (0..s.num_services())
        .map(|l| {
            let (compute, offload, download) = service_terms(s, decision, alloc, l)?;
            let off: f64 = offload.iter().zip(&c.weight_user).map(|(e, w)| e * w).sum();
            Ok(c.weight_bs * (compute + download) + off)
        })
        .collect()
}

/// Expected `(E_c, E_off per internal location, E_dl)` of one service.
fn service_terms(
    s: &Scenario,
    decision: &CachingDecision,
    alloc: &ResourceAllocation,
    l: usize,
) -> Result<(f64, Vec<f64>, f64)> {
    let c = s.constants();
    let k_count = s.num_locations();
    let mut compute = 0.0;
    let mut offload = vec![0.0; k_count];
    if computes(s, decision, l) {
        let t = alloc.t_c[l];
        if t <= 0.0 {
            return Err(Error::DivisionByZero { what: "compute time", service: l });
        }
        compute = c.capacitance * s.service(l).cycles().powi(3) / (t * t) * s.request_prob(l);
        for (k, e) in offload.iter_mut().enumerate() {
            *e = c.tx_power_user[k] * alloc.t_off[l][k] * s.offload_prob(l, k);
        }
    }
    let download = (0..k_count)
        .map(|j| c.tx_power_bs[l] * alloc.t_dl[l][j] * s.broadcast_prob(l, j))
        .sum();
    Ok((compute, offload, download))
}

fn check_dims(s: &Scenario, decision: &CachingDecision, alloc: &ResourceAllocation) -> Result<()> {
    let (l, k) = (s.num_services(), s.num_locations());
    let ok = decision.len() == l
        && alloc.alpha_off.len() == l
        && alloc.alpha_dl.len() == l
        && alloc.t_c.len() == l
        && alloc.t_off.len() == l
        && alloc.t_dl.len() == l
        && alloc.t_off.iter().chain(&alloc.t_dl).all(|row| row.len() == k);
    if ok {
        Ok(())
    } else {
        Err(Error::Dimension(format!("allocation/decision do not match {l} services x {k} locations")))
    }
}

pub fn expected_energy(s: &Scenario, decision: &CachingDecision, alloc: &ResourceAllocation) -> Result<EnergyBreakdown> {
    check_dims(s, decision, alloc)?;
    let c = s.constants();
    let k_count = s.num_locations();
    let mut compute = 0.0;
    let mut download = 0.0;
    let mut offload_internal = vec![0.0; k_count];
    for l in 0..s.num_services() {
        let (ec, eoff, edl) = service_terms(s, decision, alloc, l)?;
        compute += ec;
        download += edl;
        for (acc, e) in offload_internal.iter_mut().zip(eoff) {
            *acc += e;
        }
    }
    let weighted_total = c.weight_bs * (compute + download)
        + offload_internal
            .iter()
            .zip(&c.weight_user)
            .map(|(e, w)| e * w)
            .sum::<f64>();
    let mut offload = vec![0.0; k_count];
    for (internal, &orig) in s.channels().location_ids.iter().enumerate() {
        offload[orig] = offload_internal[internal];
    }
    Ok(EnergyBreakdown {
        compute,
        download,
        offload,
        weighted_total,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    Capacity,
    Deadline,
    MinComputeTime,
    OffloadRate,
    DownloadRate,
    OffloadBandwidth,
    DownloadBandwidth,
    Domain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub constraint: Constraint,
    pub service: Option<usize>,
    /// Internal location (offload) or downlink position (download).
    pub location: Option<usize>,
    /// Signed slack `rhs - lhs`; negative means violated.
    pub slack: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub violations: Vec<Violation>,
}

impl FeasibilityReport {
    pub fn is_feasible(&self) -> bool {
        self.violations.is_empty()
    }

    /// Feasible apart from the cache capacity, which only matters for the
    /// placement and not for the allocation itself.
    pub fn allocation_feasible(&self) -> bool {
        self.violations.iter().all(|v| v.constraint == Constraint::Capacity)
    }
}

struct Checker {
    tol: f64,
    violations: Vec<Violation>,
}

impl Checker {
    /// Records `lhs <= rhs` unless it holds within the relative tolerance.
    fn le(&mut self, constraint: Constraint, service: Option<usize>, location: Option<usize>, lhs: f64, rhs: f64) {
        let scale = lhs.abs().max(rhs.abs()).max(f64::MIN_POSITIVE);
        if !(lhs - rhs <= self.tol * scale) {
            self.violations.push(Violation {
                constraint,
                service,
                location,
                slack: rhs - lhs,
            });
        }
    }
}

/// Checks every constraint of the fixed-decision problem, using worst-case
/// (support-aware) locations for the deadline. Services that are never
/// requested carry no constraints.
pub fn check_feasible(s: &Scenario, decision: &CachingDecision, alloc: &ResourceAllocation) -> FeasibilityReport {
    check_feasible_with(s, decision, alloc, FEASIBILITY_TOL)
}

pub fn check_feasible_with(
    s: &Scenario,
    decision: &CachingDecision,
    alloc: &ResourceAllocation,
    tol: f64,
) -> FeasibilityReport {
    let mut ck = Checker {
        tol,
        violations: Vec::new(),
    };
    if check_dims(s, decision, alloc).is_err() {
        ck.violations.push(Violation {
            constraint: Constraint::Domain,
            service: None,
            location: None,
            slack: f64::NEG_INFINITY,
        });
        return FeasibilityReport { violations: ck.violations };
    }
    let c = s.constants();
    ck.le(Constraint::Capacity, None, None, decision.cached_bits(s), c.cache_capacity);
    ck.le(Constraint::OffloadBandwidth, None, None, alloc.alpha_off.iter().sum(), 1.0);
    ck.le(Constraint::DownloadBandwidth, None, None, alloc.alpha_dl.iter().sum(), 1.0);

    for l in 0..s.num_services() {
        let values = [alloc.alpha_off[l], alloc.alpha_dl[l], alloc.t_c[l]]
            .into_iter()
            .chain(alloc.t_off[l].iter().copied())
            .chain(alloc.t_dl[l].iter().copied());
        let mut domain_ok = true;
        for v in values {
            if !(v >= 0.0) {
                domain_ok = false;
            }
        }
        if !(alloc.alpha_off[l] <= 1.0 && alloc.alpha_dl[l] <= 1.0) {
            domain_ok = false;
        }
        if !domain_ok {
            ck.violations.push(Violation {
                constraint: Constraint::Domain,
                service: Some(l),
                location: None,
                slack: f64::NEG_INFINITY,
            });
            continue;
        }
        if s.request_prob(l) <= 0.0 {
            continue;
        }
        let svc = s.service(l);
        let cached = decision.is_cached(l);
        let mut latency = alloc.t_c[l];
        if !cached {
            ck.le(
                Constraint::MinComputeTime,
                Some(l),
                None,
                svc.cycles() / c.max_core_freq,
                alloc.t_c[l],
            );
            for k in 0..s.num_locations() {
                if s.offload_prob(l, k) <= 0.0 {
                    continue;
                }
                let rate = offload_rate(alloc.alpha_off[l], c.tx_power_user[k], s.channels().uplink[k], c.bandwidth_offload);
                ck.le(Constraint::OffloadRate, Some(l), Some(k), svc.input_bits, rate * alloc.t_off[l][k]);
            }
            if let Some(w) = s.worst_offload(l) {
                latency += alloc.t_off[l][w];
            }
        }
        for j in 0..s.num_locations() {
            if s.broadcast_prob(l, j) <= 0.0 {
                continue;
            }
            let gain = s.channels().downlink[s.channels().downlink_order[j]];
            let rate = download_rate(alloc.alpha_dl[l], c.tx_power_bs[l], gain, c.bandwidth_download);
            ck.le(Constraint::DownloadRate, Some(l), Some(j), svc.output_bits, rate * alloc.t_dl[l][j]);
        }
        if let Some(w) = s.worst_broadcast(l) {
            latency += alloc.t_dl[l][w];
        }
        ck.le(Constraint::Deadline, Some(l), None, latency, svc.deadline);
    }
    FeasibilityReport { violations: ck.violations }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{PhysicalConstants, PreferenceProfile, ServiceSpec};

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn rate_examples() {
        assert_eq!(offload_rate(1.0, 1.0, 1.0, 10e6), 1e7);
        assert_eq!(offload_rate(1.0, 0.0, 5.0, 10e6), 0.0);
        assert_eq!(offload_rate(0.0, 1.0, 5.0, 10e6), 0.0);
        let expected = 0.5 * 1e7 * 7f64.log2();
        assert!(rel(offload_rate(0.5, 1.0, 3.0, 10e6), expected) < 1e-15);
        assert!(rel(download_rate(0.5, 3.0, 1.0, 10e6), 1.4036e7) < 1e-4);
        assert_eq!(download_rate(1.0, 1.0, 1.0, 10e6), 1e7);
    }

    fn constants(k: usize, l: usize) -> PhysicalConstants {
        PhysicalConstants {
            bandwidth_offload: 1e7,
            bandwidth_download: 1e7,
            noise_psd: 1e-20,
            ref_gain: 1e-13,
            ref_distance: 1.0,
            pathloss_exponent: 2.6,
            capacitance: 1e-27,
            max_core_freq: 1e10,
            cache_capacity: 30e6,
            tx_power_user: vec![0.25; k],
            tx_power_bs: vec![1.0; l],
            weight_bs: 0.5,
            weight_user: vec![0.5 / k as f64; k],
        }
    }

    /// Two services, two locations, uplink gains already descending and the
    /// downlink order reversed.
    fn tiny() -> Scenario {
        let services = vec![
            ServiceSpec::new(1000.0, 7e6, 21e6, 2.8).unwrap(),
            ServiceSpec::new(800.0, 5e6, 10e6, 3.0).unwrap(),
        ];
        let prefs = PreferenceProfile::new(vec![vec![0.6, 0.3], vec![0.4, 0.7]]).unwrap();
        Scenario::new(services, constants(2, 2), prefs, vec![9000.0, 4000.0], vec![2000.0, 12000.0]).unwrap()
    }

    #[test]
    fn energy_matches_term_by_term_recomputation() {
        let s = tiny();
        let alloc = ResourceAllocation {
            alpha_off: vec![0.5, 0.5],
            alpha_dl: vec![0.4, 0.6],
            t_c: vec![1.2, 0.9],
            t_off: vec![vec![0.3, 0.4], vec![0.2, 0.25]],
            t_dl: vec![vec![0.7, 0.8], vec![0.5, 0.6]],
        };
        let none = CachingDecision::none(2);
        let e = expected_energy(&s, &none, &alloc).unwrap();

        // Independent recomputation with the probabilities written out by hand.
        // Uplink order is the given one; downlink order is [loc1, loc0].
        let k0 = 1e-27;
        let p_req = [1.0 - 0.4 * 0.7, 1.0 - 0.6 * 0.3];
        let ec = k0 * (1000.0f64 * 7e6).powi(3) / 1.44 * p_req[0] + k0 * (800.0f64 * 5e6).powi(3) / 0.81 * p_req[1];
        let poff = [[0.6, 0.4 * 0.3], [0.4, 0.6 * 0.7]];
        let eoff0 = 0.25 * (0.3 * poff[0][0] + 0.2 * poff[1][0]);
        let eoff1 = 0.25 * (0.4 * poff[0][1] + 0.25 * poff[1][1]);
        // position 0 is location 1, position 1 is location 0
        let pdl = [[(1.0 - 0.6) * 0.3, 0.6], [(1.0 - 0.4) * 0.7, 0.4]];
        let edl = 1.0 * (0.7 * pdl[0][0] + 0.8 * pdl[0][1]) + 1.0 * (0.5 * pdl[1][0] + 0.6 * pdl[1][1]);
        let total = 0.5 * (ec + edl) + 0.25 * (eoff0 + eoff1);

        assert!(rel(e.compute, ec) < 1e-12);
        assert!(rel(e.offload[0], eoff0) < 1e-12);
        assert!(rel(e.offload[1], eoff1) < 1e-12);
        assert!(rel(e.download, edl) < 1e-12);
        assert!(rel(e.weighted_total, total) < 1e-12);
        let per = service_energies(&s, &none, &alloc).unwrap();
        assert!(rel(per.iter().sum(), total) < 1e-12);
    }

    #[test]
    fn all_cached_leaves_only_download() {
        let s = tiny();
        let mut alloc = ResourceAllocation::zeros(2, 2);
        alloc.t_dl = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        let e = expected_energy(&s, &CachingDecision::all(2), &alloc).unwrap();
        assert_eq!(e.compute, 0.0);
        assert!(e.offload.iter().all(|&x| x == 0.0));
        assert!(rel(e.weighted_total, 0.5 * e.download) < 1e-15);
    }

    #[test]
    fn zero_compute_time_is_an_error() {
        let s = tiny();
        let alloc = ResourceAllocation::zeros(2, 2);
        assert!(matches!(
            expected_energy(&s, &CachingDecision::none(2), &alloc),
            Err(Error::DivisionByZero { service: 0, .. })
        ));
    }

    #[test]
    fn single_pair_collapses_to_compute_formula() {
        let services = vec![ServiceSpec::new(1000.0, 7e6, 21e6, 2.8).unwrap()];
        let s = Scenario::new(services, constants(1, 1), PreferenceProfile::one_hot(1), vec![1e4], vec![1e4]).unwrap();
        let mut alloc = ResourceAllocation::zeros(1, 1);
        alloc.t_c[0] = 1.5;
        let e = expected_energy(&s, &CachingDecision::none(1), &alloc).unwrap();
        assert!(rel(e.compute, 1e-27 * (7e9f64).powi(3) / 2.25) < 1e-14);
    }

    #[test]
    fn deadline_frequency_clash_is_reported() {
        let services = vec![ServiceSpec::new(1000.0, 7e6, 21e6, 0.5).unwrap()];
        let s = Scenario::new(services, constants(1, 1), PreferenceProfile::one_hot(1), vec![1e4], vec![1e4]).unwrap();
        let alloc = ResourceAllocation {
            alpha_off: vec![1.0],
            alpha_dl: vec![1.0],
            t_c: vec![0.2],
            t_off: vec![vec![0.1]],
            t_dl: vec![vec![0.2]],
        };
        let r = check_feasible(&s, &CachingDecision::none(1), &alloc);
        assert!(r.violations.iter().any(|v| v.constraint == Constraint::MinComputeTime));
    }

    #[test]
    fn cached_with_rate_met_is_feasible() {
        let s = tiny();
        let mut alloc = ResourceAllocation::zeros(2, 2);
        alloc.alpha_dl = vec![0.5, 0.5];
        for l in 0..2 {
            for j in 0..2 {
                let r = download_rate(0.5, 1.0, s.channels().downlink[s.channels().downlink_order[j]], 1e7);
                alloc.t_dl[l][j] = s.service(l).output_bits / r;
            }
        }
        let big = s.with_cache_capacity(1e9);
        let r = check_feasible(&big, &CachingDecision::all(2), &alloc);
        assert!(r.is_feasible(), "{r:?}");
        let r = check_feasible(&s, &CachingDecision::all(2), &alloc);
        assert!(!r.is_feasible());
        assert!(r.allocation_feasible());
    }

    #[test]
    fn mask_round_trip() {
        let d = CachingDecision::from_mask(0b1011, 5);
        assert_eq!(d.to_string(), "11010");
        assert_eq!(d.mask(), 0b1011);
        assert_eq!(d.count(), 3);
    }
}
