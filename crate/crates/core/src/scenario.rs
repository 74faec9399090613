//! Problem instances: services, locations, channels and location-aware
//! preference profiles, plus the request/selection probabilities derived
//! from them.
//!
//! Base units everywhere inside the crate are bits, Hz, seconds, Watts and
//! Joules. Mbit/MHz/GHz/dB inputs are converted once, in [`ScenarioConfig`].
//!
//! Locations are re-indexed at construction so that uplink gains are
//! non-increasing (`u_1 >= ... >= u_K`, ties broken by the lower original
//! index). `ChannelRealization::location_ids` maps internal positions back to
//! the caller's location ids, and every per-location quantity (preference
//! columns, user transmit powers, weights) is permuted along with the gains.

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const MBIT: f64 = 1e6;
pub const MHZ: f64 = 1e6;
pub const GHZ: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServiceSpec {
    /// CPU cycles per input bit.
    pub compute_intensity: f64,
    pub input_bits: f64,
    pub output_bits: f64,
    /// Deadline in seconds.
    pub deadline: f64,
}

impl ServiceSpec {
    pub fn new(compute_intensity: f64, input_bits: f64, output_bits: f64, deadline: f64) -> Result<Self> {
        let spec = Self {
            compute_intensity,
            input_bits,
            output_bits,
            deadline,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("compute_intensity", self.compute_intensity),
            ("input_bits", self.input_bits),
            ("output_bits", self.output_bits),
            ("deadline", self.deadline),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(name, format!("must be finite and > 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Total CPU cycles `C_l * Q_l`.
    pub fn cycles(&self) -> f64 {
        self.compute_intensity * self.input_bits
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    pub bandwidth_offload: f64,
    pub bandwidth_download: f64,
    /// Noise power spectral density, W/Hz.
    pub noise_psd: f64,
    /// Average channel power gain at the reference distance (linear).
    pub ref_gain: f64,
    /// Reference distance, km.
    pub ref_distance: f64,
    pub pathloss_exponent: f64,
    pub capacitance: f64,
    pub max_core_freq: f64,
    /// Cache capacity, bits.
    pub cache_capacity: f64,
    /// User transmit power per location, W.
    pub tx_power_user: Vec<f64>,
    /// BS transmit power per service, W.
    pub tx_power_bs: Vec<f64>,
    pub weight_bs: f64,
    pub weight_user: Vec<f64>,
}

impl PhysicalConstants {
    fn validate(&self, services: usize, locations: usize) -> Result<()> {
        for (name, v) in [
            ("bandwidth_offload", self.bandwidth_offload),
            ("bandwidth_download", self.bandwidth_download),
            ("noise_psd", self.noise_psd),
            ("ref_gain", self.ref_gain),
            ("ref_distance", self.ref_distance),
            ("pathloss_exponent", self.pathloss_exponent),
            ("capacitance", self.capacitance),
            ("max_core_freq", self.max_core_freq),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(name, format!("must be finite and > 0, got {v}")));
            }
        }
        if !(self.cache_capacity >= 0.0) {
            return Err(invalid("cache_capacity", "must be >= 0"));
        }
        if self.tx_power_user.len() != locations || self.weight_user.len() != locations {
            return Err(Error::Dimension(format!(
                "expected {locations} per-location powers and weights"
            )));
        }
        if self.tx_power_bs.len() != services {
            return Err(Error::Dimension(format!("expected {services} BS powers")));
        }
        if self.tx_power_user.iter().chain(&self.tx_power_bs).any(|&p| !(p > 0.0)) {
            return Err(invalid("tx_power", "all transmit powers must be > 0"));
        }
        if self.weight_bs < 0.0 || self.weight_user.iter().any(|&w| w < 0.0) {
            return Err(invalid("weights", "weights must be non-negative"));
        }
        let total = self.weight_bs + self.weight_user.iter().sum::<f64>();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid("weights", format!("weights must sum to 1, got {total}")));
        }
        Ok(())
    }
}

/// Per-location request distribution over the service library.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceProfile {
    /// `pmf[l][k] = P_{l,k}`; every column `k` sums to one.
    pub pmf: Vec<Vec<f64>>,
    /// Zipf skew per location, when the profile is Zipf-shaped.
    pub zipf_skew: Option<Vec<f64>>,
    /// `rank_permutation[k][l]` is the 0-based popularity rank of service
    /// `l` at location `k`.
    pub rank_permutation: Option<Vec<Vec<usize>>>,
}

impl PreferenceProfile {
    pub fn new(pmf: Vec<Vec<f64>>) -> Result<Self> {
        let p = Self {
            pmf,
            zipf_skew: None,
            rank_permutation: None,
        };
        p.validate()?;
        Ok(p)
    }

    /// Zipf profile with one skew and one rank permutation per location.
    pub fn zipf(skews: &[f64], ranks: Vec<Vec<usize>>) -> Result<Self> {
        if skews.len() != ranks.len() || ranks.is_empty() {
            return Err(Error::Dimension("one skew per rank permutation".into()));
        }
        let services = ranks[0].len();
        let mut pmf = vec![vec![0.0; ranks.len()]; services];
        for (k, (rank, &skew)) in ranks.iter().zip(skews).enumerate() {
            let column = zipf_pmf(services, skew, rank)?;
            for (l, p) in column.into_iter().enumerate() {
                pmf[l][k] = p;
            }
        }
        let p = Self {
            pmf,
            zipf_skew: Some(skews.to_vec()),
            rank_permutation: Some(ranks),
        };
        p.validate()?;
        Ok(p)
    }

    /// Location `k` requests service `k` and nothing else.
    pub fn one_hot(n: usize) -> Self {
        let pmf = (0..n)
            .map(|l| (0..n).map(|k| if k == l { 1.0 } else { 0.0 }).collect())
            .collect();
        Self {
            pmf,
            zipf_skew: None,
            rank_permutation: None,
        }
    }

    pub fn num_services(&self) -> usize {
        self.pmf.len()
    }

    pub fn num_locations(&self) -> usize {
        self.pmf.first().map_or(0, Vec::len)
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        self.pmf.iter().map(|row| row[k]).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let k_count = self.num_locations();
        if self.pmf.is_empty() || k_count == 0 {
            return Err(Error::Dimension("empty preference matrix".into()));
        }
        if self.pmf.iter().any(|row| row.len() != k_count) {
            return Err(Error::Dimension("ragged preference matrix".into()));
        }
        for k in 0..k_count {
            let mut sum = 0.0;
            for row in &self.pmf {
                let p = row[k];
                if !(0.0..=1.0).contains(&p) {
                    return Err(invalid("pmf", format!("entry {p} outside [0,1]")));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > 1e-9 {
                return Err(invalid("pmf", format!("column {k} sums to {sum}")));
            }
        }
        Ok(())
    }

    fn permute_locations(&self, order: &[usize]) -> Self {
        Self {
            pmf: self
                .pmf
                .iter()
                .map(|row| order.iter().map(|&k| row[k]).collect())
                .collect(),
            zipf_skew: self
                .zipf_skew
                .as_ref()
                .map(|s| order.iter().map(|&k| s[k]).collect()),
            rank_permutation: self
                .rank_permutation
                .as_ref()
                .map(|r| order.iter().map(|&k| r[k].clone()).collect()),
        }
    }
}

/// Normalized channel gains in internal (uplink-sorted) location order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRealization {
    /// `u_1 >= ... >= u_K`.
    pub uplink: Vec<f64>,
    /// Downlink gain of each internal location.
    pub downlink: Vec<f64>,
    /// `downlink_order[j]` is the internal location with the `j`-th largest
    /// downlink gain.
    pub downlink_order: Vec<usize>,
    /// Original location id of each internal location.
    pub location_ids: Vec<usize>,
}

impl ChannelRealization {
    /// Gains in the caller's original location order.
    pub fn original_uplink(&self) -> Vec<f64> {
        self.restore(&self.uplink)
    }

    pub fn original_downlink(&self) -> Vec<f64> {
        self.restore(&self.downlink)
    }

    fn restore(&self, values: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; values.len()];
        for (internal, &orig) in self.location_ids.iter().enumerate() {
            out[orig] = values[internal];
        }
        out
    }
}

/// One draw of the request matrix `A` (`L x K`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestRealization {
    pub requests: Vec<Vec<bool>>,
}

impl RequestRealization {
    pub fn requesters(&self, l: usize) -> impl Iterator<Item = usize> + '_ {
        self.requests[l]
            .iter()
            .enumerate()
            .filter_map(|(k, &a)| a.then_some(k))
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    services: Vec<ServiceSpec>,
    constants: PhysicalConstants,
    preferences: PreferenceProfile,
    channels: ChannelRealization,
    request_prob: Vec<f64>,
    offload_prob: Vec<Vec<f64>>,
    broadcast_prob: Vec<Vec<f64>>,
    worst_offload: Vec<Option<usize>>,
    worst_broadcast: Vec<Option<usize>>,
}

impl Scenario {
    /// Builds a scenario from per-location data given in the caller's
    /// location order; locations are re-indexed by descending uplink gain.
    pub fn new(
        services: Vec<ServiceSpec>,
        constants: PhysicalConstants,
        preferences: PreferenceProfile,
        uplink: Vec<f64>,
        downlink: Vec<f64>,
    ) -> Result<Self> {
        let l_count = services.len();
        let k_count = uplink.len();
        if l_count == 0 || k_count == 0 {
            return Err(Error::Dimension("need at least one service and one location".into()));
        }
        if downlink.len() != k_count {
            return Err(Error::Dimension("uplink/downlink length mismatch".into()));
        }
        if preferences.num_services() != l_count || preferences.num_locations() != k_count {
            return Err(Error::Dimension(format!(
                "preferences are {}x{}, expected {l_count}x{k_count}",
                preferences.num_services(),
                preferences.num_locations()
            )));
        }
        for s in &services {
            s.validate()?;
        }
        preferences.validate()?;
        constants.validate(l_count, k_count)?;
        if uplink.iter().chain(&downlink).any(|&g| !(g > 0.0 && g.is_finite())) {
            return Err(invalid("gains", "channel gains must be finite and > 0"));
        }

        let order = descending_order(&uplink);
        let constants = PhysicalConstants {
            tx_power_user: order.iter().map(|&k| constants.tx_power_user[k]).collect(),
            weight_user: order.iter().map(|&k| constants.weight_user[k]).collect(),
            ..constants
        };
        let preferences = preferences.permute_locations(&order);
        let up: Vec<f64> = order.iter().map(|&k| uplink[k]).collect();
        let down: Vec<f64> = order.iter().map(|&k| downlink[k]).collect();
        let downlink_order = descending_order(&down);
        let channels = ChannelRealization {
            uplink: up,
            downlink: down,
            downlink_order,
            location_ids: order,
        };

        let mut request_prob = Vec::with_capacity(l_count);
        let mut offload_prob = Vec::with_capacity(l_count);
        let mut broadcast_prob = Vec::with_capacity(l_count);
        let mut worst_offload = Vec::with_capacity(l_count);
        let mut worst_broadcast = Vec::with_capacity(l_count);
        for row in &preferences.pmf {
            request_prob.push(1.0 - prob_no_request(row));
            let off: Vec<f64> = (0..k_count).map(|k| prob_offload_select(row, k)).collect();
            let by_dl: Vec<f64> = channels.downlink_order.iter().map(|&k| row[k]).collect();
            let dl: Vec<f64> = (0..k_count).map(|j| prob_broadcast_rate(&by_dl, j)).collect();
            worst_offload.push(off.iter().rposition(|&p| p > 0.0));
            worst_broadcast.push(dl.iter().rposition(|&p| p > 0.0));
            offload_prob.push(off);
            broadcast_prob.push(dl);
        }

        Ok(Self {
            services,
            constants,
            preferences,
            channels,
            request_prob,
            offload_prob,
            broadcast_prob,
            worst_offload,
            worst_broadcast,
        })
    }

    pub fn num_services(&self) -> usize {
        self.services.len()
    }

    pub fn num_locations(&self) -> usize {
        self.channels.uplink.len()
    }

    pub fn services(&self) -> &[ServiceSpec] {
        &self.services
    }

    pub fn service(&self, l: usize) -> &ServiceSpec {
        &self.services[l]
    }

    pub fn constants(&self) -> &PhysicalConstants {
        &self.constants
    }

    pub fn preferences(&self) -> &PreferenceProfile {
        &self.preferences
    }

    pub fn channels(&self) -> &ChannelRealization {
        &self.channels
    }

    /// `1 - Pr(|K_l| = 0)`.
    pub fn request_prob(&self, l: usize) -> f64 {
        self.request_prob[l]
    }

    /// `P^off_{l,k}` with `k` an internal (uplink-sorted) location.
    pub fn offload_prob(&self, l: usize, k: usize) -> f64 {
        self.offload_prob[l][k]
    }

    /// `P^dl_{l,pi(j)}` with `j` a downlink position.
    pub fn broadcast_prob(&self, l: usize, j: usize) -> f64 {
        self.broadcast_prob[l][j]
    }

    /// Worst-gain location that can still be selected to offload service `l`.
    pub fn worst_offload(&self, l: usize) -> Option<usize> {
        self.worst_offload[l]
    }

    /// Worst downlink position service `l` may have to be broadcast at.
    pub fn worst_broadcast(&self, l: usize) -> Option<usize> {
        self.worst_broadcast[l]
    }

    /// `p_k^off * u_k` for internal location `k`.
    pub fn offload_snr(&self, k: usize) -> f64 {
        self.constants.tx_power_user[k] * self.channels.uplink[k]
    }

    /// `p_l^dl * v_{pi(j)}` for downlink position `j`.
    pub fn broadcast_snr(&self, l: usize, j: usize) -> f64 {
        self.constants.tx_power_bs[l] * self.channels.downlink[self.channels.downlink_order[j]]
    }

    pub fn total_output_bits(&self) -> f64 {
        self.services.iter().map(|s| s.output_bits).sum()
    }

    /// `sum_l R_l <= S`: every service fits in the cache.
    pub fn is_trivial_capacity(&self) -> bool {
        self.total_output_bits() <= self.constants.cache_capacity
    }

    /// Network input `(u, v, Q, R)` with gains in original location order.
    pub fn features(&self) -> Vec<f64> {
        let mut f = self.channels.original_uplink();
        f.extend(self.channels.original_downlink());
        f.extend(self.services.iter().map(|s| s.input_bits));
        f.extend(self.services.iter().map(|s| s.output_bits));
        f
    }

    /// Same scenario with a different cache capacity.
    pub fn with_cache_capacity(&self, capacity: f64) -> Self {
        let mut s = self.clone();
        s.constants.cache_capacity = capacity;
        s
    }

    /// Same scenario with services reordered: new service `i` is old
    /// service `perm[i]`.
    pub fn permute_services(&self, perm: &[usize]) -> Result<Self> {
        let services = perm.iter().map(|&i| self.services[i]).collect();
        let mut constants = self.constants.clone();
        constants.tx_power_bs = perm.iter().map(|&i| self.constants.tx_power_bs[i]).collect();
        let mut prefs = self.preferences.clone();
        prefs.pmf = perm.iter().map(|&i| self.preferences.pmf[i].clone()).collect();
        Scenario::new(
            services,
            constants,
            prefs,
            self.channels.uplink.clone(),
            self.channels.downlink.clone(),
        )
    }
}

/// Indices sorted by descending value, ties by lower index.
fn descending_order(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx
}

/// Zipf PMF over `count` services: `P_l = rank(l)^-skew / sum_j j^-skew`
/// with `rank(l) = ranks[l] + 1`.
pub fn zipf_pmf(count: usize, skew: f64, ranks: &[usize]) -> Result<Vec<f64>> {
    if count == 0 {
        return Err(invalid("count", "need at least one service"));
    }
    if !(skew >= 0.0) {
        return Err(invalid("zipf_skew", "must be >= 0"));
    }
    if ranks.len() != count {
        return Err(Error::Dimension("rank permutation length".into()));
    }
    let mut seen = vec![false; count];
    for &r in ranks {
        if r >= count || seen[r] {
            return Err(invalid("rank_permutation", "not a permutation"));
        }
        seen[r] = true;
    }
    let norm: f64 = (1..=count).map(|j| (j as f64).powf(-skew)).sum();
    Ok(ranks
        .iter()
        .map(|&r| ((r + 1) as f64).powf(-skew) / norm)
        .collect())
}

/// `Pr(|K_l| = 0) = prod_k (1 - P_{l,k})`.
pub fn prob_no_request(column: &[f64]) -> f64 {
    column.iter().map(|p| 1.0 - p).product()
}

/// Probability that location `k` (uplink-sorted) is the one selected to
/// offload: nobody with a better uplink asked, `k` did.
pub fn prob_offload_select(column: &[f64], k: usize) -> f64 {
    column[..k].iter().map(|p| 1.0 - p).product::<f64>() * column[k]
}

/// Probability that the broadcast rate is set by downlink position `k`:
/// position `k` asked and no position with a worse downlink did. `column`
/// is indexed by downlink position.
pub fn prob_broadcast_rate(column: &[f64], k: usize) -> f64 {
    column[k + 1..].iter().map(|p| 1.0 - p).product::<f64>() * column[k]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PreferenceKind {
    /// Zipf profile with an independent random rank permutation per location,
    /// drawn once from `profile_seed`.
    #[default]
    ZipfRandom,
    /// Zipf profile with the same ranking at every location.
    ZipfIdentity,
    /// Location `k` requests only service `k` (requires L = K).
    OneHot,
}

/// Distribution parameters for scenario sampling, with unit-suffixed keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub num_services: usize,
    pub num_locations: usize,
    pub distance_km: f64,
    /// Per-location distances; overrides `distance_km` when present.
    pub distances_km: Option<Vec<f64>>,
    pub ref_gain_db: f64,
    pub ref_distance_km: f64,
    pub pathloss_exponent: f64,
    pub noise_psd_dbm_per_hz: f64,
    pub bandwidth_offload_mhz: f64,
    pub bandwidth_download_mhz: f64,
    pub input_mbits: [f64; 2],
    pub output_mbits: [f64; 2],
    pub compute_cycles_per_bit: f64,
    pub max_core_freq_ghz: f64,
    pub capacitance: f64,
    pub tx_power_user_w: f64,
    pub tx_power_bs_w: f64,
    /// `beta_0`; every location gets `(1 - beta_0) / K`.
    pub weight_bs: f64,
    pub deadline_s: f64,
    pub cache_capacity_mbits: f64,
    pub zipf_skew: f64,
    pub preference: PreferenceKind,
    pub profile_seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            num_services: 10,
            num_locations: 5,
            distance_km: 0.03,
            distances_km: None,
            ref_gain_db: -128.1,
            ref_distance_km: 1.0,
            pathloss_exponent: 2.6,
            noise_psd_dbm_per_hz: -169.0,
            bandwidth_offload_mhz: 10.0,
            bandwidth_download_mhz: 10.0,
            input_mbits: [7.0, 7.5],
            output_mbits: [21.0, 22.0],
            compute_cycles_per_bit: 1000.0,
            max_core_freq_ghz: 10.0,
            capacitance: 1e-27,
            tx_power_user_w: 0.25,
            tx_power_bs_w: 1.0,
            weight_bs: 0.5,
            deadline_s: 2.8,
            cache_capacity_mbits: 128.0,
            zipf_skew: 0.9,
            preference: PreferenceKind::ZipfRandom,
            profile_seed: 2020,
        }
    }
}

impl ScenarioConfig {
    /// Special-case defaults: one unique service per location, `K = L = 10`.
    pub fn special_case() -> Self {
        Self {
            num_services: 10,
            num_locations: 10,
            preference: PreferenceKind::OneHot,
            deadline_s: 3.5,
            ..Self::default()
        }
    }

    pub fn distances(&self) -> Vec<f64> {
        self.distances_km
            .clone()
            .unwrap_or_else(|| vec![self.distance_km; self.num_locations])
    }

    pub fn noise_psd_w_per_hz(&self) -> f64 {
        10f64.powf((self.noise_psd_dbm_per_hz - 30.0) / 10.0)
    }

    pub fn ref_gain(&self) -> f64 {
        10f64.powf(self.ref_gain_db / 10.0)
    }

    /// Mean normalized gain `A_0 (d_0/d_k)^gamma / (N_0 B)` per location.
    pub fn mean_gains(&self, bandwidth_hz: f64) -> Vec<f64> {
        let noise = self.noise_psd_w_per_hz() * bandwidth_hz;
        self.distances()
            .iter()
            .map(|d| self.ref_gain() * (self.ref_distance_km / d).powf(self.pathloss_exponent) / noise)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_services == 0 || self.num_locations == 0 {
            return Err(invalid("num_services", "need at least one service and location"));
        }
        let d = self.distances();
        if d.len() != self.num_locations {
            return Err(Error::Dimension("distances_km length must equal num_locations".into()));
        }
        if d.iter().any(|&x| !(x > 0.0)) {
            return Err(invalid("distance_km", "distances must be > 0"));
        }
        for (name, v) in [
            ("bandwidth_offload_mhz", self.bandwidth_offload_mhz),
            ("bandwidth_download_mhz", self.bandwidth_download_mhz),
            ("ref_distance_km", self.ref_distance_km),
            ("pathloss_exponent", self.pathloss_exponent),
            ("compute_cycles_per_bit", self.compute_cycles_per_bit),
            ("max_core_freq_ghz", self.max_core_freq_ghz),
            ("capacitance", self.capacitance),
            ("tx_power_user_w", self.tx_power_user_w),
            ("tx_power_bs_w", self.tx_power_bs_w),
            ("deadline_s", self.deadline_s),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(name, format!("must be finite and > 0, got {v}")));
            }
        }
        for (name, [lo, hi]) in [("input_mbits", self.input_mbits), ("output_mbits", self.output_mbits)] {
            if !(lo > 0.0 && lo <= hi) {
                return Err(invalid(name, format!("need 0 < lo <= hi, got [{lo}, {hi}]")));
            }
        }
        if !(0.0..=1.0).contains(&self.weight_bs) {
            return Err(invalid("weight_bs", "must lie in [0, 1]"));
        }
        if !(self.cache_capacity_mbits >= 0.0) {
            return Err(invalid("cache_capacity_mbits", "must be >= 0"));
        }
        if !(self.zipf_skew >= 0.0) {
            return Err(invalid("zipf_skew", "must be >= 0"));
        }
        if self.preference == PreferenceKind::OneHot && self.num_services != self.num_locations {
            return Err(invalid("preference", "one_hot requires num_services == num_locations"));
        }
        Ok(())
    }

    /// Fixed preference profile (original location order).
    pub fn preference_profile(&self) -> Result<PreferenceProfile> {
        let (l, k) = (self.num_services, self.num_locations);
        match self.preference {
            PreferenceKind::OneHot => Ok(PreferenceProfile::one_hot(l)),
            PreferenceKind::ZipfIdentity => {
                PreferenceProfile::zipf(&vec![self.zipf_skew; k], vec![(0..l).collect(); k])
            }
            PreferenceKind::ZipfRandom => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.profile_seed);
                let ranks = (0..k)
                    .map(|_| {
                        let mut r: Vec<usize> = (0..l).collect();
                        r.shuffle(&mut rng);
                        r
                    })
                    .collect();
                PreferenceProfile::zipf(&vec![self.zipf_skew; k], ranks)
            }
        }
    }

    pub fn constants(&self) -> PhysicalConstants {
        let k = self.num_locations;
        PhysicalConstants {
            bandwidth_offload: self.bandwidth_offload_mhz * MHZ,
            bandwidth_download: self.bandwidth_download_mhz * MHZ,
            noise_psd: self.noise_psd_w_per_hz(),
            ref_gain: self.ref_gain(),
            ref_distance: self.ref_distance_km,
            pathloss_exponent: self.pathloss_exponent,
            capacitance: self.capacitance,
            max_core_freq: self.max_core_freq_ghz * GHZ,
            cache_capacity: self.cache_capacity_mbits * MBIT,
            tx_power_user: vec![self.tx_power_user_w; k],
            tx_power_bs: vec![self.tx_power_bs_w; self.num_services],
            weight_bs: self.weight_bs,
            weight_user: vec![(1.0 - self.weight_bs) / k as f64; k],
        }
    }
}

/// Draws scenarios that share one fixed preference profile; only channels
/// and task sizes vary between draws.
#[derive(Debug, Clone)]
pub struct ScenarioSampler {
    config: ScenarioConfig,
    preferences: PreferenceProfile,
    constants: PhysicalConstants,
    uplink_mean: Vec<f64>,
    downlink_mean: Vec<f64>,
}

impl ScenarioSampler {
    pub fn new(config: ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let preferences = config.preference_profile()?;
        let constants = config.constants();
        let uplink_mean = config.mean_gains(constants.bandwidth_offload);
        let downlink_mean = config.mean_gains(constants.bandwidth_download);
        Ok(Self {
            config,
            preferences,
            constants,
            uplink_mean,
            downlink_mean,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn preferences(&self) -> &PreferenceProfile {
        &self.preferences
    }

    pub fn uplink_mean(&self) -> &[f64] {
        &self.uplink_mean
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Scenario> {
        let c = &self.config;
        let uplink: Vec<f64> = self
            .uplink_mean
            .iter()
            .map(|m| m * rng.sample::<f64, _>(Exp1))
            .collect();
        let downlink: Vec<f64> = self
            .downlink_mean
            .iter()
            .map(|m| m * rng.sample::<f64, _>(Exp1))
            .collect();
        let q = Uniform::new_inclusive(c.input_mbits[0] * MBIT, c.input_mbits[1] * MBIT);
        let r = Uniform::new_inclusive(c.output_mbits[0] * MBIT, c.output_mbits[1] * MBIT);
        let inputs: Vec<f64> = (0..c.num_services).map(|_| rng.sample(q)).collect();
        let outputs: Vec<f64> = (0..c.num_services).map(|_| rng.sample(r)).collect();
        let services = inputs
            .into_iter()
            .zip(outputs)
            .map(|(qb, rb)| ServiceSpec::new(c.compute_cycles_per_bit, qb, rb, c.deadline_s))
            .collect::<Result<Vec<_>>>()?;
        Scenario::new(
            services,
            self.constants.clone(),
            self.preferences.clone(),
            uplink,
            downlink,
        )
    }

    pub fn sample_seeded(&self, seed: u64) -> Result<Scenario> {
        self.sample(&mut ChaCha8Rng::seed_from_u64(seed))
    }
}

pub fn sample_scenario(config: &ScenarioConfig, seed: u64) -> Result<Scenario> {
    ScenarioSampler::new(config.clone())?.sample_seeded(seed)
}

/// One request per location, drawn from that location's PMF column.
pub fn sample_requests<R: Rng + ?Sized>(prefs: &PreferenceProfile, rng: &mut R) -> RequestRealization {
    let (l_count, k_count) = (prefs.num_services(), prefs.num_locations());
    let mut requests = vec![vec![false; k_count]; l_count];
    for k in 0..k_count {
        let column = prefs.column(k);
        let dist = WeightedIndex::new(&column).expect("validated pmf column");
        requests[dist.sample(rng)][k] = true;
    }
    RequestRealization { requests }
}
