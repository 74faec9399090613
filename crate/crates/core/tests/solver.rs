use edgecache::energy::{check_feasible, expected_energy, offload_rate, CachingDecision};
use edgecache::scenario::{sample_scenario, Scenario, ScenarioConfig, MBIT};
use edgecache::solver::{dual_function, kkt_residuals, solve_allocation, DualMethod, DualPoint, SolverOptions, Status};
use proptest::prelude::*;

fn small(services: usize, locations: usize, deadline: f64, seed: u64) -> Scenario {
    let cfg = ScenarioConfig {
        num_services: services,
        num_locations: locations,
        deadline_s: deadline,
        ..Default::default()
    };
    sample_scenario(&cfg, seed).unwrap()
}

/// Largest relative gap between bits and rate times time over every live
/// transfer of the allocation.
fn rate_gap(s: &Scenario, d: &CachingDecision, a: &edgecache::ResourceAllocation) -> f64 {
    let c = s.constants();
    let mut worst = 0.0f64;
    for l in 0..s.num_services() {
        let svc = s.service(l);
        for k in 0..s.num_locations() {
            if !d.is_cached(l) && s.offload_prob(l, k) > 0.0 {
                let r = offload_rate(a.alpha_off[l], c.tx_power_user[k], s.channels().uplink[k], c.bandwidth_offload);
                worst = worst.max((r * a.t_off[l][k] - svc.input_bits).abs() / svc.input_bits);
            }
            if s.broadcast_prob(l, k) > 0.0 {
                let snr = s.broadcast_snr(l, k);
                let r = offload_rate(a.alpha_dl[l], snr, 1.0, c.bandwidth_download);
                worst = worst.max((r * a.t_dl[l][k] - svc.output_bits).abs() / svc.output_bits);
            }
        }
    }
    worst
}

#[test]
fn caching_everything_leaves_only_download() {
    let s = small(3, 2, 2.8, 1);
    let d = CachingDecision::all(3);
    let r = solve_allocation(&s, &d, &SolverOptions::default()).unwrap();
    assert_eq!(r.status, Status::Optimal);
    let e = r.energy.unwrap();
    assert_eq!(e.compute, 0.0);
    assert!(e.offload.iter().all(|&v| v == 0.0));
    let beta0 = s.constants().weight_bs;
    assert!((e.weighted_total - beta0 * e.download).abs() <= 1e-12 * e.weighted_total);
}

#[test]
fn single_pair_matches_grid_search() {
    let s = small(1, 1, 2.0, 4);
    let c = s.constants().clone();
    let svc = *s.service(0);
    let r = solve_allocation(&s, &CachingDecision::none(1), &SolverOptions::default()).unwrap();
    assert!(r.is_optimal());
    // Transfers at their rate limits, computing in the remaining time.
    let energy = |a: f64, b: f64| {
        let t_off = svc.input_bits / offload_rate(a, c.tx_power_user[0], s.channels().uplink[0], c.bandwidth_offload);
        let t_dl = svc.output_bits / offload_rate(b, s.broadcast_snr(0, 0), 1.0, c.bandwidth_download);
        let t_c = svc.deadline - t_off - t_dl;
        if t_c < svc.cycles() / c.max_core_freq {
            return f64::INFINITY;
        }
        c.weight_bs * (c.capacitance * svc.cycles().powi(3) / (t_c * t_c) + c.tx_power_bs[0] * t_dl)
            + c.weight_user[0] * c.tx_power_user[0] * t_off
    };
    let n = 400;
    let mut best = f64::INFINITY;
    for i in 1..=n {
        for j in 1..=n {
            best = best.min(energy(i as f64 / n as f64, j as f64 / n as f64));
        }
    }
    assert!((r.objective - best).abs() <= 1e-3 * best, "{} vs {best}", r.objective);
}

#[test]
fn deadline_below_compute_floor_is_infeasible() {
    let mut s = small(1, 1, 2.8, 0);
    let floor = s.service(0).cycles() / s.constants().max_core_freq;
    s = small(1, 1, 0.5 * floor, 0);
    let r = solve_allocation(&s, &CachingDecision::none(1), &SolverOptions::default()).unwrap();
    assert_eq!(r.status, Status::Infeasible);
}

#[test]
fn stretched_compute_time_breaks_stationarity() {
    let s = small(3, 2, 3.0, 2);
    let d = CachingDecision::new(vec![false, true, false]);
    let r = solve_allocation(&s, &d, &SolverOptions::default()).unwrap();
    assert!(r.is_optimal());
    let duals = r.duals.clone().unwrap();
    assert!(kkt_residuals(&s, &d, &r.allocation, &duals).unwrap().max_stationarity() <= 1e-4);
    let mut a = r.allocation.clone();
    a.t_c[0] *= 1.5;
    assert!(kkt_residuals(&s, &d, &a, &duals).unwrap().max_stationarity() > 1e-2);
}

#[test]
fn both_dual_methods_agree() {
    for seed in 0..3 {
        let s = small(2, 2, 3.0, seed);
        let d = CachingDecision::new(vec![seed == 1, false]);
        let a = solve_allocation(&s, &d, &SolverOptions::default()).unwrap();
        let full = SolverOptions {
            method: DualMethod::Full,
            ..Default::default()
        };
        let b = solve_allocation(&s, &d, &full).unwrap();
        assert!(a.is_optimal() && b.is_optimal());
        assert!((a.objective - b.objective).abs() <= 1e-3 * a.objective);
    }
}

#[test]
fn service_order_does_not_matter() {
    let s = small(3, 2, 3.0, 6);
    let d = CachingDecision::new(vec![true, false, false]);
    let p = s.permute_services(&[2, 0, 1]).unwrap();
    let dp = CachingDecision::new(vec![false, true, false]);
    let opts = SolverOptions::default();
    let a = solve_allocation(&s, &d, &opts).unwrap().objective;
    let b = solve_allocation(&p, &dp, &opts).unwrap().objective;
    assert!((a - b).abs() <= 1e-6 * a, "{a} vs {b}");
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn optimal_solves_are_feasible_tight_and_stationary(
        services in 1usize..=3,
        locations in 1usize..=2,
        deadline in 2.2f64..4.0,
        mask in 0u64..8,
        seed in 0u64..1000,
    ) {
        let s = small(services, locations, deadline, seed);
        let d = CachingDecision::from_mask(mask & ((1 << services) - 1), services);
        let r = solve_allocation(&s, &d, &SolverOptions::default()).unwrap();
        prop_assume!(r.status != Status::Infeasible);
        prop_assert_eq!(r.status, Status::Optimal);
        prop_assert!(r.gap() <= 1e-3);
        prop_assert!(check_feasible(&s, &d, &r.allocation).allocation_feasible());
        let e = expected_energy(&s, &d, &r.allocation).unwrap().weighted_total;
        prop_assert!((e - r.objective).abs() <= 1e-9 * e);
        prop_assert!(rate_gap(&s, &d, &r.allocation) <= 1e-4);
        let k = kkt_residuals(&s, &d, &r.allocation, r.duals.as_ref().unwrap()).unwrap();
        prop_assert!(k.max_stationarity() <= 1e-4, "{:?}", k);
    }

    #[test]
    fn caching_one_more_service_never_costs_energy(
        services in 2usize..=3,
        mask in 0u64..8,
        extra in 0usize..3,
        seed in 0u64..1000,
    ) {
        let s = small(services, 2, 3.0, seed);
        let extra = extra % services;
        let d = CachingDecision::from_mask(mask & ((1 << services) - 1), services);
        prop_assume!(!d.is_cached(extra));
        let mut more = d.clone();
        more.set(extra, true);
        let opts = SolverOptions::default();
        let a = solve_allocation(&s, &d, &opts).unwrap();
        prop_assume!(a.is_optimal());
        let b = solve_allocation(&s, &more, &opts).unwrap();
        prop_assert!(b.is_optimal());
        prop_assert!(b.objective <= a.objective * (1.0 + 1e-3));
    }

    #[test]
    fn dual_values_bound_the_optimum(
        scale in prop::collection::vec(0.01f64..10.0, 6),
        seed in 0u64..1000,
    ) {
        let s = small(2, 2, 3.0, seed);
        let d = CachingDecision::new(vec![false, true]);
        let r = solve_allocation(&s, &d, &SolverOptions::default()).unwrap();
        prop_assume!(r.is_optimal());
        let e = r.objective;
        let mut p = DualPoint::zeros(2, 2);
        p.mu = vec![scale[0] * e, scale[1] * e];
        p.eta = vec![0.5 * scale[0] * e, 0.0];
        p.omega[0] = vec![scale[2] * 1e-6 * e, scale[3] * 1e-6 * e];
        p.gamma[1] = vec![scale[4] * 1e-6 * e, scale[5] * 1e-6 * e];
        p.sigma = scale[2] * e;
        p.epsilon = scale[3] * e;
        let g = dual_function(&p, &s, &d).unwrap().value;
        prop_assert!(g <= e * (1.0 + 1e-9));
    }
}

#[test]
fn outputs_are_in_bits_and_seconds() {
    let s = small(2, 1, 2.8, 3);
    for l in 0..2 {
        let q = s.service(l).input_bits / MBIT;
        assert!((7.0..=7.5).contains(&q));
    }
}
