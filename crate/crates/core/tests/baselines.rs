use edgecache::baselines::{
    all_caching, greedy_caching, no_caching, optimal_caching, popular_caching, popular_decision, popularity_order,
    run_policy, Policy,
};
use edgecache::energy::{service_energies, CachingDecision};
use edgecache::scenario::{sample_scenario, Scenario, ScenarioConfig};
use edgecache::solver::{solve_allocation, SolverOptions};

fn scenario(services: usize, deadline: f64, seed: u64) -> Scenario {
    let cfg = ScenarioConfig {
        num_services: services,
        deadline_s: deadline,
        ..Default::default()
    };
    sample_scenario(&cfg, seed).unwrap()
}

fn opts() -> SolverOptions {
    SolverOptions::default()
}

#[test]
fn policies_are_ordered() {
    for seed in 0..4 {
        let s = scenario(6, 3.5, seed);
        let all = all_caching(&s, &opts()).unwrap().total();
        let best = optimal_caching(&s, &opts(), 14).unwrap().total();
        let slack = 1e-3 * best;
        assert!(all <= best + slack, "seed {seed}: all {all} > optimal {best}");
        for p in [Policy::Greedy, Policy::Popular, Policy::No] {
            if let Ok(r) = run_policy(&s, p, &opts(), 14) {
                assert!(best <= r.total() + slack, "seed {seed}: optimal {best} > {p} {}", r.total());
            }
        }
        if let (Ok(g), Ok(n)) = (greedy_caching(&s, &opts()), no_caching(&s, &opts())) {
            assert!(g.total() <= n.total() + slack);
        }
    }
}

#[test]
fn zero_capacity_caches_nothing() {
    let s = scenario(5, 3.5, 3).with_cache_capacity(0.0);
    let g = greedy_caching(&s, &opts()).unwrap();
    assert_eq!(g.decision.count(), 0);
    assert_eq!(popular_decision(&s).count(), 0);
    let n = no_caching(&s, &opts()).unwrap();
    assert!((g.total() - n.total()).abs() <= 1e-12 * n.total());
}

#[test]
fn room_for_one_result_holds_the_most_expensive_service() {
    let base = scenario(5, 3.5, 7);
    let none = CachingDecision::none(5);
    let r = solve_allocation(&base, &none, &opts()).unwrap();
    let e = service_energies(&base, &none, &r.allocation).unwrap();
    let top = (0..5).max_by(|&i, &j| e[i].total_cmp(&e[j])).unwrap();
    let s = base.with_cache_capacity(base.service(top).output_bits);
    let g = greedy_caching(&s, &opts()).unwrap();
    let expected: Vec<bool> = (0..5).map(|l| l == top).collect();
    assert_eq!(g.decision.bits(), expected.as_slice());
}

#[test]
fn single_service_is_always_cached_when_it_fits() {
    for seed in 0..5 {
        let s = scenario(1, 3.0, seed);
        let r = optimal_caching(&s, &opts(), 14).unwrap();
        assert_eq!(r.decision.bits(), &[true]);
    }
}

#[test]
fn ample_capacity_caches_everything() {
    let base = scenario(5, 3.5, 11);
    let s = base.with_cache_capacity(base.total_output_bits());
    assert!(greedy_caching(&s, &opts()).unwrap().decision.bits().iter().all(|&c| c));
    assert!(popular_decision(&s).bits().iter().all(|&c| c));
    let best = optimal_caching(&s, &opts(), 14).unwrap();
    let all = all_caching(&s, &opts()).unwrap();
    assert_eq!(best.decision, all.decision);
    assert!((best.total() - all.total()).abs() <= 1e-9 * all.total());
}

#[test]
fn popular_stops_at_the_first_service_that_does_not_fit() {
    for seed in 0..10 {
        let s = scenario(10, 3.5, seed);
        let d = popular_decision(&s);
        let order = popularity_order(&s);
        let k = d.count();
        assert!(order[..k].iter().all(|&l| d.is_cached(l)));
        assert!(d.fits(&s));
        if k < order.len() {
            let mut more = d.clone();
            more.set(order[k], true);
            assert!(!more.fits(&s));
        }
    }
}

#[test]
fn popularity_follows_request_probability() {
    let s = scenario(10, 3.5, 2);
    let order = popularity_order(&s);
    for w in order.windows(2) {
        assert!(s.request_prob(w[0]) >= s.request_prob(w[1]));
    }
}

#[test]
fn exhaustive_search_is_equivariant_under_service_relabeling() {
    let s = scenario(6, 3.5, 5);
    let perm = [3, 0, 5, 1, 4, 2];
    let p = s.permute_services(&perm).unwrap();
    let a = optimal_caching(&s, &opts(), 14).unwrap();
    let b = optimal_caching(&p, &opts(), 14).unwrap();
    assert!((a.total() - b.total()).abs() <= 1e-6 * a.total());
    for (i, &old) in perm.iter().enumerate() {
        assert_eq!(b.decision.is_cached(i), a.decision.is_cached(old));
    }
}

#[test]
fn exhaustive_search_refuses_large_libraries() {
    let s = scenario(10, 3.5, 0);
    assert!(optimal_caching(&s, &opts(), 8).is_err());
}

#[test]
fn popular_result_matches_its_decision() {
    let s = scenario(8, 3.5, 4);
    let r = popular_caching(&s, &opts()).unwrap();
    assert_eq!(r.decision, popular_decision(&s));
    let direct = solve_allocation(&s, &r.decision, &opts()).unwrap();
    assert!((direct.objective - r.total()).abs() <= 1e-9 * r.total());
}
