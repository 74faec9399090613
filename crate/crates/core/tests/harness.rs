use std::collections::HashSet;

use edgecache::baselines::Policy;
use edgecache::dl::LossRow;
use edgecache::harness::{replication_seed, run_sweep, summarize, write_csv, write_loss_trace, SweepParameter, SweepSpec};
use edgecache::scenario::{ScenarioConfig, ScenarioSampler, MBIT};
use edgecache::seed::derive_seed;
use edgecache::solver::SolverOptions;

fn base() -> ScenarioConfig {
    ScenarioConfig {
        num_services: 4,
        num_locations: 3,
        deadline_s: 3.2,
        cache_capacity_mbits: 50.0,
        ..Default::default()
    }
}

fn csv_bytes(spec: &SweepSpec, threads: usize) -> Vec<u8> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    let rows = pool
        .install(|| run_sweep(spec, &base(), &SolverOptions::default(), 14, None, 42))
        .unwrap();
    let mut out = Vec::new();
    write_csv(&mut out, &rows).unwrap();
    out
}

#[test]
fn derived_seeds_do_not_collide() {
    let mut seen = HashSet::with_capacity(2_000_000);
    for r in 0..1_000_000usize {
        assert!(seen.insert(replication_seed(0, r)));
    }
    for master in 0..1_000_000u64 {
        assert!(seen.insert(derive_seed(master, "init")));
    }
}

#[test]
fn sweep_output_is_byte_identical_without_timing() {
    let spec = SweepSpec {
        parameter: SweepParameter::DeadlineS,
        values: vec![2.6, 3.4],
        replications: 3,
        policies: vec![Policy::Popular, Policy::Greedy, Policy::All],
        timing: false,
    };
    let one = csv_bytes(&spec, 1);
    let four = csv_bytes(&spec, 4);
    assert_eq!(one, four);
    assert_eq!(one, csv_bytes(&spec, 4));
    let text = String::from_utf8(one).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 3 * 3);
    let wall = text.lines().next().unwrap().split(',').position(|c| c == "wall_time_s").unwrap();
    assert!(text.lines().skip(1).all(|l| l.split(',').nth(wall) == Some("0.0")));
}

#[test]
fn grid_points_share_replication_scenarios() {
    let spec = SweepSpec {
        parameter: SweepParameter::WeightBs,
        values: vec![0.2, 0.8],
        replications: 2,
        policies: vec![Policy::All],
        timing: false,
    };
    let rows = run_sweep(&spec, &base(), &SolverOptions::default(), 14, None, 5).unwrap();
    for r in 0..2 {
        let seeds: HashSet<u64> = rows.iter().filter(|x| x.replication == r).map(|x| x.seed).collect();
        assert_eq!(seeds.len(), 1);
    }
    let a = ScenarioSampler::new(SweepParameter::WeightBs.apply(&base(), 0.2).unwrap()).unwrap();
    let b = ScenarioSampler::new(SweepParameter::WeightBs.apply(&base(), 0.8).unwrap()).unwrap();
    let seed = replication_seed(5, 0);
    assert_eq!(
        a.sample_seeded(seed).unwrap().channels(),
        b.sample_seeded(seed).unwrap().channels()
    );
}

#[test]
fn large_cache_makes_every_policy_cache_everything() {
    let cfg = base();
    let ceiling = cfg.num_services as f64 * cfg.output_mbits[1];
    let spec = SweepSpec {
        parameter: SweepParameter::CacheCapacityMbits,
        values: vec![ceiling, 2.0 * ceiling],
        replications: 2,
        policies: vec![Policy::Popular, Policy::Greedy, Policy::Optimal, Policy::All],
        timing: false,
    };
    let rows = run_sweep(&spec, &cfg, &SolverOptions::default(), 14, None, 9).unwrap();
    assert!(rows.iter().all(|r| r.is_ok()));
    for r in &rows {
        assert_eq!(r.decision, "1".repeat(cfg.num_services), "{} at {}", r.policy, r.value);
    }
    for s in summarize(&rows, true).chunks(4) {
        let all = s.iter().find(|x| x.policy == "all").unwrap().mean_kj;
        for x in s {
            assert!((x.mean_kj - all).abs() <= 1e-6 * all);
        }
    }
    let sampled = ScenarioSampler::new(cfg).unwrap().sample_seeded(0).unwrap();
    assert!(sampled.total_output_bits() <= ceiling * MBIT);
}

#[test]
fn failed_runs_keep_a_row() {
    let spec = SweepSpec {
        parameter: SweepParameter::DeadlineS,
        values: vec![0.05, 3.2],
        replications: 2,
        policies: vec![Policy::No, Policy::Learned],
        timing: false,
    };
    let rows = run_sweep(&spec, &base(), &SolverOptions::default(), 14, None, 1).unwrap();
    assert_eq!(rows.len(), 2 * 2 * 2);
    for r in rows.iter().filter(|r| r.value == 0.05 || r.policy == "learned") {
        assert!(!r.is_ok());
        assert!(r.weighted_energy_kj.is_nan());
        assert!(!r.error.is_empty());
    }
    let summary = summarize(&rows, false);
    let ok = summary.iter().find(|x| x.value == 3.2 && x.policy == "no").unwrap();
    assert_eq!(ok.replications_ok, 2);
    let common = summarize(&rows, true);
    assert!(common.iter().all(|x| x.replications_ok == 0));
}

#[test]
fn loss_trace_has_exactly_three_columns() {
    let mut out = Vec::new();
    write_loss_trace(&mut out, &[]).unwrap();
    assert_eq!(String::from_utf8(out).unwrap(), "iteration,train_loss,test_loss\n");
    let rows = [
        LossRow { iteration: 10, train_loss: 0.5, test_loss: 0.25 },
        LossRow { iteration: 20, train_loss: 0.4, test_loss: f64::NAN },
    ];
    let mut out = Vec::new();
    write_loss_trace(&mut out, &rows).unwrap();
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines, ["iteration,train_loss,test_loss", "10,0.5,0.25", "20,0.4,NaN"]);
}

#[test]
fn result_rows_carry_the_schema_version_first() {
    let spec = SweepSpec {
        parameter: SweepParameter::NumServices,
        values: vec![3.0],
        replications: 1,
        policies: vec![Policy::All],
        timing: false,
    };
    let rows = run_sweep(&spec, &base(), &SolverOptions::default(), 14, None, 0).unwrap();
    let mut out = Vec::new();
    write_csv(&mut out, &rows).unwrap();
    let text = String::from_utf8(out).unwrap();
    let header = text.lines().next().unwrap();
    assert!(header.starts_with("schema_version,parameter,value,replication,seed,policy,status,decision,weighted_energy_kj"));
    assert!(text.lines().nth(1).unwrap().starts_with("1,num_services,3.0,0,"));
}

#[test]
fn non_integer_library_sizes_are_rejected() {
    assert!(SweepParameter::NumServices.apply(&base(), 2.5).is_err());
    assert!(SweepParameter::NumServices.apply(&base(), 0.0).is_err());
}
