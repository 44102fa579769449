use std::path::Path;

use chainsim_cli::{execute, load_config};
use chainsim_core::stats::{self, RunKey};

fn baseline() -> chainsim_core::ScenarioConfig {
    load_config(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/valid/single_worker_baseline.json"))
        .unwrap()
}

#[test]
fn mean_latency_grows_with_rate_on_single_worker_baseline() {
    let mut base = baseline();
    base.replications = 10;
    base.workload.horizon = 100.0;
    let points: Vec<_> = [10.0, 30.0, 50.0, 70.0, 85.0]
        .iter()
        .map(|&r| {
            let mut c = base.clone();
            c.workload.apps[0].rate = r;
            (r.to_string(), c)
        })
        .collect();
    let runs = execute(&points, None).unwrap();
    let mut means = Vec::new();
    for p in 0..points.len() {
        let per_seed: Vec<f64> = runs
            .iter()
            .filter(|o| o.key.point == p)
            .map(|o| stats::summarize(o.key.clone(), &o.invocations, &o.workers).mean_latency_s.unwrap())
            .collect();
        assert_eq!(per_seed.len(), 10);
        means.push(per_seed.iter().sum::<f64>() / per_seed.len() as f64);
    }
    assert!(means.windows(2).all(|w| w[0] <= w[1]), "{means:?}");
}

#[test]
fn parallel_execution_matches_sequential_runs() {
    let mut cfg = baseline();
    cfg.replications = 4;
    cfg.workload.horizon = 20.0;
    let parallel = execute(&[("base".into(), cfg.clone())], Some(900)).unwrap();
    for (r, out) in parallel.iter().enumerate() {
        let seed = 900 + r as u64;
        assert_eq!(out.key.replication, r as u32);
        assert_eq!(out.key.seed, seed);
        let log = chainsim_core::run(&cfg.build(seed).unwrap()).unwrap();
        assert_eq!(out.invocations, stats::invocation_rows(&log));
        assert_eq!(out.workers, stats::worker_rows(&log));
        let key = RunKey {
            point: 0,
            label: "base".into(),
            replication: r as u32,
            seed,
            dir: out.key.dir.clone(),
            horizon_s: 20.0,
        };
        assert_eq!(out.key, key);
    }
}

#[test]
fn seed_wraps_at_u64_max() {
    let mut cfg = baseline();
    cfg.replications = 2;
    cfg.workload.horizon = 1.0;
    let runs = execute(&[("base".into(), cfg)], Some(u64::MAX)).unwrap();
    assert_eq!(runs[0].key.seed, u64::MAX);
    assert_eq!(runs[1].key.seed, 0);
}
