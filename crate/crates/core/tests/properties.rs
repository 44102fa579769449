use std::collections::{BTreeMap, BTreeSet};

use chainsim_core::dispatch::{choose_worker, estimate_completion, DispatchContext, PolicyKind, RrState};
use chainsim_core::engine::{AppSpec, EventKind, Scenario, Simulation};
use chainsim_core::state::{StateMode, StateRegistry};
use chainsim_core::topology::{compare_paths, LinkSpec, NodeId, NodeSpec, RouteTable, Topology};
use chainsim_core::workflow::{
    chain_to_dag, critical_path_time, enabled_frontier, validate_dag, Assignment, ChainSpec, DagSpec, FunctionSpec,
    Workflow, WorkflowSpec,
};
use chainsim_core::workload::{AppLoad, Arrival, PayloadDist};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Connected random topology: a random spanning tree plus extra links.
/// Node 0 is a client; the rest are workers.
fn arb_topology(max_nodes: usize) -> impl Strategy<Value = Topology> {
    (2..=max_nodes).prop_flat_map(|n| {
        let parents = (1..n).map(|i| 0..i).collect::<Vec<_>>();
        let extra = prop::collection::vec((0..n, 0..n), 0..n * 2);
        let props = prop::collection::vec(0u32..5, n * 3);
        let rates = prop::collection::vec(prop::sample::select(vec![1e5, 1e6, 1e7]), n * 3);
        (Just(n), parents, extra, props, rates).prop_map(|(n, parents, extra, props, rates)| {
            let mut nodes = vec![NodeSpec::client(0)];
            nodes.extend((1..n as u32).map(|i| NodeSpec::worker(i, 1 + i % 2, 1e6 * f64::from(i))));
            let mut pairs = BTreeSet::new();
            for (i, p) in parents.into_iter().enumerate() {
                pairs.insert((p as u32, i as u32 + 1));
            }
            for (a, b) in extra {
                if a != b {
                    pairs.insert((a.min(b) as u32, a.max(b) as u32));
                }
            }
            let links = pairs
                .into_iter()
                .enumerate()
                .map(|(k, (a, b))| {
                    LinkSpec::new(a, b, f64::from(props[k % props.len()]) * 1e-3, rates[k % rates.len()])
                })
                .collect();
            Topology::new(nodes, links)
        })
    })
}

/// All simple paths from `src` to `dst`, each with its propagation summed in path order.
fn all_paths(t: &Topology, src: NodeId, dst: NodeId) -> Vec<(f64, Vec<NodeId>)> {
    fn dfs(t: &Topology, path: &mut Vec<NodeId>, prop: f64, dst: NodeId, out: &mut Vec<(f64, Vec<NodeId>)>) {
        let u = *path.last().unwrap();
        if u == dst {
            out.push((prop, path.clone()));
            return;
        }
        for l in &t.links {
            let v = if l.a == u {
                l.b
            } else if l.b == u {
                l.a
            } else {
                continue;
            };
            if !path.contains(&v) {
                path.push(v);
                dfs(t, path, prop + l.propagation, dst, out);
                path.pop();
            }
        }
    }
    let mut out = Vec::new();
    dfs(t, &mut vec![src], 0.0, dst, &mut out);
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn routes_match_brute_force(t in arb_topology(7)) {
        let rt = RouteTable::build(&t).unwrap();
        for a in &t.nodes {
            for b in &t.nodes {
                let (lo, hi) = (a.id.min(b.id), a.id.max(b.id));
                let best = all_paths(&t, lo, hi)
                    .into_iter()
                    .min_by(|x, y| compare_paths((x.0, &x.1), (y.0, &y.1)))
                    .unwrap();
                let r = rt.route(a.id, b.id).unwrap();
                let mut expected = best.1.clone();
                if a.id > b.id {
                    expected.reverse();
                }
                prop_assert_eq!(&r.path, &expected);
                prop_assert_eq!(r.propagation, best.0);
            }
        }
    }

    #[test]
    fn routing_metric_properties(t in arb_topology(7), n1 in 0.0f64..1e6, n2 in 0.0f64..1e6) {
        let rt = RouteTable::build(&t).unwrap();
        let (small, large) = (n1.min(n2), n1.max(n2));
        for a in &t.nodes {
            for b in &t.nodes {
                let d_ab = rt.transfer_delay(a.id, b.id, small).unwrap();
                prop_assert_eq!(d_ab, rt.transfer_delay(b.id, a.id, small).unwrap());
                prop_assert!(d_ab <= rt.transfer_delay(a.id, b.id, large).unwrap());
                for c in &t.nodes {
                    let ac = rt.route(a.id, c.id).unwrap().propagation;
                    let via = rt.route(a.id, b.id).unwrap().propagation + rt.route(b.id, c.id).unwrap().propagation;
                    prop_assert!(ac <= via + 1e-12);
                }
            }
        }
    }
}

/// Random single-source, single-sink DAG over vertices v00..v{n-1}.
fn arb_dag(max_vertices: usize) -> impl Strategy<Value = DagSpec> {
    (1..=max_vertices).prop_flat_map(|n| {
        let edge_bits = prop::collection::vec(any::<bool>(), n * n);
        let picks = prop::collection::vec(any::<prop::sample::Index>(), 2 * n);
        (Just(n), edge_bits, picks).prop_map(|(n, bits, picks)| {
            let name = |i: usize| format!("v{i:02}");
            let mut edges = BTreeSet::new();
            for i in 0..n {
                for j in i + 1..n {
                    if bits[i * n + j] && (j - i) <= 3 {
                        edges.insert((i, j));
                    }
                }
            }
            for (j, pick) in picks.iter().enumerate().take(n).skip(1) {
                if !edges.iter().any(|&(_, b)| b == j) {
                    edges.insert((pick.index(j), j));
                }
            }
            for i in 0..n.saturating_sub(1) {
                if !edges.iter().any(|&(a, _)| a == i) {
                    edges.insert((i, i + 1 + picks[n + i].index(n - i - 1)));
                }
            }
            DagSpec {
                app_id: "app".into(),
                vertices: (0..n).map(name).collect(),
                edges: edges.into_iter().map(|(a, b)| (name(a), name(b))).collect(),
                entry_payload: 1000.0,
            }
        })
    })
}

fn functions_for(d: &DagSpec, seed: u64) -> BTreeMap<String, FunctionSpec> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    d.vertices
        .iter()
        .map(|v| {
            let f = FunctionSpec::new(
                v.clone(),
                rng.random_range(0.0..1e6),
                rng.random_range(0.01..10.0),
                rng.random_range(0.0..2.0),
                if rng.random_bool(0.5) { rng.random_range(0.0..1e5) } else { 0.0 },
            );
            (v.clone(), f)
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generated_dags_are_valid(d in arb_dag(10)) {
        prop_assert!(validate_dag(&d).is_empty(), "{:?}", validate_dag(&d));
    }

    #[test]
    fn frontier_never_deadlocks(d in arb_dag(10), order in prop::collection::vec(any::<prop::sample::Index>(), 10)) {
        let mut completed = BTreeSet::new();
        for step in 0..d.vertices.len() {
            let frontier: Vec<String> = enabled_frontier(&d, &completed).unwrap().into_iter().collect();
            prop_assert!(!frontier.is_empty());
            completed.insert(frontier[order[step].index(frontier.len())].clone());
        }
        prop_assert_eq!(completed.len(), d.vertices.len());
        prop_assert!(enabled_frontier(&d, &completed).unwrap().is_empty());
    }

    #[test]
    fn frontier_matches_predecessor_rule(d in arb_dag(8), mask in any::<u16>()) {
        // Close the random set under predecessors so it is a valid partial execution.
        let mut completed: BTreeSet<String> =
            d.vertices.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, v)| v.clone()).collect();
        loop {
            let missing: Vec<String> = d.edges.iter()
                .filter(|(a, b)| completed.contains(b) && !completed.contains(a))
                .map(|(a, _)| a.clone()).collect();
            if missing.is_empty() { break; }
            completed.extend(missing);
        }
        let f = enabled_frontier(&d, &completed).unwrap();
        for v in &d.vertices {
            let preds_done = d.edges.iter().filter(|(_, b)| b == v).all(|(a, _)| completed.contains(a));
            prop_assert_eq!(f.contains(v), !completed.contains(v) && preds_done);
        }
    }

    #[test]
    fn critical_path_monotone_in_work(d in arb_dag(8), seed in any::<u64>(), which in any::<prop::sample::Index>(), extra in 0.0f64..1e6) {
        let t = Topology::new(
            vec![NodeSpec::client(0), NodeSpec::worker(1, 1, 1e6), NodeSpec::worker(2, 2, 2e6)],
            vec![LinkSpec::new(0, 1, 0.001, 1e6), LinkSpec::new(1, 2, 0.002, 1e7)],
        );
        let rt = RouteTable::build(&t).unwrap();
        let cat = functions_for(&d, seed);
        let a: Assignment = d.vertices.iter().enumerate().map(|(i, v)| (v.clone(), 1 + (i as u32 + seed as u32) % 2)).collect();
        let wf = Workflow::new(&WorkflowSpec::Dag(d.clone()), &cat).unwrap();
        let base = critical_path_time(&wf, &a, &rt, &StateRegistry::default(), StateMode::Embedded, 0, 1000.0).unwrap();

        let v = &d.vertices[which.index(d.vertices.len())];
        let mut heavier = cat.clone();
        heavier.get_mut(v).unwrap().fixed_ops += extra;
        let wf2 = Workflow::new(&WorkflowSpec::Dag(d.clone()), &heavier).unwrap();
        let t2 = critical_path_time(&wf2, &a, &rt, &StateRegistry::default(), StateMode::Embedded, 0, 1000.0).unwrap();
        prop_assert!(t2 >= base);

        let mut bigger_out = cat.clone();
        bigger_out.get_mut(v).unwrap().output_ratio += 0.5;
        let wf3 = Workflow::new(&WorkflowSpec::Dag(d.clone()), &bigger_out).unwrap();
        let t3 = critical_path_time(&wf3, &a, &rt, &StateRegistry::default(), StateMode::Embedded, 0, 1000.0).unwrap();
        prop_assert!(t3 >= base);

        let t4 = critical_path_time(&wf, &a, &rt, &StateRegistry::default(), StateMode::Embedded, 0, 1000.0 + extra).unwrap();
        prop_assert!(t4 >= base);
    }

    #[test]
    fn chain_round_trip_is_valid(n in 1usize..8) {
        let c = ChainSpec { app_id: "a".into(), functions: (0..n).map(|i| format!("f{i}")).collect(), entry_payload: 1.0 };
        let d = chain_to_dag(&c);
        prop_assert!(validate_dag(&d).is_empty());
        prop_assert_eq!(d.edges.len(), n - 1);
    }
}

#[test]
fn chain_critical_path_is_linear_sum() {
    let t = Topology::new(
        vec![NodeSpec::client(0), NodeSpec::worker(1, 1, 1e6), NodeSpec::worker(2, 1, 4e6)],
        vec![LinkSpec::new(0, 1, 0.001, 1e6), LinkSpec::new(1, 2, 0.003, 2e6)],
    );
    let rt = RouteTable::build(&t).unwrap();
    let fs = [
        FunctionSpec::new("a", 1000.0, 2.0, 0.5, 300.0),
        FunctionSpec::new("b", 5000.0, 1.0, 2.0, 0.0),
        FunctionSpec::new("c", 0.0, 10.0, 0.1, 700.0),
    ];
    let cat: BTreeMap<String, FunctionSpec> = fs.iter().map(|f| (f.id.clone(), f.clone())).collect();
    let chain =
        ChainSpec { app_id: "x".into(), functions: vec!["a".into(), "b".into(), "c".into()], entry_payload: 4000.0 };
    let wf = Workflow::new(&WorkflowSpec::Chain(chain), &cat).unwrap();
    let assign = Assignment::from([("a".into(), 1), ("b".into(), 2), ("c".into(), 1)]);
    let workers = [1, 2, 1];
    let speed = |w: NodeId| if w == 1 { 1e6 } else { 4e6 };

    for mode in StateMode::ALL {
        let emb = |f: &FunctionSpec| if mode == StateMode::Embedded { f.state_size } else { 0.0 };
        // Hand-rolled per-stage sum.
        let mut t = 0.0;
        let mut input = 4000.0;
        let mut prev: (NodeId, f64) = (0, 0.0);
        for (i, f) in fs.iter().enumerate() {
            let w = workers[i];
            t += rt.transfer_delay(prev.0, w, input + prev.1 + emb(f)).unwrap();
            t += (f.fixed_ops + f.ops_per_byte * input) / speed(w);
            input *= f.output_ratio;
            prev = (w, emb(f));
        }
        t += rt.transfer_delay(prev.0, 0, input + prev.1).unwrap();
        let cp = critical_path_time(&wf, &assign, &rt, &StateRegistry::default(), mode, 0, 4000.0).unwrap();
        assert!((cp - t).abs() < 1e-12, "{mode:?}: {cp} vs {t}");
    }
}

fn dispatch_rt(speeds: &[f64], rates: &[f64]) -> RouteTable {
    let mut nodes = vec![NodeSpec::client(0)];
    let mut links = Vec::new();
    for (i, (&s, &r)) in speeds.iter().zip(rates).enumerate() {
        let id = i as u32 + 1;
        nodes.push(NodeSpec::worker(id, 1 + id % 3, s));
        links.push(LinkSpec::new(0, id, 0.0, r));
    }
    RouteTable::build(&Topology::new(nodes, links)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn min_latency_choice_invariant_under_uniform_scaling(
        speeds in prop::collection::vec(1e5f64..1e7, 2..6),
        backlog_seed in any::<u64>(),
        scale in 0.1f64..10.0,
    ) {
        use rand::Rng;
        let n = speeds.len();
        let mut r = ChaCha8Rng::seed_from_u64(backlog_seed);
        let rates: Vec<f64> = (0..n).map(|_| r.random_range(1e5..1e7)).collect();
        let backlog: BTreeMap<NodeId, f64> = (1..=n as u32).map(|w| (w, r.random_range(0.0..1e6))).collect();
        let f = FunctionSpec::new("f", 1e4, 3.0, 1.0, 0.0);
        let cands: Vec<NodeId> = (1..=n as u32).collect();
        let reg = StateRegistry::default();

        let rt1 = dispatch_rt(&speeds, &rates);
        let scaled_speeds: Vec<f64> = speeds.iter().map(|s| s * scale).collect();
        let scaled_rates: Vec<f64> = rates.iter().map(|s| s * scale).collect();
        let rt2 = dispatch_rt(&scaled_speeds, &scaled_rates);

        let est = |rt: &RouteTable| -> Vec<f64> {
            let ctx = DispatchContext { app: "a", candidates: &cands, backlog: &backlog, registry: &reg, routes: rt, payload_location: 0 };
            cands.iter().map(|&w| estimate_completion(&ctx, &f, w, 5000.0, StateMode::Embedded).unwrap()).collect()
        };
        let e1 = est(&rt1);
        let mut sorted = e1.clone();
        sorted.sort_by(f64::total_cmp);
        // Only tie-free instances with a clear margin.
        prop_assume!(sorted[1] - sorted[0] > 1e-9 * sorted[1]);
        let pick = |rt: &RouteTable| {
            let ctx = DispatchContext { app: "a", candidates: &cands, backlog: &backlog, registry: &reg, routes: rt, payload_location: 0 };
            choose_worker(PolicyKind::MinLatencyEstimate, &ctx, &mut RrState::default(), &mut ChaCha8Rng::seed_from_u64(0), &f, 5000.0, StateMode::Embedded).unwrap()
        };
        prop_assert_eq!(pick(&rt1), pick(&rt2));
    }

    #[test]
    fn every_policy_is_deterministic(seed in any::<u64>(), n in 1usize..6) {
        use rand::Rng;
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let speeds: Vec<f64> = (0..n).map(|_| r.random_range(1e5..1e7)).collect();
        let rates: Vec<f64> = (0..n).map(|_| r.random_range(1e5..1e7)).collect();
        let rt = dispatch_rt(&speeds, &rates);
        let backlog: BTreeMap<NodeId, f64> = (1..=n as u32).map(|w| (w, r.random_range(0.0..1e6))).collect();
        let cands: Vec<NodeId> = (1..=n as u32).collect();
        let f = FunctionSpec::new("f", 1e4, 3.0, 1.0, 10.0);
        let mut reg = StateRegistry::default();
        reg.place("a", &f, 1 + (seed % n as u64) as u32);
        let ctx = DispatchContext { app: "a", candidates: &cands, backlog: &backlog, registry: &reg, routes: &rt, payload_location: 0 };
        for p in PolicyKind::ALL {
            for mode in StateMode::ALL {
                let run = || {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let mut rr = RrState::default();
                    (0..5).map(|_| choose_worker(p, &ctx, &mut rr, &mut rng, &f, 100.0, mode).unwrap()).collect::<Vec<_>>()
                };
                prop_assert_eq!(run(), run());
            }
        }
    }
}

fn engine_scenario(policy: PolicyKind, mode: StateMode, workers: u32, state: f64) -> Scenario {
    let mut nodes = vec![NodeSpec::client(0), NodeSpec::broker(1)];
    let mut links = vec![LinkSpec::new(0, 1, 0.002, 1e7)];
    for w in 0..workers {
        let id = 10 + w;
        nodes.push(NodeSpec::worker(id, 2 + w % 2, 5e8 * f64::from(1 + w)));
        links.push(LinkSpec::new(1, id, 0.0005 * f64::from(w + 1), 1e8));
    }
    let fs = [
        FunctionSpec::new("a", 2e6, 100.0, 0.5, state),
        FunctionSpec::new("b", 1e7, 10.0, 1.0, state * 2.0),
        FunctionSpec::new("c", 5e6, 50.0, 0.2, 0.0),
        FunctionSpec::new("d", 1e6, 5.0, 0.1, state),
    ];
    let cat: BTreeMap<String, FunctionSpec> = fs.iter().map(|f| (f.id.clone(), f.clone())).collect();
    let dag = DagSpec {
        app_id: "dag".into(),
        vertices: vec!["a".into(), "b".into(), "c".into(), "d".into()],
        edges: vec![
            ("a".into(), "b".into()),
            ("a".into(), "c".into()),
            ("b".into(), "d".into()),
            ("c".into(), "d".into()),
        ],
        entry_payload: 50_000.0,
    };
    let chain = ChainSpec {
        app_id: "chain".into(),
        functions: vec!["a".into(), "b".into(), "c".into()],
        entry_payload: 20_000.0,
    };
    let routes = RouteTable::build(&Topology::new(nodes, links)).unwrap();
    Scenario {
        candidates: routes.worker_ids(),
        routes,
        apps: vec![
            AppSpec {
                workflow: Workflow::new(&WorkflowSpec::Dag(dag), &cat).unwrap(),
                client: 0,
                load: AppLoad { rate: 30.0, payload: PayloadDist::Exponential { mean: 50_000.0 } },
            },
            AppSpec {
                workflow: Workflow::new(&WorkflowSpec::Chain(chain), &cat).unwrap(),
                client: 0,
                load: AppLoad { rate: 60.0, payload: PayloadDist::Uniform { lo: 1000.0, hi: 40_000.0 } },
            },
        ],
        policy,
        mode,
        seed: 17,
        horizon: 20.0,
        randomize_compute: true,
    }
}

#[test]
fn engine_invariants_hold_for_every_policy_and_mode() {
    for policy in PolicyKind::ALL {
        for mode in StateMode::ALL {
            let sc = engine_scenario(policy, mode, 3, 20_000.0);
            let mut sim = Simulation::new(&sc, sc.arrivals()).unwrap();
            let mut last = 0.0;
            while let Some(ev) = sim.step().unwrap() {
                assert!(ev.time >= last, "event time went backwards");
                last = ev.time;
                if let EventKind::Enqueue { worker, .. } | EventKind::ExecDone { worker, .. } = ev.kind {
                    assert!(sim.backlog(worker).unwrap() >= -1e-6);
                }
            }
            let m = sim.finish();
            assert!(m.injected > 0);
            assert_eq!(m.injected, m.completed + m.in_flight_at_end);
            assert!(m.workers.iter().all(|w| w.utilization <= 1.0 + 1e-9 && w.utilization >= 0.0));
            let links: f64 = m.links.iter().map(|l| l.bytes).sum();
            let stages: f64 = m.invocations.iter().flat_map(|r| &r.stages).map(|s| s.link_bytes).sum();
            assert!((links - stages).abs() <= 1e-6 * links.max(1.0), "{links} vs {stages}");
            for r in &m.invocations {
                let lat = r.latency_s.unwrap();
                assert!((lat - (r.completion_s.unwrap() - r.arrival_s)).abs() == 0.0);
                for s in &r.stages {
                    assert!(
                        s.queue_wait_s >= 0.0 && s.compute_s >= 0.0 && s.transfer_s >= 0.0 && s.state_delay_s >= 0.0
                    );
                }
            }
        }
    }
}

#[test]
fn zero_state_modes_coincide() {
    for policy in PolicyKind::ALL {
        let lat: Vec<Vec<f64>> = StateMode::ALL
            .iter()
            .map(|&mode| chainsim_core::run(&engine_scenario(policy, mode, 3, 0.0)).unwrap().latencies())
            .collect();
        assert_eq!(lat[0], lat[1]);
        assert_eq!(lat[1], lat[2]);
    }
}

#[test]
fn single_worker_dag_matches_critical_path() {
    for mode in StateMode::ALL {
        let sc = engine_scenario(PolicyKind::LeastLoaded, mode, 1, 5000.0);
        let arrivals = vec![Arrival { time: 0.0, app: 0, payload: 50_000.0, compute_factor: 1.0 }];
        let m = chainsim_core::run_with_arrivals(&sc, arrivals).unwrap();
        let inv = &m.invocations[0];
        let assign: Assignment = inv.stages.iter().map(|s| (s.function.clone(), s.worker)).collect();
        let cp =
            critical_path_time(&sc.apps[0].workflow, &assign, &sc.routes, &StateRegistry::default(), mode, 0, 50_000.0)
                .unwrap();
        assert!(
            (inv.latency_s.unwrap() - cp).abs() < 1e-9,
            "{mode:?} {} {cp} {:#?}",
            inv.latency_s.unwrap(),
            inv.stages
        );
    }
}

#[test]
fn different_seeds_give_different_arrivals() {
    let mut sc = engine_scenario(PolicyKind::Random, StateMode::Embedded, 2, 0.0);
    let a = sc.arrivals();
    sc.seed += 1;
    let b = sc.arrivals();
    assert_ne!(a.iter().map(|x| x.time).collect::<Vec<_>>(), b.iter().map(|x| x.time).collect::<Vec<_>>());
}

#[test]
fn state_local_with_fixed_state_never_moves_state() {
    let sc = engine_scenario(PolicyKind::StateLocal, StateMode::RemoteFixed, 3, 50_000.0);
    let m = chainsim_core::run(&sc).unwrap();
    assert!(m.completed > 100);
    assert_eq!(m.total_state_bytes(), 0.0);
    assert_eq!(m.total_migrations, 0);
}
