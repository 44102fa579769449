//! Deterministic discrete-event simulation of chain and DAG invocations.
//!
//! Events are totally ordered by `(time, seq)`, where `seq` is the creation
//! order, so a run is a pure function of its [`Scenario`] and seed.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::dispatch::{choose_worker, DispatchContext, DispatchError, PolicyKind, RrState};
use crate::state::{embedded_payload_overhead, remote_state_access, StateError, StateMode, StateRegistry};
use crate::topology::{NodeId, Role, RouteTable, TopologyError};
use crate::workflow::{join_payload, Workflow};
use crate::workload::{self, AppLoad, Arrival};

#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error("invalid scenario: {}", .0.join("; "))]
    InvalidScenario(Vec<String>),
    #[error("non-finite {what} at t={time}")]
    NonFinite { what: &'static str, time: f64 },
    #[error(transparent)]
    Dispatch(#[from] DispatchError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

/// An application: a workflow, the client that invokes it and its load.
#[derive(Clone, Debug)]
pub struct AppSpec {
    pub workflow: Workflow,
    pub client: NodeId,
    pub load: AppLoad,
}

/// Everything a run needs. Immutable; replications share it.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub routes: RouteTable,
    pub apps: Vec<AppSpec>,
    /// Workers eligible for dispatch, in configuration order.
    pub candidates: Vec<NodeId>,
    pub policy: PolicyKind,
    pub mode: StateMode,
    pub seed: u64,
    /// Arrivals at or after this instant are not injected.
    pub horizon: f64,
    pub randomize_compute: bool,
}

impl Scenario {
    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            v.push("horizon must be positive".to_string());
        }
        if self.candidates.is_empty() {
            v.push("no candidate workers".to_string());
        }
        for &c in &self.candidates {
            if !self.routes.node(c).is_some_and(|n| n.is_worker()) {
                v.push(format!("candidate {} is not a worker", c));
            }
        }
        for app in &self.apps {
            if !self.routes.node(app.client).is_some_and(|n| n.role == Role::Client) {
                v.push(format!("app {}: node {} is not a client", app.workflow.app_id, app.client));
            }
        }
        v
    }

    /// Arrivals of this scenario's workload under its seed.
    pub fn arrivals(&self) -> Vec<Arrival> {
        let loads: Vec<AppLoad> = self.apps.iter().map(|a| a.load.clone()).collect();
        workload::generate(self.seed, self.horizon, self.randomize_compute, &loads)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum EventKind {
    Arrival {
        invocation: usize,
    },
    StageReady {
        invocation: usize,
        vertex: usize,
        node: NodeId,
    },
    /// Input and state are in place at the worker; the stage starts or queues.
    Enqueue {
        invocation: usize,
        vertex: usize,
        worker: NodeId,
    },
    ExecDone {
        invocation: usize,
        vertex: usize,
        worker: NodeId,
        core: usize,
    },
    Delivered {
        invocation: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Event {
    pub time: f64,
    pub seq: u64,
    pub kind: EventKind,
}

impl Eq for Event {}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed for a min-heap.
        other.time.total_cmp(&self.time).then(other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageRecord {
    pub function: String,
    pub dispatch_s: f64,
    pub worker: NodeId,
    pub input_bytes: f64,
    pub queue_wait_s: f64,
    pub compute_s: f64,
    /// Input transfer delay (slowest input for joins).
    pub transfer_s: f64,
    pub state_delay_s: f64,
    pub state_bytes: f64,
    /// Bytes times hops over every transfer caused by this stage, including
    /// state transfers and, for the sink, the result delivery.
    pub link_bytes: f64,
    pub migration: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InvocationRecord {
    pub id: u64,
    pub app: String,
    pub arrival_s: f64,
    pub payload_bytes: f64,
    pub stages: Vec<StageRecord>,
    pub delivery_s: f64,
    pub completion_s: Option<f64>,
    pub latency_s: Option<f64>,
}

impl InvocationRecord {
    pub fn state_bytes(&self) -> f64 {
        self.stages.iter().map(|s| s.state_bytes).fold(0.0, |a, b| a + b)
    }

    pub fn migrations(&self) -> usize {
        self.stages.iter().filter(|s| s.migration).count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LinkUsage {
    pub node_a: NodeId,
    pub node_b: NodeId,
    pub bytes: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WorkerUsage {
    pub worker_id: NodeId,
    pub busy_s: f64,
    pub utilization: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsLog {
    pub invocations: Vec<InvocationRecord>,
    pub links: Vec<LinkUsage>,
    pub workers: Vec<WorkerUsage>,
    pub total_migrations: usize,
    pub injected: usize,
    pub completed: usize,
    pub in_flight_at_end: usize,
    pub end_time_s: f64,
}

impl MetricsLog {
    pub fn total_state_bytes(&self) -> f64 {
        self.invocations.iter().map(InvocationRecord::state_bytes).fold(0.0, |a, b| a + b)
    }

    pub fn latencies(&self) -> Vec<f64> {
        self.invocations.iter().filter_map(|r| r.latency_s).collect()
    }
}

struct Job {
    invocation: usize,
    vertex: usize,
    ops: f64,
    enqueued_at: f64,
}

struct Running {
    end: f64,
}

struct WorkerRuntime {
    speed: f64,
    cores: Vec<Option<Running>>,
    queue: VecDeque<Job>,
    queued_ops: f64,
    busy_s: f64,
}

impl WorkerRuntime {
    fn backlog(&self, now: f64) -> f64 {
        let in_service: f64 = self.cores.iter().flatten().map(|r| (r.end - now).max(0.0) * self.speed).sum();
        self.queued_ops + in_service
    }

    fn free_core(&self) -> Option<usize> {
        self.cores.iter().position(Option::is_none)
    }
}

struct InvocationState {
    app: usize,
    arrival: f64,
    payload: f64,
    compute_factor: f64,
    pending_preds: Vec<usize>,
    worker: Vec<NodeId>,
    input: Vec<f64>,
    output: Vec<f64>,
    stage_of: Vec<usize>,
    stages: Vec<StageRecord>,
    delivery_s: f64,
    completion: Option<f64>,
}

/// A single run, advanced one event at a time.
pub struct Simulation<'s> {
    sc: &'s Scenario,
    events: BinaryHeap<Event>,
    seq: u64,
    now: f64,
    arrivals: Vec<Arrival>,
    next_arrival: usize,
    invocations: Vec<InvocationState>,
    workers: BTreeMap<NodeId, WorkerRuntime>,
    registry: StateRegistry,
    rr: RrState,
    policy_rng: ChaCha8Rng,
    link_bytes: Vec<f64>,
    completed: usize,
}

impl<'s> Simulation<'s> {
    /// Prepares a run injecting `arrivals`; those outside `[0, horizon)` are dropped.
    pub fn new(sc: &'s Scenario, arrivals: Vec<Arrival>) -> Result<Self, EngineError> {
        Self::with_registry(sc, arrivals, StateRegistry::default())
    }

    /// Like [`Simulation::new`], with state already placed according to `registry`.
    pub fn with_registry(
        sc: &'s Scenario,
        mut arrivals: Vec<Arrival>,
        registry: StateRegistry,
    ) -> Result<Self, EngineError> {
        let violations = sc.validate();
        if !violations.is_empty() {
            return Err(EngineError::InvalidScenario(violations));
        }
        arrivals.retain(|a| a.time >= 0.0 && a.time < sc.horizon);
        arrivals.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.app.cmp(&b.app)));
        if let Some(a) = arrivals.iter().find(|a| a.app >= sc.apps.len()) {
            return Err(EngineError::InvalidScenario(vec![format!("arrival for unknown app index {}", a.app)]));
        }
        let workers = sc
            .routes
            .nodes()
            .iter()
            .filter(|n| n.is_worker())
            .map(|n| {
                (
                    n.id,
                    WorkerRuntime {
                        speed: n.core_speed,
                        cores: (0..n.cores).map(|_| None).collect(),
                        queue: VecDeque::new(),
                        queued_ops: 0.0,
                        busy_s: 0.0,
                    },
                )
            })
            .collect();
        let mut sim = Self {
            sc,
            events: BinaryHeap::new(),
            seq: 0,
            now: 0.0,
            arrivals,
            next_arrival: 0,
            invocations: Vec::new(),
            workers,
            registry,
            rr: RrState::default(),
            policy_rng: workload::substream(sc.seed, workload::stream::POLICY),
            link_bytes: vec![0.0; sc.routes.links().len()],
            completed: 0,
        };
        sim.schedule_next_arrival();
        Ok(sim)
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn registry(&self) -> &StateRegistry {
        &self.registry
    }

    /// Pending operations on `w` at the current instant.
    pub fn backlog(&self, w: NodeId) -> Option<f64> {
        self.workers.get(&w).map(|rt| rt.backlog(self.now))
    }

    fn push(&mut self, time: f64, kind: EventKind) {
        self.events.push(Event { time, seq: self.seq, kind });
        self.seq += 1;
    }

    fn schedule_next_arrival(&mut self) {
        if let Some(a) = self.arrivals.get(self.next_arrival) {
            let time = a.time;
            let invocation = self.next_arrival;
            self.next_arrival += 1;
            self.push(time, EventKind::Arrival { invocation });
        }
    }

    fn check(&self, what: &'static str, x: f64) -> Result<f64, EngineError> {
        if x.is_finite() {
            Ok(x)
        } else {
            Err(EngineError::NonFinite { what, time: self.now })
        }
    }

    /// Moves `nbytes` from `src` to `dst`: returns the delay and bytes times hops.
    fn transfer(&mut self, src: NodeId, dst: NodeId, nbytes: f64) -> Result<(f64, f64), EngineError> {
        let route = self.sc.routes.route(src, dst)?;
        for h in &route.hops {
            self.link_bytes[h.link] += nbytes;
        }
        Ok((route.delay(nbytes), nbytes * route.hop_count() as f64))
    }

    /// Processes the next event. Returns `None` once the run has drained.
    pub fn step(&mut self) -> Result<Option<Event>, EngineError> {
        let Some(ev) = self.events.pop() else { return Ok(None) };
        debug_assert!(ev.time >= self.now);
        self.now = ev.time;
        match ev.kind {
            EventKind::Arrival { invocation } => self.on_arrival(invocation),
            EventKind::StageReady { invocation, vertex, node } => self.on_stage_ready(invocation, vertex, node)?,
            EventKind::Enqueue { invocation, vertex, worker } => self.on_enqueue(invocation, vertex, worker)?,
            EventKind::ExecDone { invocation, vertex, worker, core } => {
                self.on_exec_done(invocation, vertex, worker, core)?
            }
            EventKind::Delivered { invocation } => self.on_delivered(invocation),
        }
        Ok(Some(ev))
    }

    fn on_arrival(&mut self, invocation: usize) {
        let a = self.arrivals[invocation].clone();
        let wf = &self.sc.apps[a.app].workflow;
        let n = wf.len();
        self.invocations.push(InvocationState {
            app: a.app,
            arrival: a.time,
            payload: a.payload,
            compute_factor: a.compute_factor,
            pending_preds: (0..n).map(|v| wf.preds(v).len()).collect(),
            worker: vec![0; n],
            input: vec![0.0; n],
            output: vec![0.0; n],
            stage_of: vec![usize::MAX; n],
            stages: Vec::with_capacity(n),
            delivery_s: 0.0,
            completion: None,
        });
        let client = self.sc.apps[a.app].client;
        let source = wf.source();
        self.push(self.now, EventKind::StageReady { invocation, vertex: source, node: client });
        self.schedule_next_arrival();
    }

    fn on_stage_ready(&mut self, invocation: usize, vertex: usize, node: NodeId) -> Result<(), EngineError> {
        let sc = self.sc;
        let app_idx = self.invocations[invocation].app;
        let app = &sc.apps[app_idx];
        let wf = &app.workflow;
        let f = wf.function(vertex);
        let mode = sc.mode;

        let input_bytes = if vertex == wf.source() {
            self.invocations[invocation].payload
        } else {
            let inv = &self.invocations[invocation];
            join_payload(&wf.preds(vertex).iter().map(|&p| inv.output[p]).collect::<Vec<_>>())
        };

        let backlog: BTreeMap<NodeId, f64> =
            sc.candidates.iter().map(|&w| (w, self.workers[&w].backlog(self.now))).collect();
        let ctx = DispatchContext {
            app: &wf.app_id,
            candidates: &sc.candidates,
            backlog: &backlog,
            registry: &self.registry,
            routes: &sc.routes,
            payload_location: node,
        };
        let w = choose_worker(sc.policy, &ctx, &mut self.rr, &mut self.policy_rng, f, input_bytes, mode)?;

        // State: first use places it on the chosen worker; accesses apply now.
        let mut link_bytes = 0.0;
        let mut state_bytes = 0.0;
        let mut state_delay = 0.0;
        let mut migration = false;
        if mode.is_remote() {
            self.registry.place(&wf.app_id, f, w);
            let access = remote_state_access(mode, &self.registry, &wf.app_id, f, w, &sc.routes)?;
            for t in &access.transfers {
                link_bytes += self.transfer(t.src, t.dst, t.bytes)?.1;
            }
            self.registry.apply(&wf.app_id, &f.id, &access);
            state_delay = access.delay;
            state_bytes = access.bytes_moved;
            migration = access.migration;
        }

        let own_overhead = embedded_payload_overhead(f, mode);
        let mut transfer_s = 0.0;
        if vertex == wf.source() {
            let bytes = input_bytes + own_overhead;
            let (d, lb) = self.transfer(app.client, w, bytes)?;
            transfer_s = d;
            link_bytes += lb;
            if lb > 0.0 {
                state_bytes += own_overhead;
            }
        } else {
            for &p in wf.preds(vertex) {
                let (src, out) = {
                    let inv = &self.invocations[invocation];
                    (inv.worker[p], inv.output[p])
                };
                let carried = embedded_payload_overhead(wf.function(p), mode) + own_overhead;
                let (d, lb) = self.transfer(src, w, out + carried)?;
                transfer_s = f64::max(transfer_s, d);
                link_bytes += lb;
                if lb > 0.0 {
                    state_bytes += carried;
                }
            }
        }
        let transfer_s = self.check("input transfer delay", transfer_s)?;
        let state_delay = self.check("state access delay", state_delay)?;

        let inv = &mut self.invocations[invocation];
        inv.worker[vertex] = w;
        inv.input[vertex] = input_bytes;
        inv.stage_of[vertex] = inv.stages.len();
        inv.stages.push(StageRecord {
            function: f.id.clone(),
            dispatch_s: self.now,
            worker: w,
            input_bytes,
            queue_wait_s: 0.0,
            compute_s: 0.0,
            transfer_s,
            state_delay_s: state_delay,
            state_bytes,
            link_bytes,
            migration,
        });
        self.push(self.now + transfer_s + state_delay, EventKind::Enqueue { invocation, vertex, worker: w });
        Ok(())
    }

    fn on_enqueue(&mut self, invocation: usize, vertex: usize, worker: NodeId) -> Result<(), EngineError> {
        let inv = &self.invocations[invocation];
        let f = self.sc.apps[inv.app].workflow.function(vertex);
        let ops = f.fixed_ops * inv.compute_factor + f.ops_per_byte * inv.input[vertex];
        let ops = self.check("compute demand", ops)?;
        let job = Job { invocation, vertex, ops, enqueued_at: self.now };
        let rt = self.workers.get_mut(&worker).expect("dispatched to a worker");
        match rt.free_core() {
            Some(core) => self.start(worker, core, job)?,
            None => {
                rt.queued_ops += job.ops;
                rt.queue.push_back(job);
            }
        }
        Ok(())
    }

    fn start(&mut self, worker: NodeId, core: usize, job: Job) -> Result<(), EngineError> {
        let rt = self.workers.get_mut(&worker).expect("worker exists");
        let compute_s = job.ops / rt.speed;
        let end = self.now + compute_s;
        rt.cores[core] = Some(Running { end });
        let stage_idx = self.invocations[job.invocation].stage_of[job.vertex];
        let stage = &mut self.invocations[job.invocation].stages[stage_idx];
        stage.queue_wait_s = self.now - job.enqueued_at;
        stage.compute_s = compute_s;
        let end = self.check("completion time", end)?;
        self.push(end, EventKind::ExecDone { invocation: job.invocation, vertex: job.vertex, worker, core });
        Ok(())
    }

    fn on_exec_done(
        &mut self,
        invocation: usize,
        vertex: usize,
        worker: NodeId,
        core: usize,
    ) -> Result<(), EngineError> {
        let sc = self.sc;
        let compute_s = {
            let inv = &self.invocations[invocation];
            inv.stages[inv.stage_of[vertex]].compute_s
        };
        let next = {
            let rt = self.workers.get_mut(&worker).expect("worker exists");
            rt.cores[core] = None;
            rt.busy_s += compute_s;
            let next = rt.queue.pop_front();
            if let Some(job) = &next {
                // Reset on empty so rounding error cannot accumulate across busy periods.
                rt.queued_ops = if rt.queue.is_empty() { 0.0 } else { rt.queued_ops - job.ops };
            }
            next.map(|job| (rt.free_core().expect("a core was just released"), job))
        };
        if let Some((c, job)) = next {
            self.start(worker, c, job)?;
        }

        let app_idx = self.invocations[invocation].app;
        let app = &sc.apps[app_idx];
        let wf = &app.workflow;
        let f = wf.function(vertex);
        let out = f.output_ratio * self.invocations[invocation].input[vertex];
        self.invocations[invocation].output[vertex] = out;

        for &s in wf.succs(vertex) {
            let pending = &mut self.invocations[invocation].pending_preds[s];
            *pending -= 1;
            if *pending == 0 {
                self.push(self.now, EventKind::StageReady { invocation, vertex: s, node: worker });
            }
        }
        if vertex == wf.sink() {
            let overhead = embedded_payload_overhead(f, sc.mode);
            let (d, lb) = self.transfer(worker, app.client, out + overhead)?;
            let d = self.check("delivery delay", d)?;
            let inv = &mut self.invocations[invocation];
            inv.delivery_s = d;
            let stage = &mut inv.stages[inv.stage_of[vertex]];
            stage.link_bytes += lb;
            if lb > 0.0 {
                stage.state_bytes += overhead;
            }
            self.push(self.now + d, EventKind::Delivered { invocation });
        }
        Ok(())
    }

    fn on_delivered(&mut self, invocation: usize) {
        self.invocations[invocation].completion = Some(self.now);
        self.completed += 1;
    }

    /// Runs to completion and returns the metrics.
    pub fn run(mut self) -> Result<MetricsLog, EngineError> {
        while self.step()?.is_some() {}
        Ok(self.finish())
    }

    pub fn finish(self) -> MetricsLog {
        let end = self.now;
        let sc = self.sc;
        let invocations: Vec<InvocationRecord> = self
            .invocations
            .into_iter()
            .enumerate()
            .map(|(id, inv)| InvocationRecord {
                id: id as u64,
                app: sc.apps[inv.app].workflow.app_id.clone(),
                arrival_s: inv.arrival,
                payload_bytes: inv.payload,
                stages: inv.stages,
                delivery_s: inv.delivery_s,
                completion_s: inv.completion,
                latency_s: inv.completion.map(|c| c - inv.arrival),
            })
            .collect();
        let links = sc
            .routes
            .links()
            .iter()
            .zip(&self.link_bytes)
            .map(|(l, &bytes)| LinkUsage { node_a: l.a, node_b: l.b, bytes })
            .collect();
        let workers = self
            .workers
            .iter()
            .map(|(&id, rt)| WorkerUsage {
                worker_id: id,
                busy_s: rt.busy_s,
                utilization: if end > 0.0 { rt.busy_s / (rt.cores.len() as f64 * end) } else { 0.0 },
            })
            .collect();
        let injected = invocations.len();
        MetricsLog {
            total_migrations: invocations.iter().map(InvocationRecord::migrations).sum(),
            injected,
            completed: self.completed,
            in_flight_at_end: injected - self.completed,
            end_time_s: end,
            invocations,
            links,
            workers,
        }
    }
}

/// Runs the scenario with its own seeded workload.
pub fn run(sc: &Scenario) -> Result<MetricsLog, EngineError> {
    run_with_arrivals(sc, sc.arrivals())
}

pub fn run_with_arrivals(sc: &Scenario, arrivals: Vec<Arrival>) -> Result<MetricsLog, EngineError> {
    Simulation::new(sc, arrivals)?.run()
}
