//! Functions, chains and DAG compositions.
//!
//! A [`Workflow`] is the validated, index-based form of a chain or DAG that the
//! engine executes. Vertices are sorted by function id, so index order and id
//! order coincide and every lowest-id tie-break is a lowest-index tie-break.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::state::{embedded_payload_overhead, remote_state_access, StateError, StateMode, StateRegistry};
use crate::topology::{NodeId, RouteTable, TopologyError};

#[derive(Debug, Error, PartialEq)]
pub enum WorkflowError {
    #[error("invalid workflow: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("completed set is not closed under predecessors: {0} lacks a completed predecessor")]
    NotDownwardClosed(String),
    #[error("unknown vertex {0}")]
    UnknownVertex(String),
    #[error("invalid assignment: {0}")]
    InvalidAssignment(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    State(#[from] StateError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionSpec {
    pub id: String,
    #[serde(default)]
    pub fixed_ops: f64,
    #[serde(default)]
    pub ops_per_byte: f64,
    #[serde(default)]
    pub output_ratio: f64,
    #[serde(default)]
    pub state_size: f64,
}

impl FunctionSpec {
    pub fn new(id: impl Into<String>, fixed_ops: f64, ops_per_byte: f64, output_ratio: f64, state_size: f64) -> Self {
        Self { id: id.into(), fixed_ops, ops_per_byte, output_ratio, state_size }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (name, x) in [
            ("fixed_ops", self.fixed_ops),
            ("ops_per_byte", self.ops_per_byte),
            ("output_ratio", self.output_ratio),
            ("state_size", self.state_size),
        ] {
            if !(x.is_finite() && x >= 0.0) {
                v.push(format!("function {}: {} must be finite and non-negative", self.id, name));
            }
        }
        let work = self.fixed_ops + self.ops_per_byte;
        if work.is_nan() || work <= 0.0 {
            v.push(format!("function {} does no work", self.id));
        }
        v
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSpec {
    pub app_id: String,
    pub functions: Vec<String>,
    pub entry_payload: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DagSpec {
    pub app_id: String,
    pub vertices: Vec<String>,
    pub edges: Vec<(String, String)>,
    pub entry_payload: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WorkflowSpec {
    Chain(ChainSpec),
    Dag(DagSpec),
}

impl WorkflowSpec {
    pub fn app_id(&self) -> &str {
        match self {
            Self::Chain(c) => &c.app_id,
            Self::Dag(d) => &d.app_id,
        }
    }

    pub fn to_dag(&self) -> DagSpec {
        match self {
            Self::Chain(c) => chain_to_dag(c),
            Self::Dag(d) => d.clone(),
        }
    }
}

pub fn chain_to_dag(c: &ChainSpec) -> DagSpec {
    DagSpec {
        app_id: c.app_id.clone(),
        vertices: c.functions.clone(),
        edges: c.functions.windows(2).map(|w| (w[0].clone(), w[1].clone())).collect(),
        entry_payload: c.entry_payload,
    }
}

/// Structural checks on a chain, before it is converted to a DAG.
pub fn validate_chain(c: &ChainSpec) -> Vec<String> {
    let mut v = Vec::new();
    if c.functions.is_empty() {
        v.push(format!("chain {} has no functions", c.app_id));
    }
    let mut seen = BTreeSet::new();
    for f in &c.functions {
        if !seen.insert(f) {
            v.push(format!("chain {} repeats function {}", c.app_id, f));
        }
    }
    if !(c.entry_payload.is_finite() && c.entry_payload > 0.0) {
        v.push(format!("app {}: entry_payload must be positive", c.app_id));
    }
    v
}

/// Lists every violated DAG invariant; empty iff the DAG is well formed.
///
/// Cycles are found by repeatedly removing zero in-degree vertices. When a
/// cycle exists the source/sink checks are skipped since they carry no extra
/// information.
pub fn validate_dag(d: &DagSpec) -> Vec<String> {
    let mut v = Vec::new();
    if d.vertices.is_empty() {
        v.push("dag has no vertices".to_string());
        return v;
    }
    if !(d.entry_payload.is_finite() && d.entry_payload > 0.0) {
        v.push(format!("app {}: entry_payload must be positive", d.app_id));
    }
    let mut ids = BTreeSet::new();
    for x in &d.vertices {
        if !ids.insert(x.as_str()) {
            v.push(format!("duplicate vertex {}", x));
        }
    }
    let mut edges = BTreeSet::new();
    for (a, b) in &d.edges {
        for end in [a, b] {
            if !ids.contains(end.as_str()) {
                v.push(format!("edge {}->{} references unknown vertex {}", a, b, end));
            }
        }
        if a == b {
            v.push(format!("self-loop on {}", a));
        } else if !edges.insert((a.as_str(), b.as_str())) {
            v.push(format!("duplicate edge {}->{}", a, b));
        }
    }
    if !v.is_empty() {
        return v;
    }

    let mut indeg: BTreeMap<&str, usize> = ids.iter().map(|&x| (x, 0)).collect();
    let mut outdeg = indeg.clone();
    for &(a, b) in &edges {
        *indeg.get_mut(b).unwrap() += 1;
        *outdeg.get_mut(a).unwrap() += 1;
    }
    let mut remaining = indeg.clone();
    let mut ready: Vec<&str> = remaining.iter().filter(|(_, &d)| d == 0).map(|(&x, _)| x).collect();
    let mut removed = 0;
    while let Some(x) = ready.pop() {
        removed += 1;
        for &(a, b) in &edges {
            if a == x {
                let e = remaining.get_mut(b).unwrap();
                *e -= 1;
                if *e == 0 {
                    ready.push(b);
                }
            }
        }
    }
    if removed < ids.len() {
        v.push("cycle detected".to_string());
        return v;
    }

    let sources: Vec<&str> = indeg.iter().filter(|(_, &d)| d == 0).map(|(&x, _)| x).collect();
    let sinks: Vec<&str> = outdeg.iter().filter(|(_, &d)| d == 0).map(|(&x, _)| x).collect();
    if sources.len() > 1 {
        v.push("multiple sources".to_string());
    }
    if sinks.len() > 1 {
        v.push("multiple sinks".to_string());
    }
    if sources.len() == 1 && sinks.len() == 1 {
        let fwd = reachable(sources[0], &edges, false);
        let bwd = reachable(sinks[0], &edges, true);
        for &x in &ids {
            if !(fwd.contains(x) && bwd.contains(x)) {
                v.push(format!("vertex {} is not on a source-to-sink path", x));
            }
        }
    }
    v
}

fn reachable<'a>(from: &'a str, edges: &BTreeSet<(&'a str, &'a str)>, reverse: bool) -> BTreeSet<&'a str> {
    let mut seen = BTreeSet::from([from]);
    let mut stack = vec![from];
    while let Some(x) = stack.pop() {
        for &(a, b) in edges {
            let (u, w) = if reverse { (b, a) } else { (a, b) };
            if u == x && seen.insert(w) {
                stack.push(w);
            }
        }
    }
    seen
}

/// Vertices not yet completed whose predecessors are all completed.
pub fn enabled_frontier(d: &DagSpec, completed: &BTreeSet<String>) -> Result<BTreeSet<String>, WorkflowError> {
    let ids: BTreeSet<&String> = d.vertices.iter().collect();
    for c in completed {
        if !ids.contains(c) {
            return Err(WorkflowError::UnknownVertex(c.clone()));
        }
        if d.edges.iter().any(|(a, b)| b == c && !completed.contains(a)) {
            return Err(WorkflowError::NotDownwardClosed(c.clone()));
        }
    }
    Ok(d.vertices
        .iter()
        .filter(|x| !completed.contains(*x))
        .filter(|x| d.edges.iter().filter(|(_, b)| b == *x).all(|(a, _)| completed.contains(a)))
        .cloned()
        .collect())
}

/// Compute demand and output size of one stage for a given input size.
pub fn stage_io(f: &FunctionSpec, input_bytes: f64) -> (f64, f64) {
    (f.fixed_ops + f.ops_per_byte * input_bytes, f.output_ratio * input_bytes)
}

/// Input size of a join vertex: the sum of its predecessors' outputs.
pub fn join_payload(incoming_outputs: &[f64]) -> f64 {
    debug_assert!(!incoming_outputs.is_empty());
    incoming_outputs.iter().fold(0.0, |a, b| a + b)
}

/// Validated, index-based workflow.
#[derive(Clone, Debug, PartialEq)]
pub struct Workflow {
    pub app_id: String,
    pub entry_payload: f64,
    functions: Vec<FunctionSpec>,
    preds: Vec<Vec<usize>>,
    succs: Vec<Vec<usize>>,
    order: Vec<usize>,
    source: usize,
    sink: usize,
}

impl Workflow {
    pub fn new(spec: &WorkflowSpec, catalog: &BTreeMap<String, FunctionSpec>) -> Result<Self, WorkflowError> {
        let mut violations = match spec {
            WorkflowSpec::Chain(c) => validate_chain(c),
            WorkflowSpec::Dag(_) => Vec::new(),
        };
        let dag = spec.to_dag();
        if violations.is_empty() {
            violations.extend(validate_dag(&dag));
        }
        for x in &dag.vertices {
            if !catalog.contains_key(x) {
                violations.push(format!("app {}: unknown function {}", dag.app_id, x));
            }
        }
        if !violations.is_empty() {
            return Err(WorkflowError::Invalid(violations));
        }
        Ok(Self::from_valid_dag(&dag, catalog))
    }

    fn from_valid_dag(d: &DagSpec, catalog: &BTreeMap<String, FunctionSpec>) -> Self {
        let mut ids: Vec<&String> = d.vertices.iter().collect();
        ids.sort();
        let index: BTreeMap<&String, usize> = ids.iter().enumerate().map(|(i, &x)| (x, i)).collect();
        let n = ids.len();
        let mut preds = vec![Vec::new(); n];
        let mut succs = vec![Vec::new(); n];
        for (a, b) in &d.edges {
            succs[index[a]].push(index[b]);
            preds[index[b]].push(index[a]);
        }
        preds.iter_mut().for_each(|p| p.sort_unstable());
        succs.iter_mut().for_each(|s| s.sort_unstable());

        // Kahn's algorithm, lowest id first.
        let mut indeg: Vec<usize> = preds.iter().map(Vec::len).collect();
        let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(u) = ready.pop_first() {
            order.push(u);
            for &s in &succs[u] {
                indeg[s] -= 1;
                if indeg[s] == 0 {
                    ready.insert(s);
                }
            }
        }
        let source = order[0];
        let sink = (0..n).find(|&i| succs[i].is_empty()).expect("validated dag has a sink");
        Self {
            app_id: d.app_id.clone(),
            entry_payload: d.entry_payload,
            functions: ids.iter().map(|&x| catalog[x].clone()).collect(),
            preds,
            succs,
            order,
            source,
            sink,
        }
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    pub fn function(&self, v: usize) -> &FunctionSpec {
        &self.functions[v]
    }

    pub fn functions(&self) -> &[FunctionSpec] {
        &self.functions
    }

    pub fn vertex(&self, id: &str) -> Option<usize> {
        self.functions.iter().position(|f| f.id == id)
    }

    pub fn preds(&self, v: usize) -> &[usize] {
        &self.preds[v]
    }

    pub fn succs(&self, v: usize) -> &[usize] {
        &self.succs[v]
    }

    pub fn topo_order(&self) -> &[usize] {
        &self.order
    }

    pub fn source(&self) -> usize {
        self.source
    }

    pub fn sink(&self) -> usize {
        self.sink
    }

    /// Input bytes of every vertex for an invocation carrying `entry` bytes.
    pub fn input_sizes(&self, entry: f64) -> Vec<f64> {
        let mut input = vec![0.0; self.len()];
        let mut output = vec![0.0; self.len()];
        for &v in &self.order {
            input[v] = if v == self.source {
                entry
            } else {
                join_payload(&self.preds[v].iter().map(|&p| output[p]).collect::<Vec<_>>())
            };
            output[v] = stage_io(&self.functions[v], input[v]).1;
        }
        input
    }
}

/// Function id to executing worker.
pub type Assignment = BTreeMap<String, NodeId>;

/// Zero-load timing of every vertex plus the resulting end-to-end latency.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CriticalPath {
    pub latency: f64,
    /// Time at which each vertex's inputs (and state) are all in place.
    pub start: Vec<f64>,
    pub finish: Vec<f64>,
    /// Vertices of one longest path, source to sink.
    pub path: Vec<usize>,
}

/// End-to-end latency of one invocation with no queueing anywhere.
///
/// Longest-path dynamic programming in topological order: a vertex starts
/// once every predecessor's output has reached its worker, then pays its
/// state access delay and its compute time. The sink's output goes back to
/// `client`.
pub fn critical_path(
    wf: &Workflow,
    assignment: &Assignment,
    rt: &RouteTable,
    registry: &StateRegistry,
    mode: StateMode,
    client: NodeId,
    entry_payload: f64,
) -> Result<CriticalPath, WorkflowError> {
    let mut worker = vec![0; wf.len()];
    for (v, f) in wf.functions.iter().enumerate() {
        let w = *assignment
            .get(&f.id)
            .ok_or_else(|| WorkflowError::InvalidAssignment(format!("function {} is unassigned", f.id)))?;
        match rt.node(w) {
            Some(n) if n.is_worker() => worker[v] = w,
            _ => return Err(WorkflowError::InvalidAssignment(format!("node {} is not a worker", w))),
        }
    }

    let input = wf.input_sizes(entry_payload);
    let overhead: Vec<f64> = wf.functions.iter().map(|f| embedded_payload_overhead(f, mode)).collect();
    let mut start = vec![0.0; wf.len()];
    let mut finish = vec![0.0; wf.len()];
    let mut via: Vec<Option<usize>> = vec![None; wf.len()];
    for &v in &wf.order {
        let f = &wf.functions[v];
        let w = worker[v];
        let mut ready =
            if v == wf.source { rt.transfer_delay(client, w, entry_payload + overhead[v])? } else { f64::NEG_INFINITY };
        for &p in &wf.preds[v] {
            let out_p = stage_io(&wf.functions[p], input[p]).1;
            let arrival = finish[p] + rt.transfer_delay(worker[p], w, out_p + overhead[p] + overhead[v])?;
            if arrival > ready {
                ready = arrival;
                via[v] = Some(p);
            }
        }
        // No entry yet: first use places the state on w itself.
        let state_delay = match registry.get(&wf.app_id, &f.id) {
            Some(_) if mode.is_remote() => remote_state_access(mode, registry, &wf.app_id, f, w, rt)?.delay,
            _ => 0.0,
        };
        start[v] = ready + state_delay;
        let (ops, _) = stage_io(f, input[v]);
        let speed = rt.node(w).map(|n| n.core_speed).unwrap_or(f64::NAN);
        finish[v] = start[v] + ops / speed;
    }

    let sink = wf.sink;
    let out_sink = stage_io(&wf.functions[sink], input[sink]).1;
    let latency = finish[sink] + rt.transfer_delay(worker[sink], client, out_sink + overhead[sink])?;

    let mut path = vec![sink];
    while let Some(p) = via[*path.last().unwrap()] {
        path.push(p);
    }
    path.reverse();
    Ok(CriticalPath { latency, start, finish, path })
}

pub fn critical_path_time(
    wf: &Workflow,
    assignment: &Assignment,
    rt: &RouteTable,
    registry: &StateRegistry,
    mode: StateMode,
    client: NodeId,
    entry_payload: f64,
) -> Result<f64, WorkflowError> {
    critical_path(wf, assignment, rt, registry, mode, client, entry_payload).map(|c| c.latency)
}
