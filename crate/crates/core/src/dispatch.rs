//! Per-stage destination selection.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::state::{embedded_payload_overhead, remote_state_access, StateError, StateMode, StateRegistry};
use crate::topology::{NodeId, RouteTable, TopologyError};
use crate::workflow::{stage_io, FunctionSpec};

#[derive(Debug, Error, PartialEq)]
pub enum DispatchError {
    #[error("empty candidate list")]
    NoCandidates,
    #[error("node {0} is not a worker")]
    NotAWorker(NodeId),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    State(#[from] StateError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Random,
    RoundRobin,
    LeastLoaded,
    StateLocal,
    MinLatencyEstimate,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::Random,
        PolicyKind::RoundRobin,
        PolicyKind::LeastLoaded,
        PolicyKind::StateLocal,
        PolicyKind::MinLatencyEstimate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Random => "random",
            Self::RoundRobin => "round_robin",
            Self::LeastLoaded => "least_loaded",
            Self::StateLocal => "state_local",
            Self::MinLatencyEstimate => "min_latency_estimate",
        }
    }
}

/// What the dispatcher knows when it picks a worker for one stage.
#[derive(Clone, Copy, Debug)]
pub struct DispatchContext<'a> {
    pub app: &'a str,
    pub candidates: &'a [NodeId],
    /// Pending operations per worker (queued plus remaining in service).
    pub backlog: &'a BTreeMap<NodeId, f64>,
    pub registry: &'a StateRegistry,
    pub routes: &'a RouteTable,
    /// Node currently holding the stage input.
    pub payload_location: NodeId,
}

impl DispatchContext<'_> {
    fn backlog_of(&self, w: NodeId) -> f64 {
        self.backlog.get(&w).copied().unwrap_or(0.0)
    }
}

/// Round-robin cursors, one per `(app, function)`.
#[derive(Clone, Debug, Default)]
pub struct RrState {
    cursors: HashMap<(String, String), usize>,
}

impl RrState {
    fn next(&mut self, app: &str, function: &str, n: usize) -> usize {
        let c = self.cursors.entry((app.to_string(), function.to_string())).or_insert(0);
        let i = *c % n;
        *c = (i + 1) % n;
        i
    }
}

/// Predicted completion time of `f` on `w`: input transfer, remote state
/// fetch, draining the current backlog over all cores, then the stage itself.
pub fn estimate_completion(
    ctx: &DispatchContext<'_>,
    f: &FunctionSpec,
    w: NodeId,
    input_bytes: f64,
    mode: StateMode,
) -> Result<f64, DispatchError> {
    let node = ctx.routes.node(w).filter(|n| n.is_worker()).ok_or(DispatchError::NotAWorker(w))?;
    let transfer =
        ctx.routes.transfer_delay(ctx.payload_location, w, input_bytes + embedded_payload_overhead(f, mode))?;
    // Without a registry entry the state would be placed on w itself.
    let state = if mode.is_remote() && ctx.registry.get(ctx.app, &f.id).is_some() {
        remote_state_access(mode, ctx.registry, ctx.app, f, w, ctx.routes)?.delay
    } else {
        0.0
    };
    let queue = ctx.backlog_of(w) / (node.cores as f64 * node.core_speed);
    let compute = stage_io(f, input_bytes).0 / node.core_speed;
    Ok(transfer + state + queue + compute)
}

/// Index of the smallest key; equal keys resolve to the lowest worker id.
fn argmin_by_key<K: PartialOrd>(candidates: &[NodeId], mut key: impl FnMut(NodeId) -> K) -> NodeId {
    let mut best: Option<(NodeId, K)> = None;
    for &w in candidates {
        let k = key(w);
        best = match best {
            None => Some((w, k)),
            Some((bw, bk)) => {
                if k < bk || (k == bk && w < bw) {
                    Some((w, k))
                } else {
                    Some((bw, bk))
                }
            }
        };
    }
    best.expect("non-empty candidates").0
}

pub fn choose_worker<R: Rng + ?Sized>(
    policy: PolicyKind,
    ctx: &DispatchContext<'_>,
    rr: &mut RrState,
    rng: &mut R,
    f: &FunctionSpec,
    input_bytes: f64,
    mode: StateMode,
) -> Result<NodeId, DispatchError> {
    let candidates = ctx.candidates;
    if candidates.is_empty() {
        return Err(DispatchError::NoCandidates);
    }
    let least_loaded = || argmin_by_key(candidates, |w| ctx.backlog_of(w));
    Ok(match policy {
        PolicyKind::Random => candidates[rng.random_range(0..candidates.len())],
        PolicyKind::RoundRobin => candidates[rr.next(ctx.app, &f.id, candidates.len())],
        PolicyKind::LeastLoaded => least_loaded(),
        PolicyKind::StateLocal => match ctx.registry.get(ctx.app, &f.id) {
            Some(e) if candidates.contains(&e.host) => e.host,
            _ => least_loaded(),
        },
        PolicyKind::MinLatencyEstimate => {
            let mut estimates = Vec::with_capacity(candidates.len());
            for &w in candidates {
                estimates.push((w, estimate_completion(ctx, f, w, input_bytes, mode)?));
            }
            argmin_by_key(candidates, |w| estimates.iter().find(|(x, _)| *x == w).map(|e| e.1).unwrap())
        }
    })
}
