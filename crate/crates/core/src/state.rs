//! Where function state lives and what it costs to make it available at the
//! executing worker.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::{NodeId, RouteTable, TopologyError};
use crate::workflow::FunctionSpec;

#[derive(Debug, Error, PartialEq)]
pub enum StateError {
    #[error("no state entry for ({0}, {1})")]
    MissingEntry(String, String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

/// Scenario-wide state placement mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateMode {
    /// State travels inside the invocation payload.
    Embedded,
    /// State stays on its host; each execution fetches it and writes it back.
    RemoteFixed,
    /// State moves to whichever worker executes the function.
    RemoteMigrate,
}

impl StateMode {
    pub const ALL: [StateMode; 3] = [StateMode::Embedded, StateMode::RemoteFixed, StateMode::RemoteMigrate];

    pub fn is_remote(self) -> bool {
        self != StateMode::Embedded
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Embedded => "embedded",
            Self::RemoteFixed => "remote_fixed",
            Self::RemoteMigrate => "remote_migrate",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StateEntry {
    pub host: NodeId,
    pub size: f64,
}

/// `(app, function)` to state host. Only populated in remote modes.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct StateRegistry {
    entries: BTreeMap<(String, String), StateEntry>,
}

impl StateRegistry {
    pub fn get(&self, app: &str, function: &str) -> Option<&StateEntry> {
        self.entries.get(&(app.to_string(), function.to_string()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(String, String), &StateEntry)> {
        self.entries.iter()
    }

    /// Places the state of `f` on `host` unless it already has a home.
    /// Stateless functions are never registered.
    pub fn place(&mut self, app: &str, f: &FunctionSpec, host: NodeId) {
        if f.state_size > 0.0 {
            self.entries.entry((app.to_string(), f.id.clone())).or_insert(StateEntry { host, size: f.state_size });
        }
    }

    /// Records the outcome of an access: a migration moves the entry's host.
    pub fn apply(&mut self, app: &str, function: &str, access: &StateAccess) {
        if let (true, Some(h)) = (access.migration, access.new_host) {
            if let Some(e) = self.entries.get_mut(&(app.to_string(), function.to_string())) {
                e.host = h;
            }
        }
    }
}

/// A network transfer of state bytes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StateTransfer {
    pub src: NodeId,
    pub dst: NodeId,
    pub bytes: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct StateAccess {
    pub delay: f64,
    pub bytes_moved: f64,
    pub migration: bool,
    pub new_host: Option<NodeId>,
    pub transfers: Vec<StateTransfer>,
}

/// Bytes added to the payload on the hop into `f`'s executor and again on
/// the hop out of it.
pub fn embedded_payload_overhead(f: &FunctionSpec, mode: StateMode) -> f64 {
    match mode {
        StateMode::Embedded => f.state_size,
        StateMode::RemoteFixed | StateMode::RemoteMigrate => 0.0,
    }
}

/// Cost of making `f`'s remote state available on `exec`, without changing
/// the registry. Embedded mode and stateless functions cost nothing here.
pub fn remote_state_access(
    mode: StateMode,
    reg: &StateRegistry,
    app: &str,
    f: &FunctionSpec,
    exec: NodeId,
    rt: &RouteTable,
) -> Result<StateAccess, StateError> {
    if !mode.is_remote() || f.state_size == 0.0 {
        return Ok(StateAccess::default());
    }
    let entry = reg.get(app, &f.id).ok_or_else(|| StateError::MissingEntry(app.to_string(), f.id.clone()))?;
    let host = entry.host;
    if host == exec {
        return Ok(StateAccess::default());
    }
    let size = entry.size;
    Ok(match mode {
        StateMode::RemoteFixed => StateAccess {
            delay: rt.transfer_delay(host, exec, size)? + rt.transfer_delay(exec, host, size)?,
            bytes_moved: 2.0 * size,
            migration: false,
            new_host: None,
            transfers: vec![
                StateTransfer { src: host, dst: exec, bytes: size },
                StateTransfer { src: exec, dst: host, bytes: size },
            ],
        },
        StateMode::RemoteMigrate => StateAccess {
            delay: rt.transfer_delay(host, exec, size)?,
            bytes_moved: size,
            migration: true,
            new_host: Some(exec),
            transfers: vec![StateTransfer { src: host, dst: exec, bytes: size }],
        },
        StateMode::Embedded => unreachable!(),
    })
}
