//! Discrete-event simulation and dispatching for stateful serverless function
//! chains and DAGs on an edge network.
//!
//! The crate is organised bottom-up:
//!
//! * [`topology`]: nodes, links, static routes and transfer delays.
//! * [`workflow`]: functions, chains, DAGs and the zero-load critical path.
//! * [`state`]: state placement modes and the cost of reaching state.
//! * [`dispatch`]: the completion-time estimator and the dispatch policies.
//! * [`engine`]: the event-driven simulator.
//! * [`workload`], [`stats`], [`config`]: experiment inputs and outputs.

pub mod config;
pub mod dispatch;
pub mod engine;
pub mod state;
pub mod stats;
pub mod topology;
pub mod workflow;
pub mod workload;

pub use config::{ConfigError, ScenarioConfig, SweepAxis, SweepSpec};
pub use dispatch::{choose_worker, estimate_completion, DispatchContext, PolicyKind, RrState};
pub use engine::{run, run_with_arrivals, EngineError, MetricsLog, Scenario, Simulation};
pub use state::{StateAccess, StateMode, StateRegistry};
pub use topology::{LinkSpec, NodeId, NodeSpec, Role, RouteTable, Topology};
pub use workflow::{
    critical_path, critical_path_time, Assignment, ChainSpec, DagSpec, FunctionSpec, Workflow, WorkflowSpec,
};
