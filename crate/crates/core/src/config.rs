//! JSON scenario and sweep definitions.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dispatch::PolicyKind;
use crate::engine::{AppSpec, Scenario};
use crate::state::StateMode;
use crate::topology::{NodeId, Role, RouteTable, Topology};
use crate::workflow::{validate_chain, validate_dag, FunctionSpec, Workflow, WorkflowSpec};
use crate::workload::{AppLoad, PayloadDist};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot parse config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppLoadConfig {
    pub app_id: String,
    /// Invoking client; defaults to the lowest-id client.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub client: Option<NodeId>,
    /// Invocations per second.
    pub rate: f64,
    /// Defaults to a constant equal to the workflow's entry payload.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<PayloadDist>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadConfig {
    pub horizon: f64,
    #[serde(default)]
    pub randomize_compute: bool,
    pub apps: Vec<AppLoadConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub topology: Topology,
    pub functions: Vec<FunctionSpec>,
    pub workflows: Vec<WorkflowSpec>,
    pub workload: WorkloadConfig,
    pub policy: PolicyKind,
    pub state_mode: StateMode,
    pub seed: u64,
    #[serde(default = "one")]
    pub replications: u32,
    /// Restricts dispatch to these workers; all workers when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<NodeId>>,
}

fn one() -> u32 {
    1
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn catalog(&self) -> BTreeMap<String, FunctionSpec> {
        self.functions.iter().map(|f| (f.id.clone(), f.clone())).collect()
    }

    /// Every violated constraint; empty means the config can be run.
    pub fn validate(&self) -> Vec<String> {
        let mut v: Vec<String> = self.topology.validate();

        let mut fids = BTreeSet::new();
        for f in &self.functions {
            if !fids.insert(f.id.as_str()) {
                v.push(format!("duplicate function id {}", f.id));
            }
            v.extend(f.validate());
        }

        let mut apps = BTreeSet::new();
        for w in &self.workflows {
            if !apps.insert(w.app_id()) {
                v.push(format!("duplicate app id {}", w.app_id()));
            }
            let mut wv = match w {
                WorkflowSpec::Chain(c) => validate_chain(c),
                WorkflowSpec::Dag(_) => Vec::new(),
            };
            if wv.is_empty() {
                wv = validate_dag(&w.to_dag()).into_iter().map(|e| format!("app {}: {}", w.app_id(), e)).collect();
            }
            v.extend(wv);
            for f in &w.to_dag().vertices {
                if !fids.contains(f.as_str()) {
                    v.push(format!("app {}: unknown function {}", w.app_id(), f));
                }
            }
        }

        let wl = &self.workload;
        if !(wl.horizon.is_finite() && wl.horizon > 0.0) {
            v.push("workload horizon must be positive".to_string());
        }
        let mut loaded = BTreeSet::new();
        for a in &wl.apps {
            if !apps.contains(a.app_id.as_str()) {
                v.push(format!("workload references unknown app {}", a.app_id));
            }
            if !loaded.insert(a.app_id.as_str()) {
                v.push(format!("duplicate workload entry for app {}", a.app_id));
            }
            if !(a.rate.is_finite() && a.rate > 0.0) {
                v.push(format!("app {}: rate must be positive", a.app_id));
            }
            if let Some(e) = a.payload.as_ref().and_then(PayloadDist::validate) {
                v.push(format!("app {}: {}", a.app_id, e));
            }
            if let Some(c) = a.client {
                if self.topology.node(c).map(|n| n.role) != Some(Role::Client) {
                    v.push(format!("app {}: node {} is not a client", a.app_id, c));
                }
            }
        }

        if self.replications == 0 {
            v.push("replications must be at least 1".to_string());
        }
        if let Some(c) = &self.candidates {
            if c.is_empty() {
                v.push("candidates list is empty".to_string());
            }
            let mut seen = BTreeSet::new();
            for &w in c {
                if !self.topology.node(w).is_some_and(|n| n.is_worker()) {
                    v.push(format!("candidate {} is not a worker", w));
                }
                if !seen.insert(w) {
                    v.push(format!("duplicate candidate {}", w));
                }
            }
        }
        v
    }

    /// Validated scenario for one run with the given seed.
    pub fn build(&self, seed: u64) -> Result<Scenario, ConfigError> {
        let violations = self.validate();
        if !violations.is_empty() {
            return Err(ConfigError::Invalid(violations));
        }
        let routes = RouteTable::build(&self.topology).map_err(|e| ConfigError::Invalid(vec![e.to_string()]))?;
        let catalog = self.catalog();
        let default_client = self.topology.clients().map(|n| n.id).min().expect("validated: has a client");
        let mut apps = Vec::new();
        for load in &self.workload.apps {
            let spec = self.workflows.iter().find(|w| w.app_id() == load.app_id).expect("validated");
            let workflow = Workflow::new(spec, &catalog).map_err(|e| ConfigError::Invalid(vec![e.to_string()]))?;
            let payload = load.payload.clone().unwrap_or(PayloadDist::Constant { bytes: workflow.entry_payload });
            apps.push(AppSpec {
                workflow,
                client: load.client.unwrap_or(default_client),
                load: AppLoad { rate: load.rate, payload },
            });
        }
        let candidates = self.candidates.clone().unwrap_or_else(|| routes.worker_ids());
        Ok(Scenario {
            routes,
            apps,
            candidates,
            policy: self.policy,
            mode: self.state_mode,
            seed,
            horizon: self.workload.horizon,
            randomize_compute: self.workload.randomize_compute,
        })
    }
}

/// The swept parameter and its values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "field", rename_all = "snake_case", deny_unknown_fields)]
pub enum SweepAxis {
    /// Sets the rate of `app`, or of every app when absent.
    ArrivalRate {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        app: Option<String>,
        values: Vec<f64>,
    },
    Policy {
        values: Vec<PolicyKind>,
    },
    StateMode {
        values: Vec<StateMode>,
    },
    /// Rate of the link joining the two nodes.
    LinkRate {
        link: [NodeId; 2],
        values: Vec<f64>,
    },
}

impl SweepAxis {
    pub fn len(&self) -> usize {
        match self {
            Self::ArrivalRate { values, .. } | Self::LinkRate { values, .. } => values.len(),
            Self::Policy { values } => values.len(),
            Self::StateMode { values } => values.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub base: ScenarioConfig,
    pub sweep: SweepAxis,
    /// Overrides the base scenario's replication count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replications: Option<u32>,
}

impl SweepSpec {
    /// One config per swept value, labelled by that value.
    pub fn points(&self) -> Result<Vec<(String, ScenarioConfig)>, ConfigError> {
        if self.sweep.is_empty() {
            return Err(ConfigError::Invalid(vec!["sweep has no values".into()]));
        }
        let mut base = self.base.clone();
        if let Some(r) = self.replications {
            base.replications = r;
        }
        let base = &base;
        let mut out = Vec::new();
        match &self.sweep {
            SweepAxis::ArrivalRate { app, values } => {
                if let Some(a) = app {
                    if !base.workload.apps.iter().any(|x| &x.app_id == a) {
                        return Err(ConfigError::Invalid(vec![format!("sweep references unknown app {}", a)]));
                    }
                }
                for &r in values {
                    let mut c = base.clone();
                    for load in &mut c.workload.apps {
                        if app.as_ref().is_none_or(|a| *a == load.app_id) {
                            load.rate = r;
                        }
                    }
                    out.push((r.to_string(), c));
                }
            }
            SweepAxis::Policy { values } => {
                for &p in values {
                    let mut c = base.clone();
                    c.policy = p;
                    out.push((p.name().to_string(), c));
                }
            }
            SweepAxis::StateMode { values } => {
                for &m in values {
                    let mut c = base.clone();
                    c.state_mode = m;
                    out.push((m.name().to_string(), c));
                }
            }
            SweepAxis::LinkRate { link, values } => {
                let [a, b] = *link;
                let idx =
                    base.topology.links.iter().position(|l| (l.a, l.b) == (a, b) || (l.a, l.b) == (b, a)).ok_or_else(
                        || ConfigError::Invalid(vec![format!("sweep references unknown link {}-{}", a, b)]),
                    )?;
                for &r in values {
                    let mut c = base.clone();
                    c.topology.links[idx].rate = r;
                    out.push((r.to_string(), c));
                }
            }
        }
        let violations: Vec<String> = out
            .iter()
            .flat_map(|(label, c)| c.validate().into_iter().map(move |e| format!("point {}: {}", label, e)))
            .collect();
        if !violations.is_empty() {
            return Err(ConfigError::Invalid(violations));
        }
        Ok(out)
    }
}
