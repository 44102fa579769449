//! Edge-network model: nodes, links, static routes and payload transfer delays.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type NodeId = u32;

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("unknown node id {0}")]
    UnknownNode(NodeId),
    #[error("invalid topology: {}", .0.join("; "))]
    Invalid(Vec<String>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Client,
    Broker,
    Worker,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: NodeId,
    pub role: Role,
    /// Parallel executors. Zero for clients and brokers.
    #[serde(default)]
    pub cores: u32,
    /// Operations per second of one core. Zero for clients and brokers.
    #[serde(default)]
    pub core_speed: f64,
}

impl NodeSpec {
    pub fn client(id: NodeId) -> Self {
        Self { id, role: Role::Client, cores: 0, core_speed: 0.0 }
    }

    pub fn broker(id: NodeId) -> Self {
        Self { id, role: Role::Broker, cores: 0, core_speed: 0.0 }
    }

    pub fn worker(id: NodeId, cores: u32, core_speed: f64) -> Self {
        Self { id, role: Role::Worker, cores, core_speed }
    }

    pub fn is_worker(&self) -> bool {
        self.role == Role::Worker
    }
}

/// Bidirectional, symmetric link: a delay + rate pipe with no queueing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub a: NodeId,
    pub b: NodeId,
    /// Seconds.
    pub propagation: f64,
    /// Bytes per second.
    pub rate: f64,
}

impl LinkSpec {
    pub fn new(a: NodeId, b: NodeId, propagation: f64, rate: f64) -> Self {
        Self { a, b, propagation, rate }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub nodes: Vec<NodeSpec>,
    pub links: Vec<LinkSpec>,
}

impl Topology {
    pub fn new(nodes: Vec<NodeSpec>, links: Vec<LinkSpec>) -> Self {
        Self { nodes, links }
    }

    pub fn node(&self, id: NodeId) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn workers(&self) -> impl Iterator<Item = &NodeSpec> {
        self.nodes.iter().filter(|n| n.is_worker())
    }

    pub fn clients(&self) -> impl Iterator<Item = &NodeSpec> {
        self.nodes.iter().filter(|n| n.role == Role::Client)
    }

    /// Lists every violated invariant. An empty list means the topology is valid.
    pub fn validate(&self) -> Vec<String> {
        let mut violations = Vec::new();
        let mut ids = BTreeSet::new();
        for n in &self.nodes {
            if !ids.insert(n.id) {
                violations.push(format!("duplicate node id {}", n.id));
            }
            match n.role {
                Role::Worker => {
                    if n.cores == 0 {
                        violations.push(format!("worker {} has no cores", n.id));
                    }
                    if !(n.core_speed.is_finite() && n.core_speed > 0.0) {
                        violations.push(format!("worker {} has non-positive core_speed", n.id));
                    }
                }
                Role::Client | Role::Broker => {
                    if n.cores != 0 || n.core_speed != 0.0 {
                        violations.push(format!("node {} is not a worker but has compute capacity", n.id));
                    }
                }
            }
        }
        if self.nodes.is_empty() {
            violations.push("topology has no nodes".to_string());
        }
        if !self.nodes.iter().any(|n| n.role == Role::Client) {
            violations.push("topology has no client".to_string());
        }
        if !self.nodes.iter().any(|n| n.is_worker()) {
            violations.push("topology has no worker".to_string());
        }

        let mut pairs = BTreeSet::new();
        let mut links_ok = true;
        for (i, l) in self.links.iter().enumerate() {
            for end in [l.a, l.b] {
                if !ids.contains(&end) {
                    violations.push(format!("link {} references unknown node {}", i, end));
                    links_ok = false;
                }
            }
            if l.a == l.b {
                violations.push(format!("link {} is a self-loop on node {}", i, l.a));
            }
            if !(l.propagation.is_finite() && l.propagation >= 0.0) {
                violations.push(format!("link {}-{} has invalid propagation", l.a, l.b));
            }
            if l.rate.is_nan() || l.rate <= 0.0 {
                violations.push(format!("link {}-{} has non-positive rate", l.a, l.b));
            }
            let key = (l.a.min(l.b), l.a.max(l.b));
            if l.a != l.b && !pairs.insert(key) {
                violations.push(format!("duplicate link {}-{}", key.0, key.1));
            }
        }

        if links_ok && !ids.is_empty() && !self.is_connected(&ids) {
            violations.push("topology not connected".to_string());
        }
        violations
    }

    fn is_connected(&self, ids: &BTreeSet<NodeId>) -> bool {
        let mut adj: HashMap<NodeId, Vec<NodeId>> = HashMap::new();
        for l in &self.links {
            adj.entry(l.a).or_default().push(l.b);
            adj.entry(l.b).or_default().push(l.a);
        }
        let start = *ids.iter().next().expect("non-empty");
        let mut seen = BTreeSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for &v in adj.get(&u).map(Vec::as_slice).unwrap_or(&[]) {
                if seen.insert(v) {
                    queue.push_back(v);
                }
            }
        }
        seen.len() == ids.len()
    }
}

/// One hop of a route: link index into the topology plus its parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Hop {
    pub link: usize,
    pub propagation: f64,
    pub rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Route {
    /// Node sequence from source to destination, both included.
    pub path: Vec<NodeId>,
    /// Hops in canonical order (from the lower-id endpoint of the pair).
    /// Delay sums always iterate this order so that both directions agree bit for bit.
    pub hops: Vec<Hop>,
    pub propagation: f64,
    /// Smallest link rate along the route; infinite for the identity route.
    pub bottleneck_rate: f64,
}

impl Route {
    pub fn hop_count(&self) -> usize {
        self.hops.len()
    }

    /// Store-and-forward delay: every hop pays its propagation plus full serialization.
    pub fn delay(&self, nbytes: f64) -> f64 {
        self.hops.iter().map(|h| h.propagation + nbytes / h.rate).fold(0.0, |acc, d| acc + d)
    }
}

/// Ordering used to pick among candidate paths: total propagation, then hop
/// count, then the lexicographically smallest node sequence.
pub fn compare_paths(a: (f64, &[NodeId]), b: (f64, &[NodeId])) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.len().cmp(&b.1.len())).then_with(|| a.1.cmp(b.1))
}

/// All-pairs routes over a validated topology. Immutable once built.
#[derive(Clone, Debug)]
pub struct RouteTable {
    nodes: Vec<NodeSpec>,
    index: HashMap<NodeId, usize>,
    links: Vec<LinkSpec>,
    routes: Vec<Route>,
}

impl RouteTable {
    pub fn build(t: &Topology) -> Result<Self, TopologyError> {
        let violations = t.validate();
        if !violations.is_empty() {
            return Err(TopologyError::Invalid(violations));
        }
        let mut nodes = t.nodes.clone();
        nodes.sort_by_key(|n| n.id);
        let index: HashMap<NodeId, usize> = nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect();
        let n = nodes.len();

        let mut adj: Vec<BTreeMap<usize, usize>> = vec![BTreeMap::new(); n];
        for (li, l) in t.links.iter().enumerate() {
            adj[index[&l.a]].insert(index[&l.b], li);
            adj[index[&l.b]].insert(index[&l.a], li);
        }

        let mut routes: Vec<Option<Route>> = vec![None; n * n];
        for src in 0..n {
            let tree = shortest_paths(&nodes, &adj, &t.links, src);
            for dst in src..n {
                let (prop, path) = tree[dst].clone().expect("topology is connected");
                let hops: Vec<Hop> = path
                    .windows(2)
                    .map(|w| {
                        let li = adj[index[&w[0]]][&index[&w[1]]];
                        let l = &t.links[li];
                        Hop { link: li, propagation: l.propagation, rate: l.rate }
                    })
                    .collect();
                let bottleneck_rate = hops.iter().map(|h| h.rate).fold(f64::INFINITY, f64::min);
                let mut reversed = path.clone();
                reversed.reverse();
                routes[dst * n + src] =
                    Some(Route { path: reversed, hops: hops.clone(), propagation: prop, bottleneck_rate });
                routes[src * n + dst] = Some(Route { path, hops, propagation: prop, bottleneck_rate });
            }
        }

        Ok(Self {
            nodes,
            index,
            links: t.links.clone(),
            routes: routes.into_iter().map(|r| r.expect("all pairs filled")).collect(),
        })
    }

    pub fn route(&self, src: NodeId, dst: NodeId) -> Result<&Route, TopologyError> {
        let s = *self.index.get(&src).ok_or(TopologyError::UnknownNode(src))?;
        let d = *self.index.get(&dst).ok_or(TopologyError::UnknownNode(dst))?;
        Ok(&self.routes[s * self.nodes.len() + d])
    }

    pub fn transfer_delay(&self, src: NodeId, dst: NodeId, nbytes: f64) -> Result<f64, TopologyError> {
        debug_assert!(nbytes >= 0.0);
        Ok(self.route(src, dst)?.delay(nbytes))
    }

    pub fn node(&self, id: NodeId) -> Option<&NodeSpec> {
        self.index.get(&id).map(|&i| &self.nodes[i])
    }

    /// Nodes sorted by id.
    pub fn nodes(&self) -> &[NodeSpec] {
        &self.nodes
    }

    pub fn links(&self) -> &[LinkSpec] {
        &self.links
    }

    pub fn worker_ids(&self) -> Vec<NodeId> {
        self.nodes.iter().filter(|n| n.is_worker()).map(|n| n.id).collect()
    }
}

/// Label-setting Dijkstra whose labels are full paths, so the tie-break on
/// hop count and node sequence is applied during the search. Subpaths of an
/// optimal path are optimal under this order, so the result is exact.
fn shortest_paths(
    nodes: &[NodeSpec],
    adj: &[BTreeMap<usize, usize>],
    links: &[LinkSpec],
    src: usize,
) -> Vec<Option<(f64, Vec<NodeId>)>> {
    let n = nodes.len();
    let mut best: Vec<Option<(f64, Vec<NodeId>)>> = vec![None; n];
    let mut done = vec![false; n];
    best[src] = Some((0.0, vec![nodes[src].id]));
    loop {
        let next = (0..n)
            .filter(|&v| !done[v])
            .filter_map(|v| best[v].as_ref().map(|b| (v, b)))
            .min_by(|x, y| compare_paths((x.1 .0, &x.1 .1), (y.1 .0, &y.1 .1)))
            .map(|(v, _)| v);
        let Some(u) = next else { break };
        done[u] = true;
        let (du, pu) = best[u].clone().expect("selected node has a label");
        for (&v, &li) in &adj[u] {
            if done[v] {
                continue;
            }
            let cand_prop = du + links[li].propagation;
            let mut cand_path = pu.clone();
            cand_path.push(nodes[v].id);
            let better = match &best[v] {
                None => true,
                Some((bp, bpath)) => compare_paths((cand_prop, &cand_path), (*bp, bpath)) == Ordering::Less,
            };
            if better {
                best[v] = Some((cand_prop, cand_path));
            }
        }
    }
    best
}
