//! Per-invocation rows and the summary statistics derived from them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{MetricsLog, WorkerUsage};
use crate::topology::NodeId;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("percentile of an empty sample")]
    Empty,
    #[error("percentile rank {0} outside (0, 1]")]
    BadRank(f64),
}

/// Nearest-rank percentile: the `ceil(p * n)`-th smallest value.
pub fn percentile(values: &[f64], p: f64) -> Result<f64, StatsError> {
    if values.is_empty() {
        return Err(StatsError::Empty);
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(StatsError::BadRank(p));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(percentile_sorted(&sorted, p))
}

fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let rank = (p * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// One line of `invocations.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvocationRow {
    pub inv_id: u64,
    pub app: String,
    pub arrival_s: f64,
    pub completion_s: Option<f64>,
    pub latency_s: Option<f64>,
    pub stages: usize,
    pub state_bytes: f64,
    pub migrations: usize,
}

/// One line of `links.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkRow {
    pub node_a: NodeId,
    pub node_b: NodeId,
    pub bytes: f64,
}

/// One line of `workers.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkerRow {
    pub worker_id: NodeId,
    pub busy_s: f64,
    pub utilization: f64,
}

impl From<&WorkerUsage> for WorkerRow {
    fn from(w: &WorkerUsage) -> Self {
        Self { worker_id: w.worker_id, busy_s: w.busy_s, utilization: w.utilization }
    }
}

pub fn invocation_rows(m: &MetricsLog) -> Vec<InvocationRow> {
    m.invocations
        .iter()
        .map(|r| InvocationRow {
            inv_id: r.id,
            app: r.app.clone(),
            arrival_s: r.arrival_s,
            completion_s: r.completion_s,
            latency_s: r.latency_s,
            stages: r.stages.len(),
            state_bytes: r.state_bytes(),
            migrations: r.migrations(),
        })
        .collect()
}

pub fn link_rows(m: &MetricsLog) -> Vec<LinkRow> {
    m.links.iter().map(|l| LinkRow { node_a: l.node_a, node_b: l.node_b, bytes: l.bytes }).collect()
}

pub fn worker_rows(m: &MetricsLog) -> Vec<WorkerRow> {
    m.workers.iter().map(WorkerRow::from).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkerUtilization {
    pub worker_id: NodeId,
    pub utilization: f64,
}

/// Statistics of one (scenario point, replication) pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub point: usize,
    /// Value of the swept field at this point, or "base".
    pub label: String,
    pub replication: u32,
    pub seed: u64,
    /// Run directory relative to the output root.
    pub dir: String,
    pub horizon_s: f64,
    pub injected: usize,
    pub completed: usize,
    pub mean_latency_s: Option<f64>,
    pub p50_latency_s: Option<f64>,
    pub p95_latency_s: Option<f64>,
    pub p99_latency_s: Option<f64>,
    /// Completed invocations per second of horizon.
    pub throughput: f64,
    pub total_state_bytes: f64,
    pub total_migrations: usize,
    pub worker_utilization: Vec<WorkerUtilization>,
}

/// Identifies a run within an experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct RunKey {
    pub point: usize,
    pub label: String,
    pub replication: u32,
    pub seed: u64,
    pub dir: String,
    pub horizon_s: f64,
}

/// Summary computed purely from the CSV rows of a run.
pub fn summarize(key: RunKey, invocations: &[InvocationRow], workers: &[WorkerRow]) -> SummaryStats {
    let latencies: Vec<f64> = invocations.iter().filter_map(|r| r.latency_s).collect();
    let mut sorted = latencies.clone();
    sorted.sort_by(f64::total_cmp);
    let pct = |p: f64| (!sorted.is_empty()).then(|| percentile_sorted(&sorted, p));
    let completed = latencies.len();
    SummaryStats {
        point: key.point,
        label: key.label,
        replication: key.replication,
        seed: key.seed,
        dir: key.dir,
        horizon_s: key.horizon_s,
        injected: invocations.len(),
        completed,
        mean_latency_s: (completed > 0).then(|| latencies.iter().sum::<f64>() / completed as f64),
        p50_latency_s: pct(0.50),
        p95_latency_s: pct(0.95),
        p99_latency_s: pct(0.99),
        throughput: completed as f64 / key.horizon_s,
        total_state_bytes: invocations.iter().map(|r| r.state_bytes).fold(0.0, |a, b| a + b),
        total_migrations: invocations.iter().map(|r| r.migrations).sum(),
        worker_utilization: workers
            .iter()
            .map(|w| WorkerUtilization { worker_id: w.worker_id, utilization: w.utilization })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn percentile_cases() {
        assert_eq!(percentile(&[5.0], 0.01), Ok(5.0));
        assert_eq!(percentile(&[5.0], 1.0), Ok(5.0));
        assert_eq!(percentile(&[4.0, 2.0, 3.0, 1.0], 0.5), Ok(2.0));
        let hundred: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&hundred, 0.99), Ok(99.0));
        assert_eq!(percentile(&[], 0.5), Err(StatsError::Empty));
        assert_eq!(percentile(&[1.0], 0.0), Err(StatsError::BadRank(0.0)));
    }

    proptest! {
        #[test]
        fn percentiles_are_ordered_sample_members(v in prop::collection::vec(-1e6f64..1e6, 1..200)) {
            let p50 = percentile(&v, 0.5).unwrap();
            let p95 = percentile(&v, 0.95).unwrap();
            let p99 = percentile(&v, 0.99).unwrap();
            prop_assert!(p50 <= p95 && p95 <= p99);
            prop_assert!(v.contains(&p50) && v.contains(&p99));
        }
    }

    #[test]
    fn summary_of_rows() {
        let row = |id: u64, lat: Option<f64>| InvocationRow {
            inv_id: id,
            app: "a".into(),
            arrival_s: 0.0,
            completion_s: lat,
            latency_s: lat,
            stages: 1,
            state_bytes: 10.0,
            migrations: 1,
        };
        let key = RunKey { point: 0, label: "base".into(), replication: 0, seed: 1, dir: "d".into(), horizon_s: 2.0 };
        let s = summarize(key.clone(), &[row(0, Some(1.0)), row(1, Some(3.0)), row(2, None)], &[]);
        assert_eq!(s.completed, 2);
        assert_eq!(s.injected, 3);
        assert_eq!(s.mean_latency_s, Some(2.0));
        assert_eq!(s.p50_latency_s, Some(1.0));
        assert_eq!(s.p99_latency_s, Some(3.0));
        assert_eq!(s.throughput, 1.0);
        assert_eq!(s.total_state_bytes, 30.0);
        assert_eq!(s.total_migrations, 3);
        let empty = summarize(key, &[], &[]);
        assert_eq!(empty.mean_latency_s, None);
    }
}
