//! Experiment harness: loads scenario and sweep files, runs replications and
//! writes per-run CSV files plus a JSON summary.
//!
//! Output layout for an experiment rooted at `out`:
//!
//! ```text
//! out/summary.json                 one record per (point, replication)
//! out/plotdata.csv                 with --emit-plotdata only
//! out/runs/p000-seed42/invocations.csv
//! out/runs/p000-seed42/links.csv
//! out/runs/p000-seed42/workers.csv
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use chainsim_core::stats::{self, InvocationRow, LinkRow, RunKey, SummaryStats, WorkerRow};
use chainsim_core::workflow::{stage_io, Workflow};
use chainsim_core::{ScenarioConfig, SweepSpec};
use rayon::prelude::*;
use serde::Serialize;

pub const SEED_ENV: &str = "CHAINSIM_SEED";

#[derive(Debug)]
pub enum RunError {
    /// Unreadable or invalid configuration. Exit code 1.
    Config(String),
    /// I/O failure or engine abort. Exit code 2.
    Runtime(anyhow::Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 1,
            Self::Runtime(_) => 2,
        }
    }
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Config(m) => write!(f, "config error: {m}"),
            Self::Runtime(e) => write!(f, "runtime error: {e:#}"),
        }
    }
}

impl std::error::Error for RunError {}

fn runtime(e: impl Into<anyhow::Error>) -> RunError {
    RunError::Runtime(e.into())
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig, RunError> {
    let text = fs::read_to_string(path).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
    ScenarioConfig::from_json(&text).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))
}

/// Reads a sweep file. `base` is either an inline scenario or a path to one,
/// relative to the sweep file.
pub fn load_sweep(path: &Path) -> Result<SweepSpec, RunError> {
    let cfg_err = |e: String| RunError::Config(format!("{}: {e}", path.display()));
    let text = fs::read_to_string(path).map_err(|e| cfg_err(e.to_string()))?;
    let mut doc: serde_json::Value = serde_json::from_str(&text).map_err(|e| cfg_err(e.to_string()))?;
    if let Some(rel) = doc.get("base").and_then(|b| b.as_str()).map(str::to_owned) {
        let base_path = path.parent().unwrap_or(Path::new(".")).join(rel);
        let base = load_config(&base_path)?;
        doc["base"] = serde_json::to_value(base).map_err(|e| cfg_err(e.to_string()))?;
    }
    serde_json::from_value(doc).map_err(|e| cfg_err(e.to_string()))
}

/// Seed override from the environment, if set.
pub fn seed_from_env() -> Result<Option<u64>, RunError> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| RunError::Config(format!("{SEED_ENV}={s:?} is not an unsigned 64-bit integer"))),
        Err(_) => Ok(None),
    }
}

/// Problems with a config, without running it.
pub fn validate(cfg: &ScenarioConfig) -> Vec<String> {
    cfg.validate()
}

pub struct RunOutput {
    pub key: RunKey,
    pub invocations: Vec<InvocationRow>,
    pub links: Vec<LinkRow>,
    pub workers: Vec<WorkerRow>,
}

/// Runs every replication of every point. Replications execute in parallel;
/// results come back in (point, replication) order regardless.
pub fn execute(points: &[(String, ScenarioConfig)], seed_override: Option<u64>) -> Result<Vec<RunOutput>, RunError> {
    let mut jobs = Vec::new();
    for (point, (label, cfg)) in points.iter().enumerate() {
        let violations = cfg.validate();
        if !violations.is_empty() {
            return Err(RunError::Config(violations.join("; ")));
        }
        let base_seed = seed_override.unwrap_or(cfg.seed);
        for r in 0..cfg.replications {
            let seed = base_seed.wrapping_add(u64::from(r));
            jobs.push((point, label.clone(), cfg, r, seed));
        }
    }
    jobs.into_par_iter()
        .map(|(point, label, cfg, replication, seed)| {
            let scenario = cfg.build(seed).map_err(|e| RunError::Config(e.to_string()))?;
            let log = chainsim_core::run(&scenario).map_err(runtime)?;
            Ok(RunOutput {
                key: RunKey {
                    point,
                    label,
                    replication,
                    seed,
                    dir: format!("runs/p{point:03}-seed{seed}"),
                    horizon_s: cfg.workload.horizon,
                },
                invocations: stats::invocation_rows(&log),
                links: stats::link_rows(&log),
                workers: stats::worker_rows(&log),
            })
        })
        .collect()
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> anyhow::Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub const INVOCATIONS_HEADER: [&str; 8] =
    ["inv_id", "app", "arrival_s", "completion_s", "latency_s", "stages", "state_bytes", "migrations"];
pub const LINKS_HEADER: [&str; 3] = ["node_a", "node_b", "bytes"];
pub const WORKERS_HEADER: [&str; 3] = ["worker_id", "busy_s", "utilization"];

/// Runs an experiment and writes all outputs under `out`.
pub fn run_experiment(
    points: &[(String, ScenarioConfig)],
    out: &Path,
    seed_override: Option<u64>,
    emit_plotdata: bool,
) -> Result<Vec<SummaryStats>, RunError> {
    for (label, cfg) in points {
        let violations = cfg.validate();
        if !violations.is_empty() {
            return Err(RunError::Config(format!("point {label}: {}", violations.join("; "))));
        }
    }
    fs::create_dir_all(out).map_err(|e| runtime(anyhow::anyhow!("cannot create {}: {e}", out.display())))?;
    let outputs = execute(points, seed_override)?;
    let mut summary = Vec::with_capacity(outputs.len());
    for o in &outputs {
        let dir = out.join(&o.key.dir);
        fs::create_dir_all(&dir).map_err(|e| runtime(anyhow::anyhow!("cannot create {}: {e}", dir.display())))?;
        write_csv(&dir.join("invocations.csv"), &o.invocations, &INVOCATIONS_HEADER).map_err(runtime)?;
        write_csv(&dir.join("links.csv"), &o.links, &LINKS_HEADER).map_err(runtime)?;
        write_csv(&dir.join("workers.csv"), &o.workers, &WORKERS_HEADER).map_err(runtime)?;
        summary.push(stats::summarize(o.key.clone(), &o.invocations, &o.workers));
    }
    let json = serde_json::to_string_pretty(&summary).map_err(runtime)? + "\n";
    fs::write(out.join("summary.json"), json).map_err(runtime)?;
    if emit_plotdata {
        fs::write(out.join("plotdata.csv"), plotdata(points.len(), &summary)).map_err(runtime)?;
    }
    Ok(summary)
}

/// Per-point means over replications, one line per swept value.
pub fn plotdata(points: usize, summary: &[SummaryStats]) -> String {
    let mut s = String::from("point,label,replications,mean_latency_s,p95_latency_s,throughput\n");
    for p in 0..points {
        let recs: Vec<&SummaryStats> = summary.iter().filter(|r| r.point == p).collect();
        if recs.is_empty() {
            continue;
        }
        let avg = |f: &dyn Fn(&SummaryStats) -> Option<f64>| {
            let v: Vec<f64> = recs.iter().filter_map(|r| f(r)).collect();
            if v.is_empty() {
                String::new()
            } else {
                (v.iter().sum::<f64>() / v.len() as f64).to_string()
            }
        };
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            p,
            recs[0].label,
            recs.len(),
            avg(&|r| r.mean_latency_s),
            avg(&|r| r.p95_latency_s),
            avg(&|r| Some(r.throughput)),
        );
    }
    s
}

/// Human-readable route table and workflow summary.
pub fn describe(cfg: &ScenarioConfig) -> Result<String, RunError> {
    let scenario = cfg.build(cfg.seed).map_err(|e| RunError::Config(e.to_string()))?;
    let rt = &scenario.routes;
    let mut s = String::new();
    let _ = writeln!(s, "nodes:");
    for n in rt.nodes() {
        match n.role {
            chainsim_core::Role::Worker => {
                let _ = writeln!(s, "  {:>4}  worker  cores={} core_speed={}", n.id, n.cores, n.core_speed);
            }
            role => {
                let _ = writeln!(s, "  {:>4}  {}", n.id, format!("{role:?}").to_lowercase());
            }
        }
    }
    let _ = writeln!(s, "routes:");
    let _ =
        writeln!(s, "  {:>4} {:>4} {:>4} {:>14} {:>14}  path", "src", "dst", "hops", "propagation_s", "bottleneck_Bps");
    for a in rt.nodes() {
        for b in rt.nodes() {
            if a.id == b.id {
                continue;
            }
            let r = rt.route(a.id, b.id).map_err(runtime)?;
            let path: Vec<String> = r.path.iter().map(u32::to_string).collect();
            let _ = writeln!(
                s,
                "  {:>4} {:>4} {:>4} {:>14.6} {:>14}  {}",
                a.id,
                b.id,
                r.hop_count(),
                r.propagation,
                r.bottleneck_rate,
                path.join("-")
            );
        }
    }
    let _ = writeln!(s, "workflows:");
    for app in &scenario.apps {
        describe_workflow(&mut s, &app.workflow, app.client, app.load.rate);
    }
    let _ = writeln!(
        s,
        "policy={} state_mode={} seed={} replications={} horizon_s={} candidates={:?}",
        cfg.policy.name(),
        cfg.state_mode.name(),
        cfg.seed,
        cfg.replications,
        cfg.workload.horizon,
        scenario.candidates
    );
    Ok(s)
}

fn describe_workflow(s: &mut String, wf: &Workflow, client: u32, rate: f64) {
    let _ = writeln!(s, "  app {} (client {}, rate {}/s, entry {} B)", wf.app_id, client, rate, wf.entry_payload);
    let inputs = wf.input_sizes(wf.entry_payload);
    for &v in wf.topo_order() {
        let f = wf.function(v);
        let (ops, out) = stage_io(f, inputs[v]);
        let succ: Vec<&str> = wf.succs(v).iter().map(|&x| wf.function(x).id.as_str()).collect();
        let _ = writeln!(
            s,
            "    {:<16} in={} B ops={} out={} B state={} B -> [{}]",
            f.id,
            inputs[v],
            ops,
            out,
            f.state_size,
            succ.join(", ")
        );
    }
}

/// Expands a sweep file into its labelled scenario points.
pub fn sweep_points(path: &Path) -> Result<Vec<(String, ScenarioConfig)>, RunError> {
    let spec = load_sweep(path)?;
    spec.points().map_err(|e| RunError::Config(e.to_string()))
}
