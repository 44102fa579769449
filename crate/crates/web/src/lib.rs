//! Browser bindings for the simulator.
//!
//! Every entry point takes a scenario as JSON text and returns JSON text, so
//! the page needs no generated TypeScript types. The `*_json` functions hold
//! the logic and are usable (and tested) off the web as well.

use chainsim_core::engine::{Scenario, Simulation};
use chainsim_core::stats::percentile;
use chainsim_core::workflow::{critical_path, Assignment};
use chainsim_core::workload::Arrival;
use chainsim_core::{PolicyKind, ScenarioConfig, StateRegistry};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

const PRESETS: [(&str, &str); 2] = [
    ("video", include_str!("../../../scenarios/valid/edge_video_chain.json")),
    ("analytics", include_str!("../../../scenarios/valid/dag_analytics.json")),
];

const HISTOGRAM_BINS: usize = 30;

fn parse(config: &str) -> Result<(ScenarioConfig, Scenario), String> {
    let cfg = ScenarioConfig::from_json(config).map_err(|e| e.to_string())?;
    let sc = cfg.build(cfg.seed).map_err(|e| e.to_string())?;
    Ok((cfg, sc))
}

pub fn preset_json(name: &str) -> Result<String, String> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| text.to_string())
        .ok_or_else(|| format!("unknown preset {name:?}"))
}

fn histogram(values: &[f64]) -> Value {
    if values.is_empty() {
        return json!({ "lo": 0.0, "width": 0.0, "counts": [] });
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / HISTOGRAM_BINS as f64 } else { 1.0 };
    let mut counts = vec![0usize; HISTOGRAM_BINS];
    for &v in values {
        let b = (((v - lo) / width) as usize).min(HISTOGRAM_BINS - 1);
        counts[b] += 1;
    }
    json!({ "lo": lo, "width": width, "counts": counts })
}

/// One run of the scenario: latency distribution and per-worker load.
pub fn simulate_json(config: &str) -> Result<Value, String> {
    let (_, sc) = parse(config)?;
    let log = chainsim_core::run(&sc).map_err(|e| e.to_string())?;
    let lat = log.latencies();
    let pct = |p| percentile(&lat, p).ok();
    Ok(json!({
        "injected": log.injected,
        "completed": log.completed,
        "in_flight": log.in_flight_at_end,
        "mean_latency_s": (!lat.is_empty()).then(|| lat.iter().sum::<f64>() / lat.len() as f64),
        "p50_latency_s": pct(0.5),
        "p95_latency_s": pct(0.95),
        "p99_latency_s": pct(0.99),
        "state_bytes": log.total_state_bytes(),
        "migrations": log.total_migrations,
        "histogram": histogram(&lat),
        "workers": log.workers.iter().map(|w| json!({ "id": w.worker_id, "utilization": w.utilization })).collect::<Vec<_>>(),
    }))
}

/// Mean latency of every dispatch policy at each arrival-rate multiplier.
pub fn policy_curves_json(config: &str, scales: &[f64]) -> Result<Value, String> {
    let (cfg, _) = parse(config)?;
    let mut curves = Vec::new();
    for policy in PolicyKind::ALL {
        let mut points = Vec::new();
        for &s in scales {
            let mut c = cfg.clone();
            c.policy = policy;
            for a in &mut c.workload.apps {
                a.rate *= s;
            }
            let sc = c.build(c.seed).map_err(|e| e.to_string())?;
            let log = chainsim_core::run(&sc).map_err(|e| e.to_string())?;
            let lat = log.latencies();
            let mean = (!lat.is_empty()).then(|| lat.iter().sum::<f64>() / lat.len() as f64);
            points.push(json!({ "scale": s, "mean_latency_s": mean, "completed": log.completed }));
        }
        curves.push(json!({ "policy": policy.name(), "points": points }));
    }
    Ok(json!({ "curves": curves }))
}

/// Timeline of a single invocation of the first app on an idle system,
/// alongside the analytic critical path for the same placement.
pub fn trace_json(config: &str) -> Result<Value, String> {
    let (_, sc) = parse(config)?;
    let app = sc.apps.first().ok_or("scenario has no apps")?;
    let entry = app.workflow.entry_payload;
    let arrival = Arrival { time: 0.0, app: 0, payload: entry, compute_factor: 1.0 };
    let log = Simulation::new(&sc, vec![arrival]).and_then(Simulation::run).map_err(|e| e.to_string())?;
    let inv = log.invocations.first().ok_or("invocation was not injected")?;
    let stages: Vec<Value> = inv
        .stages
        .iter()
        .map(|s| {
            let ready = s.dispatch_s + s.transfer_s + s.state_delay_s;
            let start = ready + s.queue_wait_s;
            json!({
                "function": s.function,
                "worker": s.worker,
                "dispatch_s": s.dispatch_s,
                "transfer_s": s.transfer_s,
                "state_delay_s": s.state_delay_s,
                "start_s": start,
                "finish_s": start + s.compute_s,
            })
        })
        .collect();
    let assign: Assignment = inv.stages.iter().map(|s| (s.function.clone(), s.worker)).collect();
    let cp = critical_path(&app.workflow, &assign, &sc.routes, &StateRegistry::default(), sc.mode, app.client, entry)
        .map_err(|e| e.to_string())?;
    let path: Vec<&str> = cp.path.iter().map(|&v| app.workflow.function(v).id.as_str()).collect();
    Ok(json!({
        "app": app.workflow.app_id,
        "latency_s": inv.latency_s,
        "analytic_latency_s": cp.latency,
        "critical_path": path,
        "stages": stages,
    }))
}

fn to_js(r: Result<Value, String>) -> Result<String, JsError> {
    r.map(|v| v.to_string()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn preset(name: &str) -> Result<String, JsError> {
    preset_json(name).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn simulate(config: &str) -> Result<String, JsError> {
    to_js(simulate_json(config))
}

#[wasm_bindgen]
pub fn policy_curves(config: &str, scales: &[f64]) -> Result<String, JsError> {
    to_js(policy_curves_json(config, scales))
}

#[wasm_bindgen]
pub fn trace(config: &str) -> Result<String, JsError> {
    to_js(trace_json(config))
}
