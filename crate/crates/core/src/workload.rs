//! Seeded workload generation: Poisson arrivals, payload sizes and compute
//! demand factors.
//!
//! Every random quantity of a run comes from its own ChaCha stream derived
//! from the run seed and a fixed label, so changing one swept parameter does
//! not perturb the draws of the others.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Stream labels. Per-app streams add the app index.
pub mod stream {
    pub const POLICY: u64 = 1;
    pub const ARRIVALS: u64 = 1 << 16;
    pub const PAYLOAD: u64 = 2 << 16;
    pub const COMPUTE: u64 = 3 << 16;
}

pub fn substream(seed: u64, label: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(label);
    rng
}

/// Uniform draw in (0, 1].
fn unit_open_closed<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}

/// Exponential draw with the given mean by inverse transform.
pub fn exponential<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> f64 {
    -unit_open_closed(rng).ln() * mean
}

/// Poisson arrival instants in `[0, horizon)`.
pub fn gen_arrivals<R: Rng + ?Sized>(rate: f64, horizon: f64, rng: &mut R) -> Vec<f64> {
    assert!(rate > 0.0, "arrival rate must be positive");
    let mut times = Vec::with_capacity((rate * horizon).clamp(0.0, 1e8) as usize);
    let mut t = 0.0;
    loop {
        t += -unit_open_closed(rng).ln() / rate;
        if t >= horizon {
            break;
        }
        // Two draws can collapse onto the same double at large t; keep the sequence strictly increasing.
        if times.last().is_some_and(|&last| t <= last) {
            continue;
        }
        times.push(t);
    }
    times
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PayloadDist {
    Constant { bytes: f64 },
    Uniform { lo: f64, hi: f64 },
    Exponential { mean: f64 },
}

impl PayloadDist {
    pub fn validate(&self) -> Option<String> {
        match *self {
            Self::Constant { bytes } if !(bytes.is_finite() && bytes >= 0.0) => {
                Some("constant payload must be finite and non-negative".into())
            }
            Self::Uniform { lo, hi } if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi) => {
                Some("uniform payload needs 0 <= lo <= hi".into())
            }
            Self::Exponential { mean } if !(mean.is_finite() && mean > 0.0) => {
                Some("exponential payload needs mean > 0".into())
            }
            _ => None,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Self::Constant { bytes } => bytes,
            Self::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            Self::Exponential { mean } => exponential(rng, mean),
        }
    }
}

/// One invocation to inject.
#[derive(Clone, Debug, PartialEq)]
pub struct Arrival {
    pub time: f64,
    /// Index into the scenario's apps.
    pub app: usize,
    pub payload: f64,
    /// Multiplies the function's fixed operations at every stage.
    pub compute_factor: f64,
}

/// Load description of one app.
#[derive(Clone, Debug, PartialEq)]
pub struct AppLoad {
    pub rate: f64,
    pub payload: PayloadDist,
}

/// Merges the per-app Poisson streams into one list ordered by (time, app).
pub fn generate(seed: u64, horizon: f64, randomize_compute: bool, apps: &[AppLoad]) -> Vec<Arrival> {
    let mut all = Vec::new();
    for (i, load) in apps.iter().enumerate() {
        let i64 = i as u64;
        let times = gen_arrivals(load.rate, horizon, &mut substream(seed, stream::ARRIVALS + i64));
        let mut payload_rng = substream(seed, stream::PAYLOAD + i64);
        let mut compute_rng = substream(seed, stream::COMPUTE + i64);
        all.extend(times.into_iter().map(|time| Arrival {
            time,
            app: i,
            payload: load.payload.sample(&mut payload_rng),
            compute_factor: if randomize_compute { exponential(&mut compute_rng, 1.0) } else { 1.0 },
        }));
    }
    all.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.app.cmp(&b.app)));
    all
}
