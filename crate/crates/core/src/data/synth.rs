use std::collections::VecDeque;
use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{SeriesDataset, SECONDS_PER_DAY};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// First step of generated series: Monday 1970-01-05, 00:00 UTC.
const EPOCH_MONDAY: i64 = 4 * SECONDS_PER_DAY;

/// Diffusion-autoregressive traffic-like process on a random geometric graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthStf {
    pub nodes: usize,
    pub steps: usize,
    pub steps_per_day: usize,
    pub seed: u64,
    /// Standard deviation of the innovation noise.
    pub noise: f64,
    /// Probability that an observation is dropped (recorded as 0.0).
    #[serde(default)]
    pub missing_rate: f64,
    /// Connection radius in the unit square.
    #[serde(default = "default_radius")]
    pub radius: f64,
    /// Delayed congestion feedback: each step adds
    /// `congestion·relu(capacity − s[t − congestion_lag])` to the state.
    /// 0 keeps the process linear.
    #[serde(default)]
    pub congestion: f64,
    #[serde(default)]
    pub capacity: f64,
    #[serde(default = "default_lag")]
    pub congestion_lag: usize,
    /// Share of the 0.9 state persistence that comes from neighbours.
    #[serde(default = "default_coupling")]
    pub coupling: f64,
}

fn default_coupling() -> f64 {
    0.4
}

fn default_lag() -> usize {
    11
}

fn default_radius() -> f64 {
    0.4
}

impl SynthStf {
    pub fn new(nodes: usize, steps: usize, seed: u64) -> Self {
        Self {
            nodes,
            steps,
            steps_per_day: 288,
            seed,
            noise: 0.05,
            missing_rate: 0.0,
            radius: default_radius(),
            congestion: 0.0,
            capacity: 0.0,
            congestion_lag: default_lag(),
            coupling: default_coupling(),
        }
    }
}

// State update: s_t = (PERSIST − c)·s_{t-1} + c·(W s_{t-1}) + forcing_t + noise
// for coupling c, plus the optional lagged congestion term.
const PERSIST: f64 = 0.9;
const BURN_IN: usize = 400;

/// Row-stochastic Gaussian-kernel adjacency of a random geometric graph.
fn geometric_graph(n: usize, radius: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<(usize, f64)>> {
    let pts: Vec<(f64, f64)> = (0..n).map(|_| (rng.random(), rng.random())).collect();
    let dist = |i: usize, j: usize| ((pts[i].0 - pts[j].0).powi(2) + (pts[i].1 - pts[j].1).powi(2)).sqrt();
    (0..n)
        .map(|i| {
            let mut row: Vec<(usize, f64)> = (0..n)
                .filter(|&j| j != i && dist(i, j) < radius)
                .map(|j| (j, (-(dist(i, j) / radius).powi(2)).exp()))
                .collect();
            if row.is_empty() {
                let nearest = (0..n)
                    .filter(|&j| j != i)
                    .min_by(|&a, &b| dist(i, a).total_cmp(&dist(i, b)))
                    .expect("at least two nodes");
                row.push((nearest, 1.0));
            }
            let total: f64 = row.iter().map(|(_, w)| w).sum();
            row.iter_mut().for_each(|(_, w)| *w /= total);
            row
        })
        .collect()
}

pub fn synth_stf(cfg: &SynthStf) -> Result<SeriesDataset> {
    let n = cfg.nodes;
    if n < 2 {
        return Err(Error::Config("synthetic STF data needs at least two nodes".into()));
    }
    if cfg.steps_per_day == 0 || !(0.0..1.0).contains(&cfg.missing_rate) || !(cfg.noise >= 0.0) || !(cfg.congestion >= 0.0)
        || !cfg.capacity.is_finite()
        || !(0.0..=PERSIST).contains(&cfg.coupling)
    {
        return Err(Error::Config(format!("invalid synthetic STF settings {cfg:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let graph = geometric_graph(n, cfg.radius, &mut rng);
    let amp: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
    let phase: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..TAU)).collect();
    let level: Vec<f64> = (0..n).map(|_| rng.random_range(40.0..70.0)).collect();
    let spd = cfg.steps_per_day as f64;
    let forcing = |i: usize, t: usize| {
        let w = TAU * (t % cfg.steps_per_day) as f64 / spd;
        amp[i] * ((w + phase[i]).sin() + 0.3 * (2.0 * w + 2.0 * phase[i]).sin())
    };

    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    noise_rng.set_stream(1);
    let mut mask_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    mask_rng.set_stream(2);

    // Burn-in spans whole days so step 0 of the output sits at midnight.
    let burn = BURN_IN.div_ceil(cfg.steps_per_day) * cfg.steps_per_day;
    let mut s = vec![0.0; n];
    // States s[t - lag ..= t]; the front is the lagged one once full.
    let mut past: VecDeque<Vec<f64>> = VecDeque::with_capacity(cfg.congestion_lag + 1);
    let mut values = Vec::with_capacity(cfg.steps * n);
    let mut observed = Vec::with_capacity(cfg.steps * n);
    for t in 0..burn + cfg.steps {
        if past.len() > cfg.congestion_lag {
            past.pop_front();
        }
        past.push_back(s.clone());
        let lagged = (past.len() > cfg.congestion_lag).then(|| &past[0]);
        let next: Vec<f64> = (0..n)
            .map(|i| {
                let neigh: f64 = graph[i].iter().map(|&(j, w)| w * s[j]).sum();
                let eps: f64 = noise_rng.sample(StandardNormal);
                let mut v = (PERSIST - cfg.coupling) * s[i] + cfg.coupling * neigh + forcing(i, t) + cfg.noise * eps;
                if let (Some(l), true) = (lagged, cfg.congestion > 0.0) {
                    v += cfg.congestion * (cfg.capacity - l[i]).max(0.0);
                }
                v
            })
            .collect();
        s = next;
        if t >= burn {
            for i in 0..n {
                let keep = cfg.missing_rate == 0.0 || mask_rng.random::<f64>() >= cfg.missing_rate;
                values.push(if keep { level[i] + 2.0 * s[i] } else { 0.0 });
                observed.push(keep);
            }
        }
    }
    let step_secs = SECONDS_PER_DAY / cfg.steps_per_day as i64;
    let stamps = (0..cfg.steps as i64).map(|t| EPOCH_MONDAY + t * step_secs).collect();
    let values = Tensor::new(&[cfg.steps, n, 1], values)?;
    SeriesDataset::new("synth_stf", values, observed, stamps, cfg.steps_per_day)
}

/// Sum of seeded sinusoids plus trend and noise per channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthLtsf {
    pub nodes: usize,
    pub steps: usize,
    pub components: usize,
    pub seed: u64,
    pub noise: f64,
    #[serde(default = "hourly")]
    pub steps_per_day: usize,
}

fn hourly() -> usize {
    24
}

impl SynthLtsf {
    pub fn new(nodes: usize, steps: usize, seed: u64) -> Self {
        Self { nodes, steps, components: 3, seed, noise: 0.1, steps_per_day: hourly() }
    }
}

pub fn synth_ltsf(cfg: &SynthLtsf) -> Result<SeriesDataset> {
    if cfg.nodes == 0 || cfg.steps_per_day == 0 || !(cfg.noise >= 0.0) {
        return Err(Error::Config(format!("invalid synthetic LTSF settings {cfg:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let spd = cfg.steps_per_day as f64;
    let periods = [spd, 7.0 * spd, spd / 2.0, 2.0 * spd];
    let channels: Vec<(Vec<(f64, f64, f64)>, f64, f64)> = (0..cfg.nodes)
        .map(|_| {
            let comps = (0..cfg.components)
                .map(|k| {
                    let period = periods[k % periods.len()];
                    (rng.random_range(0.2..2.0), period, rng.random_range(0.0..TAU))
                })
                .collect();
            (comps, rng.random_range(-1.0..1.0) / cfg.steps.max(1) as f64, rng.random_range(-5.0..5.0))
        })
        .collect();
    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    noise_rng.set_stream(1);
    let mut values = Vec::with_capacity(cfg.steps * cfg.nodes);
    for t in 0..cfg.steps {
        for (comps, trend, offset) in &channels {
            let tf = t as f64;
            let periodic: f64 = comps.iter().map(|(a, p, ph)| a * (TAU * tf / p + ph).sin()).sum();
            let eps: f64 = noise_rng.sample(StandardNormal);
            values.push(offset + trend * tf + periodic + cfg.noise * eps);
        }
    }
    let step_secs = SECONDS_PER_DAY / cfg.steps_per_day as i64;
    let stamps = (0..cfg.steps as i64).map(|t| EPOCH_MONDAY + t * step_secs).collect();
    let values = Tensor::new(&[cfg.steps, cfg.nodes, 1], values)?;
    SeriesDataset::new("synth_ltsf", values, vec![true; cfg.steps * cfg.nodes], stamps, cfg.steps_per_day)
}
