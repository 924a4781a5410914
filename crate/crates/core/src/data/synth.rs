//! Synthetic ship-motion windows.
//!
//! Each channel is a superposition of sinusoids around a class-dependent
//! dominant angular frequency, scaled by the class's wave-height band
//! midpoint and a fixed per-channel response gain, plus white Gaussian noise.
//! The dominant frequency follows the fully-developed-sea peak relation
//! `ω_p ≈ 1.26 / √H`, so rougher seas oscillate more slowly.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sea_state::{Region, SeaStateSpec, SEA_STATE_CLASSES};
use super::window::{LabeledDataset, TimeWindow};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// Channels: heave velocity, pitch angle, pitch velocity, yaw angle.
pub const SHIP_CHANNELS: usize = 4;
const CHANNEL_GAIN: [f64; SHIP_CHANNELS] = [1.0, 0.8, 0.6, 0.4];
const PEAK_COEFF: f64 = 1.26;
const FREQ_SPREAD: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub region: Region,
    pub n_windows: usize,
    /// Window length in samples.
    pub t: usize,
    /// Samples per second.
    pub sample_rate: f64,
    pub seed: u64,
    pub noise_std: f64,
    pub n_sinusoids: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            region: Region::Worldwide,
            n_windows: 2000,
            t: 64,
            sample_rate: 1.0,
            seed: 42,
            noise_std: 0.3,
            n_sinusoids: 3,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_windows == 0 {
            return Err(Error::Config("generator.n_windows must be positive".into()));
        }
        if self.t < 8 {
            return Err(Error::Config(format!("generator.t must be at least 8, got {}", self.t)));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::Config("generator.noise_std must be non-negative".into()));
        }
        if !(self.sample_rate > 0.0) || self.n_sinusoids == 0 {
            return Err(Error::Config("generator.sample_rate and n_sinusoids must be positive".into()));
        }
        Ok(())
    }
}

/// Dominant angular frequency (rad/s) for a class, kept below 90% of Nyquist.
pub fn dominant_frequency(spec: &SeaStateSpec, sample_rate: f64) -> f64 {
    (PEAK_COEFF / spec.amplitude().sqrt()).min(0.9 * PI * sample_rate)
}

fn window_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn draw_label(priors: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in priors.iter().enumerate() {
        acc += p;
        if u < acc {
            return i + 1;
        }
    }
    priors.len()
}

/// Synthesizes one window of class `label` from `rng`.
pub fn synth_window(cfg: &GeneratorConfig, spec: &SeaStateSpec, rng: &mut ChaCha8Rng) -> Tensor {
    let omega = dominant_frequency(spec, cfg.sample_rate);
    let amp = spec.amplitude();
    let noise = Normal::new(0.0, cfg.noise_std.max(0.0)).expect("finite std");
    let norm = (cfg.n_sinusoids as f64).sqrt();
    let mut data = Vec::with_capacity(SHIP_CHANNELS * cfg.t);
    for gain in CHANNEL_GAIN {
        let comps: Vec<(f64, f64, f64)> = (0..cfg.n_sinusoids)
            .map(|_| {
                let w = omega * (1.0 + rng.gen_range(-FREQ_SPREAD..=FREQ_SPREAD));
                let a = amp * gain * rng.gen_range(0.75..1.25) / norm;
                let phase = rng.gen_range(0.0..2.0 * PI);
                (w, a, phase)
            })
            .collect();
        for step in 0..cfg.t {
            let time = step as f64 / cfg.sample_rate;
            let clean: f64 = comps.iter().map(|(w, a, p)| a * (w * time + p).sin()).sum();
            let eps = if cfg.noise_std > 0.0 { noise.sample(rng) } else { 0.0 };
            data.push(clean + eps);
        }
    }
    Tensor::new(vec![SHIP_CHANNELS, cfg.t], data).expect("shape")
}

/// Generates a labeled dataset. Window `i` depends only on `(seed, i)`.
pub fn synth_generate(cfg: &GeneratorConfig) -> Result<LabeledDataset> {
    cfg.validate()?;
    let classes = cfg.region.classes();
    let priors: Vec<f64> = classes.iter().map(|c| c.prior).collect();
    let windows: Vec<TimeWindow> = (0..cfg.n_windows as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(window_seed(cfg.seed, i));
            let label = draw_label(&priors, rng.gen::<f64>());
            let values = synth_window(cfg, &classes[label - 1], &mut rng);
            TimeWindow { values, label }
        })
        .collect();
    LabeledDataset::new(windows, SEA_STATE_CLASSES)
}

/// Two-class sanity set: class 1 sits at `+1`, class 2 at `−1`, with uniform
/// noise in `[−0.4, 0.4]`, so the class means are separated by a margin of
/// at least 1.2 on every value. Labels alternate.
pub fn separable_dataset(n: usize, f: usize, t: usize, seed: u64) -> Result<LabeledDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let windows = (0..n)
        .map(|i| {
            let label = i % 2 + 1;
            let centre = if label == 1 { 1.0 } else { -1.0 };
            let data = (0..f * t).map(|_| centre + rng.gen_range(-0.4..=0.4)).collect();
            TimeWindow::new(Tensor::new(vec![f, t], data)?, label)
        })
        .collect::<Result<Vec<_>>>()?;
    LabeledDataset::new(windows, 2)
}

/// Root-mean-square over all values of a window.
pub fn window_rms(w: &TimeWindow) -> f64 {
    let d = w.values.data();
    (d.iter().map(|v| v * v).sum::<f64>() / d.len() as f64).sqrt()
}
