//! Synthetic recordings with a known latent cause.
//!
//! Each utterance follows a smooth latent trajectory `z(t)` (per component a
//! sum of sinusoids). The trajectory moves and bends a bright tongue-like
//! ridge across the 64 scanlines, and a fixed random map of
//! `[z, z², z_i z_j]` squashed by `tanh` yields the 80 targets. Frames
//! therefore determine targets up to speckle noise.

use std::f64::consts::PI;

use super::raw::{RawUtterance, FRAME_RATE, SAMPLES_PER_LINE, SCANLINES};
use crate::error::{Error, Result};
use crate::models::TARGETS;
use crate::tensor::{Rng, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_utterances: usize,
    pub frames_per_utterance: usize,
    pub latent_dim: usize,
    pub noise_level: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_utterances: 40,
            frames_per_utterance: 200,
            latent_dim: 2,
            noise_level: 0.05,
            seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_utterances == 0 || self.frames_per_utterance == 0 || self.latent_dim == 0 {
            return Err(Error::config(
                "utterances, frames and latent dimension must be positive",
            ));
        }
        if !(self.noise_level >= 0.0) || !self.noise_level.is_finite() {
            return Err(Error::config(format!(
                "noise level must be >= 0, got {}",
                self.noise_level
            )));
        }
        Ok(())
    }
}

/// A recording with its frame-synchronous `[T, 80]` targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub raw: RawUtterance,
    pub targets: Tensor<f32>,
}

const SINES: usize = 3;
const RIDGE_BASE: f64 = 473.0;
const RIDGE_WIDTH: f64 = 22.0;
const RIDGE_PEAK: f64 = 200.0;
const BACKGROUND: f64 = 20.0;

/// Legendre polynomial `P_k(x)`.
fn legendre(k: usize, x: f64) -> f64 {
    let (mut p0, mut p1) = (1.0, x);
    if k == 0 {
        return p0;
    }
    for n in 1..k {
        let n = n as f64;
        let p2 = ((2.0 * n + 1.0) * x * p1 - n * p0) / (n + 1.0);
        p0 = p1;
        p1 = p2;
    }
    p1
}

/// Ridge excursion (in samples) driven by latent component `k`.
fn shape_amplitude(k: usize) -> f64 {
    if k == 0 {
        220.0
    } else {
        120.0 / k as f64
    }
}

/// Quadratic feature vector `[z, z², z_i z_j (i < j)]`.
pub(crate) fn latent_features(z: &[f64]) -> Vec<f64> {
    let mut f: Vec<f64> = z.to_vec();
    f.extend(z.iter().map(|v| v * v));
    for i in 0..z.len() {
        for j in i + 1..z.len() {
            f.push(z[i] * z[j]);
        }
    }
    f
}

struct Trajectory {
    freq: Vec<[f64; SINES]>,
    phase: Vec<[f64; SINES]>,
}

impl Trajectory {
    fn sample(latent_dim: usize, rng: &mut Rng) -> Self {
        let mut freq = Vec::with_capacity(latent_dim);
        let mut phase = Vec::with_capacity(latent_dim);
        for _ in 0..latent_dim {
            freq.push([(); SINES].map(|_| rng.uniform_range(0.02, 0.08)));
            phase.push([(); SINES].map(|_| rng.uniform_range(0.0, 2.0 * PI)));
        }
        Trajectory { freq, phase }
    }

    /// Latent vector at frame `t`, each component in `[-1, 1]`.
    fn at(&self, t: usize) -> Vec<f64> {
        self.freq
            .iter()
            .zip(&self.phase)
            .map(|(f, p)| {
                f.iter()
                    .zip(p)
                    .map(|(f, p)| (2.0 * PI * f * t as f64 + p).sin())
                    .sum::<f64>()
                    / SINES as f64
            })
            .collect()
    }
}

/// Ridge depth along each scanline for latent `z`.
pub(crate) fn ridge_depths(z: &[f64]) -> Vec<f64> {
    (0..SCANLINES)
        .map(|a| {
            let x = 2.0 * a as f64 / (SCANLINES - 1) as f64 - 1.0;
            RIDGE_BASE
                + z.iter()
                    .enumerate()
                    .map(|(k, zk)| shape_amplitude(k) * zk * legendre(k, x))
                    .sum::<f64>()
        })
        .collect()
}

/// Deterministic synthetic utterances `synth000`, `synth001`, ...
pub fn gen_synthetic(config: &SynthConfig) -> Result<Vec<Utterance>> {
    config.validate()?;
    let l = config.latent_dim;
    let features = latent_features(&vec![0.0; l]).len();
    let mut rng = Rng::with_stream(config.seed, 0);
    let gain = 1.5 / (features as f64).sqrt();
    let map: Vec<f64> = (0..TARGETS * features)
        .map(|_| rng.normal() * gain)
        .collect();
    let offset: Vec<f64> = (0..TARGETS).map(|_| rng.uniform_range(-0.5, 0.5)).collect();

    let mut out = Vec::with_capacity(config.n_utterances);
    for u in 0..config.n_utterances {
        let mut rng = Rng::with_stream(config.seed, 1 + u as u64);
        let traj = Trajectory::sample(l, &mut rng);
        let t_len = config.frames_per_utterance;
        let mut frames = vec![0u8; t_len * SCANLINES * SAMPLES_PER_LINE];
        let mut targets = vec![0f32; t_len * TARGETS];
        for t in 0..t_len {
            let z = traj.at(t);
            let depths = ridge_depths(&z);
            let frame =
                &mut frames[t * SCANLINES * SAMPLES_PER_LINE..][..SCANLINES * SAMPLES_PER_LINE];
            for (line, &d) in depths.iter().enumerate() {
                for s in 0..SAMPLES_PER_LINE {
                    let r = (s as f64 - d) / RIDGE_WIDTH;
                    let mut v = BACKGROUND + RIDGE_PEAK * (-0.5 * r * r).exp();
                    if config.noise_level > 0.0 {
                        v += config.noise_level * 255.0 * rng.normal();
                    }
                    frame[line * SAMPLES_PER_LINE + s] = v.round().clamp(0.0, 255.0) as u8;
                }
            }
            let phi = latent_features(&z);
            for k in 0..TARGETS {
                let row = &map[k * features..(k + 1) * features];
                let a: f64 = row.iter().zip(&phi).map(|(w, f)| w * f).sum::<f64>() + offset[k];
                targets[t * TARGETS + k] = a.tanh() as f32;
            }
        }
        out.push(Utterance {
            raw: RawUtterance::new(
                format!("synth{u:03}"),
                FRAME_RATE,
                Tensor::new(&[t_len, SCANLINES, SAMPLES_PER_LINE], frames)?,
            )?,
            targets: Tensor::new(&[t_len, TARGETS], targets)?,
        });
    }
    Ok(out)
}
