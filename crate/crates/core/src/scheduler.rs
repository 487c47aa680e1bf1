//! Forward/reverse diffusion, offset noise and Min-SNR weighting.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("schedule configuration error: {0}")]
    Config(String),
    #[error("timestep {t} out of range for T = {steps}")]
    Index { t: usize, steps: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
}

type Result<T> = std::result::Result<T, ScheduleError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    #[default]
    Linear,
    Cosine,
}

/// Per-step variances and their cumulative retention products, in f64.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
    pub beta_min: f64,
    pub beta_max: f64,
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
}

const COSINE_OFFSET: f64 = 0.008;

impl NoiseSchedule {
    pub fn build(kind: ScheduleKind, steps: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if steps < 2 {
            return Err(ScheduleError::Config(format!("T must be at least 2, got {steps}")));
        }
        if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
            return Err(ScheduleError::Config(format!(
                "need 0 < beta_min <= beta_max < 1, got {beta_min}, {beta_max}"
            )));
        }
        let beta: Vec<f64> = match kind {
            ScheduleKind::Linear => (0..steps)
                .map(|t| beta_min + (beta_max - beta_min) * t as f64 / (steps - 1) as f64)
                .collect(),
            ScheduleKind::Cosine => {
                let f = |t: usize| {
                    let x = (t as f64 / steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET);
                    (x * std::f64::consts::FRAC_PI_2).cos().powi(2)
                };
                (0..steps).map(|t| (1.0 - f(t + 1) / f(t)).clamp(1e-12, 0.999)).collect()
            }
        };
        let mut s = Self::from_betas(beta)?;
        s.kind = kind;
        s.beta_min = beta_min;
        s.beta_max = beta_max;
        Ok(s)
    }

    /// Schedule from explicit per-step variances.
    pub fn from_betas(beta: Vec<f64>) -> Result<Self> {
        if beta.len() < 2 {
            return Err(ScheduleError::Config("T must be at least 2".into()));
        }
        if let Some(b) = beta.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(ScheduleError::Config(format!("beta {b} outside (0, 1)")));
        }
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(alpha.len());
        let mut acc = 1.0;
        for &a in &alpha {
            acc *= a;
            alpha_bar.push(acc);
        }
        let (lo, hi) = beta.iter().fold((f64::INFINITY, 0.0f64), |(l, h), &b| (l.min(b), h.max(b)));
        Ok(Self {
            kind: ScheduleKind::Linear,
            beta_min: lo,
            beta_max: hi,
            beta,
            alpha,
            alpha_bar,
        })
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t >= self.steps() {
            return Err(ScheduleError::Index { t, steps: self.steps() });
        }
        Ok(())
    }

    /// ᾱ before step `t`; 1 for the first step.
    pub fn alpha_bar_prev(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    /// Posterior variance β̃_t.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        self.beta[t] * (1.0 - self.alpha_bar_prev(t)) / (1.0 - self.alpha_bar[t])
    }
}

/// `√ᾱ_t·x0 + √(1−ᾱ_t)·noise` for a single timestep.
pub fn forward_diffuse(x0: &Tensor, t: usize, noise: &Tensor, schedule: &NoiseSchedule) -> Result<Tensor> {
    let n = x0.shape().first().copied().unwrap_or(1);
    forward_diffuse_batch(x0, &vec![t; n], noise, schedule)
}

/// Closed-form corruption with one timestep per leading-axis sample.
pub fn forward_diffuse_batch(x0: &Tensor, t: &[usize], noise: &Tensor, schedule: &NoiseSchedule) -> Result<Tensor> {
    if x0.shape() != noise.shape() {
        return Err(ScheduleError::Shape(format!("x0 {:?} vs noise {:?}", x0.shape(), noise.shape())));
    }
    let n = x0.shape()[0];
    if t.len() != n {
        return Err(ScheduleError::Shape(format!("{} timesteps for {n} samples", t.len())));
    }
    let per = x0.numel() / n;
    let mut out = Vec::with_capacity(x0.numel());
    for (i, &ti) in t.iter().enumerate() {
        schedule.check_t(ti)?;
        let ab = schedule.alpha_bar[ti];
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        let xs = &x0.data()[i * per..(i + 1) * per];
        let ns = &noise.data()[i * per..(i + 1) * per];
        out.extend(xs.iter().zip(ns).map(|(&x, &e)| (a * x as f64 + b * e as f64) as f32));
    }
    Ok(Tensor::new(x0.shape(), out).expect("finite inputs give finite output"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OffsetNoiseConfig {
    pub gamma: f32,
    pub enabled: bool,
    /// Share one offset across all channels of a sample.
    pub per_sample_only: bool,
}

impl Default for OffsetNoiseConfig {
    fn default() -> Self {
        Self {
            gamma: 0.2,
            enabled: true,
            per_sample_only: false,
        }
    }
}

impl OffsetNoiseConfig {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }
}

/// `ε + γ·ν` with `ν` constant over the spatial axes. Draws all of `ε`
/// first, then one `ν` per (sample, channel) or per sample.
pub fn sample_offset_noise<R: Rng + ?Sized>(shape: &[usize], config: &OffsetNoiseConfig, rng: &mut R) -> Result<Tensor> {
    if shape.len() < 3 || shape.contains(&0) {
        return Err(ScheduleError::Shape(format!("offset noise needs [N, C, spatial..], got {shape:?}")));
    }
    if !(config.gamma >= 0.0) {
        return Err(ScheduleError::Config(format!("offset gamma {} must be non-negative", config.gamma)));
    }
    let eps = Tensor::randn(shape, rng);
    if !config.enabled {
        return Ok(eps);
    }
    let (n, c) = (shape[0], shape[1]);
    let plane: usize = shape[2..].iter().product();
    let mut data = eps.to_vec();
    for i in 0..n {
        let shared: f32 = if config.per_sample_only { StandardNormal.sample(rng) } else { 0.0 };
        for ch in 0..c {
            let nu = if config.per_sample_only { shared } else { StandardNormal.sample(rng) };
            let off = config.gamma * nu;
            data[(i * c + ch) * plane..(i * c + ch + 1) * plane].iter_mut().for_each(|v| *v += off);
        }
    }
    Ok(Tensor::new(shape, data).expect("finite noise"))
}

/// `ᾱ_t / (1 − ᾱ_t)`; `f64::INFINITY` when `ᾱ_t` is exactly 1.
pub fn snr(t: usize, schedule: &NoiseSchedule) -> Result<f64> {
    schedule.check_t(t)?;
    Ok(snr_of(schedule.alpha_bar[t]))
}

fn snr_of(alpha_bar: f64) -> f64 {
    if alpha_bar >= 1.0 {
        f64::INFINITY
    } else {
        alpha_bar / (1.0 - alpha_bar)
    }
}

/// `min(SNR, γ_snr) / SNR`.
pub fn min_snr_weight(t: usize, gamma_snr: f64, schedule: &NoiseSchedule) -> Result<f64> {
    if !(gamma_snr > 0.0) {
        return Err(ScheduleError::Config(format!("gamma_snr {gamma_snr} must be positive")));
    }
    let s = snr(t, schedule)?;
    Ok(if s <= gamma_snr { 1.0 } else { gamma_snr / s })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Ddpm,
    #[default]
    Ddim,
}

fn check_step_inputs(x_t: &Tensor, eps_pred: &Tensor, eta: f64) -> Result<()> {
    if x_t.shape() != eps_pred.shape() {
        return Err(ScheduleError::Shape(format!("x_t {:?} vs eps {:?}", x_t.shape(), eps_pred.shape())));
    }
    if !(0.0..=1.0).contains(&eta) {
        return Err(ScheduleError::Config(format!("eta {eta} outside [0, 1]")));
    }
    Ok(())
}

/// One reverse step from `t` to `t − 1`.
pub fn reverse_step<R: Rng + ?Sized>(
    x_t: &Tensor,
    eps_pred: &Tensor,
    t: usize,
    schedule: &NoiseSchedule,
    sampler: SamplerKind,
    eta: f64,
    rng: &mut R,
) -> Result<Tensor> {
    let prev = t.checked_sub(1);
    reverse_step_to(x_t, eps_pred, t, prev, schedule, sampler, eta, false, rng)
}

/// Reverse step from `t` to `prev` (`None` means the clean image).
/// DDPM ignores `prev` and always moves one step. With `clip_x0` the
/// implied clean estimate is clamped to `[−1, 1]` before use.
#[allow(clippy::too_many_arguments)]
pub fn reverse_step_to<R: Rng + ?Sized>(
    x_t: &Tensor,
    eps_pred: &Tensor,
    t: usize,
    prev: Option<usize>,
    schedule: &NoiseSchedule,
    sampler: SamplerKind,
    eta: f64,
    clip_x0: bool,
    rng: &mut R,
) -> Result<Tensor> {
    check_step_inputs(x_t, eps_pred, eta)?;
    schedule.check_t(t)?;
    let ab = schedule.alpha_bar[t];
    let x = x_t.data();
    let e = eps_pred.data();
    let x0_hat = |i: usize| {
        let v = (x[i] as f64 - (1.0 - ab).sqrt() * e[i] as f64) / ab.sqrt();
        if clip_x0 {
            v.clamp(-1.0, 1.0)
        } else {
            v
        }
    };
    let n = x.len();
    let out: Vec<f32> = match sampler {
        SamplerKind::Ddpm => {
            let ab_prev = schedule.alpha_bar_prev(t);
            let beta = schedule.beta[t];
            let sigma = if t > 0 { schedule.posterior_variance(t).sqrt() } else { 0.0 };
            let mut z = vec![0.0f64; n];
            if t > 0 {
                z.iter_mut().for_each(|v| *v = StandardNormal.sample(rng));
            }
            (0..n)
                .map(|i| {
                    let mean = if clip_x0 {
                        let c0 = ab_prev.sqrt() * beta / (1.0 - ab);
                        let ct = schedule.alpha[t].sqrt() * (1.0 - ab_prev) / (1.0 - ab);
                        c0 * x0_hat(i) + ct * x[i] as f64
                    } else {
                        (x[i] as f64 - beta / (1.0 - ab).sqrt() * e[i] as f64) / schedule.alpha[t].sqrt()
                    };
                    (mean + sigma * z[i]) as f32
                })
                .collect()
        }
        SamplerKind::Ddim => {
            let ab_prev = match prev {
                Some(p) => {
                    if p >= t {
                        return Err(ScheduleError::Config(format!("previous step {p} not before {t}")));
                    }
                    schedule.alpha_bar[p]
                }
                None => 1.0,
            };
            let sigma = eta * ((1.0 - ab_prev) / (1.0 - ab) * (1.0 - ab / ab_prev)).sqrt();
            let dir = (1.0 - ab_prev - sigma * sigma).max(0.0).sqrt();
            let mut z = vec![0.0f64; n];
            if sigma > 0.0 {
                z.iter_mut().for_each(|v| *v = StandardNormal.sample(rng));
            }
            (0..n)
                .map(|i| {
                    let x0 = x0_hat(i);
                    let eps = if clip_x0 {
                        (x[i] as f64 - ab.sqrt() * x0) / (1.0 - ab).sqrt()
                    } else {
                        e[i] as f64
                    };
                    (ab_prev.sqrt() * x0 + dir * eps + sigma * z[i]) as f32
                })
                .collect()
        }
    };
    Tensor::new(x_t.shape(), out).map_err(|_| ScheduleError::Shape("non-finite reverse step".into()))
}

/// Descending timesteps visited by a sampler: every step for DDPM, an
/// evenly spaced subset of `steps` timesteps for DDIM.
pub fn sampling_timesteps(schedule: &NoiseSchedule, sampler: SamplerKind, steps: usize) -> Vec<usize> {
    let total = schedule.steps();
    if sampler == SamplerKind::Ddpm || steps == 0 || steps >= total {
        return (0..total).rev().collect();
    }
    let mut ts: Vec<usize> = (0..steps)
        .map(|i| ((i as f64 * (total - 1) as f64 / (steps - 1).max(1) as f64).round()) as usize)
        .collect();
    ts.dedup();
    ts.reverse();
    ts
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    /// DDIM timestep count; ignored by DDPM.
    pub steps: usize,
    pub eta: f64,
    pub clip_x0: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            kind: SamplerKind::Ddim,
            steps: 50,
            eta: 0.0,
            clip_x0: true,
        }
    }
}

/// Runs a full reverse trajectory from `x_t` at the last timestep. `eps_fn`
/// predicts noise for a batch at one timestep. The result is clamped to
/// `[−1, 1]` when `clip_x0` is set.
pub fn sample_loop<R, F>(
    x_start: Tensor,
    schedule: &NoiseSchedule,
    config: &SamplerConfig,
    rng: &mut R,
    mut eps_fn: F,
) -> std::result::Result<Tensor, Box<dyn std::error::Error + Send + Sync>>
where
    R: Rng + ?Sized,
    F: FnMut(&Tensor, usize) -> std::result::Result<Tensor, Box<dyn std::error::Error + Send + Sync>>,
{
    let ts = sampling_timesteps(schedule, config.kind, config.steps);
    let mut x = x_start;
    for (i, &t) in ts.iter().enumerate() {
        let eps = eps_fn(&x, t)?;
        let prev = ts.get(i + 1).copied();
        x = reverse_step_to(&x, &eps, t, prev, schedule, config.kind, config.eta, config.clip_x0, rng)?;
    }
    if config.clip_x0 {
        let d = x.data().iter().map(|v| v.clamp(-1.0, 1.0)).collect();
        x = Tensor::new(x.shape(), d)?;
    }
    Ok(x)
}
