//! Min-SNR weighted diffusion training.

mod checkpoint;
mod optim;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, CHECKPOINT_VERSION};
pub use optim::{AdamW, AdamWConfig};

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::denoiser::{Denoiser, ModelError, TrainMode};
use crate::nn::ParamId;
use crate::scheduler::{self, NoiseSchedule, OffsetNoiseConfig, ScheduleError};
use crate::tensor::{self, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training configuration error: {0}")]
    Config(String),
    #[error("non-finite loss at step {step} (t = {t:?}, weights = {weights:?}): {detail}")]
    NonFinite {
        step: u64,
        t: Vec<usize>,
        weights: Vec<f32>,
        detail: String,
    },
    #[error("dataset error: {0}")]
    Data(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Cosine,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub lr_min: f64,
    pub lr_schedule: LrSchedule,
    pub batch_size: usize,
    pub steps: u64,
    pub gamma_offset: f32,
    pub offset_enabled: bool,
    pub offset_per_sample_only: bool,
    pub gamma_snr: f64,
    /// When false every sample weighs 1.
    pub min_snr: bool,
    pub seed: u64,
    pub grad_clip: Option<f64>,
    pub mode: TrainMode,
    pub optimizer: AdamWConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            lr_min: 0.0,
            lr_schedule: LrSchedule::Cosine,
            batch_size: 8,
            steps: 500,
            gamma_offset: 0.2,
            offset_enabled: true,
            offset_per_sample_only: false,
            gamma_snr: 5.0,
            min_snr: true,
            seed: 42,
            grad_clip: None,
            mode: TrainMode::LoraAndControl,
            optimizer: AdamWConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !(self.lr_min >= 0.0) {
            return Err(TrainError::Config("learning rates must be positive".into()));
        }
        if self.steps == 0 || self.batch_size == 0 {
            return Err(TrainError::Config("steps and batch_size must be at least 1".into()));
        }
        if !(self.gamma_offset >= 0.0) || !(self.gamma_snr > 0.0) {
            return Err(TrainError::Config("gamma_offset must be >= 0 and gamma_snr > 0".into()));
        }
        if matches!(self.grad_clip, Some(c) if !(c > 0.0)) {
            return Err(TrainError::Config("grad_clip must be positive".into()));
        }
        Ok(())
    }

    pub fn offset_noise(&self) -> OffsetNoiseConfig {
        OffsetNoiseConfig {
            gamma: self.gamma_offset,
            enabled: self.offset_enabled,
            per_sample_only: self.offset_per_sample_only,
        }
    }
}

/// Learning rate after `step` of `config.steps` updates.
pub fn lr_at(step: u64, config: &TrainConfig) -> f64 {
    match config.lr_schedule {
        LrSchedule::Constant => config.learning_rate,
        LrSchedule::Cosine => {
            let frac = step.min(config.steps) as f64 / config.steps as f64;
            config.lr_min
                + 0.5 * (config.learning_rate - config.lr_min) * (1.0 + (std::f64::consts::PI * frac).cos())
        }
    }
}

/// Batch mean of `weight_n · MSE_n`.
pub fn weighted_loss(eps_true: &Tensor, eps_pred: &Tensor, weights: &[f32]) -> Result<Tensor> {
    if eps_true.shape() != eps_pred.shape() {
        return Err(TensorError::Dimension {
            op: "weighted_loss",
            detail: format!("{:?} vs {:?}", eps_true.shape(), eps_pred.shape()),
        }
        .into());
    }
    if weights.len() != eps_true.shape()[0] {
        return Err(TrainError::Config(format!(
            "{} weights for batch of {}",
            weights.len(),
            eps_true.shape()[0]
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(**w >= 0.0)) {
        return Err(TrainError::Config(format!("loss weight {w} must be non-negative")));
    }
    let n = weights.len();
    let diff = tensor::sub(eps_pred, eps_true)?;
    let sq = tensor::sqr(&diff)?;
    let per_sample = if sq.ndim() > 1 {
        tensor::mean_keep(&sq, 1)?
    } else {
        sq
    };
    let w = Tensor::new(&[n], weights.to_vec())?;
    Ok(tensor::mean(&tensor::mul(&per_sample, &w)?)?)
}

/// A training batch. `cond` is `None` for unconditional training.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x0: Tensor,
    pub cond: Option<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepStats {
    pub step: u64,
    pub lr: f64,
    pub loss: f32,
    pub mean_weight: f64,
    pub t: Vec<usize>,
}

impl fmt::Display for StepStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "step={} lr={:.6e} loss={:.6} mean_weight={:.4}",
            self.step, self.lr, self.loss, self.mean_weight
        )
    }
}

/// One optimisation step. Random draws happen in a fixed order: one
/// timestep per sample, then the noise tensor.
#[allow(clippy::too_many_arguments)]
pub fn train_step<R: Rng + ?Sized>(
    batch: &Batch,
    model: &mut Denoiser,
    schedule: &NoiseSchedule,
    optimizer: &mut AdamW,
    trainable: &[ParamId],
    config: &TrainConfig,
    step: u64,
    rng: &mut R,
) -> Result<StepStats> {
    let n = batch.x0.shape()[0];
    let t: Vec<usize> = (0..n).map(|_| rng.random_range(0..schedule.steps())).collect();
    let noise = scheduler::sample_offset_noise(batch.x0.shape(), &config.offset_noise(), rng)?;
    let weights: Vec<f32> = if config.min_snr {
        t.iter()
            .map(|&ti| scheduler::min_snr_weight(ti, config.gamma_snr, schedule).map(|w| w as f32))
            .collect::<std::result::Result<_, _>>()?
    } else {
        vec![1.0; n]
    };
    let x_t = scheduler::forward_diffuse_batch(&batch.x0, &t, &noise, schedule)?;
    let non_finite = |detail: String| TrainError::NonFinite {
        step,
        t: t.clone(),
        weights: weights.clone(),
        detail,
    };
    model.store.zero_grad();
    let pred = match model.predict_noise(&x_t, &t, batch.cond.as_ref()) {
        Err(ModelError::Tensor(e @ TensorError::NonFinite { .. })) => return Err(non_finite(e.to_string())),
        r => r?,
    };
    let loss = match weighted_loss(&noise, &pred, &weights) {
        Err(TrainError::Tensor(e @ TensorError::NonFinite { .. })) => return Err(non_finite(e.to_string())),
        r => r?,
    };
    let loss_value = loss.item();
    if !loss_value.is_finite() {
        return Err(non_finite("loss".into()));
    }
    loss.backward()?;
    if let Some(max_norm) = config.grad_clip {
        clip_grad_norm(model, trainable, max_norm)?;
    }
    let lr = lr_at(step, config);
    optimizer.step(&mut model.store, trainable, lr)?;
    Ok(StepStats {
        step,
        lr,
        loss: loss_value,
        mean_weight: weights.iter().map(|&w| w as f64).sum::<f64>() / n as f64,
        t,
    })
}

/// Rescales gradients so their global L2 norm is at most `max_norm`.
fn clip_grad_norm(model: &mut Denoiser, trainable: &[ParamId], max_norm: f64) -> Result<()> {
    let norm: f64 = trainable
        .iter()
        .filter_map(|&id| model.store.get(id).grad())
        .flat_map(|g| g.into_iter().map(|v| (v as f64) * (v as f64)))
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let factor = (max_norm / norm) as f32;
        for &id in trainable {
            model.store.get(id).scale_grad(factor);
        }
    }
    Ok(())
}

/// In-memory training set. `cond` holds one condition per sample when present.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x0: Tensor,
    pub cond: Option<Tensor>,
}

impl Dataset {
    pub fn new(x0: Tensor, cond: Option<Tensor>) -> Result<Self> {
        if x0.ndim() != 4 {
            return Err(TrainError::Data(format!("images must be [M, C, H, W], got {:?}", x0.shape())));
        }
        if let Some(c) = &cond {
            if c.ndim() != 4 || c.shape()[0] != x0.shape()[0] || c.shape()[2..] != x0.shape()[2..] {
                return Err(TrainError::Data(format!(
                    "conditions {:?} do not match images {:?}",
                    c.shape(),
                    x0.shape()
                )));
            }
        }
        Ok(Self { x0, cond })
    }

    pub fn len(&self) -> usize {
        self.x0.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops the conditions, for unconditional ablations.
    pub fn without_conditions(&self) -> Self {
        Self {
            x0: self.x0.clone(),
            cond: None,
        }
    }

    pub fn batch(&self, indices: &[usize]) -> Batch {
        let gather = |t: &Tensor| {
            let per = t.numel() / t.shape()[0];
            let mut data = Vec::with_capacity(per * indices.len());
            for &i in indices {
                data.extend_from_slice(&t.data()[i * per..(i + 1) * per]);
            }
            let mut shape = t.shape().to_vec();
            shape[0] = indices.len();
            Tensor::new(&shape, data).expect("gathered batch")
        };
        Batch {
            x0: gather(&self.x0),
            cond: self.cond.as_ref().map(gather),
        }
    }
}

/// Model, schedule, optimizer and random state of a training run.
pub struct Trainer {
    pub model: Denoiser,
    pub schedule: NoiseSchedule,
    pub config: TrainConfig,
    pub optimizer: AdamW,
    pub rng: ChaCha8Rng,
    /// Completed optimisation steps.
    pub step: u64,
    trainable: Vec<ParamId>,
}

impl Trainer {
    pub fn new(mut model: Denoiser, schedule: NoiseSchedule, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let trainable = model.trainable_parameters(config.mode);
        model.store.set_trainable(&trainable);
        Ok(Self {
            model,
            schedule,
            optimizer: AdamW::new(config.optimizer),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            step: 0,
            config,
            trainable,
        })
    }

    pub fn trainable(&self) -> &[ParamId] {
        &self.trainable
    }

    /// Draws a batch (indices with replacement) and runs one step.
    pub fn step_on(&mut self, data: &Dataset) -> Result<StepStats> {
        if data.is_empty() {
            return Err(TrainError::Data("empty dataset".into()));
        }
        let idx: Vec<usize> = (0..self.config.batch_size)
            .map(|_| self.rng.random_range(0..data.len()))
            .collect();
        let batch = data.batch(&idx);
        let stats = train_step(
            &batch,
            &mut self.model,
            &self.schedule,
            &mut self.optimizer,
            &self.trainable,
            &self.config,
            self.step,
            &mut self.rng,
        )?;
        self.step += 1;
        Ok(stats)
    }

    /// Runs until `config.steps` steps are complete, calling `on_step` after each.
    pub fn run(&mut self, data: &Dataset, mut on_step: impl FnMut(&Self, &StepStats)) -> Result<Vec<StepStats>> {
        let mut out = Vec::new();
        while self.step < self.config.steps {
            let s = self.step_on(data)?;
            on_step(self, &s);
            out.push(s);
        }
        Ok(out)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(self)
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        ck.restore()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_weighted_loss() {
        let truth = Tensor::zeros(&[2, 1, 1, 2]);
        let pred = Tensor::new(&[2, 1, 1, 2], vec![1.0, -1.0, 3f32.sqrt(), -(3f32.sqrt())]).unwrap();
        let l = weighted_loss(&truth, &pred, &[1.0, 0.5]).unwrap();
        assert!((l.item() - 1.25).abs() < 1e-6);
    }

    #[test]
    fn equal_eps_gives_zero_loss() {
        let e = Tensor::new(&[2, 3], vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        assert_eq!(weighted_loss(&e, &e, &[1.0, 2.0]).unwrap().item(), 0.0);
    }

    #[test]
    fn negative_weight_rejected() {
        let e = Tensor::zeros(&[2, 3]);
        assert!(matches!(weighted_loss(&e, &e, &[1.0, -0.1]), Err(TrainError::Config(_))));
    }

    #[test]
    fn unit_weights_give_plain_mse() {
        let a = Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::zeros(&[2, 2]);
        let l = weighted_loss(&b, &a, &[1.0, 1.0]).unwrap();
        assert!((l.item() - 7.5).abs() < 1e-6);
    }

    #[test]
    fn cosine_lr_endpoints() {
        let c = TrainConfig {
            learning_rate: 0.01,
            steps: 100,
            ..TrainConfig::default()
        };
        assert_eq!(lr_at(0, &c), 0.01);
        assert!(lr_at(100, &c).abs() < 1e-15);
        assert!((lr_at(50, &c) - 0.005).abs() < 1e-15);
        let k = TrainConfig {
            lr_schedule: LrSchedule::Constant,
            ..c
        };
        assert_eq!(lr_at(70, &k), 0.01);
    }
}
