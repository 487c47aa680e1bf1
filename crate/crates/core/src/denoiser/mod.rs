//! Conditional noise predictor.
//!
//! A small U-Net (`depth` down/up stages, attention from the second stage
//! on and at the bottleneck) predicts the injected noise from `(x_t, t)`.
//! An optional condition branch reads the 65-channel condition tensor and
//! adds zero-initialised residuals to every encoder stage and the
//! bottleneck, so a fresh branch leaves the backbone output untouched.
//! Attention projections carry low-rank adapters.

mod blocks;
mod control;
mod lora;

pub use blocks::{AttentionBlock, ResBlock};
pub use control::{expand_input_channels, ControlBranch, HINT_SEED_CHANNELS};
pub use lora::{LoraAdapter, LoraConfig, LoraLinear, LoraTarget};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{timestep_embedding, Conv2d, GroupNorm, Linear, ParamGroup, ParamId, ParamStore};
use crate::tensor::{self, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model configuration error: {0}")]
    Config(String),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserConfig {
    pub base_channels: usize,
    pub depth: usize,
    pub time_embed_dim: usize,
    pub cond_channels: usize,
    /// 1 for VV only, 2 for VV+VH.
    pub image_channels: usize,
    pub norm_groups: usize,
    pub lora: LoraConfig,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            base_channels: 32,
            depth: 3,
            time_embed_dim: 64,
            cond_channels: 65,
            image_channels: 1,
            norm_groups: 8,
            lora: LoraConfig::default(),
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [
            self.base_channels,
            self.depth,
            self.time_embed_dim,
            self.cond_channels,
            self.image_channels,
            self.norm_groups,
        ];
        if dims.iter().any(|&d| d == 0) {
            return Err(ModelError::Config(format!("all dimensions must be positive: {self:?}")));
        }
        Ok(())
    }

    /// Channel width of encoder stage `i`.
    pub fn stage_channels(&self, i: usize) -> usize {
        self.base_channels * if i == 0 { 1 } else { 2 }
    }

    pub fn check_spatial(&self, h: usize, w: usize) -> Result<(), ModelError> {
        let m = 1usize << self.depth;
        if h % m != 0 || w % m != 0 {
            return Err(ModelError::Config(format!(
                "spatial size {h}x{w} not divisible by 2^depth = {m}"
            )));
        }
        Ok(())
    }
}

/// Which parameters an optimizer may update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Full,
    #[default]
    LoraAndControl,
}

pub struct Denoiser {
    pub config: DenoiserConfig,
    pub store: ParamStore,
    time_fc1: Linear,
    time_fc2: Linear,
    conv_in: Conv2d,
    enc: Vec<ResBlock>,
    enc_attn: Vec<Option<AttentionBlock>>,
    downs: Vec<Conv2d>,
    mid: ResBlock,
    mid_attn: AttentionBlock,
    ups: Vec<Conv2d>,
    dec: Vec<ResBlock>,
    norm_out: GroupNorm,
    conv_out: Conv2d,
    pub control: ControlBranch,
}

impl Denoiser {
    /// Builds backbone, condition branch and (when `lora.rank > 0`) adapters.
    /// Parameters depend only on `config` and `seed`.
    pub fn build(config: &DenoiserConfig, seed: u64) -> Result<Self, ModelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = Self::build_backbone(config, &mut rng)?;
        if config.lora.rank > 0 {
            let lora = config.lora.clone();
            model.attach_lora(&lora, &mut rng)?;
        }
        Ok(model)
    }

    /// Backbone and condition branch without adapters.
    pub fn build_backbone<R: Rng + ?Sized>(config: &DenoiserConfig, rng: &mut R) -> Result<Self, ModelError> {
        config.validate()?;
        let c = config;
        let g = ParamGroup::Backbone;
        let mut store = ParamStore::new();
        let b = c.base_channels;
        let time_fc1 = Linear::new(&mut store, "time.fc1", g, b, c.time_embed_dim, rng);
        let time_fc2 = Linear::new(&mut store, "time.fc2", g, c.time_embed_dim, c.time_embed_dim, rng);
        let conv_in = Conv2d::new(&mut store, "conv_in", g, c.image_channels, b, 3, 1, 1, rng);
        let mut enc = Vec::new();
        let mut enc_attn = Vec::new();
        let mut downs = Vec::new();
        let mut ch = b;
        for i in 0..c.depth {
            let out = c.stage_channels(i);
            enc.push(ResBlock::new(&mut store, &format!("enc{i}"), g, ch, out, c.time_embed_dim, c.norm_groups, rng));
            enc_attn.push((i >= 1).then(|| AttentionBlock::new(&mut store, &format!("enc{i}.attn"), out, c.norm_groups, rng)));
            downs.push(Conv2d::new(&mut store, &format!("down{i}"), g, out, out, 3, 2, 1, rng));
            ch = out;
        }
        let mid = ResBlock::new(&mut store, "mid", g, ch, ch, c.time_embed_dim, c.norm_groups, rng);
        let mid_attn = AttentionBlock::new(&mut store, "mid.attn", ch, c.norm_groups, rng);
        let mut ups = Vec::new();
        let mut dec = Vec::new();
        for i in (0..c.depth).rev() {
            let out = c.stage_channels(i);
            ups.push(Conv2d::new(&mut store, &format!("up{i}"), g, ch, out, 3, 1, 1, rng));
            dec.push(ResBlock::new(&mut store, &format!("dec{i}"), g, 2 * out, out, c.time_embed_dim, c.norm_groups, rng));
            ch = out;
        }
        let norm_out = GroupNorm::new(&mut store, "norm_out", g, ch, c.norm_groups);
        let conv_out = Conv2d::new(&mut store, "conv_out", g, ch, c.image_channels, 3, 1, 1, rng);
        let control = ControlBranch::new(&mut store, c, rng)?;
        Ok(Self {
            config: c.clone(),
            store,
            time_fc1,
            time_fc2,
            conv_in,
            enc,
            enc_attn,
            downs,
            mid,
            mid_attn,
            ups,
            dec,
            norm_out,
            conv_out,
            control,
        })
    }

    pub fn attention_blocks(&self) -> impl Iterator<Item = &AttentionBlock> {
        self.enc_attn.iter().flatten().chain(std::iter::once(&self.mid_attn))
    }

    /// Attaches adapters to the configured projections of every attention block.
    pub fn attach_lora<R: Rng + ?Sized>(&mut self, lora: &LoraConfig, rng: &mut R) -> Result<(), ModelError> {
        let mut blocks: Vec<&mut AttentionBlock> = Vec::new();
        let Self { enc_attn, mid_attn, store, .. } = self;
        blocks.extend(enc_attn.iter_mut().flatten());
        blocks.push(mid_attn);
        for block in blocks {
            block.attach_lora(store, &lora.targets, lora.rank, lora.scale, rng)?;
        }
        self.config.lora = lora.clone();
        Ok(())
    }

    /// Folds every adapter into its host weight.
    pub fn merge_lora(&mut self) -> Result<(), ModelError> {
        let mut layers: Vec<&mut LoraLinear> = Vec::new();
        let Self { enc_attn, mid_attn, store, .. } = self;
        for b in enc_attn.iter_mut().flatten() {
            layers.extend(b.projections_mut());
        }
        layers.extend(mid_attn.projections_mut());
        for l in layers.into_iter().filter(|l| l.adapter.is_some()) {
            l.merge(store)?;
        }
        Ok(())
    }

    /// Drops adapters from every layer not named in `active`, without merging.
    pub fn retain_adapters(&mut self, active: &[String]) {
        let Self { enc_attn, mid_attn, .. } = self;
        let blocks = enc_attn.iter_mut().flatten().chain(std::iter::once(mid_attn));
        for b in blocks {
            for l in b.projections_mut() {
                if !active.contains(&l.name) {
                    l.adapter = None;
                }
            }
        }
    }

    /// Names of layers currently carrying an adapter.
    pub fn active_adapters(&self) -> Vec<String> {
        self.lora_layers()
            .into_iter()
            .filter(|l| l.adapter.is_some())
            .map(|l| l.name.clone())
            .collect()
    }

    pub fn lora_layers(&self) -> Vec<&LoraLinear> {
        self.attention_blocks().flat_map(|b| b.projections()).collect()
    }

    pub fn trainable_parameters(&self, mode: TrainMode) -> Vec<ParamId> {
        let referenced = self.referenced_lora_params();
        self.store
            .ids()
            .filter(|&id| match (mode, self.store.group(id)) {
                (_, ParamGroup::Lora) => referenced.contains(&id),
                (TrainMode::Full, _) => true,
                (TrainMode::LoraAndControl, ParamGroup::Control) => true,
                (TrainMode::LoraAndControl, ParamGroup::Backbone) => false,
            })
            .collect()
    }

    fn referenced_lora_params(&self) -> Vec<ParamId> {
        self.lora_layers()
            .into_iter()
            .filter_map(|l| l.adapter.as_ref())
            .flat_map(|a| [a.a, a.b])
            .collect()
    }

    fn check_inputs(&self, x_t: &Tensor, t: &[usize], cond: Option<&Tensor>) -> Result<(), ModelError> {
        let s = x_t.shape();
        if s.len() != 4 || s[1] != self.config.image_channels {
            return Err(ModelError::Dimension(format!(
                "x_t must be [N, {}, H, W], got {s:?}",
                self.config.image_channels
            )));
        }
        if t.len() != s[0] {
            return Err(ModelError::Dimension(format!("{} timesteps for batch of {}", t.len(), s[0])));
        }
        self.config.check_spatial(s[2], s[3])?;
        if let Some(c) = cond {
            let cs = c.shape();
            if cs.len() != 4 || cs[0] != s[0] || cs[1] != self.config.cond_channels || cs[2..] != s[2..] {
                return Err(ModelError::Dimension(format!(
                    "condition must be [{}, {}, {}, {}], got {cs:?}",
                    s[0], self.config.cond_channels, s[2], s[3]
                )));
            }
        }
        Ok(())
    }

    fn time_embedding(&self, t: &[usize]) -> tensor::Result<Tensor> {
        let st = &self.store;
        let e = timestep_embedding(t, self.config.base_channels);
        let h = tensor::silu(&self.time_fc1.forward(st, &e)?)?;
        tensor::silu(&self.time_fc2.forward(st, &h)?)
    }

    /// Noise prediction. `cond = None` runs the backbone alone.
    pub fn predict_noise(&self, x_t: &Tensor, t: &[usize], cond: Option<&Tensor>) -> Result<Tensor, ModelError> {
        self.check_inputs(x_t, t, cond)?;
        let temb = self.time_embedding(t)?;
        let residuals = match cond {
            Some(c) => Some(self.control.residuals(&self.store, x_t, &temb, c)?),
            None => None,
        };
        Ok(self.backbone(x_t, &temb, residuals.as_deref())?)
    }

    /// Backbone pass with explicit encoder residuals (one per stage plus the bottleneck).
    pub fn predict_with_residuals(&self, x_t: &Tensor, t: &[usize], residuals: Option<&[Tensor]>) -> Result<Tensor, ModelError> {
        self.check_inputs(x_t, t, None)?;
        if let Some(r) = residuals {
            if r.len() != self.config.depth + 1 {
                return Err(ModelError::Dimension(format!("{} residuals for depth {}", r.len(), self.config.depth)));
            }
        }
        let temb = self.time_embedding(t)?;
        Ok(self.backbone(x_t, &temb, residuals)?)
    }

    /// Condition-branch residuals for a batch.
    pub fn control_residuals(&self, x_t: &Tensor, t: &[usize], cond: &Tensor) -> Result<Vec<Tensor>, ModelError> {
        self.check_inputs(x_t, t, Some(cond))?;
        let temb = self.time_embedding(t)?;
        Ok(self.control.residuals(&self.store, x_t, &temb, cond)?)
    }

    fn backbone(&self, x_t: &Tensor, temb: &Tensor, residuals: Option<&[Tensor]>) -> tensor::Result<Tensor> {
        let st = &self.store;
        let mut h = self.conv_in.forward(st, x_t)?;
        let mut skips = Vec::with_capacity(self.config.depth);
        for i in 0..self.config.depth {
            h = self.enc[i].forward(st, &h, temb)?;
            if let Some(attn) = &self.enc_attn[i] {
                h = attn.forward(st, &h)?;
            }
            if let Some(r) = residuals {
                h = tensor::add(&h, &r[i])?;
            }
            skips.push(h.clone());
            h = self.downs[i].forward(st, &h)?;
        }
        h = self.mid.forward(st, &h, temb)?;
        h = self.mid_attn.forward(st, &h)?;
        if let Some(r) = residuals {
            h = tensor::add(&h, &r[self.config.depth])?;
        }
        for (j, i) in (0..self.config.depth).rev().enumerate() {
            h = self.ups[j].forward(st, &tensor::upsample_nearest2x(&h)?)?;
            h = tensor::concat(&[&h, &skips[i]], 1)?;
            h = self.dec[j].forward(st, &h, temb)?;
        }
        let h = tensor::silu(&self.norm_out.forward(st, &h)?)?;
        self.conv_out.forward(st, &h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_config() -> DenoiserConfig {
        DenoiserConfig {
            base_channels: 8,
            depth: 2,
            time_embed_dim: 16,
            cond_channels: 65,
            image_channels: 1,
            norm_groups: 4,
            lora: LoraConfig {
                rank: 2,
                ..LoraConfig::default()
            },
        }
    }

    #[test]
    fn zero_input_gives_finite_output_of_same_shape() {
        let m = Denoiser::build(&tiny_config(), 0).unwrap();
        let x = Tensor::zeros(&[1, 1, 16, 16]);
        let y = m.predict_noise(&x, &[10], Some(&Tensor::zeros(&[1, 65, 16, 16]))).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert!(y.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn bad_spatial_size_is_config_error() {
        let m = Denoiser::build(&tiny_config(), 0).unwrap();
        let x = Tensor::zeros(&[1, 1, 18, 18]);
        assert!(matches!(m.predict_noise(&x, &[0], None), Err(ModelError::Config(_))));
    }

    #[test]
    fn wrong_condition_channels_is_dimension_error() {
        let m = Denoiser::build(&tiny_config(), 0).unwrap();
        let x = Tensor::zeros(&[1, 1, 16, 16]);
        let c = Tensor::zeros(&[1, 64, 16, 16]);
        assert!(matches!(m.predict_noise(&x, &[0], Some(&c)), Err(ModelError::Dimension(_))));
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = DenoiserConfig { depth: 0, ..tiny_config() };
        assert!(matches!(Denoiser::build(&cfg, 0), Err(ModelError::Config(_))));
    }
}
