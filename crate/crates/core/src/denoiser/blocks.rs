use rand::Rng;

use super::lora::{LoraLinear, LoraTarget};
use super::ModelError;
use crate::nn::{Conv2d, GroupNorm, Linear, ParamGroup, ParamStore};
use crate::tensor::{self, Result, Tensor};

/// Two 3×3 convolutions with time-embedding injection and a residual path.
#[derive(Debug, Clone)]
pub struct ResBlock {
    norm1: GroupNorm,
    conv1: Conv2d,
    time_proj: Linear,
    norm2: GroupNorm,
    conv2: Conv2d,
    skip: Option<Conv2d>,
}

impl ResBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        c_in: usize,
        c_out: usize,
        time_dim: usize,
        norm_groups: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            norm1: GroupNorm::new(store, &format!("{name}.norm1"), group, c_in, norm_groups),
            conv1: Conv2d::new(store, &format!("{name}.conv1"), group, c_in, c_out, 3, 1, 1, rng),
            time_proj: Linear::new(store, &format!("{name}.time_proj"), group, time_dim, c_out, rng),
            norm2: GroupNorm::new(store, &format!("{name}.norm2"), group, c_out, norm_groups),
            conv2: Conv2d::new(store, &format!("{name}.conv2"), group, c_out, c_out, 3, 1, 1, rng),
            skip: (c_in != c_out)
                .then(|| Conv2d::new(store, &format!("{name}.skip"), group, c_in, c_out, 1, 1, 0, rng)),
        }
    }

    /// `temb_act` is the already-activated time embedding `[N, time_dim]`.
    pub fn forward(&self, store: &ParamStore, x: &Tensor, temb_act: &Tensor) -> Result<Tensor> {
        let h = tensor::silu(&self.norm1.forward(store, x)?)?;
        let h = self.conv1.forward(store, &h)?;
        let t = self.time_proj.forward(store, temb_act)?;
        let h = tensor::add_prefix_broadcast(&h, &t)?;
        let h = tensor::silu(&self.norm2.forward(store, &h)?)?;
        let h = self.conv2.forward(store, &h)?;
        let skip = match &self.skip {
            Some(s) => s.forward(store, x)?,
            None => x.clone(),
        };
        tensor::add(&skip, &h)
    }
}

/// Single-head self-attention over spatial positions.
#[derive(Debug, Clone)]
pub struct AttentionBlock {
    norm: GroupNorm,
    pub query: LoraLinear,
    pub key: LoraLinear,
    pub value: LoraLinear,
    pub out: LoraLinear,
}

impl AttentionBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        norm_groups: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            norm: GroupNorm::new(store, &format!("{name}.norm"), ParamGroup::Backbone, channels, norm_groups),
            query: LoraLinear::new(store, &format!("{name}.q"), channels, channels, rng),
            key: LoraLinear::new(store, &format!("{name}.k"), channels, channels, rng),
            value: LoraLinear::new(store, &format!("{name}.v"), channels, channels, rng),
            out: LoraLinear::new(store, &format!("{name}.out"), channels, channels, rng),
        }
    }

    pub fn projection_mut(&mut self, target: LoraTarget) -> &mut LoraLinear {
        match target {
            LoraTarget::Query => &mut self.query,
            LoraTarget::Key => &mut self.key,
            LoraTarget::Value => &mut self.value,
            LoraTarget::Out => &mut self.out,
        }
    }

    pub fn projections(&self) -> [&LoraLinear; 4] {
        [&self.query, &self.key, &self.value, &self.out]
    }

    pub fn projections_mut(&mut self) -> [&mut LoraLinear; 4] {
        [&mut self.query, &mut self.key, &mut self.value, &mut self.out]
    }

    pub fn attach_lora<R: Rng + ?Sized>(
        &mut self,
        store: &mut ParamStore,
        targets: &[LoraTarget],
        rank: usize,
        scale: f32,
        rng: &mut R,
    ) -> std::result::Result<(), ModelError> {
        for &t in targets {
            self.projection_mut(t).attach_lora(store, rank, scale, rng)?;
        }
        Ok(())
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let [n, c, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
        let hw = h * w;
        let normed = self.norm.forward(store, x)?;
        let tokens = tensor::reshape(&tensor::permute(&normed, &[0, 2, 3, 1])?, &[n * hw, c])?;
        let q = tensor::reshape(&self.query.forward(store, &tokens)?, &[n, hw, c])?;
        let k = tensor::reshape(&self.key.forward(store, &tokens)?, &[n, hw, c])?;
        let v = tensor::reshape(&self.value.forward(store, &tokens)?, &[n, hw, c])?;
        let scores = tensor::bmm(&q, &tensor::permute(&k, &[0, 2, 1])?)?;
        let attn = tensor::softmax_last(&tensor::scale(&scores, 1.0 / (c as f32).sqrt())?)?;
        let mixed = tensor::reshape(&tensor::bmm(&attn, &v)?, &[n * hw, c])?;
        let out = tensor::reshape(&self.out.forward(store, &mixed)?, &[n, h, w, c])?;
        tensor::add(x, &tensor::permute(&out, &[0, 3, 1, 2])?)
    }
}
