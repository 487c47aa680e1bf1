//! Parameter storage and the small set of layers the networks are built from.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{self, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Which part of a model a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Backbone,
    Lora,
    Control,
}

impl ParamGroup {
    pub fn tag(self) -> u8 {
        match self {
            ParamGroup::Backbone => 0,
            ParamGroup::Lora => 1,
            ParamGroup::Control => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(ParamGroup::Backbone),
            1 => Some(ParamGroup::Lora),
            2 => Some(ParamGroup::Control),
            _ => None,
        }
    }
}

struct Entry {
    name: String,
    group: ParamGroup,
    value: Tensor,
}

/// Owns every parameter tensor of a model. Layers refer to parameters by
/// [`ParamId`]; updates replace the stored leaf with a fresh one.
#[derive(Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, group: ParamGroup, shape: &[usize], data: Vec<f32>) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        let value = Tensor::param(shape, data).expect("parameter initialisation");
        self.entries.push(Entry { name, group, value });
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn group(&self, id: ParamId) -> ParamGroup {
        self.entries[id.0].group
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    /// Replaces a parameter's values, keeping its gradient flag.
    pub fn set_data(&mut self, id: ParamId, data: Vec<f32>) -> Result<()> {
        let e = &mut self.entries[id.0];
        let rg = e.value.requires_grad();
        e.value = if rg {
            Tensor::param(e.value.shape(), data)?
        } else {
            Tensor::new(e.value.shape(), data)?
        };
        Ok(())
    }

    /// Replaces a parameter with a new shape and values.
    pub fn replace(&mut self, id: ParamId, shape: &[usize], data: Vec<f32>) -> Result<()> {
        let e = &mut self.entries[id.0];
        e.value = if e.value.requires_grad() {
            Tensor::param(shape, data)?
        } else {
            Tensor::new(shape, data)?
        };
        Ok(())
    }

    /// Only the listed parameters collect gradients afterwards.
    pub fn set_trainable(&mut self, trainable: &[ParamId]) {
        let mut flags = vec![false; self.entries.len()];
        for id in trainable {
            flags[id.0] = true;
        }
        for (e, f) in self.entries.iter_mut().zip(flags) {
            if e.value.requires_grad() != f {
                e.value = e.value.detach_with_grad(f);
            }
        }
    }

    pub fn zero_grad(&self) {
        for e in &self.entries {
            e.value.zero_grad();
        }
    }

    pub fn numel(&self, ids: &[ParamId]) -> usize {
        ids.iter().map(|&id| self.get(id).numel()).sum()
    }
}

pub(crate) fn uniform_init<R: Rng + ?Sized>(rng: &mut R, n: usize, bound: f32) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / ((c_in * k * k) as f32).sqrt();
        let weight = store.add(
            format!("{name}.weight"),
            group,
            &[c_out, c_in, k, k],
            uniform_init(rng, c_out * c_in * k * k, bound),
        );
        let bias = store.add(format!("{name}.bias"), group, &[c_out], uniform_init(rng, c_out, bound));
        Self {
            weight,
            bias: Some(bias),
            stride,
            padding,
        }
    }

    /// Convolution whose weights and bias start at zero.
    #[allow(clippy::too_many_arguments)]
    pub fn zeros(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), group, &[c_out, c_in, k, k], vec![0.0; c_out * c_in * k * k]);
        let bias = store.add(format!("{name}.bias"), group, &[c_out], vec![0.0; c_out]);
        Self {
            weight,
            bias: Some(bias),
            stride,
            padding,
        }
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let y = tensor::conv2d(x, store.get(self.weight), self.stride, self.padding)?;
        match self.bias {
            Some(b) => tensor::add_channel_bias(&y, store.get(b)),
            None => Ok(y),
        }
    }

    pub fn in_channels(&self, store: &ParamStore) -> usize {
        store.get(self.weight).shape()[1]
    }

    pub fn out_channels(&self, store: &ParamStore) -> usize {
        store.get(self.weight).shape()[0]
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        d_in: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (d_in as f32).sqrt();
        let weight = store.add(format!("{name}.weight"), group, &[d_out, d_in], uniform_init(rng, d_out * d_in, bound));
        let bias = store.add(format!("{name}.bias"), group, &[d_out], uniform_init(rng, d_out, bound));
        Self {
            weight,
            bias: Some(bias),
        }
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        tensor::linear(x, store.get(self.weight), self.bias.map(|b| store.get(b)))
    }
}

#[derive(Debug, Clone)]
pub struct GroupNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub groups: usize,
    pub eps: f32,
}

impl GroupNorm {
    pub fn new(store: &mut ParamStore, name: &str, group: ParamGroup, channels: usize, groups: usize) -> Self {
        let groups = if channels % groups == 0 { groups } else { 1 };
        Self {
            gamma: store.add(format!("{name}.gamma"), group, &[channels], vec![1.0; channels]),
            beta: store.add(format!("{name}.beta"), group, &[channels], vec![0.0; channels]),
            groups,
            eps: 1e-5,
        }
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        tensor::group_norm(x, self.groups, store.get(self.gamma), store.get(self.beta), self.eps)
    }
}

/// Sinusoidal embedding of integer timesteps, `[len(ts), dim]`.
pub fn timestep_embedding(ts: &[usize], dim: usize) -> Tensor {
    let half = dim / 2;
    let mut data = Vec::with_capacity(ts.len() * dim);
    for &t in ts {
        for i in 0..dim {
            let j = i % half.max(1);
            let freq = (-(10_000f64.ln()) * j as f64 / half.max(1) as f64).exp();
            let arg = t as f64 * freq;
            data.push(if i < half { arg.sin() } else { arg.cos() } as f32);
        }
    }
    Tensor::new(&[ts.len(), dim], data).expect("timestep embedding")
}
