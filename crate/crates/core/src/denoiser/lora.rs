//! Low-rank adapters on linear layers: `W' = W + scale·B·A`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::nn::{uniform_init, Linear, ParamGroup, ParamId, ParamStore};
use crate::tensor::{self, Tensor};

/// Attention projections that can carry an adapter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoraTarget {
    Query,
    Key,
    Value,
    Out,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoraConfig {
    /// 0 disables adapters.
    pub rank: usize,
    pub scale: f32,
    pub targets: Vec<LoraTarget>,
}

impl Default for LoraConfig {
    fn default() -> Self {
        Self {
            rank: 4,
            scale: 1.0,
            targets: vec![LoraTarget::Query, LoraTarget::Key, LoraTarget::Value, LoraTarget::Out],
        }
    }
}

/// `A: [r, k]` starts small random, `B: [d, r]` starts at zero.
#[derive(Debug, Clone)]
pub struct LoraAdapter {
    pub a: ParamId,
    pub b: ParamId,
    pub rank: usize,
    pub scale: f32,
}

/// A linear layer that may carry one adapter.
#[derive(Debug, Clone)]
pub struct LoraLinear {
    pub name: String,
    pub base: Linear,
    pub adapter: Option<LoraAdapter>,
}

impl LoraLinear {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut R) -> Self {
        Self {
            name: name.to_string(),
            base: Linear::new(store, name, ParamGroup::Backbone, d_in, d_out, rng),
            adapter: None,
        }
    }

    /// `(d, k)` of the host weight.
    pub fn dims(&self, store: &ParamStore) -> (usize, usize) {
        let s = store.get(self.base.weight).shape();
        (s[0], s[1])
    }

    pub fn attach_lora<R: Rng + ?Sized>(
        &mut self,
        store: &mut ParamStore,
        rank: usize,
        scale: f32,
        rng: &mut R,
    ) -> Result<&LoraAdapter, ModelError> {
        let (d, k) = self.dims(store);
        if rank == 0 || rank > d.min(k) {
            return Err(ModelError::Config(format!(
                "lora rank {rank} invalid for {d}x{k} layer {}",
                self.name
            )));
        }
        if self.adapter.is_some() {
            return Err(ModelError::Config(format!("{} already has an adapter", self.name)));
        }
        let bound = 1.0 / (k as f32).sqrt();
        let a = store.add(format!("{}.lora_a", self.name), ParamGroup::Lora, &[rank, k], uniform_init(rng, rank * k, bound));
        let b = store.add(format!("{}.lora_b", self.name), ParamGroup::Lora, &[d, rank], vec![0.0; d * rank]);
        Ok(self.adapter.insert(LoraAdapter { a, b, rank, scale }))
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> tensor::Result<Tensor> {
        let y = self.base.forward(store, x)?;
        let Some(ad) = &self.adapter else { return Ok(y) };
        let low = tensor::linear(x, store.get(ad.a), None)?;
        let mut delta = tensor::linear(&low, store.get(ad.b), None)?;
        if ad.scale != 1.0 {
            delta = tensor::scale(&delta, ad.scale)?;
        }
        tensor::add(&y, &delta)
    }

    /// `scale·B·A` as a dense `[d, k]` buffer.
    pub fn delta_weight(&self, store: &ParamStore) -> Option<Vec<f32>> {
        let ad = self.adapter.as_ref()?;
        let (d, k) = self.dims(store);
        let (a, b) = (store.get(ad.a).data(), store.get(ad.b).data());
        let mut out = vec![0.0f32; d * k];
        for i in 0..d {
            for r in 0..ad.rank {
                let bir = b[i * ad.rank + r] as f64 * ad.scale as f64;
                if bir == 0.0 {
                    continue;
                }
                for j in 0..k {
                    out[i * k + j] += (bir * a[r * k + j] as f64) as f32;
                }
            }
        }
        Some(out)
    }

    /// Folds the adapter into the host weight and drops it. The adapter's
    /// tensors stay in the store but are no longer referenced.
    pub fn merge(&mut self, store: &mut ParamStore) -> Result<(), ModelError> {
        let Some(delta) = self.delta_weight(store) else {
            return Err(ModelError::Config(format!("{} has no adapter to merge", self.name)));
        };
        let merged = store
            .get(self.base.weight)
            .data()
            .iter()
            .zip(&delta)
            .map(|(w, d)| w + d)
            .collect();
        store.set_data(self.base.weight, merged)?;
        self.adapter = None;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn layer(d_in: usize, d_out: usize) -> (ParamStore, LoraLinear, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let l = LoraLinear::new(&mut store, "proj", d_in, d_out, &mut rng);
        (store, l, rng)
    }

    #[test]
    fn fresh_adapter_is_neutral() {
        let (mut store, mut l, mut rng) = layer(8, 6);
        let x = Tensor::randn(&[5, 8], &mut rng);
        let before = l.forward(&store, &x).unwrap();
        l.attach_lora(&mut store, 4, 1.0, &mut rng).unwrap();
        let after = l.forward(&store, &x).unwrap();
        assert_eq!(before.data(), after.data());
    }

    #[test]
    fn rank_above_min_dim_rejected() {
        let (mut store, mut l, mut rng) = layer(8, 6);
        assert!(matches!(l.attach_lora(&mut store, 7, 1.0, &mut rng), Err(ModelError::Config(_))));
        assert!(l.attach_lora(&mut store, 6, 1.0, &mut rng).is_ok());
        assert!(l.attach_lora(&mut store, 2, 1.0, &mut rng).is_err());
    }

    #[test]
    fn merge_matches_adapted_forward() {
        let (mut store, mut l, mut rng) = layer(8, 6);
        let ad = l.attach_lora(&mut store, 3, 0.5, &mut rng).unwrap().clone();
        let b: Vec<f32> = (0..18).map(|i| (i as f32 * 0.37).sin()).collect();
        store.set_data(ad.b, b).unwrap();
        let x = Tensor::randn(&[4, 8], &mut rng);
        let adapted = l.forward(&store, &x).unwrap();
        l.merge(&mut store).unwrap();
        assert!(l.adapter.is_none());
        let merged = l.forward(&store, &x).unwrap();
        for (a, m) in adapted.data().iter().zip(merged.data()) {
            assert!((a - m).abs() <= 1e-6 * a.abs().max(1.0), "{a} vs {m}");
        }
    }
}
