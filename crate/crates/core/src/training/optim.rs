use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::nn::{ParamId, ParamStore};
use crate::tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    /// Number of updates applied so far.
    pub t: u64,
    pub m: HashMap<ParamId, Vec<f32>>,
    pub v: HashMap<ParamId, Vec<f32>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            t: 0,
            m: HashMap::new(),
            v: HashMap::new(),
        }
    }

    /// Updates every listed parameter that holds a gradient; parameters
    /// without one are left untouched, moments included.
    pub fn step(&mut self, store: &mut ParamStore, params: &[ParamId], lr: f64) -> tensor::Result<()> {
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for &id in params {
            let Some(g) = store.get(id).grad() else { continue };
            let n = g.len();
            let m = self.m.entry(id).or_insert_with(|| vec![0.0; n]);
            let v = self.v.entry(id).or_insert_with(|| vec![0.0; n]);
            let p = store.get(id).data();
            let mut out = Vec::with_capacity(n);
            for i in 0..n {
                let gi = g[i] as f64;
                let mi = c.beta1 * m[i] as f64 + (1.0 - c.beta1) * gi;
                let vi = c.beta2 * v[i] as f64 + (1.0 - c.beta2) * gi * gi;
                m[i] = mi as f32;
                v[i] = vi as f32;
                let mhat = mi / bc1;
                let vhat = vi / bc2;
                let pi = p[i] as f64;
                out.push((pi - lr * c.weight_decay * pi - lr * mhat / (vhat.sqrt() + c.eps)) as f32);
            }
            store.set_data(id, out)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamGroup;
    use crate::tensor::Tensor;

    fn scalar_store(v: f32) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("p", ParamGroup::Backbone, &[1], vec![v]);
        (s, id)
    }

    fn set_grad(store: &ParamStore, id: ParamId, g: f32) {
        store.zero_grad();
        let y = tensor::scale(store.get(id), g).unwrap();
        tensor::sum(&y).unwrap().backward().unwrap();
    }

    #[test]
    fn first_step_moves_by_lr() {
        let (mut s, id) = scalar_store(1.0);
        let mut opt = AdamW::new(AdamWConfig::default());
        set_grad(&s, id, 1.0);
        opt.step(&mut s, &[id], 0.01).unwrap();
        let expected = 1.0 - 0.01 * 1.0 / (1.0 + 1e-8);
        assert!((s.get(id).item() as f64 - expected).abs() < 1e-7);
    }

    #[test]
    fn zero_gradient_without_decay_is_noop() {
        let (mut s, id) = scalar_store(0.7);
        let mut opt = AdamW::new(AdamWConfig::default());
        set_grad(&s, id, 0.0);
        opt.step(&mut s, &[id], 0.1).unwrap();
        assert_eq!(s.get(id).item(), 0.7);
    }

    #[test]
    fn decay_shrinks_geometrically() {
        let (mut s, id) = scalar_store(2.0);
        let mut opt = AdamW::new(AdamWConfig {
            weight_decay: 0.5,
            ..AdamWConfig::default()
        });
        for _ in 0..3 {
            set_grad(&s, id, 0.0);
            opt.step(&mut s, &[id], 0.1).unwrap();
        }
        assert!((s.get(id).item() as f64 - 2.0 * 0.95f64.powi(3)).abs() < 1e-6);
    }

    #[test]
    fn params_without_grad_untouched() {
        let mut s = ParamStore::new();
        let a = s.add("a", ParamGroup::Backbone, &[1], vec![1.0]);
        let b = s.add("b", ParamGroup::Backbone, &[1], vec![1.0]);
        let y = Tensor::scalar(3.0);
        let loss = tensor::sum(&tensor::mul(s.get(a), &y).unwrap()).unwrap();
        loss.backward().unwrap();
        let mut opt = AdamW::new(AdamWConfig::default());
        opt.step(&mut s, &[a, b], 0.1).unwrap();
        assert_ne!(s.get(a).item(), 1.0);
        assert_eq!(s.get(b).item(), 1.0);
        assert!(!opt.m.contains_key(&b));
    }
}
