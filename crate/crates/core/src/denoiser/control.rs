//! Condition branch: a trainable mirror of the encoder whose stage outputs
//! pass through zero-initialised 1×1 convolutions and are added to the
//! backbone encoder as residuals.

use rand::Rng;

use super::blocks::ResBlock;
use super::{DenoiserConfig, ModelError};
use crate::nn::{Conv2d, ParamGroup, ParamStore};
use crate::tensor::{self, Result, Tensor};

/// Widens a convolution's input channels to `c_new`. Every input slice of
/// the new kernel is the mean of the original input slices; bias is kept.
pub fn expand_input_channels(layer: &Conv2d, store: &mut ParamStore, c_new: usize) -> std::result::Result<(), ModelError> {
    let shape = store.get(layer.weight).shape().to_vec();
    let [c_out, c_old, kh, kw] = [shape[0], shape[1], shape[2], shape[3]];
    if c_new < c_old {
        return Err(ModelError::Config(format!(
            "cannot shrink input channels from {c_old} to {c_new}"
        )));
    }
    let plane = kh * kw;
    let old = store.get(layer.weight).data();
    let mut data = Vec::with_capacity(c_out * c_new * plane);
    for o in 0..c_out {
        let mut mean = vec![0.0f64; plane];
        for i in 0..c_old {
            let s = &old[(o * c_old + i) * plane..(o * c_old + i + 1) * plane];
            mean.iter_mut().zip(s).for_each(|(m, &v)| *m += v as f64);
        }
        let mean: Vec<f32> = mean.into_iter().map(|m| (m / c_old as f64) as f32).collect();
        for _ in 0..c_new {
            data.extend_from_slice(&mean);
        }
    }
    store.replace(layer.weight, &[c_out, c_new, kh, kw], data)?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct ControlBranch {
    pub conv_in: Conv2d,
    pub hint: Conv2d,
    pub blocks: Vec<ResBlock>,
    pub downs: Vec<Conv2d>,
    pub mid: ResBlock,
    pub zero_convs: Vec<Conv2d>,
}

/// Input width of the hint layer before expansion to the condition width.
pub const HINT_SEED_CHANNELS: usize = 3;

impl ControlBranch {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        config: &DenoiserConfig,
        rng: &mut R,
    ) -> std::result::Result<Self, ModelError> {
        let g = ParamGroup::Control;
        let b = config.base_channels;
        let conv_in = Conv2d::new(store, "control.conv_in", g, config.image_channels, b, 3, 1, 1, rng);
        let seed_channels = HINT_SEED_CHANNELS.min(config.cond_channels);
        let hint = Conv2d::new(store, "control.hint", g, seed_channels, b, 3, 1, 1, rng);
        expand_input_channels(&hint, store, config.cond_channels)?;
        let mut blocks = Vec::new();
        let mut downs = Vec::new();
        let mut zero_convs = Vec::new();
        let mut ch = b;
        for i in 0..config.depth {
            let out = config.stage_channels(i);
            blocks.push(ResBlock::new(
                store,
                &format!("control.enc{i}"),
                g,
                ch,
                out,
                config.time_embed_dim,
                config.norm_groups,
                rng,
            ));
            zero_convs.push(Conv2d::zeros(store, &format!("control.zero{i}"), g, out, out, 1, 1, 0));
            downs.push(Conv2d::new(store, &format!("control.down{i}"), g, out, out, 3, 2, 1, rng));
            ch = out;
        }
        let mid = ResBlock::new(store, "control.mid", g, ch, ch, config.time_embed_dim, config.norm_groups, rng);
        zero_convs.push(Conv2d::zeros(store, "control.zero_mid", g, ch, ch, 1, 1, 0));
        Ok(Self {
            conv_in,
            hint,
            blocks,
            downs,
            mid,
            zero_convs,
        })
    }

    /// One residual per encoder stage, then one for the bottleneck.
    pub fn residuals(&self, store: &ParamStore, x_t: &Tensor, temb_act: &Tensor, cond: &Tensor) -> Result<Vec<Tensor>> {
        let mut h = tensor::add(&self.conv_in.forward(store, x_t)?, &self.hint.forward(store, cond)?)?;
        let mut out = Vec::with_capacity(self.zero_convs.len());
        for ((block, down), zero) in self.blocks.iter().zip(&self.downs).zip(&self.zero_convs) {
            h = block.forward(store, &h, temb_act)?;
            out.push(zero.forward(store, &h)?);
            h = down.forward(store, &h)?;
        }
        h = self.mid.forward(store, &h, temb_act)?;
        out.push(self.zero_convs[self.zero_convs.len() - 1].forward(store, &h)?);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn layer(c_in: usize, rng: &mut ChaCha8Rng) -> (ParamStore, Conv2d) {
        let mut store = ParamStore::new();
        let l = Conv2d::new(&mut store, "c", ParamGroup::Control, c_in, 4, 3, 1, 1, rng);
        (store, l)
    }

    #[test]
    fn single_channel_is_replicated() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (mut store, l) = layer(1, &mut rng);
        let orig = store.get(l.weight).to_vec();
        expand_input_channels(&l, &mut store, 5).unwrap();
        let w = store.get(l.weight);
        assert_eq!(w.shape(), &[4, 5, 3, 3]);
        for o in 0..4 {
            for j in 0..5 {
                assert_eq!(&w.data()[(o * 5 + j) * 9..(o * 5 + j + 1) * 9], &orig[o * 9..(o + 1) * 9]);
            }
        }
    }

    #[test]
    fn zero_kernel_stays_zero() {
        let mut store = ParamStore::new();
        let l = Conv2d::zeros(&mut store, "z", ParamGroup::Control, 3, 2, 3, 1, 1);
        expand_input_channels(&l, &mut store, 65).unwrap();
        assert!(store.get(l.weight).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shrinking_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (mut store, l) = layer(3, &mut rng);
        assert!(matches!(expand_input_channels(&l, &mut store, 2), Err(ModelError::Config(_))));
    }
}
