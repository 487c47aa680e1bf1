use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{MetricsError, Result};
use crate::nn::{Conv2d, Linear, ParamGroup, ParamId, ParamStore};
use crate::tensor::{self, Tensor};
use crate::training::{AdamW, AdamWConfig};

/// Single-channel images `[N, 1, H, W]` with one label in `0..classes` each.
#[derive(Debug, Clone)]
pub struct LabeledSet {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl LabeledSet {
    pub fn new(images: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        let s = images.shape();
        if s.len() != 4 || s[1] != 1 || s[0] != labels.len() {
            return Err(MetricsError::Shape(format!("images {s:?} with {} labels", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(MetricsError::Domain(format!("label {bad} outside {classes} classes")));
        }
        Ok(Self { images, labels, classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Concatenation with another set of the same image size.
    pub fn union(&self, other: &LabeledSet) -> Result<LabeledSet> {
        let images = tensor::concat(&[&self.images, &other.images], 0)?;
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        LabeledSet::new(images, labels, self.classes.max(other.classes))
    }

    fn gather(&self, idx: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let s = self.images.shape();
        let per = s[2] * s[3];
        let mut data = Vec::with_capacity(idx.len() * per);
        for &i in idx {
            data.extend_from_slice(&self.images.data()[i * per..(i + 1) * per]);
        }
        let x = Tensor::new(&[idx.len(), 1, s[2], s[3]], data)?;
        Ok((x, idx.iter().map(|&i| self.labels[i]).collect()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 16,
            learning_rate: 3e-3,
            seed: 0,
        }
    }
}

/// conv 3×3/2 (1→8), silu, conv 3×3/2 (8→16), silu, global mean, linear.
pub struct TinyClassifier {
    store: ParamStore,
    conv1: Conv2d,
    conv2: Conv2d,
    head: Linear,
}

impl TinyClassifier {
    pub fn new(classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let g = ParamGroup::Backbone;
        let conv1 = Conv2d::new(&mut store, "conv1", g, 1, 8, 3, 2, 1, &mut rng);
        let conv2 = Conv2d::new(&mut store, "conv2", g, 8, 16, 3, 2, 1, &mut rng);
        let head = Linear::new(&mut store, "head", g, 16, classes, &mut rng);
        Self { store, conv1, conv2, head }
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let h = tensor::silu(&self.conv1.forward(&self.store, x)?)?;
        let h = tensor::silu(&self.conv2.forward(&self.store, &h)?)?;
        let s = h.shape().to_vec();
        let h = tensor::reshape(&h, &[s[0], s[1], s[2] * s[3]])?;
        let pooled = tensor::mean_keep(&h, 2)?;
        Ok(self.head.forward(&self.store, &pooled)?)
    }

    pub fn fit(&mut self, data: &LabeledSet, config: &ClassifierConfig) -> Result<()> {
        if data.is_empty() || config.batch_size == 0 {
            return Err(MetricsError::Domain("empty training set or zero batch size".into()));
        }
        let params: Vec<ParamId> = self.store.ids().collect();
        self.store.set_trainable(&params);
        let mut opt = AdamW::new(AdamWConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);
        let mut order: Vec<usize> = (0..data.len()).collect();
        for _ in 0..config.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(config.batch_size) {
                let (x, y) = data.gather(chunk)?;
                self.store.zero_grad();
                let loss = tensor::cross_entropy(&self.logits(&x)?, &y)?;
                loss.backward()?;
                opt.step(&mut self.store, &params, config.learning_rate)?;
            }
        }
        Ok(())
    }

    pub fn predict(&self, images: &Tensor) -> Result<Vec<usize>> {
        let logits = tensor::no_grad(|| self.logits(images))?;
        let k = logits.shape()[1];
        Ok(logits
            .data()
            .chunks_exact(k)
            .map(|row| {
                let mut best = 0;
                for (i, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = i;
                    }
                }
                best
            })
            .collect())
    }

    pub fn accuracy(&self, test: &LabeledSet) -> Result<f64> {
        let pred = self.predict(&test.images)?;
        let hits = pred.iter().zip(&test.labels).filter(|(p, l)| p == l).count();
        Ok(hits as f64 / test.len() as f64)
    }
}

/// Test accuracy of the same classifier trained on `real_train` and on
/// `augmented_train` with identical seeds.
pub fn downstream_classify(
    real_train: &LabeledSet,
    augmented_train: &LabeledSet,
    test: &LabeledSet,
    config: &ClassifierConfig,
) -> Result<(f64, f64)> {
    let classes = real_train.classes.max(augmented_train.classes).max(test.classes);
    for class in 0..classes {
        if !test.labels.contains(&class) {
            return Err(MetricsError::MissingClass { class });
        }
    }
    let run = |train: &LabeledSet| -> Result<f64> {
        let mut model = TinyClassifier::new(classes, config.seed);
        model.fit(train, config)?;
        model.accuracy(test)
    };
    Ok((run(real_train)?, run(augmented_train)?))
}
