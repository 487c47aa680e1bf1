//! End-to-end glue: simulated scenes to cleaned tiles, tiles to training
//! sets, and conditions to generated tiles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::denoiser::{Denoiser, ModelError};
use crate::metrics::MetricsError;
use crate::pipeline::{
    self, build_condition, normalize_sar, sliding_window, tile_condition, window_offsets, DbWindow, IncidenceRange,
    PipelineError, RasterStack, TilePatch,
};
use crate::sar_sim::{
    render_channels, render_optical, synth_embedding, BackscatterTable, EmbeddingProjector, LandCover, SceneTruth,
    SimError,
};
use crate::scheduler::{sample_loop, NoiseSchedule, SamplerConfig, ScheduleError};
use crate::tensor::{self, Tensor, TensorError};
use crate::training::{CheckpointError, Dataset, TrainError};

#[derive(Debug, Error)]
pub enum WorkflowError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("sampling failed: {0}")]
    Sampling(String),
}

pub type Result<T> = std::result::Result<T, WorkflowError>;

/// Stacks equally shaped tensors along a new leading axis.
pub fn stack(items: &[Tensor]) -> Result<Tensor> {
    let first = items
        .first()
        .ok_or_else(|| WorkflowError::Config("nothing to stack".into()))?;
    let mut shape = vec![items.len()];
    shape.extend_from_slice(first.shape());
    let mut data = Vec::with_capacity(first.numel() * items.len());
    for t in items {
        if t.shape() != first.shape() {
            return Err(WorkflowError::Config(format!("cannot stack {:?} with {:?}", t.shape(), first.shape())));
        }
        data.extend_from_slice(t.data());
    }
    Ok(Tensor::new(&shape, data)?)
}

/// Item `i` of a batched tensor, without the leading axis.
pub fn unstack(batch: &Tensor, i: usize) -> Tensor {
    let per = batch.numel() / batch.shape()[0];
    Tensor::new(&batch.shape()[1..], batch.data()[i * per..(i + 1) * per].to_vec()).expect("slice of finite batch")
}

/// Renders optical and SAR rasters of a scene. The embedding is attached
/// per tile by [`scene_tiles`].
pub fn render_stack<R: Rng + ?Sized>(scene: &SceneTruth, table: &BackscatterTable, rng: &mut R) -> Result<RasterStack> {
    let ch = render_channels(scene, table, rng)?;
    let sar = stack(&[ch.vv_db, ch.vh_db, ch.incidence_deg])?;
    Ok(RasterStack {
        optical: render_optical(scene, rng),
        sar,
        embedding: None,
        name: format!("scene{}", scene.seed),
    })
}

/// Windows of a rendered scene, each with the embedding and class
/// fractions of its own crop, after cleaning.
pub fn scene_tiles<R: Rng + ?Sized>(
    scene: &SceneTruth,
    table: &BackscatterTable,
    projector: &EmbeddingProjector,
    size: usize,
    stride: usize,
    rng: &mut R,
) -> Result<Vec<TilePatch>> {
    let stack = render_stack(scene, table, rng)?;
    tile_rendered(scene, &stack, projector, size, stride)
}

/// Windows of an already rendered scene; see [`scene_tiles`].
pub fn tile_rendered(
    scene: &SceneTruth,
    stack: &RasterStack,
    projector: &EmbeddingProjector,
    size: usize,
    stride: usize,
) -> Result<Vec<TilePatch>> {
    let mut tiles = sliding_window(stack, size, stride)?;
    let offsets = window_offsets(scene.height, scene.width, size, stride);
    for (tile, (r, c)) in tiles.iter_mut().zip(offsets) {
        let crop = scene.crop(r, c, size);
        tile.embedding = Some(synth_embedding(&crop, projector).to_vec());
        tile.class_fractions = Some(crop.class_fractions().map(|f| f as f32));
    }
    Ok(pipeline::clean(tiles))
}

/// Normalised `[C, H, W]` image of the first `channels` dB bands.
pub fn tile_image(tile: &TilePatch, channels: usize, window: DbWindow) -> Result<Tensor> {
    if !(1..=2).contains(&channels) {
        return Err(WorkflowError::Config(format!("image_channels must be 1 or 2, got {channels}")));
    }
    let bands: Vec<Tensor> = (0..channels).map(|c| tile.sar_channel(c)).collect();
    Ok(normalize_sar(&stack(&bands)?, window)?)
}

/// Images and 65-channel conditions of valid tiles.
pub fn tiles_to_dataset(
    tiles: &[TilePatch],
    channels: usize,
    window: DbWindow,
    range: IncidenceRange,
) -> Result<Dataset> {
    if tiles.is_empty() {
        return Err(WorkflowError::Train(TrainError::Data("no valid tiles".into())));
    }
    let mut images = Vec::with_capacity(tiles.len());
    let mut conds = Vec::with_capacity(tiles.len());
    for t in tiles {
        images.push(tile_image(t, channels, window)?);
        conds.push(tile_condition(t, range)?);
    }
    Ok(Dataset::new(stack(&images)?, Some(stack(&conds)?))?)
}

/// Condition of a flat single-class scene.
pub fn uniform_condition(
    class: LandCover,
    size: usize,
    incidence_deg: f64,
    projector: &EmbeddingProjector,
    range: IncidenceRange,
) -> Result<Tensor> {
    let scene = SceneTruth::uniform(class, size, incidence_deg, 4, 0);
    let emb = synth_embedding(&scene, projector);
    let inc = Tensor::full(&[size, size], incidence_deg as f32);
    Ok(build_condition(&emb, &inc, range)?)
}

/// Draws `count` samples of shape `[C, H, W]` by running the reverse
/// process from Gaussian noise, `batch` at a time. `conds`, when given,
/// holds one condition per sample. Deterministic in `seed`.
#[allow(clippy::too_many_arguments)]
pub fn generate(
    model: &Denoiser,
    schedule: &NoiseSchedule,
    conds: Option<&Tensor>,
    count: usize,
    height: usize,
    width: usize,
    sampler: &SamplerConfig,
    seed: u64,
    batch: usize,
) -> Result<Tensor> {
    if let Some(c) = conds {
        if c.ndim() != 4 || c.shape()[0] != count {
            return Err(WorkflowError::Config(format!("{count} samples but conditions {:?}", c.shape())));
        }
    }
    let channels = model.config.image_channels;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count * channels * height * width);
    let batch = batch.max(1);
    let mut done = 0;
    while done < count {
        let b = batch.min(count - done);
        let cond_b = conds.map(|c| {
            let per = c.numel() / count;
            let mut shape = c.shape().to_vec();
            shape[0] = b;
            Tensor::new(&shape, c.data()[done * per..(done + b) * per].to_vec()).expect("condition slice")
        });
        let x_t = Tensor::randn(&[b, channels, height, width], &mut rng);
        let x0 = tensor::no_grad(|| {
            sample_loop(x_t, schedule, sampler, &mut rng, |x, t| {
                Ok(model.predict_noise(x, &vec![t; b], cond_b.as_ref())?)
            })
        })
        .map_err(|e| WorkflowError::Sampling(e.to_string()))?;
        out.extend_from_slice(x0.data());
        done += b;
    }
    Ok(Tensor::new(&[count, channels, height, width], out)?)
}
