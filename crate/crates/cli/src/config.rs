use std::path::{Path, PathBuf};

use hye_core::denoiser::{DenoiserConfig, LoraConfig, LoraTarget, TrainMode};
use hye_core::pipeline::{DbWindow, IncidenceRange};
use hye_core::sar_sim::{ClassMix, LandCover, SceneConfig};
use hye_core::scheduler::{NoiseSchedule, SamplerConfig, SamplerKind, ScheduleKind};
use hye_core::training::{AdamWConfig, LrSchedule, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Annotated configuration with every key at its default value. Printed by
/// `hye --help` and parsed by the tests, so it cannot drift from the code.
pub const CONFIG_REFERENCE: &str = r#"# Output directory when --out is not given.
out_dir = "hye-out"

[simulator]
seed = 1000                 # first scene seed; scene i uses seed + i (--seed overrides)
scenes = 16                 # number of scenes
size = 128                  # scene edge in pixels
looks = 4                   # speckle looks (Gamma shape of the intensity)
terrain_roughness = 40.0    # terrain height standard deviation, metres
pixel_spacing_m = 10.0      # ground sampling distance
incidence_min = 31.0        # scene incidence angles are spread evenly over this range
incidence_max = 44.0
projector_seed = 7          # fixed projection behind the synthetic 64-d embedding
# Class mixes cycled over scenes, e.g. [{ water = 1.0 }, { urban = 0.6, bare = 0.4 }].
# Keys: water, vegetation, farmland, urban, bare; omitted classes are zero.
# An empty list uses a single default mix.
class_mixes = []

[pipeline]
tile_size = 64              # window edge in pixels; must be divisible by 2^model.depth
stride = 64                 # window step in pixels
image_channels = 1          # 1 = VV, 2 = VV and VH
db_low = -25.0              # dB window mapped onto [-1, 1]
db_high = 0.0
theta_min = 29.0            # incidence range mapped onto [-1, 1] in the condition
theta_max = 46.0
# Optional directory of per-scene embedding rasters (<scene>.hyeb or <scene>.npy,
# 64 bands) used by `hye tile` instead of the scene-level embedding.
# embedding_dir = "embeddings"
# Optional input directory for `hye tile`; defaults to <out>/scenes.
# scenes_dir = "hye-out/scenes"

[model]
base_channels = 16          # width of the first U-Net stage; stage i has base * 2^i
depth = 2                   # number of down/up stages
time_embed_dim = 64
norm_groups = 8
lora_rank = 4               # LoRA rank on attention projections; 0 disables adapters
lora_scale = 1.0
lora_targets = ["query", "key", "value", "out"]
gamma_offset = 0.2          # offset-noise strength
gamma_snr = 5.0             # min-SNR clamp
schedule = "linear"         # "linear" or "cosine"
timesteps = 100             # diffusion steps T
beta_min = 0.001
beta_max = 0.2

[training]
seed = 42                   # --seed overrides
steps = 500
batch_size = 8
learning_rate = 0.001
lr_min = 0.0
lr_schedule = "cosine"      # "cosine" or "constant"
mode = "full"               # "full" or "lora_and_control" (backbone frozen)
offset_noise = true
offset_per_sample_only = false
min_snr = true              # false weighs every timestep equally
weight_decay = 0.0
beta1 = 0.9
beta2 = 0.999
eps = 1e-8
checkpoint_every = 100      # also writes a final checkpoint
# grad_clip = 1.0           # optional global gradient-norm clip
# data_dir = "hye-out/tiles"            # defaults to <out>/tiles
# resume = "hye-out/checkpoints/step_000100.hyck"

[sampling]
seed = 7                    # --seed overrides
sampler = "ddim"            # "ddim" or "ddpm"
steps = 50                  # DDIM steps; DDPM always walks every timestep
eta = 0.0
clip_x0 = true
count = 8
batch = 8
source = "tiles"            # "tiles", "embedding_file" or "simulator"
incidence_deg = 37.5        # incidence for embedding_file and simulator sources
# checkpoint = "hye-out/model.hyck"     # defaults to <out>/model.hyck
# tiles_dir = "hye-out/tiles"           # tiles source; defaults to <out>/tiles
# embedding_file = "emb.npy"            # embedding_file source, 64 bands
# class = "water"                       # simulator source: one uniform class

[eval]
class_matched = false       # pair by dominant class when the directories differ in size
# gen_dir = "hye-out/samples"           # defaults to <out>/samples
# real_dir = "hye-out/tiles"            # defaults to <out>/tiles
"#;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    pub simulator: SimulatorSection,
    pub pipeline: PipelineSection,
    pub model: ModelSection,
    pub training: TrainingSection,
    pub sampling: SamplingSection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("hye-out"),
            simulator: SimulatorSection::default(),
            pipeline: PipelineSection::default(),
            model: ModelSection::default(),
            training: TrainingSection::default(),
            sampling: SamplingSection::default(),
            eval: EvalSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulatorSection {
    pub seed: u64,
    pub scenes: usize,
    pub size: usize,
    pub looks: u32,
    pub terrain_roughness: f64,
    pub pixel_spacing_m: f64,
    pub incidence_min: f64,
    pub incidence_max: f64,
    pub projector_seed: u64,
    pub class_mixes: Vec<MixSpec>,
}

/// Class fractions in a config file; omitted classes count as zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixSpec {
    pub water: f64,
    pub vegetation: f64,
    pub farmland: f64,
    pub urban: f64,
    pub bare: f64,
}

impl From<MixSpec> for ClassMix {
    fn from(m: MixSpec) -> Self {
        ClassMix::from_array([m.water, m.vegetation, m.farmland, m.urban, m.bare])
    }
}

impl Default for SimulatorSection {
    fn default() -> Self {
        Self {
            seed: 1000,
            scenes: 16,
            size: 128,
            looks: 4,
            terrain_roughness: 40.0,
            pixel_spacing_m: 10.0,
            incidence_min: 31.0,
            incidence_max: 44.0,
            projector_seed: 7,
            class_mixes: Vec::new(),
        }
    }
}

impl SimulatorSection {
    /// Scene `i`: its seed and generator settings.
    pub fn scene(&self, i: usize) -> (u64, SceneConfig) {
        let class_mix = if self.class_mixes.is_empty() {
            ClassMix::default()
        } else {
            self.class_mixes[i % self.class_mixes.len()].into()
        };
        let frac = if self.scenes > 1 { i as f64 / (self.scenes - 1) as f64 } else { 0.5 };
        let cfg = SceneConfig {
            size: self.size,
            terrain_roughness: self.terrain_roughness,
            class_mix,
            incidence_deg: self.incidence_min + frac * (self.incidence_max - self.incidence_min),
            looks: self.looks,
            pixel_spacing_m: self.pixel_spacing_m,
        };
        (self.seed + i as u64, cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    pub tile_size: usize,
    pub stride: usize,
    pub image_channels: usize,
    pub db_low: f32,
    pub db_high: f32,
    pub theta_min: f64,
    pub theta_max: f64,
    pub embedding_dir: Option<PathBuf>,
    pub scenes_dir: Option<PathBuf>,
}

impl Default for PipelineSection {
    fn default() -> Self {
        Self {
            tile_size: 64,
            stride: 64,
            image_channels: 1,
            db_low: -25.0,
            db_high: 0.0,
            theta_min: 29.0,
            theta_max: 46.0,
            embedding_dir: None,
            scenes_dir: None,
        }
    }
}

impl PipelineSection {
    pub fn window(&self) -> DbWindow {
        DbWindow {
            low: self.db_low,
            high: self.db_high,
        }
    }

    pub fn incidence(&self) -> IncidenceRange {
        IncidenceRange {
            theta_min: self.theta_min,
            theta_max: self.theta_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub base_channels: usize,
    pub depth: usize,
    pub time_embed_dim: usize,
    pub norm_groups: usize,
    pub lora_rank: usize,
    pub lora_scale: f32,
    pub lora_targets: Vec<LoraTarget>,
    pub gamma_offset: f32,
    pub gamma_snr: f64,
    pub schedule: ScheduleKind,
    pub timesteps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            base_channels: 16,
            depth: 2,
            time_embed_dim: 64,
            norm_groups: 8,
            lora_rank: 4,
            lora_scale: 1.0,
            lora_targets: LoraConfig::default().targets,
            gamma_offset: 0.2,
            gamma_snr: 5.0,
            schedule: ScheduleKind::Linear,
            timesteps: 100,
            beta_min: 1e-3,
            beta_max: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub seed: u64,
    pub steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_min: f64,
    pub lr_schedule: LrSchedule,
    pub mode: TrainMode,
    pub offset_noise: bool,
    pub offset_per_sample_only: bool,
    pub min_snr: bool,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub checkpoint_every: u64,
    pub grad_clip: Option<f64>,
    pub data_dir: Option<PathBuf>,
    pub resume: Option<PathBuf>,
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            seed: 42,
            steps: 500,
            batch_size: 8,
            learning_rate: 1e-3,
            lr_min: 0.0,
            lr_schedule: LrSchedule::Cosine,
            mode: TrainMode::Full,
            offset_noise: true,
            offset_per_sample_only: false,
            min_snr: true,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            checkpoint_every: 100,
            grad_clip: None,
            data_dir: None,
            resume: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionSource {
    Tiles,
    EmbeddingFile,
    Simulator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingSection {
    pub seed: u64,
    pub sampler: SamplerKind,
    pub steps: usize,
    pub eta: f64,
    pub clip_x0: bool,
    pub count: usize,
    pub batch: usize,
    pub source: ConditionSource,
    pub incidence_deg: f64,
    pub checkpoint: Option<PathBuf>,
    pub tiles_dir: Option<PathBuf>,
    pub embedding_file: Option<PathBuf>,
    pub class: Option<LandCover>,
}

impl Default for SamplingSection {
    fn default() -> Self {
        Self {
            seed: 7,
            sampler: SamplerKind::Ddim,
            steps: 50,
            eta: 0.0,
            clip_x0: true,
            count: 8,
            batch: 8,
            source: ConditionSource::Tiles,
            incidence_deg: 37.5,
            checkpoint: None,
            tiles_dir: None,
            embedding_file: None,
            class: None,
        }
    }
}

impl SamplingSection {
    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig {
            kind: self.sampler,
            steps: self.steps,
            eta: self.eta,
            clip_x0: self.clip_x0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub class_matched: bool,
    pub gen_dir: Option<PathBuf>,
    pub real_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `--seed` to every seeded section.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.simulator.seed = s;
            self.training.seed = s;
            self.sampling.seed = s;
        }
        self
    }

    pub fn denoiser(&self) -> DenoiserConfig {
        let m = &self.model;
        DenoiserConfig {
            base_channels: m.base_channels,
            depth: m.depth,
            time_embed_dim: m.time_embed_dim,
            image_channels: self.pipeline.image_channels,
            norm_groups: m.norm_groups,
            lora: LoraConfig {
                rank: m.lora_rank,
                scale: m.lora_scale,
                targets: m.lora_targets.clone(),
            },
            ..DenoiserConfig::default()
        }
    }

    pub fn schedule(&self) -> Result<NoiseSchedule, CliError> {
        let m = &self.model;
        NoiseSchedule::build(m.schedule, m.timesteps, m.beta_min, m.beta_max).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.training;
        TrainConfig {
            learning_rate: t.learning_rate,
            lr_min: t.lr_min,
            lr_schedule: t.lr_schedule,
            batch_size: t.batch_size,
            steps: t.steps,
            gamma_offset: self.model.gamma_offset,
            offset_enabled: t.offset_noise,
            offset_per_sample_only: t.offset_per_sample_only,
            gamma_snr: self.model.gamma_snr,
            min_snr: t.min_snr,
            seed: t.seed,
            grad_clip: t.grad_clip,
            mode: t.mode,
            optimizer: AdamWConfig {
                beta1: t.beta1,
                beta2: t.beta2,
                eps: t.eps,
                weight_decay: t.weight_decay,
            },
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        let s = &self.simulator;
        if s.scenes == 0 || s.size == 0 || s.looks == 0 {
            return bad("simulator.scenes, size and looks must be at least 1".into());
        }
        if !(s.incidence_min <= s.incidence_max) {
            return bad("simulator.incidence_min exceeds incidence_max".into());
        }
        for (i, m) in s.class_mixes.iter().enumerate() {
            ClassMix::from(*m).validate().map_err(|e| CliError::Config(format!("simulator.class_mixes[{i}]: {e}")))?;
        }
        let p = &self.pipeline;
        if p.tile_size == 0 || p.stride == 0 {
            return bad("pipeline.tile_size and stride must be positive".into());
        }
        if p.tile_size > s.size {
            return bad(format!("pipeline.tile_size {} exceeds simulator.size {}", p.tile_size, s.size));
        }
        let factor = 1usize << self.model.depth.min(usize::BITS as usize - 1);
        if p.tile_size % factor != 0 {
            return bad(format!("pipeline.tile_size {} is not divisible by 2^model.depth = {factor}", p.tile_size));
        }
        if !(1..=2).contains(&p.image_channels) {
            return bad("pipeline.image_channels must be 1 or 2".into());
        }
        if !(p.db_low < p.db_high) || !(p.theta_min < p.theta_max) {
            return bad("pipeline dB window and incidence range must be increasing".into());
        }
        self.denoiser().validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.schedule()?;
        self.train_config().validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.training.checkpoint_every == 0 {
            return bad("training.checkpoint_every must be at least 1".into());
        }
        let sm = &self.sampling;
        if sm.count == 0 || sm.batch == 0 || !(0.0..=1.0).contains(&sm.eta) {
            return bad("sampling.count and batch must be positive and eta in [0, 1]".into());
        }
        if sm.sampler == SamplerKind::Ddim && (sm.steps == 0 || sm.steps > self.model.timesteps) {
            return bad(format!("sampling.steps must lie in 1..={}", self.model.timesteps));
        }
        if sm.source == ConditionSource::EmbeddingFile && sm.embedding_file.is_none() {
            return bad("sampling.source = \"embedding_file\" needs sampling.embedding_file".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_parses_to_defaults() {
        assert_eq!(RunConfig::parse(CONFIG_REFERENCE).unwrap(), RunConfig::default());
    }

    #[test]
    fn reference_mentions_every_key() {
        let value = toml::Value::try_from(RunConfig::default()).unwrap();
        let mut keys = Vec::new();
        for (k, v) in value.as_table().unwrap() {
            match v.as_table() {
                Some(t) => {
                    assert!(CONFIG_REFERENCE.contains(&format!("[{k}]")), "section {k} undocumented");
                    keys.extend(t.keys().cloned());
                }
                None => keys.push(k.clone()),
            }
        }
        let optional = ["embedding_dir", "scenes_dir", "grad_clip", "data_dir", "resume", "checkpoint", "tiles_dir", "embedding_file", "class", "gen_dir", "real_dir"];
        keys.extend(optional.iter().map(|s| s.to_string()));
        for k in keys {
            assert!(CONFIG_REFERENCE.contains(&format!("{k} =")), "{k} undocumented");
        }
    }

    #[test]
    fn rejects_unknown_keys_and_inconsistent_sections() {
        assert!(matches!(RunConfig::parse("[model]\nrank = 3\n"), Err(CliError::Config(_))));
        assert!(matches!(
            RunConfig::parse("[pipeline]\ntile_size = 60\n[model]\ndepth = 3\n"),
            Err(CliError::Config(_))
        ));
        assert!(matches!(
            RunConfig::parse("[simulator]\nclass_mixes = [{ water = 0.5 }]\n"),
            Err(CliError::Config(_))
        ));
    }

    #[test]
    fn seed_override_reaches_every_section() {
        let c = RunConfig::default().with_seed(Some(9));
        assert_eq!((c.simulator.seed, c.training.seed, c.sampling.seed), (9, 9, 9));
    }
}
