//! Synthetic SAR scenes: terrain, land cover, side-looking geometry,
//! speckle, a 64-D scene embedding and a four-band pseudo-optical image.
//!
//! Range runs along +x (columns); the sensor sits beyond column 0.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("simulator configuration error: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
}

type Result<T> = std::result::Result<T, SimError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LandCover {
    Water,
    Vegetation,
    Farmland,
    Urban,
    Bare,
}

impl LandCover {
    pub const ALL: [LandCover; 5] = [
        LandCover::Water,
        LandCover::Vegetation,
        LandCover::Farmland,
        LandCover::Urban,
        LandCover::Bare,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            LandCover::Water => "water",
            LandCover::Vegetation => "vegetation",
            LandCover::Farmland => "farmland",
            LandCover::Urban => "urban",
            LandCover::Bare => "bare",
        }
    }
}

/// Requested area fraction per class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassMix {
    pub water: f64,
    pub vegetation: f64,
    pub farmland: f64,
    pub urban: f64,
    pub bare: f64,
}

impl Default for ClassMix {
    fn default() -> Self {
        Self {
            water: 0.15,
            vegetation: 0.35,
            farmland: 0.25,
            urban: 0.1,
            bare: 0.15,
        }
    }
}

impl ClassMix {
    pub fn none() -> Self {
        Self {
            water: 0.0,
            vegetation: 0.0,
            farmland: 0.0,
            urban: 0.0,
            bare: 0.0,
        }
    }

    pub fn pure(class: LandCover) -> Self {
        let mut a = [0.0; 5];
        a[class.index()] = 1.0;
        Self::from_array(a)
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.water, self.vegetation, self.farmland, self.urban, self.bare]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Self {
            water: a[0],
            vegetation: a[1],
            farmland: a[2],
            urban: a[3],
            bare: a[4],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.as_array();
        if a.iter().any(|f| !(*f >= 0.0 && *f <= 1.0)) {
            return Err(SimError::Config(format!("class fractions must lie in [0, 1]: {a:?}")));
        }
        let total: f64 = a.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(SimError::Config(format!("class fractions sum to {total}, not 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub size: usize,
    /// Standard deviation of the terrain height, metres.
    pub terrain_roughness: f64,
    pub class_mix: ClassMix,
    pub incidence_deg: f64,
    pub looks: u32,
    pub pixel_spacing_m: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            size: 128,
            terrain_roughness: 40.0,
            class_mix: ClassMix::default(),
            incidence_deg: 37.5,
            looks: 4,
            pixel_spacing_m: 10.0,
        }
    }
}

/// Ground truth of one scene; rasters are row-major `[H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneTruth {
    pub dem: Tensor,
    pub landcover: Vec<LandCover>,
    pub height: usize,
    pub width: usize,
    pub incidence_deg: f64,
    pub looks: u32,
    pub pixel_spacing_m: f64,
    pub seed: u64,
}

impl SceneTruth {
    /// Flat terrain covered by one class.
    pub fn uniform(class: LandCover, size: usize, incidence_deg: f64, looks: u32, seed: u64) -> Self {
        Self {
            dem: Tensor::full(&[size, size], 100.0),
            landcover: vec![class; size * size],
            height: size,
            width: size,
            incidence_deg,
            looks,
            pixel_spacing_m: 10.0,
            seed,
        }
    }

    pub fn class_fractions(&self) -> [f64; 5] {
        class_fractions(&self.landcover)
    }

    /// Copy of a `size`×`size` window at (`row`, `col`).
    pub fn crop(&self, row: usize, col: usize, size: usize) -> SceneTruth {
        let mut dem = Vec::with_capacity(size * size);
        let mut lc = Vec::with_capacity(size * size);
        for r in row..row + size {
            let off = r * self.width + col;
            dem.extend_from_slice(&self.dem.data()[off..off + size]);
            lc.extend_from_slice(&self.landcover[off..off + size]);
        }
        SceneTruth {
            dem: Tensor::new(&[size, size], dem).expect("crop of finite dem"),
            landcover: lc,
            height: size,
            width: size,
            ..self.clone()
        }
    }
}

pub fn class_fractions(landcover: &[LandCover]) -> [f64; 5] {
    let mut counts = [0usize; 5];
    for c in landcover {
        counts[c.index()] += 1;
    }
    counts.map(|c| c as f64 / landcover.len().max(1) as f64)
}

/// Sum of octaves of smoothly interpolated lattice noise, standardised to
/// zero mean and unit variance.
fn value_noise<R: Rng + ?Sized>(rng: &mut R, h: usize, w: usize, base_cell: f64, octaves: usize) -> Vec<f64> {
    let mut out = vec![0.0f64; h * w];
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    for o in 0..octaves {
        let cell = (base_cell / (1u64 << o) as f64).max(1.0);
        let amp = 0.5f64.powi(o as i32);
        let gh = (h as f64 / cell).ceil() as usize + 2;
        let gw = (w as f64 / cell).ceil() as usize + 2;
        let lattice: Vec<f64> = (0..gh * gw).map(|_| rng.random_range(-1.0..1.0)).collect();
        for r in 0..h {
            let fy = r as f64 / cell;
            let (y0, ty) = (fy.floor() as usize, smooth(fy.fract()));
            for c in 0..w {
                let fx = c as f64 / cell;
                let (x0, tx) = (fx.floor() as usize, smooth(fx.fract()));
                let v00 = lattice[y0 * gw + x0];
                let v01 = lattice[y0 * gw + x0 + 1];
                let v10 = lattice[(y0 + 1) * gw + x0];
                let v11 = lattice[(y0 + 1) * gw + x0 + 1];
                let top = v00 + (v01 - v00) * tx;
                let bot = v10 + (v11 - v10) * tx;
                out[r * w + c] += amp * (top + (bot - top) * ty);
            }
        }
    }
    let n = out.len() as f64;
    let mean = out.iter().sum::<f64>() / n;
    let sd = (out.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let sd = if sd > 0.0 { sd } else { 1.0 };
    out.iter_mut().for_each(|v| *v = (*v - mean) / sd);
    out
}

/// Order in which classes take the rising cover field: water fills the
/// lowest values, so lakes sit in low ground.
const FILL_ORDER: [LandCover; 5] = [
    LandCover::Water,
    LandCover::Farmland,
    LandCover::Vegetation,
    LandCover::Bare,
    LandCover::Urban,
];

/// Pixels per class (in fill order) summing to `total`, by largest remainder.
fn pixel_counts(mix: &ClassMix, total: usize) -> [usize; 5] {
    let shares = FILL_ORDER.map(|c| mix.as_array()[c.index()] * total as f64);
    let mut counts = shares.map(|s| s.floor() as usize);
    let mut left = total - counts.iter().sum::<usize>();
    let mut by_remainder: Vec<usize> = (0..5).filter(|&k| shares[k] > 0.0).collect();
    by_remainder.sort_by(|&a, &b| (shares[b] - shares[b].floor()).total_cmp(&(shares[a] - shares[a].floor())));
    for &k in by_remainder.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[k] += 1;
        left -= 1;
    }
    counts
}

pub fn generate_scene(seed: u64, config: &SceneConfig) -> Result<SceneTruth> {
    config.class_mix.validate()?;
    if config.size < 2 {
        return Err(SimError::Config(format!("scene size {} too small", config.size)));
    }
    if !(config.terrain_roughness >= 0.0) || !(config.pixel_spacing_m > 0.0) {
        return Err(SimError::Config("roughness must be >= 0 and pixel spacing > 0".into()));
    }
    if !(config.incidence_deg > 0.0 && config.incidence_deg < 90.0) {
        return Err(SimError::Config(format!("incidence {} outside (0, 90)", config.incidence_deg)));
    }
    if config.looks == 0 {
        return Err(SimError::Config("looks must be at least 1".into()));
    }
    let n = config.size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let terrain = value_noise(&mut rng, n, n, n as f64 / 2.0, 4);
    let dem: Vec<f32> = terrain
        .iter()
        .map(|z| (200.0 + config.terrain_roughness * z) as f32)
        .collect();
    let field = value_noise(&mut rng, n, n, n as f64 / 4.0, 3);
    let cover: Vec<f64> = field.iter().zip(&terrain).map(|(f, z)| f + 0.5 * z).collect();
    let mut order: Vec<usize> = (0..n * n).collect();
    order.sort_by(|&a, &b| cover[a].total_cmp(&cover[b]).then(a.cmp(&b)));
    let mut landcover = vec![LandCover::Water; n * n];
    let mut start = 0usize;
    for (class, count) in FILL_ORDER.iter().zip(pixel_counts(&config.class_mix, n * n)) {
        for &p in &order[start..start + count] {
            landcover[p] = *class;
        }
        start += count;
    }
    Ok(SceneTruth {
        dem: Tensor::new(&[n, n], dem).map_err(|e| SimError::Domain(e.to_string()))?,
        landcover,
        height: n,
        width: n,
        incidence_deg: config.incidence_deg,
        looks: config.looks,
        pixel_spacing_m: config.pixel_spacing_m,
        seed,
    })
}

/// Mean backscatter per class, dB.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackscatterTable {
    pub water: f64,
    pub vegetation: f64,
    pub farmland: f64,
    pub urban: f64,
    pub bare: f64,
    pub noise_floor_db: f64,
    /// VH relative to VV.
    pub vh_offset_db: f64,
}

impl Default for BackscatterTable {
    fn default() -> Self {
        Self {
            water: -22.0,
            vegetation: -11.0,
            farmland: -9.0,
            urban: -3.0,
            bare: -14.0,
            noise_floor_db: -30.0,
            vh_offset_db: -7.0,
        }
    }
}

impl BackscatterTable {
    pub fn mean_db(&self, class: LandCover) -> f64 {
        match class {
            LandCover::Water => self.water,
            LandCover::Vegetation => self.vegetation,
            LandCover::Farmland => self.farmland,
            LandCover::Urban => self.urban,
            LandCover::Bare => self.bare,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = LandCover::ALL.map(|c| self.mean_db(c));
        if all.iter().any(|v| !v.is_finite()) {
            return Err(SimError::Config("backscatter values must be finite".into()));
        }
        if !(self.water < self.vegetation) || all.iter().any(|&v| v > self.urban) {
            return Err(SimError::Config(
                "backscatter table must have water below vegetation and urban brightest".into(),
            ));
        }
        if self.noise_floor_db >= all.iter().cloned().fold(f64::INFINITY, f64::min) {
            return Err(SimError::Config("noise floor must lie below every class".into()));
        }
        Ok(())
    }
}

/// Per-pixel geometry derived from the DEM.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    /// Local incidence angle, degrees.
    pub local_incidence_deg: Vec<f64>,
    pub shadow: Vec<bool>,
}

/// Range slope by central differences (one-sided at the edges).
fn range_slope(scene: &SceneTruth, r: usize, c: usize) -> f64 {
    let w = scene.width;
    let z = scene.dem.data();
    let at = |cc: usize| z[r * w + cc] as f64;
    let (lo, hi) = (c.saturating_sub(1), (c + 1).min(w - 1));
    if hi == lo {
        return 0.0;
    }
    (at(hi) - at(lo)) / ((hi - lo) as f64 * scene.pixel_spacing_m)
}

/// Shadow mask from marching each range line away from the sensor. The
/// grazing ray drops by `cot θ` per unit range; ground below it is hidden.
pub fn shadow_mask(scene: &SceneTruth, incidence_deg: f64) -> Vec<bool> {
    let (h, w) = (scene.height, scene.width);
    let drop = scene.pixel_spacing_m / incidence_deg.to_radians().tan();
    let z = scene.dem.data();
    let mut mask = vec![false; h * w];
    for r in 0..h {
        let mut ray = f64::NEG_INFINITY;
        for c in 0..w {
            let zc = z[r * w + c] as f64;
            ray -= drop;
            if zc < ray {
                mask[r * w + c] = true;
            } else {
                ray = zc;
            }
        }
    }
    mask
}

pub fn geometry(scene: &SceneTruth) -> Geometry {
    let theta = scene.incidence_deg.to_radians();
    let (h, w) = (scene.height, scene.width);
    let mut local = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let f = range_slope(scene, r, c);
            let cos_loc = (theta.sin() * f + theta.cos()) / (1.0 + f * f).sqrt();
            local.push(cos_loc.clamp(-1.0, 1.0).acos().to_degrees());
        }
    }
    Geometry {
        local_incidence_deg: local,
        shadow: shadow_mask(scene, scene.incidence_deg),
    }
}

/// Speckle-free backscatter (linear power).
pub fn render_clean(scene: &SceneTruth, table: &BackscatterTable) -> Result<Tensor> {
    table.validate()?;
    let geo = geometry(scene);
    let cos_t = scene.incidence_deg.to_radians().cos();
    let floor = from_db_scalar(table.noise_floor_db);
    let data: Vec<f32> = (0..scene.height * scene.width)
        .map(|i| {
            if geo.shadow[i] {
                return floor as f32;
            }
            let sigma = from_db_scalar(table.mean_db(scene.landcover[i]));
            let factor = geo.local_incidence_deg[i].to_radians().cos() / cos_t;
            (sigma * factor).max(floor) as f32
        })
        .collect();
    Tensor::new(&[scene.height, scene.width], data).map_err(|e| SimError::Domain(e.to_string()))
}

/// Fully developed speckle: each pixel drawn from `Gamma(L, σ0/L)`.
pub fn speckle<R: Rng + ?Sized>(clean: &Tensor, looks: u32, rng: &mut R) -> Result<Tensor> {
    if looks == 0 {
        return Err(SimError::Config("looks must be at least 1".into()));
    }
    if let Some(v) = clean.data().iter().find(|v| !(**v > 0.0)) {
        return Err(SimError::Domain(format!("speckle needs positive intensity, got {v}")));
    }
    let l = looks as f64;
    let unit = Gamma::new(l, 1.0 / l).expect("valid gamma");
    let data = clean
        .data()
        .iter()
        .map(|&s| {
            let g: f64 = unit.sample(rng);
            ((s as f64 * g) as f32).max(f32::MIN_POSITIVE)
        })
        .collect();
    Tensor::new(clean.shape(), data).map_err(|e| SimError::Domain(e.to_string()))
}

/// Single-polarisation speckled intensity.
pub fn render_sar<R: Rng + ?Sized>(scene: &SceneTruth, table: &BackscatterTable, rng: &mut R) -> Result<Tensor> {
    speckle(&render_clean(scene, table)?, scene.looks, rng)
}

/// The three SAR rasters carried by a tile.
#[derive(Debug, Clone, PartialEq)]
pub struct SarChannels {
    pub vv_db: Tensor,
    pub vh_db: Tensor,
    /// Scene incidence with a quarter of the local terrain deviation, degrees.
    pub incidence_deg: Tensor,
}

/// VV, VH (VV offset plus independent speckle) and the incidence map.
pub fn render_channels<R: Rng + ?Sized>(scene: &SceneTruth, table: &BackscatterTable, rng: &mut R) -> Result<SarChannels> {
    let clean = render_clean(scene, table)?;
    let vv = speckle(&clean, scene.looks, rng)?;
    let k = from_db_scalar(table.vh_offset_db) as f32;
    let clean_vh = Tensor::new(clean.shape(), clean.data().iter().map(|v| (v * k).max(f32::MIN_POSITIVE)).collect())
        .map_err(|e| SimError::Domain(e.to_string()))?;
    let vh = speckle(&clean_vh, scene.looks, rng)?;
    let geo = geometry(scene);
    let theta = scene.incidence_deg;
    let inc: Vec<f32> = geo
        .local_incidence_deg
        .iter()
        .map(|&l| (theta + 0.25 * (l - theta)) as f32)
        .collect();
    Ok(SarChannels {
        vv_db: to_db(&vv)?,
        vh_db: to_db(&vh)?,
        incidence_deg: Tensor::new(clean.shape(), inc).map_err(|e| SimError::Domain(e.to_string()))?,
    })
}

fn from_db_scalar(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn to_db(intensity: &Tensor) -> Result<Tensor> {
    if let Some(v) = intensity.data().iter().find(|v| !(**v > 0.0)) {
        return Err(SimError::Domain(format!("dB of non-positive value {v}")));
    }
    let data = intensity.data().iter().map(|&v| (10.0 * (v as f64).log10()) as f32).collect();
    Tensor::new(intensity.shape(), data).map_err(|e| SimError::Domain(e.to_string()))
}

pub fn from_db(db: &Tensor) -> Result<Tensor> {
    let data = db.data().iter().map(|&v| from_db_scalar(v as f64) as f32).collect();
    Tensor::new(db.shape(), data).map_err(|e| SimError::Domain(e.to_string()))
}

pub const EMBEDDING_DIM: usize = 64;
const PROJECTED_DIMS: usize = EMBEDDING_DIM - 10;
const STRUCTURE_LAGS: [usize; 4] = [1, 2, 4, 8];
const FEATURE_DIM: usize = 5 + STRUCTURE_LAGS.len() + 1;

/// Fixed random projection used for the upper 54 embedding dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingProjector {
    matrix: Vec<f64>,
}

impl EmbeddingProjector {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_e3b0_u64);
        let scale = 1.5 / (FEATURE_DIM as f64).sqrt();
        let matrix = (0..PROJECTED_DIMS * FEATURE_DIM)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * scale
            })
            .collect();
        Self { matrix }
    }
}

/// Deterministic 64-D embedding of a scene window. Dims 0–4 hold class
/// fractions (water, vegetation, farmland, urban, bare), 5–7 squashed DEM
/// mean/std/range, 8 the normalised scene incidence, 9 the mean local
/// incidence deviation, 10–63 a projection of the class histogram and
/// terrain structure function. Every component lies in [−1, 1].
pub fn synth_embedding(scene: &SceneTruth, projector: &EmbeddingProjector) -> [f32; EMBEDDING_DIM] {
    let mut e = [0.0f32; EMBEDDING_DIM];
    let frac = scene.class_fractions();
    for (k, f) in frac.iter().enumerate() {
        e[k] = *f as f32;
    }
    let z = scene.dem.data();
    let n = z.len() as f64;
    let mean = z.iter().map(|&v| v as f64).sum::<f64>() / n;
    let sd = (z.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n).sqrt();
    let (lo, hi) = z.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v as f64), h.max(v as f64)));
    e[5] = ((mean - 200.0) / 100.0).tanh() as f32;
    e[6] = (sd / 50.0).tanh() as f32;
    e[7] = ((hi - lo) / 200.0).tanh() as f32;
    e[8] = (2.0 * (scene.incidence_deg - 29.0) / (46.0 - 29.0) - 1.0).clamp(-1.0, 1.0) as f32;
    let geo = geometry(scene);
    let dev = geo.local_incidence_deg.iter().map(|l| l - scene.incidence_deg).sum::<f64>() / n;
    e[9] = (dev / 5.0).tanh() as f32;
    let mut feat = [0.0f64; FEATURE_DIM];
    for k in 0..5 {
        feat[k] = 2.0 * frac[k] - 1.0;
    }
    for (j, &lag) in STRUCTURE_LAGS.iter().enumerate() {
        feat[5 + j] = (structure_function(scene, lag).sqrt() / 10.0).tanh();
    }
    feat[FEATURE_DIM - 1] = 1.0;
    for d in 0..PROJECTED_DIMS {
        let row = &projector.matrix[d * FEATURE_DIM..(d + 1) * FEATURE_DIM];
        let s: f64 = row.iter().zip(&feat).map(|(a, b)| a * b).sum();
        e[10 + d] = s.tanh() as f32;
    }
    e
}

/// Mean squared height difference at horizontal and vertical offset `lag`.
fn structure_function(scene: &SceneTruth, lag: usize) -> f64 {
    let (h, w) = (scene.height, scene.width);
    let z = scene.dem.data();
    let mut acc = 0.0;
    let mut count = 0usize;
    for r in 0..h {
        for c in 0..w {
            let v = z[r * w + c] as f64;
            if c + lag < w {
                acc += (z[r * w + c + lag] as f64 - v).powi(2);
                count += 1;
            }
            if r + lag < h {
                acc += (z[(r + lag) * w + c] as f64 - v).powi(2);
                count += 1;
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        acc / count as f64
    }
}

/// Surface reflectance per class for bands B2, B3, B4, B8.
fn reflectance(class: LandCover) -> [f32; 4] {
    match class {
        LandCover::Water => [0.06, 0.05, 0.03, 0.02],
        LandCover::Vegetation => [0.04, 0.07, 0.04, 0.35],
        LandCover::Farmland => [0.06, 0.09, 0.08, 0.28],
        LandCover::Urban => [0.12, 0.12, 0.13, 0.18],
        LandCover::Bare => [0.10, 0.13, 0.17, 0.24],
    }
}

/// Four-band pseudo-optical image `[4, H, W]` with mild per-pixel noise.
pub fn render_optical<R: Rng + ?Sized>(scene: &SceneTruth, rng: &mut R) -> Tensor {
    let plane = scene.height * scene.width;
    let mut data = vec![0.0f32; 4 * plane];
    for b in 0..4 {
        for i in 0..plane {
            let z: f32 = StandardNormal.sample(rng);
            data[b * plane + i] = (reflectance(scene.landcover[i])[b] * (1.0 + 0.05 * z)).max(0.0);
        }
    }
    Tensor::new(&[4, scene.height, scene.width], data).expect("finite reflectance")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(mix: ClassMix) -> SceneConfig {
        SceneConfig {
            size: 64,
            class_mix: mix,
            ..SceneConfig::default()
        }
    }

    #[test]
    fn pure_water_mix_gives_all_water() {
        let s = generate_scene(3, &cfg(ClassMix::pure(LandCover::Water))).unwrap();
        assert!(s.landcover.iter().all(|c| *c == LandCover::Water));
    }

    #[test]
    fn same_seed_same_scene() {
        let a = generate_scene(7, &cfg(ClassMix::default())).unwrap();
        let b = generate_scene(7, &cfg(ClassMix::default())).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unreachable_mix_rejected() {
        let mut m = ClassMix::default();
        m.water += 0.1;
        assert!(matches!(generate_scene(1, &cfg(m)), Err(SimError::Config(_))));
    }

    #[test]
    fn db_examples() {
        let t = Tensor::new(&[2], vec![1.0, 0.01]).unwrap();
        let d = to_db(&t).unwrap();
        assert_eq!(d.data()[0], 0.0);
        assert!((d.data()[1] + 20.0).abs() < 1e-5);
        assert!(to_db(&Tensor::new(&[1], vec![0.0]).unwrap()).is_err());
    }

    #[test]
    fn table_ordering_enforced() {
        let bad = BackscatterTable {
            urban: -12.0,
            ..BackscatterTable::default()
        };
        assert!(bad.validate().is_err());
        assert!(BackscatterTable::default().validate().is_ok());
    }

    #[test]
    fn embedding_class_dims() {
        let s = SceneTruth::uniform(LandCover::Water, 16, 37.5, 4, 0);
        let e = synth_embedding(&s, &EmbeddingProjector::new(0));
        assert_eq!(&e[..5], &[1.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(e.iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}
