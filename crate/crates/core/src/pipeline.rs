//! Tiling, cleaning, normalisation and serialisation of multi-modal tiles.
//!
//! A tile carries 4 optical bands (B2, B3, B4, B8), 3 SAR rasters (VV dB,
//! VH dB, incidence degrees) and a 64-D embedding broadcast over the tile,
//! 71 channels in all. The generator's condition is the embedding plus the
//! normalised incidence map, 65 channels.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fsutil::{put_f32s, write_atomic, Reader};
use crate::sar_sim::{ClassMix, EMBEDDING_DIM};
use crate::tensor::Tensor;

/// No-data marker in the dB channels.
pub const NODATA: f32 = -9999.0;
pub const OPTICAL_BANDS: usize = 4;
pub const SAR_CHANNELS: usize = 3;
pub const TILE_CHANNELS: usize = OPTICAL_BANDS + SAR_CHANNELS + EMBEDDING_DIM;
pub const COND_CHANNELS: usize = EMBEDDING_DIM + 1;

pub const TILE_MAGIC: &[u8; 4] = b"HYE1";
pub const TILE_VERSION: u16 = 1;
const RASTER_MAGIC: &[u8; 4] = b"HYEB";
const RASTER_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("pipeline configuration error: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic in {0}")]
    BadMagic(String),
    #[error("unsupported format version {found} (reader supports {supported})")]
    UnsupportedVersion { found: u16, supported: u16 },
    #[error("checksum mismatch (stored {stored:08x}, computed {computed:08x})")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("file truncated")]
    Truncated,
    #[error("format error: {0}")]
    Format(String),
}

type Result<T> = std::result::Result<T, PipelineError>;

/// One multi-modal tile. The embedding may hold non-finite values until
/// [`clean`] has run.
#[derive(Debug, Clone, PartialEq)]
pub struct TilePatch {
    /// `[4, H, W]`.
    pub optical: Tensor,
    /// `[3, H, W]`: VV dB, VH dB, incidence degrees.
    pub sar: Tensor,
    pub embedding: Option<Vec<f32>>,
    pub geo_id: String,
    pub valid: bool,
    /// Land-cover fractions (water, vegetation, farmland, urban, bare) when known.
    pub class_fractions: Option<[f32; 5]>,
}

impl TilePatch {
    pub fn height(&self) -> usize {
        self.sar.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.sar.shape()[2]
    }

    /// Raster of one SAR channel.
    pub fn sar_channel(&self, c: usize) -> Tensor {
        let plane = self.height() * self.width();
        Tensor::new(&[self.height(), self.width()], self.sar.data()[c * plane..(c + 1) * plane].to_vec())
            .expect("finite sar plane")
    }

    fn sar_all_nodata(&self) -> bool {
        let plane = self.height() * self.width();
        self.sar.data()[..2 * plane].iter().all(|&v| v == NODATA)
    }

    fn embedding_ok(&self) -> bool {
        matches!(&self.embedding, Some(e) if e.len() == EMBEDDING_DIM && e.iter().all(|v| v.is_finite()))
    }

    /// Validity rule: some dB pixel carries data and the embedding is present and finite.
    pub fn check_valid(&self) -> bool {
        !self.sar_all_nodata() && self.embedding_ok()
    }

    /// The 71-channel stack with the embedding broadcast spatially.
    pub fn flatten(&self) -> Result<Tensor> {
        let emb = self
            .embedding
            .as_ref()
            .filter(|_| self.embedding_ok())
            .ok_or_else(|| PipelineError::Shape(format!("tile {} has no usable embedding", self.geo_id)))?;
        let plane = self.height() * self.width();
        let mut data = Vec::with_capacity(TILE_CHANNELS * plane);
        data.extend_from_slice(self.optical.data());
        data.extend_from_slice(self.sar.data());
        for &v in emb {
            data.extend(std::iter::repeat_n(v, plane));
        }
        Tensor::new(&[TILE_CHANNELS, self.height(), self.width()], data).map_err(|e| PipelineError::Shape(e.to_string()))
    }
}

/// Per-pixel embedding bands `[B, H, W]`, possibly with non-finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRaster {
    pub bands: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl EmbeddingRaster {
    /// Per-band mean over a `size`×`size` window at (`row`, `col`).
    pub fn window_mean(&self, row: usize, col: usize, size: usize) -> Vec<f32> {
        let plane = self.height * self.width;
        (0..self.bands)
            .map(|b| {
                let mut acc = 0.0f64;
                for r in row..row + size {
                    let off = b * plane + r * self.width + col;
                    acc += self.data[off..off + size].iter().map(|&v| v as f64).sum::<f64>();
                }
                (acc / (size * size) as f64) as f32
            })
            .collect()
    }
}

/// Co-registered rasters of one scene.
#[derive(Debug, Clone)]
pub struct RasterStack {
    pub optical: Tensor,
    pub sar: Tensor,
    pub embedding: Option<EmbeddingRaster>,
    /// Prefix for tile identifiers.
    pub name: String,
}

/// Top-left corners of every `size` window at `stride`, row-major.
pub fn window_offsets(height: usize, width: usize, size: usize, stride: usize) -> Vec<(usize, usize)> {
    if size == 0 || stride == 0 || size > height || size > width {
        return Vec::new();
    }
    let rows = (height - size) / stride + 1;
    let cols = (width - size) / stride + 1;
    (0..rows)
        .flat_map(|i| (0..cols).map(move |j| (i * stride, j * stride)))
        .collect()
}

fn crop(t: &Tensor, row: usize, col: usize, size: usize) -> Tensor {
    let (c, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    let mut data = Vec::with_capacity(c * size * size);
    for ch in 0..c {
        for r in row..row + size {
            let off = ch * h * w + r * w + col;
            data.extend_from_slice(&t.data()[off..off + size]);
        }
    }
    Tensor::new(&[c, size, size], data).expect("crop of finite raster")
}

/// Cuts the stack into windows at the offsets of [`window_offsets`]. Tiles
/// start out invalid; [`clean`] decides validity. A window larger than the
/// raster yields no tiles and a warning.
pub fn sliding_window(stack: &RasterStack, size: usize, stride: usize) -> Result<Vec<TilePatch>> {
    if stride == 0 || size == 0 {
        return Err(PipelineError::Config("tile size and stride must be positive".into()));
    }
    let (h, w) = (stack.sar.shape()[1], stack.sar.shape()[2]);
    if stack.optical.shape() != [OPTICAL_BANDS, h, w] || stack.sar.shape() != [SAR_CHANNELS, h, w] {
        return Err(PipelineError::Shape(format!(
            "stack rasters {:?} / {:?} are not co-registered 4- and 3-channel images",
            stack.optical.shape(),
            stack.sar.shape()
        )));
    }
    if size > h || size > w {
        log::warn!("tile size {size} exceeds raster {h}x{w}; no tiles produced");
        return Ok(Vec::new());
    }
    Ok(window_offsets(h, w, size, stride)
        .into_iter()
        .map(|(r, c)| TilePatch {
            optical: crop(&stack.optical, r, c, size),
            sar: crop(&stack.sar, r, c, size),
            embedding: stack.embedding.as_ref().map(|e| e.window_mean(r, c, size)),
            geo_id: format!("{}_r{r}_c{c}", stack.name),
            valid: false,
            class_fractions: None,
        })
        .collect())
}

/// Keeps tiles whose dB channels are not entirely no-data and whose
/// embedding is present and finite; survivors are marked valid.
pub fn clean(patches: Vec<TilePatch>) -> Vec<TilePatch> {
    patches
        .into_iter()
        .filter(TilePatch::check_valid)
        .map(|mut p| {
            p.valid = true;
            p
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IncidenceRange {
    pub theta_min: f64,
    pub theta_max: f64,
}

impl Default for IncidenceRange {
    fn default() -> Self {
        Self {
            theta_min: 29.0,
            theta_max: 46.0,
        }
    }
}

/// `[65, H, W]`: embedding components broadcast spatially, then the
/// incidence map clamped to the range and mapped to [−1, 1].
pub fn build_condition(embedding: &[f32], incidence_deg: &Tensor, range: IncidenceRange) -> Result<Tensor> {
    let IncidenceRange { theta_min, theta_max } = range;
    if !(theta_min < theta_max) || !theta_min.is_finite() || !theta_max.is_finite() {
        return Err(PipelineError::Config(format!("degenerate incidence range [{theta_min}, {theta_max}]")));
    }
    if embedding.len() != EMBEDDING_DIM {
        return Err(PipelineError::Shape(format!("embedding has {} components", embedding.len())));
    }
    if embedding.iter().any(|v| !v.is_finite()) {
        return Err(PipelineError::Shape("embedding has non-finite components".into()));
    }
    let s = incidence_deg.shape();
    let (h, w) = match s {
        [h, w] => (*h, *w),
        [1, h, w] => (*h, *w),
        _ => return Err(PipelineError::Shape(format!("incidence map must be [H, W], got {s:?}"))),
    };
    let plane = h * w;
    let mut data = Vec::with_capacity(COND_CHANNELS * plane);
    for &v in embedding {
        data.extend(std::iter::repeat_n(v, plane));
    }
    let span = theta_max - theta_min;
    data.extend(incidence_deg.data().iter().map(|&t| {
        let t = (t as f64).clamp(theta_min, theta_max);
        (2.0 * (t - theta_min) / span - 1.0) as f32
    }));
    Tensor::new(&[COND_CHANNELS, h, w], data).map_err(|e| PipelineError::Shape(e.to_string()))
}

/// Condition of a tile from its embedding and incidence channel.
pub fn tile_condition(tile: &TilePatch, range: IncidenceRange) -> Result<Tensor> {
    let emb = tile
        .embedding
        .as_deref()
        .ok_or_else(|| PipelineError::Shape(format!("tile {} has no embedding", tile.geo_id)))?;
    build_condition(emb, &tile.sar_channel(2), range)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DbWindow {
    pub low: f32,
    pub high: f32,
}

impl Default for DbWindow {
    fn default() -> Self {
        Self { low: -25.0, high: 0.0 }
    }
}

impl DbWindow {
    fn check(&self) -> Result<()> {
        if !(self.low < self.high) || !self.low.is_finite() || !self.high.is_finite() {
            return Err(PipelineError::Config(format!("degenerate dB window [{}, {}]", self.low, self.high)));
        }
        Ok(())
    }
}

/// Clamps to the window and maps it affinely onto [−1, 1].
pub fn normalize_sar(sar_db: &Tensor, window: DbWindow) -> Result<Tensor> {
    window.check()?;
    let (lo, hi) = (window.low as f64, window.high as f64);
    let data = sar_db
        .data()
        .iter()
        .map(|&v| (2.0 * ((v as f64).clamp(lo, hi) - lo) / (hi - lo) - 1.0) as f32)
        .collect();
    Tensor::new(sar_db.shape(), data).map_err(|e| PipelineError::Shape(e.to_string()))
}

pub fn denormalize_sar(x: &Tensor, window: DbWindow) -> Result<Tensor> {
    window.check()?;
    let (lo, hi) = (window.low as f64, window.high as f64);
    let data = x
        .data()
        .iter()
        .map(|&v| (lo + (v as f64 + 1.0) * 0.5 * (hi - lo)) as f32)
        .collect();
    Tensor::new(x.shape(), data).map_err(|e| PipelineError::Shape(e.to_string()))
}

const GROUP_OPTICAL: u8 = 0;
const GROUP_SAR: u8 = 1;
const GROUP_EMBEDDING: u8 = 2;
const FLAG_VALID: u8 = 1;
const FLAG_EMBEDDING: u8 = 2;
const FLAG_CLASSES: u8 = 4;

/// Serialises a tile.
///
/// Layout (little-endian): magic `HYE1`, version `u16`, H `u32`, W `u32`,
/// group count `u16` and per group (kind `u8`, channels `u16`, spatial `u8`),
/// geo id length `u16` and UTF-8 bytes, flags `u8`, optional five `f32`
/// class fractions, then the `f32` payload group by group and a CRC32 of
/// everything before it.
pub fn encode_tile(patch: &TilePatch) -> Vec<u8> {
    let (h, w) = (patch.height(), patch.width());
    let mut out = Vec::with_capacity(16 + 4 * (7 * h * w + EMBEDDING_DIM));
    out.extend_from_slice(TILE_MAGIC);
    out.extend_from_slice(&TILE_VERSION.to_le_bytes());
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out.extend_from_slice(&(w as u32).to_le_bytes());
    let mut groups = vec![(GROUP_OPTICAL, OPTICAL_BANDS, 1u8), (GROUP_SAR, SAR_CHANNELS, 1u8)];
    if let Some(e) = &patch.embedding {
        groups.push((GROUP_EMBEDDING, e.len(), 0u8));
    }
    out.extend_from_slice(&(groups.len() as u16).to_le_bytes());
    for (kind, ch, spatial) in &groups {
        out.push(*kind);
        out.extend_from_slice(&(*ch as u16).to_le_bytes());
        out.push(*spatial);
    }
    out.extend_from_slice(&(patch.geo_id.len() as u16).to_le_bytes());
    out.extend_from_slice(patch.geo_id.as_bytes());
    let mut flags = 0u8;
    if patch.valid {
        flags |= FLAG_VALID;
    }
    if patch.embedding.is_some() {
        flags |= FLAG_EMBEDDING;
    }
    if patch.class_fractions.is_some() {
        flags |= FLAG_CLASSES;
    }
    out.push(flags);
    if let Some(cf) = &patch.class_fractions {
        put_f32s(&mut out, cf);
    }
    put_f32s(&mut out, patch.optical.data());
    put_f32s(&mut out, patch.sar.data());
    if let Some(e) = &patch.embedding {
        put_f32s(&mut out, e);
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Checks magic, then version, then checksum, before decoding anything else.
fn check_container(bytes: &[u8], magic: &[u8; 4], version: u16, what: &str) -> Result<()> {
    if bytes.len() < 4 {
        return Err(PipelineError::Truncated);
    }
    if &bytes[..4] != magic {
        return Err(PipelineError::BadMagic(what.to_string()));
    }
    if bytes.len() < 6 {
        return Err(PipelineError::Truncated);
    }
    let found = u16::from_le_bytes([bytes[4], bytes[5]]);
    if found != version {
        return Err(PipelineError::UnsupportedVersion {
            found,
            supported: version,
        });
    }
    if bytes.len() < 10 {
        return Err(PipelineError::Truncated);
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(PipelineError::ChecksumMismatch { stored, computed });
    }
    Ok(())
}

pub fn decode_tile(bytes: &[u8]) -> Result<TilePatch> {
    check_container(bytes, TILE_MAGIC, TILE_VERSION, "tile")?;
    let body = &bytes[6..bytes.len() - 4];
    let mut r = Reader::new(body);
    let bad = || PipelineError::Format("unexpected end of tile data".into());
    let h = r.u32().ok_or_else(bad)? as usize;
    let w = r.u32().ok_or_else(bad)? as usize;
    if h == 0 || w == 0 {
        return Err(PipelineError::Format("zero-sized tile".into()));
    }
    let n_groups = r.u16().ok_or_else(bad)?;
    let mut groups = Vec::new();
    for _ in 0..n_groups {
        let kind = r.u8().ok_or_else(bad)?;
        let ch = r.u16().ok_or_else(bad)? as usize;
        let spatial = r.u8().ok_or_else(bad)?;
        groups.push((kind, ch, spatial));
    }
    let expect_embedding = groups.len() == 3;
    let layout_ok = groups.len() >= 2
        && groups[0] == (GROUP_OPTICAL, OPTICAL_BANDS, 1)
        && groups[1] == (GROUP_SAR, SAR_CHANNELS, 1)
        && (!expect_embedding || groups[2] == (GROUP_EMBEDDING, EMBEDDING_DIM, 0))
        && groups.len() <= 3;
    if !layout_ok {
        return Err(PipelineError::Format(format!("unexpected channel groups {groups:?}")));
    }
    let id_len = r.u16().ok_or_else(bad)? as usize;
    let geo_id = String::from_utf8(r.bytes(id_len).ok_or_else(bad)?.to_vec())
        .map_err(|_| PipelineError::Format("geo id is not UTF-8".into()))?;
    let flags = r.u8().ok_or_else(bad)?;
    if (flags & FLAG_EMBEDDING != 0) != expect_embedding {
        return Err(PipelineError::Format("embedding flag disagrees with channel groups".into()));
    }
    let class_fractions = if flags & FLAG_CLASSES != 0 {
        let v = r.f32s(5).ok_or_else(bad)?;
        Some([v[0], v[1], v[2], v[3], v[4]])
    } else {
        None
    };
    let plane = h.checked_mul(w).ok_or_else(bad)?;
    let optical = r.f32s(OPTICAL_BANDS * plane).ok_or_else(bad)?;
    let sar = r.f32s(SAR_CHANNELS * plane).ok_or_else(bad)?;
    let embedding = if expect_embedding {
        Some(r.f32s(EMBEDDING_DIM).ok_or_else(bad)?)
    } else {
        None
    };
    if r.remaining() != 0 {
        return Err(PipelineError::Format("trailing bytes in tile".into()));
    }
    let to_tensor = |shape: &[usize], d: Vec<f32>| {
        Tensor::new(shape, d).map_err(|e| PipelineError::Format(format!("raster values: {e}")))
    };
    Ok(TilePatch {
        optical: to_tensor(&[OPTICAL_BANDS, h, w], optical)?,
        sar: to_tensor(&[SAR_CHANNELS, h, w], sar)?,
        embedding,
        geo_id,
        valid: flags & FLAG_VALID != 0,
        class_fractions,
    })
}

/// Atomic write of one tile file.
pub fn write_tile(patch: &TilePatch, path: &Path) -> Result<()> {
    write_atomic(path, &encode_tile(patch))?;
    Ok(())
}

pub fn read_tile(path: &Path) -> Result<TilePatch> {
    decode_tile(&fs::read(path)?)
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub geo_id: String,
    pub valid: bool,
    pub class_mix: Option<ClassMix>,
}

impl ManifestEntry {
    pub fn of(patch: &TilePatch, path: &str) -> Self {
        Self {
            path: path.to_string(),
            geo_id: patch.geo_id.clone(),
            valid: patch.valid,
            class_mix: patch.class_fractions.map(|f| ClassMix::from_array(f.map(|v| v as f64))),
        }
    }
}

/// Writes one JSON object per line.
pub fn write_manifest(entries: &[ManifestEntry], path: &Path) -> Result<()> {
    let mut out = String::new();
    for e in entries {
        out.push_str(&serde_json::to_string(e).map_err(|e| PipelineError::Format(e.to_string()))?);
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| PipelineError::Format(format!("manifest line {}: {e}", i + 1)))
        })
        .collect()
}

/// Reads every tile listed in a directory's `manifest.jsonl`, resolving
/// relative paths against the directory.
pub fn read_tile_dir(dir: &Path) -> Result<Vec<(ManifestEntry, TilePatch)>> {
    let manifest = read_manifest(&dir.join("manifest.jsonl"))?;
    manifest
        .into_iter()
        .map(|e| {
            let p = PathBuf::from(&e.path);
            let p = if p.is_absolute() { p } else { dir.join(p) };
            let tile = read_tile(&p)?;
            Ok((e, tile))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RasterFormat {
    /// `HYEB` container: magic, version `u16`, bands `u32`, H `u32`, W `u32`,
    /// band-major `f32` payload, CRC32.
    Binary,
    /// NumPy `.npy` array of shape `(bands, H, W)`, `f32` or `f64`.
    Npy,
}

impl RasterFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("npy") => RasterFormat::Npy,
            _ => RasterFormat::Binary,
        }
    }
}

pub fn encode_embedding_raster(r: &EmbeddingRaster) -> Vec<u8> {
    let mut out = Vec::with_capacity(18 + 4 * r.data.len());
    out.extend_from_slice(RASTER_MAGIC);
    out.extend_from_slice(&RASTER_VERSION.to_le_bytes());
    for d in [r.bands, r.height, r.width] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    put_f32s(&mut out, &r.data);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn write_embedding_raster(r: &EmbeddingRaster, path: &Path) -> Result<()> {
    write_atomic(path, &encode_embedding_raster(r))?;
    Ok(())
}

fn check_band_count(bands: usize) -> Result<()> {
    match bands.cmp(&EMBEDDING_DIM) {
        std::cmp::Ordering::Less => Err(PipelineError::Format(format!(
            "embedding raster has {bands} bands; band {bands} is missing (64 required)"
        ))),
        std::cmp::Ordering::Greater => Err(PipelineError::Format(format!(
            "embedding raster has {bands} bands; band {EMBEDDING_DIM} is unexpected (64 required)"
        ))),
        std::cmp::Ordering::Equal => Ok(()),
    }
}

pub fn read_embedding_raster(path: &Path, format: RasterFormat) -> Result<EmbeddingRaster> {
    let raster = match format {
        RasterFormat::Binary => {
            let bytes = fs::read(path)?;
            check_container(&bytes, RASTER_MAGIC, RASTER_VERSION, "embedding raster")?;
            let mut r = Reader::new(&bytes[6..bytes.len() - 4]);
            let bad = || PipelineError::Format("unexpected end of raster data".into());
            let bands = r.u32().ok_or_else(bad)? as usize;
            let height = r.u32().ok_or_else(bad)? as usize;
            let width = r.u32().ok_or_else(bad)? as usize;
            let n = bands.checked_mul(height).and_then(|v| v.checked_mul(width)).ok_or_else(bad)?;
            let data = r.f32s(n).ok_or_else(bad)?;
            if r.remaining() != 0 {
                return Err(PipelineError::Format("trailing bytes in raster".into()));
            }
            EmbeddingRaster {
                bands,
                height,
                width,
                data,
            }
        }
        RasterFormat::Npy => {
            use ndarray_npy::ReadNpyExt;
            let file = || fs::File::open(path);
            let arr: ndarray::Array3<f32> = match ndarray::Array3::<f32>::read_npy(file()?) {
                Ok(a) => a,
                Err(_) => ndarray::Array3::<f64>::read_npy(file()?)
                    .map_err(|e| PipelineError::Format(format!("npy: {e}")))?
                    .mapv(|v| v as f32),
            };
            let (bands, height, width) = arr.dim();
            EmbeddingRaster {
                bands,
                height,
                width,
                data: arr.iter().copied().collect(),
            }
        }
    };
    check_band_count(raster.bands)?;
    Ok(raster)
}

/// Per-tile embeddings from a raster aligned to the tile grid, in
/// [`window_offsets`] order. Non-finite means are kept for [`clean`] to drop.
pub fn ingest_embedding_raster(path: &Path, format: RasterFormat, size: usize, stride: usize) -> Result<Vec<Vec<f32>>> {
    let raster = read_embedding_raster(path, format)?;
    Ok(window_offsets(raster.height, raster.width, size, stride)
        .into_iter()
        .map(|(r, c)| raster.window_mean(r, c, size))
        .collect())
}
