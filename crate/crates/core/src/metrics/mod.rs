//! Fidelity metrics for generated tiles and a small downstream classifier.
//!
//! Mean/std similarity is the absolute difference of first or second
//! moments divided by the real image's dynamic range. Lower is better and
//! the numbers are not comparable with other definitions of the same name.

mod classify;
mod fft;
mod fsim;

use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::tensor::{Tensor, TensorError};

pub use classify::{downstream_classify, ClassifierConfig, LabeledSet, TinyClassifier};
pub use fsim::{fsim_gray, gradient_magnitude, phase_congruency, PhaseCongruencyParams};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid input: {0}")]
    Domain(String),
    #[error("class {class} is absent from the test set")]
    MissingClass { class: usize },
    #[error("{0} generated tiles but {1} real tiles; pairing needs equal counts")]
    Unpaired(usize, usize),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("report i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("report format: {0}")]
    Format(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

const RANGE_FLOOR: f64 = 1e-6;

fn moments(x: &[f32]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = x.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentSimilarity {
    pub mean_sim: f64,
    pub std_sim: f64,
    /// The real image was constant, so the range floor was used.
    pub degenerate: bool,
}

pub fn mean_std_similarity(gen: &Tensor, real: &Tensor) -> Result<MomentSimilarity> {
    if gen.shape() != real.shape() || gen.numel() == 0 {
        return Err(MetricsError::Shape(format!("{:?} vs {:?}", gen.shape(), real.shape())));
    }
    let (mg, sg) = moments(gen.data());
    let (mr, sr) = moments(real.data());
    let lo = real.data().iter().copied().fold(f32::INFINITY, f32::min) as f64;
    let hi = real.data().iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let range = hi - lo;
    let degenerate = range < RANGE_FLOOR;
    let d = range.max(RANGE_FLOOR);
    Ok(MomentSimilarity {
        mean_sim: (mg - mr).abs() / d,
        std_sim: (sg - sr).abs() / d,
        degenerate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 2.0,
        }
    }
}

/// Normalised 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(window: usize, sigma: f64) -> Vec<f64> {
    let c = (window as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..window).map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

fn image_2d(t: &Tensor) -> Result<(usize, usize, Vec<f64>)> {
    let s = t.shape();
    let (h, w) = match s {
        [h, w] | [1, h, w] | [1, 1, h, w] => (*h, *w),
        _ => return Err(MetricsError::Shape(format!("expected a single-channel image, got {s:?}"))),
    };
    Ok((h, w, t.data().iter().map(|&v| v as f64).collect()))
}

fn ssim_term(mx: f64, my: f64, vx: f64, vy: f64, cxy: f64, c1: f64, c2: f64) -> f64 {
    ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
}

/// Valid-mode separable filtering with the Gaussian taps.
fn filter_valid(x: &[f64], h: usize, w: usize, taps: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut tmp = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            tmp[r * ow + c] = (0..k).map(|j| taps[j] * x[r * w + c + j]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..k).map(|i| taps[i] * tmp[(r + i) * ow + c]).sum();
        }
    }
    (out, oh, ow)
}

/// Mean local SSIM over every full window position. Images smaller than
/// the window are scored as one window with uniform weights.
pub fn ssim(a: &Tensor, b: &Tensor, params: &SsimParams) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(MetricsError::Shape(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    if params.window % 2 == 0 || params.window == 0 {
        return Err(MetricsError::Domain(format!("window {} must be odd", params.window)));
    }
    let (h, w, x) = image_2d(a)?;
    let (_, _, y) = image_2d(b)?;
    let c1 = (params.k1 * params.dynamic_range).powi(2);
    let c2 = (params.k2 * params.dynamic_range).powi(2);
    if h < params.window || w < params.window {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let vx = x.iter().map(|v| (v - mx).powi(2)).sum::<f64>() / n;
        let vy = y.iter().map(|v| (v - my).powi(2)).sum::<f64>() / n;
        let cxy = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / n;
        return Ok(ssim_term(mx, my, vx, vy, cxy, c1, c2));
    }
    let taps = gaussian_taps(params.window, params.sigma);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
    let (mx, oh, ow) = filter_valid(&x, h, w, &taps);
    let (my, _, _) = filter_valid(&y, h, w, &taps);
    let (exx, _, _) = filter_valid(&xx, h, w, &taps);
    let (eyy, _, _) = filter_valid(&yy, h, w, &taps);
    let (exy, _, _) = filter_valid(&xy, h, w, &taps);
    let mut total = 0.0;
    for i in 0..oh * ow {
        let vx = exx[i] - mx[i] * mx[i];
        let vy = eyy[i] - my[i] * my[i];
        let cxy = exy[i] - mx[i] * my[i];
        total += ssim_term(mx[i], my[i], vx, vy, cxy, c1, c2);
    }
    Ok(total / (oh * ow) as f64)
}

/// FSIM of two single-channel images in the normalised [-1, 1] domain,
/// rescaled to [0, 255] first.
pub fn fsim(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(MetricsError::Shape(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let (h, w, x) = image_2d(a)?;
    let (_, _, y) = image_2d(b)?;
    let to_255 = |v: Vec<f64>| v.into_iter().map(|p| (p + 1.0) * 127.5).collect::<Vec<_>>();
    Ok(fsim_gray(&to_255(x), &to_255(y), h, w))
}

pub const ENL_MIN_PIXELS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnlEstimate {
    pub value: f64,
    /// Zero variance; `value` is infinite.
    pub saturated: bool,
}

/// Equivalent number of looks `mean² / variance` of a region in linear
/// intensity.
pub fn enl(region: &[f32]) -> Result<EnlEstimate> {
    if region.len() < ENL_MIN_PIXELS {
        return Err(MetricsError::Domain(format!(
            "ENL needs at least {ENL_MIN_PIXELS} pixels, got {}",
            region.len()
        )));
    }
    if let Some(bad) = region.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(MetricsError::Domain(format!("intensity must be positive and finite, found {bad}")));
    }
    let (mean, sd) = moments(region);
    let var = sd * sd;
    if var == 0.0 {
        return Ok(EnlEstimate {
            value: f64::INFINITY,
            saturated: true,
        });
    }
    Ok(EnlEstimate {
        value: mean * mean / var,
        saturated: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub gen: String,
    pub real: String,
    pub mean_sim: f64,
    pub std_sim: f64,
    pub ssim: f64,
    pub fsim: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mean_sim: f64,
    pub std_sim: f64,
    pub ssim: f64,
    pub fsim: f64,
    /// `None` when no tile had a usable ENL.
    pub enl_gen: Option<f64>,
    pub enl_real: Option<f64>,
    pub n_pairs: usize,
}

/// Linear-intensity ENL of a dB image, ignoring the pixel-count floor
/// when the image is smaller than it.
fn tile_enl(db: &[f32]) -> Option<f64> {
    let lin: Vec<f32> = db.iter().map(|&v| 10f32.powf(v / 10.0)).collect();
    if lin.len() < ENL_MIN_PIXELS {
        return None;
    }
    enl(&lin).ok().filter(|e| !e.saturated).map(|e| e.value)
}

/// Per-pair scores plus their average. Images are normalised [-1, 1]
/// tiles; the ENL columns use the matching dB tiles.
pub struct PairInput<'a> {
    pub name: String,
    pub norm: &'a Tensor,
    pub db: &'a Tensor,
}

pub fn evaluate_pairs(gen: &[PairInput<'_>], real: &[PairInput<'_>]) -> Result<(MetricsReport, Vec<PairScore>)> {
    if gen.len() != real.len() || gen.is_empty() {
        return Err(MetricsError::Unpaired(gen.len(), real.len()));
    }
    let ssim_params = SsimParams::default();
    let mut scores = Vec::with_capacity(gen.len());
    let (mut eg, mut ng, mut er, mut nr) = (0.0, 0usize, 0.0, 0usize);
    for (g, r) in gen.iter().zip(real) {
        let m = mean_std_similarity(g.norm, r.norm)?;
        scores.push(PairScore {
            gen: g.name.clone(),
            real: r.name.clone(),
            mean_sim: m.mean_sim,
            std_sim: m.std_sim,
            ssim: ssim(g.norm, r.norm, &ssim_params)?,
            fsim: fsim(g.norm, r.norm)?,
            degenerate: m.degenerate,
        });
        if let Some(v) = tile_enl(g.db.data()) {
            eg += v;
            ng += 1;
        }
        if let Some(v) = tile_enl(r.db.data()) {
            er += v;
            nr += 1;
        }
    }
    let n = scores.len() as f64;
    let avg = |f: fn(&PairScore) -> f64| scores.iter().map(f).sum::<f64>() / n;
    let report = MetricsReport {
        mean_sim: avg(|s| s.mean_sim),
        std_sim: avg(|s| s.std_sim),
        ssim: avg(|s| s.ssim),
        fsim: avg(|s| s.fsim),
        enl_gen: (ng > 0).then(|| eg / ng as f64),
        enl_real: (nr > 0).then(|| er / nr as f64),
        n_pairs: scores.len(),
    };
    Ok((report, scores))
}

impl MetricsReport {
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        serde_json::to_writer(&mut out, self)?;
        out.write_all(b"\n")?;
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<MetricsReport>> {
        let mut reports = Vec::new();
        for line in input.lines() {
            let line = line?;
            if !line.trim().is_empty() {
                reports.push(serde_json::from_str(&line)?);
            }
        }
        Ok(reports)
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10} {:>12}", "metric", "value")?;
        writeln!(f, "{:<10} {:>12.6}", "mean_sim", self.mean_sim)?;
        writeln!(f, "{:<10} {:>12.6}", "std_sim", self.std_sim)?;
        writeln!(f, "{:<10} {:>12.6}", "ssim", self.ssim)?;
        writeln!(f, "{:<10} {:>12.6}", "fsim", self.fsim)?;
        let enl = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
        writeln!(f, "{:<10} {:>12}", "enl_gen", enl(self.enl_gen))?;
        writeln!(f, "{:<10} {:>12}", "enl_real", enl(self.enl_real))?;
        write!(f, "{:<10} {:>12}", "n_pairs", self.n_pairs)
    }
}
