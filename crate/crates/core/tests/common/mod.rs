//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use hye_core::tensor::{self, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    (0..n).map(|_| rng.sample::<f32, _>(StandardNormal)).collect()
}

pub struct GradCheck {
    pub name: &'static str,
    pub shapes: Vec<Vec<usize>>,
    pub f: Box<dyn Fn(&[Tensor]) -> tensor::Result<Tensor>>,
}

impl GradCheck {
    pub fn new(
        name: &'static str,
        shapes: &[&[usize]],
        f: impl Fn(&[Tensor]) -> tensor::Result<Tensor> + 'static,
    ) -> Self {
        Self {
            name,
            shapes: shapes.iter().map(|s| s.to_vec()).collect(),
            f: Box::new(f),
        }
    }

    /// Largest per-input relative error ‖g_analytic − g_numeric‖ / max(‖·‖, ‖·‖)
    /// for the scalar `Σ wᵢ yᵢ` with random `w`, using central differences
    /// with step `h` and an f64 accumulation of the objective.
    pub fn max_relative_error(&self, seed: u64, h: f32) -> f64 {
        let mut r = rng(seed);
        let inputs: Vec<Vec<f32>> = self
            .shapes
            .iter()
            .map(|s| randn_vec(s.iter().product(), &mut r))
            .collect();
        let leaves: Vec<Tensor> = inputs
            .iter()
            .zip(&self.shapes)
            .map(|(d, s)| Tensor::param(s, d.clone()).unwrap())
            .collect();
        let y = (self.f)(&leaves).unwrap();
        let w = randn_vec(y.numel(), &mut r);
        y.backward_with(&w).unwrap();
        let analytic: Vec<Vec<f32>> = leaves
            .iter()
            .map(|l| l.grad().unwrap_or_else(|| vec![0.0; l.numel()]))
            .collect();

        let objective = |vals: &[Vec<f32>]| -> f64 {
            let ts: Vec<Tensor> = vals
                .iter()
                .zip(&self.shapes)
                .map(|(d, s)| Tensor::new(s, d.clone()).unwrap())
                .collect();
            let y = tensor::no_grad(|| (self.f)(&ts)).unwrap();
            y.data().iter().zip(&w).map(|(&a, &b)| a as f64 * b as f64).sum()
        };
        let mut worst = 0.0f64;
        for (j, a) in analytic.iter().enumerate() {
            let mut num = vec![0.0f64; a.len()];
            let mut vals = inputs.clone();
            for k in 0..a.len() {
                let x = vals[j][k];
                vals[j][k] = x + h;
                let up = objective(&vals);
                vals[j][k] = x - h;
                let down = objective(&vals);
                vals[j][k] = x;
                num[k] = (up - down) / (2.0 * h as f64);
            }
            let diff: f64 = a.iter().zip(&num).map(|(&p, &q)| (p as f64 - q).powi(2)).sum::<f64>().sqrt();
            let na: f64 = a.iter().map(|&p| (p as f64).powi(2)).sum::<f64>().sqrt();
            let nn: f64 = num.iter().map(|q| q * q).sum::<f64>().sqrt();
            let scale = na.max(nn);
            let rel = if scale == 0.0 { 0.0 } else { diff / scale };
            worst = worst.max(rel);
        }
        worst
    }
}

/// Every differentiable operation, each on small random inputs.
pub fn autodiff_cases() -> Vec<GradCheck> {
    use tensor::*;
    vec![
        GradCheck::new("add", &[&[2, 3], &[2, 3]], |x| add(&x[0], &x[1])),
        GradCheck::new("add_suffix", &[&[2, 3, 4], &[4]], |x| add(&x[0], &x[1])),
        GradCheck::new("add_scalar_tensor", &[&[2, 3], &[1]], |x| add(&x[0], &x[1])),
        GradCheck::new("sub", &[&[3, 4], &[3, 4]], |x| sub(&x[0], &x[1])),
        GradCheck::new("sub_suffix", &[&[2, 3, 4], &[3, 4]], |x| sub(&x[0], &x[1])),
        GradCheck::new("mul", &[&[2, 5], &[2, 5]], |x| mul(&x[0], &x[1])),
        GradCheck::new("mul_suffix", &[&[2, 3, 4], &[4]], |x| mul(&x[0], &x[1])),
        GradCheck::new("scale", &[&[7]], |x| scale(&x[0], -1.7)),
        GradCheck::new("add_scalar", &[&[7]], |x| add_scalar(&x[0], 0.3)),
        GradCheck::new("sqr", &[&[2, 4]], |x| sqr(&x[0])),
        GradCheck::new("silu", &[&[3, 5]], |x| silu(&x[0])),
        GradCheck::new("sum", &[&[3, 4]], |x| sum(&x[0])),
        GradCheck::new("mean", &[&[3, 4]], |x| mean(&x[0])),
        GradCheck::new("mean_keep", &[&[2, 3, 4]], |x| mean_keep(&x[0], 2)),
        GradCheck::new("reshape", &[&[2, 6]], |x| reshape(&x[0], &[3, 4])),
        GradCheck::new("permute", &[&[2, 3, 4]], |x| permute(&x[0], &[2, 0, 1])),
        GradCheck::new("concat", &[&[2, 2, 3], &[2, 1, 3]], |x| concat(&[&x[0], &x[1]], 1)),
        GradCheck::new("add_channel_bias", &[&[2, 3, 2, 2], &[3]], |x| add_channel_bias(&x[0], &x[1])),
        GradCheck::new("add_prefix_broadcast", &[&[2, 3, 2, 2], &[2, 3]], |x| {
            add_prefix_broadcast(&x[0], &x[1])
        }),
        GradCheck::new("conv2d_s1p1", &[&[2, 2, 5, 5], &[3, 2, 3, 3]], |x| conv2d(&x[0], &x[1], 1, 1)),
        GradCheck::new("conv2d_s2p1", &[&[1, 2, 6, 6], &[2, 2, 3, 3]], |x| conv2d(&x[0], &x[1], 2, 1)),
        GradCheck::new("conv2d_1x1", &[&[2, 3, 3, 3], &[2, 3, 1, 1]], |x| conv2d(&x[0], &x[1], 1, 0)),
        GradCheck::new("upsample_nearest2x", &[&[1, 2, 3, 3]], |x| upsample_nearest2x(&x[0])),
        GradCheck::new("matmul", &[&[3, 4], &[4, 2]], |x| matmul(&x[0], &x[1])),
        GradCheck::new("linear", &[&[3, 4], &[5, 4], &[5]], |x| linear(&x[0], &x[1], Some(&x[2]))),
        GradCheck::new("bmm", &[&[2, 3, 4], &[2, 4, 2]], |x| bmm(&x[0], &x[1])),
        GradCheck::new("group_norm", &[&[2, 4, 3, 3], &[4], &[4]], |x| {
            group_norm(&x[0], 2, &x[1], &x[2], 1e-5)
        }),
        GradCheck::new("softmax_last", &[&[3, 5]], |x| softmax_last(&x[0])),
        GradCheck::new("cross_entropy", &[&[4, 3]], |x| cross_entropy(&x[0], &[0, 2, 1, 2])),
    ]
}

/// Direct cross-correlation with zero padding, f64 accumulation.
pub fn conv2d_oracle(
    x: &[f32],
    n: usize,
    c_in: usize,
    h: usize,
    w: usize,
    k: &[f32],
    c_out: usize,
    ks: usize,
    stride: usize,
    pad: usize,
) -> Vec<f64> {
    let oh = (h + 2 * pad - ks) / stride + 1;
    let ow = (w + 2 * pad - ks) / stride + 1;
    let mut out = vec![0.0; n * c_out * oh * ow];
    for b in 0..n {
        for o in 0..c_out {
            for r in 0..oh {
                for c in 0..ow {
                    let mut acc = 0.0f64;
                    for i in 0..c_in {
                        for u in 0..ks {
                            for v in 0..ks {
                                let rr = (r * stride + u) as isize - pad as isize;
                                let cc = (c * stride + v) as isize - pad as isize;
                                if rr < 0 || cc < 0 || rr as usize >= h || cc as usize >= w {
                                    continue;
                                }
                                let xv = x[((b * c_in + i) * h + rr as usize) * w + cc as usize] as f64;
                                let kv = k[((o * c_in + i) * ks + u) * ks + v] as f64;
                                acc += xv * kv;
                            }
                        }
                    }
                    out[((b * c_out + o) * oh + r) * ow + c] = acc;
                }
            }
        }
    }
    out
}

/// Mean SSIM evaluated window by window with explicit 2-D Gaussian weights.
pub fn ssim_oracle(x: &[f64], y: &[f64], h: usize, w: usize, window: usize, sigma: f64, k1: f64, k2: f64, l: f64) -> f64 {
    let c1 = (k1 * l) * (k1 * l);
    let c2 = (k2 * l) * (k2 * l);
    let half = (window as f64 - 1.0) / 2.0;
    let mut weights = vec![0.0; window * window];
    let mut total = 0.0;
    for u in 0..window {
        for v in 0..window {
            let d2 = (u as f64 - half).powi(2) + (v as f64 - half).powi(2);
            weights[u * window + v] = (-d2 / (2.0 * sigma * sigma)).exp();
            total += weights[u * window + v];
        }
    }
    weights.iter_mut().for_each(|v| *v /= total);
    let mut sum = 0.0;
    let mut count = 0;
    for r in 0..=h - window {
        for c in 0..=w - window {
            let at = |img: &[f64], u: usize, v: usize| img[(r + u) * w + c + v];
            let (mut mx, mut my) = (0.0, 0.0);
            for u in 0..window {
                for v in 0..window {
                    mx += weights[u * window + v] * at(x, u, v);
                    my += weights[u * window + v] * at(y, u, v);
                }
            }
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for u in 0..window {
                for v in 0..window {
                    let g = weights[u * window + v];
                    let dx = at(x, u, v) - mx;
                    let dy = at(y, u, v) - my;
                    vx += g * dx * dx;
                    vy += g * dy * dy;
                    cxy += g * dx * dy;
                }
            }
            sum += (2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    sum / count as f64
}

#[derive(Clone, Copy)]
struct C {
    re: f64,
    im: f64,
}

fn dft2(x: &[C], rows: usize, cols: usize, inverse: bool) -> Vec<C> {
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut out = vec![C { re: 0.0, im: 0.0 }; rows * cols];
    for u in 0..rows {
        for v in 0..cols {
            let (mut re, mut im) = (0.0, 0.0);
            for r in 0..rows {
                for c in 0..cols {
                    let phase = sign
                        * 2.0
                        * std::f64::consts::PI
                        * (((u * r) % rows) as f64 / rows as f64 + ((v * c) % cols) as f64 / cols as f64);
                    let (s, co) = phase.sin_cos();
                    let z = x[r * cols + c];
                    re += z.re * co - z.im * s;
                    im += z.re * s + z.im * co;
                }
            }
            let norm = if inverse { (rows * cols) as f64 } else { 1.0 };
            out[u * cols + v] = C { re: re / norm, im: im / norm };
        }
    }
    out
}

/// Signed frequency of FFT bin `k` on an axis of length `n`, in the
/// normalised units of the log-Gabor construction.
fn bin_freq(k: usize, n: usize) -> f64 {
    if n % 2 == 0 {
        let k = if k < n / 2 { k as f64 } else { k as f64 - n as f64 };
        k / n as f64
    } else {
        let k = if k <= (n - 1) / 2 { k as f64 } else { k as f64 - n as f64 };
        k / (n as f64 - 1.0)
    }
}

/// Phase congruency from a naive DFT, one frequency bin at a time.
pub fn phase_congruency_oracle(img: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let (nscale, norient) = (4usize, 4usize);
    let (min_wl, mult, sigma_onf, d_theta, k_noise, eps) = (6.0f64, 2.0f64, 0.55f64, 1.2f64, 2.0f64, 1e-4f64);
    let n = rows * cols;
    let spectrum = dft2(&img.iter().map(|&v| C { re: v, im: 0.0 }).collect::<Vec<_>>(), rows, cols, false);
    let theta_sigma = std::f64::consts::PI / norient as f64 / d_theta;
    let filter_at = |s: usize, o: usize, r: usize, c: usize| -> f64 {
        if r == 0 && c == 0 {
            return 0.0;
        }
        let fx = bin_freq(c, cols);
        let fy = bin_freq(r, rows);
        let rad = (fx * fx + fy * fy).sqrt();
        let lp = 1.0 / (1.0 + (rad / 0.45).powi(30));
        let fo = 1.0 / (min_wl * mult.powi(s as i32));
        let lg = (-((rad / fo).ln()).powi(2) / (2.0 * sigma_onf.ln().powi(2))).exp() * lp;
        let th = (-fy).atan2(fx);
        let ang = o as f64 * std::f64::consts::PI / norient as f64;
        let dth = (th.sin() * ang.cos() - th.cos() * ang.sin())
            .atan2(th.cos() * ang.cos() + th.sin() * ang.sin())
            .abs();
        lg * (-dth * dth / (2.0 * theta_sigma * theta_sigma)).exp()
    };
    let mut energy_all = vec![0.0; n];
    let mut an_all = vec![0.0; n];
    for o in 0..norient {
        let mut responses = Vec::new();
        let mut spatial = Vec::new();
        let mut em_n = 0.0;
        for s in 0..nscale {
            let filt: Vec<f64> = (0..n).map(|i| filter_at(s, o, i / cols, i % cols)).collect();
            if s == 0 {
                em_n = filt.iter().map(|f| f * f).sum::<f64>();
            }
            let prod: Vec<C> = spectrum
                .iter()
                .zip(&filt)
                .map(|(z, f)| C { re: z.re * f, im: z.im * f })
                .collect();
            responses.push(dft2(&prod, rows, cols, true));
            let fs = dft2(&filt.iter().map(|&f| C { re: f, im: 0.0 }).collect::<Vec<_>>(), rows, cols, true);
            spatial.push(fs.iter().map(|z| z.re * (n as f64).sqrt()).collect::<Vec<f64>>());
        }
        let mut mags: Vec<f64> = responses[0].iter().map(|z| z.re * z.re + z.im * z.im).collect();
        mags.sort_by(f64::total_cmp);
        let median = if n % 2 == 1 { mags[n / 2] } else { (mags[n / 2 - 1] + mags[n / 2]) / 2.0 };
        let noise_power = (-median / 0.5f64.ln()) / em_n;
        let mut s_an2 = 0.0;
        let mut s_aiaj = 0.0;
        for i in 0..n {
            for a in 0..nscale {
                s_an2 += spatial[a][i] * spatial[a][i];
                for b in a + 1..nscale {
                    s_aiaj += spatial[a][i] * spatial[b][i];
                }
            }
        }
        let tau = ((2.0 * noise_power * s_an2 + 4.0 * noise_power * s_aiaj) / 2.0).sqrt();
        let threshold = (tau * (std::f64::consts::PI / 2.0).sqrt()
            + k_noise * ((2.0 - std::f64::consts::PI / 2.0) * tau * tau).sqrt())
            / 1.7;
        for i in 0..n {
            let se: f64 = responses.iter().map(|r| r[i].re).sum();
            let so: f64 = responses.iter().map(|r| r[i].im).sum();
            let san: f64 = responses.iter().map(|r| (r[i].re * r[i].re + r[i].im * r[i].im).sqrt()).sum();
            let xe = (se * se + so * so).sqrt() + eps;
            let (me, mo) = (se / xe, so / xe);
            let e: f64 = responses
                .iter()
                .map(|r| r[i].re * me + r[i].im * mo - (r[i].re * mo - r[i].im * me).abs())
                .sum();
            energy_all[i] += (e - threshold).max(0.0);
            an_all[i] += san;
        }
    }
    (0..n).map(|i| if an_all[i] > 0.0 { energy_all[i] / an_all[i] } else { 0.0 }).collect()
}

/// FSIM from the oracle phase congruency and a direct Scharr stencil, for
/// images small enough that no downsampling applies.
pub fn fsim_oracle(a: &[f64], b: &[f64], rows: usize, cols: usize) -> f64 {
    let pc1 = phase_congruency_oracle(a, rows, cols);
    let pc2 = phase_congruency_oracle(b, rows, cols);
    let grad = |img: &[f64]| -> Vec<f64> {
        let px = |r: isize, c: isize| -> f64 {
            if r < 0 || c < 0 || r >= rows as isize || c >= cols as isize {
                0.0
            } else {
                img[r as usize * cols + c as usize]
            }
        };
        (0..rows * cols)
            .map(|i| {
                let (r, c) = ((i / cols) as isize, (i % cols) as isize);
                let gx = (3.0 * (px(r - 1, c - 1) - px(r - 1, c + 1))
                    + 10.0 * (px(r, c - 1) - px(r, c + 1))
                    + 3.0 * (px(r + 1, c - 1) - px(r + 1, c + 1)))
                    / 16.0;
                let gy = (3.0 * (px(r - 1, c - 1) - px(r + 1, c - 1))
                    + 10.0 * (px(r - 1, c) - px(r + 1, c))
                    + 3.0 * (px(r - 1, c + 1) - px(r + 1, c + 1)))
                    / 16.0;
                (gx * gx + gy * gy).sqrt()
            })
            .collect()
    };
    let (g1, g2) = (grad(a), grad(b));
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..rows * cols {
        let spc = (2.0 * pc1[i] * pc2[i] + 0.85) / (pc1[i] * pc1[i] + pc2[i] * pc2[i] + 0.85);
        let sg = (2.0 * g1[i] * g2[i] + 160.0) / (g1[i] * g1[i] + g2[i] * g2[i] + 160.0);
        let m = pc1[i].max(pc2[i]);
        num += spc * sg * m;
        den += m;
    }
    num / den
}

/// Checkerboard of `cell`-pixel squares in {-0.8, 0.8} with the top-left
/// quadrant inverted.
pub fn checker_fixture(n: usize, cell: usize) -> (Vec<f64>, Vec<f64>) {
    let base: Vec<f64> = (0..n * n)
        .map(|i| if ((i / n) / cell + (i % n) / cell) % 2 == 0 { 0.8 } else { -0.8 })
        .collect();
    let flipped = base
        .iter()
        .enumerate()
        .map(|(i, &v)| if i / n < n / 2 && i % n < n / 2 { -v } else { v })
        .collect();
    (base, flipped)
}

/// Smooth structured fixture with a blob and an edge, values in [-1, 1].
pub fn structured_fixture(rows: usize, cols: usize) -> Vec<f64> {
    (0..rows * cols)
        .map(|i| {
            let (r, c) = ((i / cols) as f64, (i % cols) as f64);
            let blob = (-((r - rows as f64 * 0.4).powi(2) + (c - cols as f64 * 0.6).powi(2)) / 18.0).exp();
            let edge = if c > cols as f64 * 0.3 + 0.2 * r { 0.4 } else { -0.3 };
            (0.6 * blob + edge + 0.15 * (0.9 * r).sin() * (0.7 * c).cos()).clamp(-1.0, 1.0)
        })
        .collect()
}

/// Separable Gaussian blur with reflected borders.
pub fn gaussian_blur(img: &[f64], rows: usize, cols: usize, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius).map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = taps.iter().sum();
    let reflect = |i: isize, n: usize| -> usize {
        let n = n as isize;
        let mut i = i;
        while i < 0 || i >= n {
            i = if i < 0 { -i - 1 } else { 2 * n - i - 1 };
        }
        i as usize
    };
    let mut tmp = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            tmp[r * cols + c] = (-radius..=radius)
                .map(|d| taps[(d + radius) as usize] * img[r * cols + reflect(c as isize + d, cols)])
                .sum::<f64>()
                / norm;
        }
    }
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[r * cols + c] = (-radius..=radius)
                .map(|d| taps[(d + radius) as usize] * tmp[reflect(r as isize + d, rows) * cols + c])
                .sum::<f64>()
                / norm;
        }
    }
    out
}
