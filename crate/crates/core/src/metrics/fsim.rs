//! Feature similarity (phase congruency plus gradient magnitude) in its
//! canonical published form: log-Gabor bank of 4 scales × 4 orientations
//! (minimum wavelength 6, scale factor 2, σ_onf 0.55, angular spread
//! ratio 1.2, noise k 2), Scharr gradients, T1 = 0.85, T2 = 160, on
//! images mapped to [0, 255].

use rustfft::num_complex::Complex64;

use super::fft::fft2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseCongruencyParams {
    pub scales: usize,
    pub orientations: usize,
    pub min_wavelength: f64,
    pub mult: f64,
    pub sigma_onf: f64,
    pub d_theta_on_sigma: f64,
    pub k: f64,
    pub epsilon: f64,
}

impl Default for PhaseCongruencyParams {
    fn default() -> Self {
        Self {
            scales: 4,
            orientations: 4,
            min_wavelength: 6.0,
            mult: 2.0,
            sigma_onf: 0.55,
            d_theta_on_sigma: 1.2,
            k: 2.0,
            epsilon: 1e-4,
        }
    }
}

const T1: f64 = 0.85;
const T2: f64 = 160.0;

/// Normalised frequency coordinates, already in unshifted FFT order.
fn freq_axis(n: usize) -> Vec<f64> {
    let shifted: Vec<f64> = if n % 2 == 1 {
        let d = (n as f64 - 1.0).max(1.0);
        (0..n).map(|i| (i as f64 - (n as f64 - 1.0) / 2.0) / d).collect()
    } else {
        (0..n).map(|i| (i as f64 - n as f64 / 2.0) / n as f64).collect()
    };
    // ifftshift: element (i + floor(n/2)) mod n moves to i.
    (0..n).map(|i| shifted[(i + n / 2) % n]).collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Phase congruency map summed over orientations, `[rows·cols]`. Pixels
/// with zero total amplitude get 0.
pub fn phase_congruency(img: &[f64], rows: usize, cols: usize, p: &PhaseCongruencyParams) -> Vec<f64> {
    let n = rows * cols;
    let mut spectrum: Vec<Complex64> = img.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2(&mut spectrum, rows, cols, false);

    let xs = freq_axis(cols);
    let ys = freq_axis(rows);
    let mut radius = vec![0.0; n];
    let mut theta = vec![0.0; n];
    for r in 0..rows {
        for c in 0..cols {
            let (x, y) = (xs[c], ys[r]);
            radius[r * cols + c] = (x * x + y * y).sqrt();
            theta[r * cols + c] = (-y).atan2(x);
        }
    }
    let lowpass: Vec<f64> = radius.iter().map(|&rad| 1.0 / (1.0 + (rad / 0.45).powi(30))).collect();
    radius[0] = 1.0;

    let log_gabor: Vec<Vec<f64>> = (0..p.scales)
        .map(|s| {
            let fo = 1.0 / (p.min_wavelength * p.mult.powi(s as i32));
            let denom = 2.0 * p.sigma_onf.ln().powi(2);
            let mut g: Vec<f64> = radius
                .iter()
                .zip(&lowpass)
                .map(|(&rad, &lp)| (-(rad / fo).ln().powi(2) / denom).exp() * lp)
                .collect();
            g[0] = 0.0;
            g
        })
        .collect();

    let theta_sigma = std::f64::consts::PI / p.orientations as f64 / p.d_theta_on_sigma;
    let mut energy_all = vec![0.0; n];
    let mut an_all = vec![0.0; n];
    for o in 0..p.orientations {
        let angl = o as f64 * std::f64::consts::PI / p.orientations as f64;
        let spread: Vec<f64> = theta
            .iter()
            .map(|&t| {
                let ds = t.sin() * angl.cos() - t.cos() * angl.sin();
                let dc = t.cos() * angl.cos() + t.sin() * angl.sin();
                let dtheta = ds.atan2(dc).abs();
                (-dtheta * dtheta / (2.0 * theta_sigma * theta_sigma)).exp()
            })
            .collect();
        let mut sum_e = vec![0.0; n];
        let mut sum_o = vec![0.0; n];
        let mut sum_an = vec![0.0; n];
        let mut eo: Vec<Vec<Complex64>> = Vec::with_capacity(p.scales);
        let mut spatial_filters: Vec<Vec<f64>> = Vec::with_capacity(p.scales);
        let mut em_n = 0.0;
        for (s, lg) in log_gabor.iter().enumerate() {
            let filter: Vec<f64> = lg.iter().zip(&spread).map(|(a, b)| a * b).collect();
            if s == 0 {
                em_n = filter.iter().map(|f| f * f).sum();
            }
            let mut f_spatial: Vec<Complex64> = filter.iter().map(|&f| Complex64::new(f, 0.0)).collect();
            fft2(&mut f_spatial, rows, cols, true);
            let scale = (n as f64).sqrt();
            spatial_filters.push(f_spatial.iter().map(|v| v.re * scale).collect());
            let mut resp: Vec<Complex64> = spectrum.iter().zip(&filter).map(|(z, &f)| z * f).collect();
            fft2(&mut resp, rows, cols, true);
            for i in 0..n {
                sum_an[i] += resp[i].norm();
                sum_e[i] += resp[i].re;
                sum_o[i] += resp[i].im;
            }
            eo.push(resp);
        }
        let mut energy = vec![0.0; n];
        for i in 0..n {
            let x_energy = (sum_e[i] * sum_e[i] + sum_o[i] * sum_o[i]).sqrt() + p.epsilon;
            let (mean_e, mean_o) = (sum_e[i] / x_energy, sum_o[i] / x_energy);
            for resp in &eo {
                let (e, od) = (resp[i].re, resp[i].im);
                energy[i] += e * mean_e + od * mean_o - (e * mean_o - od * mean_e).abs();
            }
        }
        let median_e2n = median(eo[0].iter().map(|v| v.norm_sqr()).collect());
        let mean_e2n = -median_e2n / 0.5f64.ln();
        let noise_power = if em_n > 0.0 { mean_e2n / em_n } else { 0.0 };
        let mut sum_an2 = 0.0;
        let mut sum_aiaj = 0.0;
        for i in 0..n {
            for si in 0..p.scales {
                let a = spatial_filters[si][i];
                sum_an2 += a * a;
                for sj in si + 1..p.scales {
                    sum_aiaj += a * spatial_filters[sj][i];
                }
            }
        }
        let est_noise_energy2 = 2.0 * noise_power * sum_an2 + 4.0 * noise_power * sum_aiaj;
        let tau = (est_noise_energy2 / 2.0).max(0.0).sqrt();
        let est_noise_energy = tau * (std::f64::consts::PI / 2.0).sqrt();
        let est_noise_sigma = ((2.0 - std::f64::consts::PI / 2.0) * tau * tau).sqrt();
        let t = (est_noise_energy + p.k * est_noise_sigma) / 1.7;
        for i in 0..n {
            energy_all[i] += (energy[i] - t).max(0.0);
            an_all[i] += sum_an[i];
        }
    }
    energy_all
        .iter()
        .zip(&an_all)
        .map(|(&e, &a)| if a > 0.0 { e / a } else { 0.0 })
        .collect()
}

/// `conv2(img, k, 'same')` for a 3×3 kernel with zero padding.
fn conv3_same(img: &[f64], rows: usize, cols: usize, k: &[[f64; 3]; 3]) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let mut acc = 0.0;
            for (u, krow) in k.iter().enumerate() {
                for (v, &kv) in krow.iter().enumerate() {
                    let rr = r as isize + 1 - u as isize;
                    let cc = c as isize + 1 - v as isize;
                    if rr >= 0 && cc >= 0 && (rr as usize) < rows && (cc as usize) < cols {
                        acc += kv * img[rr as usize * cols + cc as usize];
                    }
                }
            }
            out[r * cols + c] = acc;
        }
    }
    out
}

/// Scharr gradient magnitude.
pub fn gradient_magnitude(img: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let dx = [[3.0, 0.0, -3.0], [10.0, 0.0, -10.0], [3.0, 0.0, -3.0]].map(|r| r.map(|v| v / 16.0));
    let dy = [[3.0, 10.0, 3.0], [0.0, 0.0, 0.0], [-3.0, -10.0, -3.0]].map(|r| r.map(|v| v / 16.0));
    let gx = conv3_same(img, rows, cols, &dx);
    let gy = conv3_same(img, rows, cols, &dy);
    gx.iter().zip(&gy).map(|(a, b)| (a * a + b * b).sqrt()).collect()
}

/// Box-average then subsample by `F = max(1, round(min(rows, cols)/256))`.
fn downsample(img: &[f64], rows: usize, cols: usize) -> (Vec<f64>, usize, usize) {
    let f = ((rows.min(cols) as f64 / 256.0).round() as usize).max(1);
    if f == 1 {
        return (img.to_vec(), rows, cols);
    }
    // conv2(img, ones(F)/F², 'same'): the kernel centre sits at index floor(F/2).
    let centre = f / 2;
    let mut avg = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let mut acc = 0.0;
            for u in 0..f {
                for v in 0..f {
                    let rr = r as isize + centre as isize - u as isize;
                    let cc = c as isize + centre as isize - v as isize;
                    if rr >= 0 && cc >= 0 && (rr as usize) < rows && (cc as usize) < cols {
                        acc += img[rr as usize * cols + cc as usize];
                    }
                }
            }
            avg[r * cols + c] = acc / (f * f) as f64;
        }
    }
    let (nr, nc) = (rows.div_ceil(f), cols.div_ceil(f));
    let mut out = Vec::with_capacity(nr * nc);
    for r in (0..rows).step_by(f) {
        for c in (0..cols).step_by(f) {
            out.push(avg[r * cols + c]);
        }
    }
    (out, nr, nc)
}

/// FSIM of two equally sized grayscale images in [0, 255]. Two constant
/// images score 1. If no pixel carries phase congruency the score falls
/// back to the mean gradient similarity.
pub fn fsim_gray(a: &[f64], b: &[f64], rows: usize, cols: usize) -> f64 {
    let constant = |x: &[f64]| x.iter().all(|&v| v == x[0]);
    if constant(a) && constant(b) {
        return 1.0;
    }
    let (a, r, c) = downsample(a, rows, cols);
    let (b, _, _) = downsample(b, rows, cols);
    let params = PhaseCongruencyParams::default();
    let pc1 = phase_congruency(&a, r, c, &params);
    let pc2 = phase_congruency(&b, r, c, &params);
    let g1 = gradient_magnitude(&a, r, c);
    let g2 = gradient_magnitude(&b, r, c);
    let mut num = 0.0;
    let mut den = 0.0;
    let mut grad_only = 0.0;
    for i in 0..r * c {
        let s_pc = (2.0 * pc1[i] * pc2[i] + T1) / (pc1[i] * pc1[i] + pc2[i] * pc2[i] + T1);
        let s_g = (2.0 * g1[i] * g2[i] + T2) / (g1[i] * g1[i] + g2[i] * g2[i] + T2);
        let pcm = pc1[i].max(pc2[i]);
        num += s_pc * s_g * pcm;
        den += pcm;
        grad_only += s_g;
    }
    if den > 0.0 {
        num / den
    } else {
        grad_only / (r * c) as f64
    }
}
