//! 2-D cross-correlation via im2col and nearest-neighbour upsampling.

use super::linalg::gemm;
use super::{dim_err, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dGeometry {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl Conv2dGeometry {
    pub fn new(c_in: usize, h: usize, w: usize, k: usize, stride: usize, padding: usize) -> Option<Self> {
        if stride == 0 || k == 0 || k > h + 2 * padding || k > w + 2 * padding {
            return None;
        }
        Some(Self {
            c_in,
            h,
            w,
            k,
            stride,
            padding,
            h_out: (h + 2 * padding - k) / stride + 1,
            w_out: (w + 2 * padding - k) / stride + 1,
        })
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.padding == 0
    }

    fn patch_len(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn out_len(&self) -> usize {
        self.h_out * self.w_out
    }
}

/// Unfolds one `[C, H, W]` image into `[C·k·k, H'·W']` columns.
pub(crate) fn im2col(x: &[f32], g: &Conv2dGeometry, cols: &mut [f32]) {
    let hw = g.out_len();
    for c in 0..g.c_in {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = ((c * g.k + ky) * g.k + kx) * hw;
                for oy in 0..g.h_out {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    let dst = &mut cols[row + oy * g.w_out..row + (oy + 1) * g.w_out];
                    if iy < 0 || iy >= g.h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &x[(c * g.h + iy as usize) * g.w..(c * g.h + iy as usize + 1) * g.w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        *d = if ix < 0 || ix >= g.w as isize { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back, accumulating into `x`.
pub(crate) fn col2im(cols: &[f32], g: &Conv2dGeometry, x: &mut [f32]) {
    let hw = g.out_len();
    for c in 0..g.c_in {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = ((c * g.k + ky) * g.k + kx) * hw;
                for oy in 0..g.h_out {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let base = (c * g.h + iy as usize) * g.w;
                    let src = &cols[row + oy * g.w_out..row + (oy + 1) * g.w_out];
                    for (ox, v) in src.iter().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix >= 0 && ix < g.w as isize {
                            x[base + ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation of `input[N, C_in, H, W]` with `kernel[C_out, C_in, k, k]`.
pub fn conv2d(input: &Tensor, kernel: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    if input.ndim() != 4 || kernel.ndim() != 4 {
        return dim_err("conv2d", format!("{:?} * {:?}", input.shape(), kernel.shape()));
    }
    let [n, c_in, h, w] = [input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]];
    let [c_out, kc, kh, kw] = [kernel.shape()[0], kernel.shape()[1], kernel.shape()[2], kernel.shape()[3]];
    if kc != c_in || kh != kw {
        return dim_err("conv2d", format!("input channels {c_in}, kernel {:?}", kernel.shape()));
    }
    let Some(g) = Conv2dGeometry::new(c_in, h, w, kh, stride, padding) else {
        return dim_err("conv2d", format!("kernel {kh} stride {stride} padding {padding} on {h}x{w}"));
    };
    let (pl, ol) = (g.patch_len(), g.out_len());
    let in_len = c_in * h * w;
    let mut out = vec![0.0; n * c_out * ol];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![0.0; pl * ol] };
    for i in 0..n {
        let x = &input.data()[i * in_len..(i + 1) * in_len];
        let cols_ref: &[f32] = if g.is_pointwise() {
            x
        } else {
            im2col(x, &g, &mut cols);
            &cols
        };
        gemm(kernel.data(), c_out, pl, false, cols_ref, pl, ol, false, 0.0, &mut out[i * c_out * ol..(i + 1) * c_out * ol]);
    }
    let (xc, kc) = (input.clone(), kernel.clone());
    Tensor::from_op(
        "conv2d",
        vec![n, c_out, g.h_out, g.w_out],
        out,
        vec![input.clone(), kernel.clone()],
        move |grad| {
            let want_x = xc.tracks_grad();
            let want_k = kc.tracks_grad();
            let mut gx = want_x.then(|| vec![0.0; n * in_len]);
            let mut gk = want_k.then(|| vec![0.0; c_out * pl]);
            let mut cols = vec![0.0; pl * ol];
            let mut gcols = vec![0.0; pl * ol];
            for i in 0..n {
                let gi = &grad[i * c_out * ol..(i + 1) * c_out * ol];
                if let Some(gk) = gk.as_mut() {
                    let x = &xc.data()[i * in_len..(i + 1) * in_len];
                    let cols_ref: &[f32] = if g.is_pointwise() {
                        x
                    } else {
                        im2col(x, &g, &mut cols);
                        &cols
                    };
                    gemm(gi, c_out, ol, false, cols_ref, pl, ol, true, 1.0, gk);
                }
                if let Some(gx) = gx.as_mut() {
                    let dst = &mut gx[i * in_len..(i + 1) * in_len];
                    if g.is_pointwise() {
                        gemm(kc.data(), c_out, pl, true, gi, c_out, ol, false, 0.0, dst);
                    } else {
                        gemm(kc.data(), c_out, pl, true, gi, c_out, ol, false, 0.0, &mut gcols);
                        col2im(&gcols, &g, dst);
                    }
                }
            }
            vec![gx, gk]
        },
    )
}

/// Nearest-neighbour ×2 upsampling of `[N, C, H, W]`.
pub fn upsample_nearest2x(x: &Tensor) -> Result<Tensor> {
    if x.ndim() != 4 {
        return dim_err("upsample_nearest2x", format!("{:?}", x.shape()));
    }
    let [n, c, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let (h2, w2) = (2 * h, 2 * w);
    let mut out = vec![0.0; n * c * h2 * w2];
    for (plane, src) in x.data().chunks_exact(h * w).enumerate() {
        let dst = &mut out[plane * h2 * w2..(plane + 1) * h2 * w2];
        for y in 0..h2 {
            for xx in 0..w2 {
                dst[y * w2 + xx] = src[(y / 2) * w + xx / 2];
            }
        }
    }
    Tensor::from_op("upsample_nearest2x", vec![n, c, h2, w2], out, vec![x.clone()], move |g| {
        let mut gx = vec![0.0; n * c * h * w];
        for (plane, src) in g.chunks_exact(h2 * w2).enumerate() {
            let dst = &mut gx[plane * h * w..(plane + 1) * h * w];
            for y in 0..h2 {
                for xx in 0..w2 {
                    dst[(y / 2) * w + xx / 2] += src[y * w2 + xx];
                }
            }
        }
        vec![Some(gx)]
    })
}
