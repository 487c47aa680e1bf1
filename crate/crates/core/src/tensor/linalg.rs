//! Matrix products. The inner kernels go through ndarray's GEMM.

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};

use super::{dim_err, Result, Tensor};

pub(crate) fn view(data: &[f32], rows: usize, cols: usize) -> ArrayView2<'_, f32> {
    ArrayView2::from_shape((rows, cols), data).expect("matrix view")
}

pub(crate) fn view_mut(data: &mut [f32], rows: usize, cols: usize) -> ArrayViewMut2<'_, f32> {
    ArrayViewMut2::from_shape((rows, cols), data).expect("matrix view")
}

/// `c = a·b + beta·c` for row-major slices, with optional transposes of `a`/`b`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    a: &[f32],
    a_rows: usize,
    a_cols: usize,
    trans_a: bool,
    b: &[f32],
    b_rows: usize,
    b_cols: usize,
    trans_b: bool,
    beta: f32,
    c: &mut [f32],
) {
    let av = view(a, a_rows, a_cols);
    let bv = view(b, b_rows, b_cols);
    let av = if trans_a { av.reversed_axes() } else { av };
    let bv = if trans_b { bv.reversed_axes() } else { bv };
    let (m, n) = (av.nrows(), bv.ncols());
    let mut cv = view_mut(c, m, n);
    general_mat_mul(1.0, &av, &bv, beta, &mut cv);
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.ndim() != 2 || b.ndim() != 2 || a.shape()[1] != b.shape()[0] {
        return dim_err("matmul", format!("{:?} x {:?}", a.shape(), b.shape()));
    }
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![0.0; m * n];
    gemm(a.data(), m, k, false, b.data(), k, n, false, 0.0, &mut out);
    let (ac, bc) = (a.clone(), b.clone());
    Tensor::from_op("matmul", vec![m, n], out, vec![a.clone(), b.clone()], move |g| {
        let ga = ac.tracks_grad().then(|| {
            let mut ga = vec![0.0; m * k];
            gemm(g, m, n, false, bc.data(), k, n, true, 0.0, &mut ga);
            ga
        });
        let gb = bc.tracks_grad().then(|| {
            let mut gb = vec![0.0; k * n];
            gemm(ac.data(), m, k, true, g, m, n, false, 0.0, &mut gb);
            gb
        });
        vec![ga, gb]
    })
}

/// `input[N, d_in] · weight[d_out, d_in]ᵀ + bias[d_out]`.
pub fn linear(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    if input.ndim() != 2 || weight.ndim() != 2 || input.shape()[1] != weight.shape()[1] {
        return dim_err("linear", format!("{:?} with weight {:?}", input.shape(), weight.shape()));
    }
    let (n, din, dout) = (input.shape()[0], input.shape()[1], weight.shape()[0]);
    if let Some(b) = bias {
        if b.shape() != [dout] {
            return dim_err("linear", format!("bias {:?} for d_out={dout}", b.shape()));
        }
    }
    let mut out = vec![0.0; n * dout];
    if let Some(b) = bias {
        for row in out.chunks_exact_mut(dout) {
            row.copy_from_slice(b.data());
        }
    }
    let beta = if bias.is_some() { 1.0 } else { 0.0 };
    gemm(input.data(), n, din, false, weight.data(), dout, din, true, beta, &mut out);
    let (xc, wc) = (input.clone(), weight.clone());
    let has_bias = bias.is_some();
    let mut parents = vec![input.clone(), weight.clone()];
    if let Some(b) = bias {
        parents.push(b.clone());
    }
    Tensor::from_op("linear", vec![n, dout], out, parents, move |g| {
        let gx = xc.tracks_grad().then(|| {
            let mut gx = vec![0.0; n * din];
            gemm(g, n, dout, false, wc.data(), dout, din, false, 0.0, &mut gx);
            gx
        });
        let gw = wc.tracks_grad().then(|| {
            let mut gw = vec![0.0; dout * din];
            gemm(g, n, dout, true, xc.data(), n, din, false, 0.0, &mut gw);
            gw
        });
        let mut grads = vec![gx, gw];
        if has_bias {
            let mut gb = vec![0.0f64; dout];
            for row in g.chunks_exact(dout) {
                gb.iter_mut().zip(row).for_each(|(a, &b)| *a += b as f64);
            }
            grads.push(Some(gb.into_iter().map(|v| v as f32).collect()));
        }
        grads
    })
}

/// Batched product `a[B, M, K] · b[B, K, N]`.
pub fn bmm(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.ndim() != 3 || b.ndim() != 3 || a.shape()[0] != b.shape()[0] || a.shape()[2] != b.shape()[1] {
        return dim_err("bmm", format!("{:?} x {:?}", a.shape(), b.shape()));
    }
    let (bs, m, k, n) = (a.shape()[0], a.shape()[1], a.shape()[2], b.shape()[2]);
    let mut out = vec![0.0; bs * m * n];
    for i in 0..bs {
        gemm(
            &a.data()[i * m * k..(i + 1) * m * k],
            m,
            k,
            false,
            &b.data()[i * k * n..(i + 1) * k * n],
            k,
            n,
            false,
            0.0,
            &mut out[i * m * n..(i + 1) * m * n],
        );
    }
    let (ac, bc) = (a.clone(), b.clone());
    Tensor::from_op("bmm", vec![bs, m, n], out, vec![a.clone(), b.clone()], move |g| {
        let ga = ac.tracks_grad().then(|| {
            let mut ga = vec![0.0; bs * m * k];
            for i in 0..bs {
                gemm(
                    &g[i * m * n..(i + 1) * m * n],
                    m,
                    n,
                    false,
                    &bc.data()[i * k * n..(i + 1) * k * n],
                    k,
                    n,
                    true,
                    0.0,
                    &mut ga[i * m * k..(i + 1) * m * k],
                );
            }
            ga
        });
        let gb = bc.tracks_grad().then(|| {
            let mut gb = vec![0.0; bs * k * n];
            for i in 0..bs {
                gemm(
                    &ac.data()[i * m * k..(i + 1) * m * k],
                    m,
                    k,
                    true,
                    &g[i * m * n..(i + 1) * m * n],
                    m,
                    n,
                    false,
                    0.0,
                    &mut gb[i * k * n..(i + 1) * k * n],
                );
            }
            gb
        });
        vec![ga, gb]
    })
}
