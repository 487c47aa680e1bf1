//! Elementwise, reduction and shape operations.

use super::{dim_err, numel, Result, Tensor};

/// How `b` is laid out against `a` in a binary op: `b` either matches `a`,
/// holds one value, or matches the trailing dimensions of `a`.
fn check_broadcast(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa == sb || b.numel() == 1 {
        return Ok(());
    }
    if sb.len() <= sa.len() && sa[sa.len() - sb.len()..] == *sb {
        return Ok(());
    }
    dim_err(op, format!("cannot broadcast {sb:?} onto {sa:?}"))
}

/// Sums `g` (shaped like `a`) down onto a broadcast operand of `nb` values.
fn reduce_to(g: &[f32], nb: usize) -> Vec<f32> {
    if g.len() == nb {
        return g.to_vec();
    }
    let mut out = vec![0.0f64; nb];
    for (i, v) in g.iter().enumerate() {
        out[i % nb] += *v as f64;
    }
    out.into_iter().map(|v| v as f32).collect()
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_broadcast("add", a, b)?;
    let nb = b.numel();
    let bd = b.data();
    let data = a.data().iter().enumerate().map(|(i, x)| x + bd[i % nb]).collect();
    Tensor::from_op("add", a.shape().to_vec(), data, vec![a.clone(), b.clone()], move |g| {
        vec![Some(g.to_vec()), Some(reduce_to(g, nb))]
    })
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_broadcast("sub", a, b)?;
    let nb = b.numel();
    let bd = b.data();
    let data = a.data().iter().enumerate().map(|(i, x)| x - bd[i % nb]).collect();
    Tensor::from_op("sub", a.shape().to_vec(), data, vec![a.clone(), b.clone()], move |g| {
        let gb = reduce_to(g, nb).into_iter().map(|v| -v).collect();
        vec![Some(g.to_vec()), Some(gb)]
    })
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_broadcast("mul", a, b)?;
    let nb = b.numel();
    let bd = b.data();
    let data = a.data().iter().enumerate().map(|(i, x)| x * bd[i % nb]).collect();
    let (ac, bc) = (a.clone(), b.clone());
    Tensor::from_op("mul", a.shape().to_vec(), data, vec![a.clone(), b.clone()], move |g| {
        let (ad, bd) = (ac.data(), bc.data());
        let ga = if ac.tracks_grad() {
            Some(g.iter().enumerate().map(|(i, gi)| gi * bd[i % nb]).collect())
        } else {
            None
        };
        let gb = if bc.tracks_grad() {
            let prod: Vec<f32> = g.iter().zip(ad).map(|(gi, x)| gi * x).collect();
            Some(reduce_to(&prod, nb))
        } else {
            None
        };
        vec![ga, gb]
    })
}

pub fn scale(a: &Tensor, s: f32) -> Result<Tensor> {
    let data = a.data().iter().map(|x| x * s).collect();
    Tensor::from_op("scale", a.shape().to_vec(), data, vec![a.clone()], move |g| {
        vec![Some(g.iter().map(|v| v * s).collect())]
    })
}

pub fn add_scalar(a: &Tensor, s: f32) -> Result<Tensor> {
    let data = a.data().iter().map(|x| x + s).collect();
    Tensor::from_op("add_scalar", a.shape().to_vec(), data, vec![a.clone()], |g| {
        vec![Some(g.to_vec())]
    })
}

pub fn sqr(a: &Tensor) -> Result<Tensor> {
    let data = a.data().iter().map(|x| x * x).collect();
    let ac = a.clone();
    Tensor::from_op("sqr", a.shape().to_vec(), data, vec![a.clone()], move |g| {
        vec![Some(g.iter().zip(ac.data()).map(|(gi, x)| 2.0 * gi * x).collect())]
    })
}

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// `x * sigmoid(x)`.
pub fn silu(a: &Tensor) -> Result<Tensor> {
    let data = a.data().iter().map(|&x| x * sigmoid(x)).collect();
    let ac = a.clone();
    Tensor::from_op("silu", a.shape().to_vec(), data, vec![a.clone()], move |g| {
        let gx = g
            .iter()
            .zip(ac.data())
            .map(|(gi, &x)| {
                let s = sigmoid(x);
                gi * s * (1.0 + x * (1.0 - s))
            })
            .collect();
        vec![Some(gx)]
    })
}

pub fn sum(a: &Tensor) -> Result<Tensor> {
    let total: f64 = a.data().iter().map(|&v| v as f64).sum();
    let n = a.numel();
    Tensor::from_op("sum", vec![1], vec![total as f32], vec![a.clone()], move |g| {
        vec![Some(vec![g[0]; n])]
    })
}

pub fn mean(a: &Tensor) -> Result<Tensor> {
    let n = a.numel();
    let total: f64 = a.data().iter().map(|&v| v as f64).sum();
    Tensor::from_op("mean", vec![1], vec![(total / n as f64) as f32], vec![a.clone()], move |g| {
        vec![Some(vec![g[0] / n as f32; n])]
    })
}

/// Mean over every axis after the first `keep`; result has shape `shape[..keep]`.
pub fn mean_keep(a: &Tensor, keep: usize) -> Result<Tensor> {
    if keep == 0 || keep >= a.ndim() {
        return dim_err("mean_keep", format!("keep={keep} for shape {:?}", a.shape()));
    }
    let out_shape = a.shape()[..keep].to_vec();
    let outer = numel(&out_shape);
    let inner = a.numel() / outer;
    let data = a
        .data()
        .chunks_exact(inner)
        .map(|c| (c.iter().map(|&v| v as f64).sum::<f64>() / inner as f64) as f32)
        .collect();
    Tensor::from_op("mean_keep", out_shape, data, vec![a.clone()], move |g| {
        let inv = 1.0 / inner as f32;
        let mut gx = Vec::with_capacity(outer * inner);
        for gi in g {
            gx.extend(std::iter::repeat_n(gi * inv, inner));
        }
        vec![Some(gx)]
    })
}

pub fn reshape(a: &Tensor, shape: &[usize]) -> Result<Tensor> {
    if numel(shape) != a.numel() {
        return dim_err("reshape", format!("{:?} -> {shape:?}", a.shape()));
    }
    Tensor::from_op("reshape", shape.to_vec(), a.data().to_vec(), vec![a.clone()], |g| {
        vec![Some(g.to_vec())]
    })
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Gathers `src` into the axis order `axes`; returns the permuted buffer.
fn permute_buf(src: &[f32], shape: &[usize], axes: &[usize]) -> Vec<f32> {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let moved: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let nd = out_shape.len();
    let mut out = Vec::with_capacity(src.len());
    let mut idx = vec![0usize; nd];
    let mut offset = 0usize;
    for _ in 0..src.len() {
        out.push(src[offset]);
        for d in (0..nd).rev() {
            idx[d] += 1;
            offset += moved[d];
            if idx[d] < out_shape[d] {
                break;
            }
            offset -= moved[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    out
}

pub fn permute(a: &Tensor, axes: &[usize]) -> Result<Tensor> {
    let nd = a.ndim();
    let mut seen = vec![false; nd];
    if axes.len() != nd || axes.iter().any(|&x| x >= nd || std::mem::replace(&mut seen[x], true)) {
        return dim_err("permute", format!("axes {axes:?} for shape {:?}", a.shape()));
    }
    let out_shape: Vec<usize> = axes.iter().map(|&x| a.shape()[x]).collect();
    let data = permute_buf(a.data(), a.shape(), axes);
    let mut inverse = vec![0; nd];
    for (i, &x) in axes.iter().enumerate() {
        inverse[x] = i;
    }
    let back_shape = out_shape.clone();
    Tensor::from_op("permute", out_shape, data, vec![a.clone()], move |g| {
        vec![Some(permute_buf(g, &back_shape, &inverse))]
    })
}

/// Concatenates along `axis`; all other dimensions must agree.
pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
    let Some(first) = parts.first() else {
        return dim_err("concat", "no inputs");
    };
    let nd = first.ndim();
    if axis >= nd {
        return dim_err("concat", format!("axis {axis} for rank {nd}"));
    }
    for p in parts {
        let ok = p.ndim() == nd
            && (0..nd).all(|d| d == axis || p.shape()[d] == first.shape()[d]);
        if !ok {
            return dim_err("concat", format!("{:?} vs {:?}", p.shape(), first.shape()));
        }
    }
    let outer: usize = first.shape()[..axis].iter().product();
    let inner: usize = first.shape()[axis + 1..].iter().product();
    let widths: Vec<usize> = parts.iter().map(|p| p.shape()[axis] * inner).collect();
    let total: usize = widths.iter().sum();
    let mut data = Vec::with_capacity(outer * total);
    for o in 0..outer {
        for (p, &w) in parts.iter().zip(&widths) {
            data.extend_from_slice(&p.data()[o * w..(o + 1) * w]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = parts.iter().map(|p| p.shape()[axis]).sum();
    let parents: Vec<Tensor> = parts.iter().map(|&p| p.clone()).collect();
    Tensor::from_op("concat", shape, data, parents, move |g| {
        let mut grads: Vec<Vec<f32>> = widths.iter().map(|w| Vec::with_capacity(outer * w)).collect();
        for o in 0..outer {
            let mut off = o * total;
            for (gp, &w) in grads.iter_mut().zip(&widths) {
                gp.extend_from_slice(&g[off..off + w]);
                off += w;
            }
        }
        grads.into_iter().map(Some).collect()
    })
}

/// Adds `bias[C]` to every position of `x[N, C, ...]`.
pub fn add_channel_bias(x: &Tensor, bias: &Tensor) -> Result<Tensor> {
    if x.ndim() < 2 || bias.shape() != [x.shape()[1]] {
        return dim_err("add_channel_bias", format!("{:?} + {:?}", x.shape(), bias.shape()));
    }
    let c = x.shape()[1];
    let inner: usize = x.shape()[2..].iter().product();
    let b = bias.data();
    let data = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| v + b[(i / inner) % c])
        .collect();
    Tensor::from_op("add_channel_bias", x.shape().to_vec(), data, vec![x.clone(), bias.clone()], move |g| {
        let mut gb = vec![0.0f64; c];
        for (i, v) in g.iter().enumerate() {
            gb[(i / inner) % c] += *v as f64;
        }
        vec![Some(g.to_vec()), Some(gb.into_iter().map(|v| v as f32).collect())]
    })
}

/// Adds `v` whose shape is a prefix of `x`'s shape, repeated over the
/// remaining trailing axes (e.g. `[N, C]` onto `[N, C, H, W]`).
pub fn add_prefix_broadcast(x: &Tensor, v: &Tensor) -> Result<Tensor> {
    let (sx, sv) = (x.shape(), v.shape());
    if sv.len() > sx.len() || sx[..sv.len()] != *sv {
        return dim_err("add_prefix_broadcast", format!("{sv:?} onto {sx:?}"));
    }
    let inner = x.numel() / v.numel();
    let vd = v.data();
    let data = x.data().iter().enumerate().map(|(i, a)| a + vd[i / inner]).collect();
    Tensor::from_op("add_prefix_broadcast", sx.to_vec(), data, vec![x.clone(), v.clone()], move |g| {
        let gv = g
            .chunks_exact(inner)
            .map(|c| c.iter().map(|&u| u as f64).sum::<f64>() as f32)
            .collect();
        vec![Some(g.to_vec()), Some(gv)]
    })
}
