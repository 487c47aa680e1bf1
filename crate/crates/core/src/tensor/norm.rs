use super::{dim_err, Result, Tensor, TensorError};

/// Group normalization over `[N, C, ...]` with per-channel affine `gamma`, `beta`.
pub fn group_norm(x: &Tensor, groups: usize, gamma: &Tensor, beta: &Tensor, eps: f32) -> Result<Tensor> {
    if x.ndim() < 2 {
        return dim_err("group_norm", format!("{:?}", x.shape()));
    }
    let (n, c) = (x.shape()[0], x.shape()[1]);
    if groups == 0 || c % groups != 0 {
        return dim_err("group_norm", format!("{c} channels into {groups} groups"));
    }
    if gamma.shape() != [c] || beta.shape() != [c] {
        return dim_err("group_norm", format!("affine {:?}/{:?} for {c} channels", gamma.shape(), beta.shape()));
    }
    let spatial: usize = x.shape()[2..].iter().product();
    let cpg = c / groups;
    let m = cpg * spatial;
    let mut xhat = vec![0.0f32; x.numel()];
    let mut inv_std = vec![0.0f32; n * groups];
    for (gi, chunk) in x.data().chunks_exact(m).enumerate() {
        let mean = chunk.iter().map(|&v| v as f64).sum::<f64>() / m as f64;
        let var = chunk.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / m as f64;
        let denom = var + eps as f64;
        if denom <= 0.0 {
            return Err(TensorError::Numeric {
                op: "group_norm",
                detail: "zero variance group with eps = 0".into(),
            });
        }
        let is = (1.0 / denom.sqrt()) as f32;
        inv_std[gi] = is;
        for (o, &v) in xhat[gi * m..(gi + 1) * m].iter_mut().zip(chunk) {
            *o = ((v as f64 - mean) as f32) * is;
        }
    }
    let (gd, bd) = (gamma.data(), beta.data());
    let out = xhat
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let ch = (i / spatial) % c;
            gd[ch] * v + bd[ch]
        })
        .collect();
    let gc = gamma.clone();
    Tensor::from_op(
        "group_norm",
        x.shape().to_vec(),
        out,
        vec![x.clone(), gamma.clone(), beta.clone()],
        move |g| {
            let gd = gc.data();
            let mut dgamma = vec![0.0f64; c];
            let mut dbeta = vec![0.0f64; c];
            for (i, (&gv, &xh)) in g.iter().zip(&xhat).enumerate() {
                let ch = (i / spatial) % c;
                dgamma[ch] += (gv * xh) as f64;
                dbeta[ch] += gv as f64;
            }
            let mut dx = vec![0.0f32; g.len()];
            for gi in 0..n * groups {
                let range = gi * m..(gi + 1) * m;
                let mut mean_d = 0.0f64;
                let mut mean_dx = 0.0f64;
                for i in range.clone() {
                    let ch = (i / spatial) % c;
                    let d = (g[i] * gd[ch]) as f64;
                    mean_d += d;
                    mean_dx += d * xhat[i] as f64;
                }
                mean_d /= m as f64;
                mean_dx /= m as f64;
                let is = inv_std[gi] as f64;
                for i in range {
                    let ch = (i / spatial) % c;
                    let d = (g[i] * gd[ch]) as f64;
                    dx[i] = (is * (d - mean_d - xhat[i] as f64 * mean_dx)) as f32;
                }
            }
            vec![
                Some(dx),
                Some(dgamma.into_iter().map(|v| v as f32).collect()),
                Some(dbeta.into_iter().map(|v| v as f32).collect()),
            ]
        },
    )
}

/// Softmax over the last axis.
pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let k = *x.shape().last().expect("tensor has at least one axis");
    let mut out = Vec::with_capacity(x.numel());
    for row in x.data().chunks_exact(k) {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let exps: Vec<f32> = row.iter().map(|&v| (v - max).exp()).collect();
        let z: f32 = exps.iter().sum();
        out.extend(exps.into_iter().map(|e| e / z));
    }
    let y = out.clone();
    Tensor::from_op("softmax_last", x.shape().to_vec(), out, vec![x.clone()], move |g| {
        let mut gx = Vec::with_capacity(g.len());
        for (gr, yr) in g.chunks_exact(k).zip(y.chunks_exact(k)) {
            let dot: f32 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
            gx.extend(gr.iter().zip(yr).map(|(a, b)| b * (a - dot)));
        }
        vec![Some(gx)]
    })
}

/// Mean negative log-likelihood of `labels` under `softmax(logits[N, K])`.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    if logits.ndim() != 2 || logits.shape()[0] != labels.len() {
        return dim_err("cross_entropy", format!("{:?} with {} labels", logits.shape(), labels.len()));
    }
    let (n, k) = (logits.shape()[0], logits.shape()[1]);
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return dim_err("cross_entropy", format!("label {bad} out of {k} classes"));
    }
    let mut probs = Vec::with_capacity(n * k);
    let mut loss = 0.0f64;
    for (row, &label) in logits.data().chunks_exact(k).zip(labels) {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        let z: f64 = row.iter().map(|&v| (v as f64 - max).exp()).sum();
        loss += z.ln() + max - row[label] as f64;
        probs.extend(row.iter().map(|&v| ((v as f64 - max).exp() / z) as f32));
    }
    let labels = labels.to_vec();
    Tensor::from_op("cross_entropy", vec![1], vec![(loss / n as f64) as f32], vec![logits.clone()], move |g| {
        let s = g[0] / n as f32;
        let mut gx = probs.clone();
        for (i, &l) in labels.iter().enumerate() {
            gx[i * k + l] -= 1.0;
        }
        gx.iter_mut().for_each(|v| *v *= s);
        vec![Some(gx)]
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_input_normalizes_to_zero() {
        let x = Tensor::full(&[1, 4, 3, 3], 2.5);
        let y = group_norm(&x, 2, &Tensor::full(&[4], 1.0), &Tensor::zeros(&[4]), 1e-5).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_variance_without_eps_is_numeric_error() {
        let x = Tensor::full(&[1, 2, 2, 2], 1.0);
        let r = group_norm(&x, 1, &Tensor::full(&[2], 1.0), &Tensor::zeros(&[2]), 0.0);
        assert!(matches!(r, Err(TensorError::Numeric { .. })));
    }

    #[test]
    fn groups_are_standardized() {
        let x = Tensor::new(&[1, 2, 1, 3], vec![1.0, 2.0, 3.0, 10.0, 20.0, 30.0]).unwrap();
        let y = group_norm(&x, 2, &Tensor::full(&[2], 1.0), &Tensor::zeros(&[2]), 0.0).unwrap();
        for g in y.data().chunks(3) {
            let m: f32 = g.iter().sum::<f32>() / 3.0;
            let v: f32 = g.iter().map(|a| (a - m).powi(2)).sum::<f32>() / 3.0;
            assert!(m.abs() < 1e-6 && (v - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Tensor::new(&[2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.0, 100.0]).unwrap();
        let y = softmax_last(&x).unwrap();
        for r in y.data().chunks(3) {
            assert!((r.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let x = Tensor::zeros(&[2, 4]);
        let l = cross_entropy(&x, &[0, 3]).unwrap();
        assert!((l.item() - 4f32.ln()).abs() < 1e-6);
        assert!(cross_entropy(&x, &[0, 4]).is_err());
    }
}
