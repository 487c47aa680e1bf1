mod common;

use common::*;
use hye_core::tensor::{self, Tensor};
use proptest::prelude::*;

#[test]
fn conv2d_matches_six_loop_reference() {
    let mut r = rng(11);
    let x = randn_vec(2 * 3 * 8 * 8, &mut r);
    let k = randn_vec(4 * 3 * 3 * 3, &mut r);
    for (stride, pad) in [(1, 0), (1, 1), (2, 1)] {
        let got = tensor::conv2d(
            &Tensor::new(&[2, 3, 8, 8], x.clone()).unwrap(),
            &Tensor::new(&[4, 3, 3, 3], k.clone()).unwrap(),
            stride,
            pad,
        )
        .unwrap();
        let want = conv2d_oracle(&x, 2, 3, 8, 8, &k, 4, 3, stride, pad);
        assert_eq!(got.numel(), want.len());
        for (g, w) in got.data().iter().zip(&want) {
            assert!((*g as f64 - w).abs() <= 1e-5 * w.abs().max(1.0), "{g} vs {w}");
        }
    }
}

#[test]
fn linear_matches_triple_loop() {
    let mut r = rng(12);
    let x = randn_vec(10, &mut r);
    let w = randn_vec(15, &mut r);
    let y = tensor::linear(&Tensor::new(&[2, 5], x.clone()).unwrap(), &Tensor::new(&[3, 5], w.clone()).unwrap(), None).unwrap();
    for i in 0..2 {
        for o in 0..3 {
            let want: f64 = (0..5).map(|j| x[i * 5 + j] as f64 * w[o * 5 + j] as f64).sum();
            assert!((y.data()[i * 3 + o] as f64 - want).abs() < 1e-6);
        }
    }
}

#[test]
fn mean_of_conv_gradient_matches_finite_differences() {
    let mut r = rng(13);
    let xs = randn_vec(2 * 3 * 6 * 6, &mut r);
    let ks = randn_vec(4 * 3 * 3 * 3, &mut r);
    let x = Tensor::param(&[2, 3, 6, 6], xs.clone()).unwrap();
    let k = Tensor::param(&[4, 3, 3, 3], ks.clone()).unwrap();
    tensor::mean(&tensor::conv2d(&x, &k, 1, 1).unwrap()).unwrap().backward().unwrap();
    let gk = k.grad().unwrap();
    let f = |kv: &[f32]| -> f64 {
        let out = conv2d_oracle(&xs, 2, 3, 6, 6, kv, 4, 3, 1, 1);
        out.iter().sum::<f64>() / out.len() as f64
    };
    let h = 1e-3f32;
    for i in 0..ks.len() {
        let mut up = ks.clone();
        up[i] += h;
        let mut down = ks.clone();
        down[i] -= h;
        let num = (f(&up) - f(&down)) / (2.0 * h as f64);
        let err = (gk[i] as f64 - num).abs();
        assert!(err <= 1e-3 * num.abs().max(gk[i].abs() as f64) + 1e-4, "kernel[{i}]: {} vs {num}", gk[i]);
    }
}

#[test]
fn gradient_shapes_match_parameters() {
    for case in autodiff_cases() {
        let mut r = rng(1);
        let leaves: Vec<Tensor> = case
            .shapes
            .iter()
            .map(|s| Tensor::param(s, randn_vec(s.iter().product(), &mut r)).unwrap())
            .collect();
        let y = (case.f)(&leaves).unwrap();
        y.backward_with(&vec![1.0; y.numel()]).unwrap();
        for l in &leaves {
            if let Some(g) = l.grad() {
                assert_eq!(g.len(), l.numel(), "{}", case.name);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn every_operation_passes_gradient_check(case_idx in 0usize..64, seed in 0u64..10_000) {
        let cases = autodiff_cases();
        let case = &cases[case_idx % cases.len()];
        let e = case.max_relative_error(seed, 1e-2);
        prop_assert!(e <= 1e-3, "{} seed {}: {}", case.name, seed, e);
    }

    #[test]
    fn backward_is_linear_in_the_loss(a in -3.0f32..3.0, b in -3.0f32..3.0, seed in 0u64..1000) {
        let mut r = rng(seed);
        let xs = randn_vec(12, &mut r);
        let ws = randn_vec(12, &mut r);
        let losses = |x: &Tensor, w: &Tensor| -> (Tensor, Tensor) {
            let l1 = tensor::sum(&tensor::silu(&tensor::mul(x, w).unwrap()).unwrap()).unwrap();
            let l2 = tensor::mean(&tensor::sqr(&tensor::add(x, w).unwrap()).unwrap()).unwrap();
            (l1, l2)
        };
        let grad_of = |which: u8| -> Vec<f32> {
            let x = Tensor::param(&[3, 4], xs.clone()).unwrap();
            let w = Tensor::new(&[3, 4], ws.clone()).unwrap();
            let (l1, l2) = losses(&x, &w);
            let l = match which {
                0 => l1,
                1 => l2,
                _ => tensor::add(&tensor::scale(&l1, a).unwrap(), &tensor::scale(&l2, b).unwrap()).unwrap(),
            };
            l.backward().unwrap();
            x.grad().unwrap()
        };
        let (g1, g2, g) = (grad_of(0), grad_of(1), grad_of(2));
        for i in 0..12 {
            let want = a * g1[i] + b * g2[i];
            prop_assert!((g[i] - want).abs() <= 1e-6 * (1.0 + want.abs()), "{} vs {}", g[i], want);
        }
    }
}
