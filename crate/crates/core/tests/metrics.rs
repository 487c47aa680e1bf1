mod common;

use common::*;
use hye_core::metrics::{
    downstream_classify, enl, fsim, fsim_gray, mean_std_similarity, phase_congruency, ssim, ClassifierConfig,
    LabeledSet, MetricsError, PhaseCongruencyParams, SsimParams,
};
use hye_core::sar_sim::{render_sar, BackscatterTable, LandCover, SceneTruth};
use hye_core::tensor::Tensor;
use proptest::prelude::*;

fn t2(h: usize, w: usize, v: &[f64]) -> Tensor {
    Tensor::new(&[h, w], v.iter().map(|&x| x as f32).collect()).unwrap()
}

fn f32_round(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| x as f32 as f64).collect()
}

#[test]
fn ssim_matches_windowed_oracle_on_checkerboard() {
    let (a, b) = checker_fixture(16, 2);
    let got = ssim(&t2(16, 16, &a), &t2(16, 16, &b), &SsimParams::default()).unwrap();
    let want = ssim_oracle(&f32_round(&a), &f32_round(&b), 16, 16, 11, 1.5, 0.01, 0.03, 2.0);
    assert!((got - want).abs() < 1e-6, "{got} vs {want}");
}

#[test]
fn ssim_matches_oracle_on_structured_pair() {
    let a = structured_fixture(20, 24);
    let b = gaussian_blur(&a, 20, 24, 1.2);
    let got = ssim(&t2(20, 24, &a), &t2(20, 24, &b), &SsimParams::default()).unwrap();
    let want = ssim_oracle(&f32_round(&a), &f32_round(&b), 20, 24, 11, 1.5, 0.01, 0.03, 2.0);
    assert!((got - want).abs() < 1e-6, "{got} vs {want}");
}

#[test]
fn phase_congruency_matches_naive_dft_oracle() {
    for (rows, cols) in [(16, 16), (15, 18)] {
        let img: Vec<f64> = structured_fixture(rows, cols).iter().map(|v| (v + 1.0) * 127.5).collect();
        let got = phase_congruency(&img, rows, cols, &PhaseCongruencyParams::default());
        let want = phase_congruency_oracle(&img, rows, cols);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-6, "{rows}x{cols}: {g} vs {w}");
        }
    }
}

#[test]
fn fsim_matches_oracle() {
    let (a, b) = checker_fixture(16, 4);
    let to255 = |v: &[f64]| v.iter().map(|x| (x + 1.0) * 127.5).collect::<Vec<_>>();
    let got = fsim_gray(&to255(&a), &to255(&b), 16, 16);
    let want = fsim_oracle(&to255(&a), &to255(&b), 16, 16);
    assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    let s = structured_fixture(18, 20);
    let blurred = gaussian_blur(&s, 18, 20, 1.0);
    let got = fsim_gray(&to255(&s), &to255(&blurred), 18, 20);
    let want = fsim_oracle(&to255(&s), &to255(&blurred), 18, 20);
    assert!((got - want).abs() < 1e-6, "{got} vs {want}");
}

#[test]
fn fsim_degrades_with_blur() {
    let (h, w) = (48, 48);
    let x = structured_fixture(h, w);
    let blur = gaussian_blur(&x, h, w, 2.0);
    let mix = |p: f64| -> Vec<f64> { x.iter().zip(&blur).map(|(a, b)| (1.0 - p) * a + p * b).collect() };
    let xt = t2(h, w, &x);
    let f5 = fsim(&xt, &t2(h, w, &mix(0.05))).unwrap();
    let f30 = fsim(&xt, &t2(h, w, &mix(0.30))).unwrap();
    assert!(f30 < f5 && f5 < 1.0, "f30={f30} f5={f5}");
}

#[test]
fn identity_fixed_points_are_exact() {
    let x = t2(32, 32, &structured_fixture(32, 32));
    assert_eq!(ssim(&x, &x, &SsimParams::default()).unwrap(), 1.0);
    assert_eq!(fsim(&x, &x).unwrap(), 1.0);
    let m = mean_std_similarity(&x, &x).unwrap();
    assert_eq!((m.mean_sim, m.std_sim), (0.0, 0.0));
}

#[test]
fn stretched_image_moves_only_std_sim() {
    let real = structured_fixture(16, 16);
    let mu = real.iter().sum::<f64>() / real.len() as f64;
    let gen: Vec<f64> = real.iter().map(|v| mu + 1.2 * (v - mu)).collect();
    let m = mean_std_similarity(&t2(16, 16, &gen), &t2(16, 16, &real)).unwrap();
    let real32 = f32_round(&real);
    let n = real32.len() as f64;
    let mr = real32.iter().sum::<f64>() / n;
    let sr = (real32.iter().map(|v| (v - mr).powi(2)).sum::<f64>() / n).sqrt();
    let d = real32.iter().cloned().fold(f64::MIN, f64::max) - real32.iter().cloned().fold(f64::MAX, f64::min);
    assert!(m.mean_sim < 1e-6);
    assert!((m.std_sim - 0.2 * sr / d).abs() < 1e-5, "{} vs {}", m.std_sim, 0.2 * sr / d);
}

#[test]
fn enl_follows_gamma_law() {
    let table = BackscatterTable::default();
    for looks in [1u32, 2, 4, 8] {
        let mut r = rng(100 + looks as u64);
        let mut acc = 0.0;
        let reps = 8;
        for k in 0..reps {
            let scene = SceneTruth::uniform(LandCover::Farmland, 100, 37.5, looks, k);
            let img = render_sar(&scene, &table, &mut r).unwrap();
            acc += enl(img.data()).unwrap().value;
        }
        let mean = acc / reps as f64;
        assert!((mean / looks as f64 - 1.0).abs() < 0.05, "looks {looks}: {mean}");
    }
}

#[test]
fn classifier_rejects_missing_test_class_and_is_deterministic() {
    let mut r = rng(3);
    let imgs = |n: usize, r: &mut rand_chacha::ChaCha8Rng| Tensor::new(&[n, 1, 8, 8], randn_vec(n * 64, r)).unwrap();
    let train = LabeledSet::new(imgs(6, &mut r), vec![0, 1, 2, 0, 1, 2], 3).unwrap();
    let test_missing = LabeledSet::new(imgs(3, &mut r), vec![0, 1, 1], 3).unwrap();
    let cfg = ClassifierConfig {
        epochs: 3,
        ..ClassifierConfig::default()
    };
    assert!(matches!(
        downstream_classify(&train, &train, &test_missing, &cfg),
        Err(MetricsError::MissingClass { class: 2 })
    ));
    let test = LabeledSet::new(imgs(6, &mut r), vec![2, 1, 0, 0, 1, 2], 3).unwrap();
    let (a, b) = downstream_classify(&train, &train, &test, &cfg).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn offsets_move_mean_sim_linearly(shift in -0.3f64..0.3, seed in 0u64..1000) {
        let mut r = rng(seed);
        let real: Vec<f64> = randn_vec(64, &mut r).iter().map(|&v| (v as f64 * 0.3).clamp(-0.9, 0.9)).collect();
        let real32 = f32_round(&real);
        let d = real32.iter().cloned().fold(f64::MIN, f64::max) - real32.iter().cloned().fold(f64::MAX, f64::min);
        let gen: Vec<f64> = real32.iter().map(|v| v + shift * d).collect();
        let m = mean_std_similarity(&t2(8, 8, &gen), &t2(8, 8, &real32)).unwrap();
        prop_assert!((m.mean_sim - shift.abs()).abs() < 1e-5);
        prop_assert!(m.std_sim < 1e-5);
    }

    #[test]
    fn ssim_and_fsim_are_bounded_and_symmetric(seed in 0u64..1000) {
        let mut r = rng(seed);
        let a: Vec<f64> = randn_vec(24 * 24, &mut r).iter().map(|&v| (v as f64 * 0.4).clamp(-1.0, 1.0)).collect();
        let b: Vec<f64> = randn_vec(24 * 24, &mut r).iter().map(|&v| (v as f64 * 0.4).clamp(-1.0, 1.0)).collect();
        let (ta, tb) = (t2(24, 24, &a), t2(24, 24, &b));
        let s = ssim(&ta, &tb, &SsimParams::default()).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s));
        let f1 = fsim(&ta, &tb).unwrap();
        let f2 = fsim(&tb, &ta).unwrap();
        prop_assert!((0.0..=1.0).contains(&f1));
        prop_assert!((f1 - f2).abs() < 1e-9);
    }
}
