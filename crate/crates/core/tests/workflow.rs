use hye_core::denoiser::{Denoiser, DenoiserConfig};
use hye_core::metrics::{downstream_classify, ssim, ClassifierConfig, LabeledSet, SsimParams};
use hye_core::pipeline::{DbWindow, IncidenceRange};
use hye_core::sar_sim::{generate_scene, BackscatterTable, ClassMix, EmbeddingProjector, SceneConfig};
use hye_core::scheduler::{NoiseSchedule, SamplerConfig, ScheduleKind};
use hye_core::tensor::Tensor;
use hye_core::training::{TrainConfig, Trainer};
use hye_core::workflow::{generate, render_stack, scene_tiles, stack, tile_image, tiles_to_dataset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scene_image(seed: u64, speckle_seed: u64) -> Tensor {
    let scene = generate_scene(seed, &SceneConfig { size: 64, ..SceneConfig::default() }).unwrap();
    let st = render_stack(&scene, &BackscatterTable::default(), &mut ChaCha8Rng::seed_from_u64(speckle_seed)).unwrap();
    let vv = Tensor::new(&[64, 64], st.sar.data()[..64 * 64].to_vec()).unwrap();
    hye_core::pipeline::normalize_sar(&vv, DbWindow::default()).unwrap()
}

#[test]
fn ssim_ranks_speckle_realisations_above_other_scenes() {
    let p = SsimParams::default();
    for seed in [3u64, 4, 5] {
        let a = scene_image(seed, 1);
        let same = ssim(&a, &scene_image(seed, 2), &p).unwrap();
        let other = ssim(&a, &scene_image(seed + 100, 1), &p).unwrap();
        assert!(same < 1.0 && same > other, "seed {seed}: same {same} other {other}");
    }
}

fn class_set(first_seed: u64, per_class: usize) -> LabeledSet {
    let mixes = [
        ClassMix::from_array([0.6, 0.2, 0.1, 0.0, 0.1]),
        ClassMix::from_array([0.1, 0.6, 0.2, 0.0, 0.1]),
        ClassMix::from_array([0.0, 0.1, 0.2, 0.6, 0.1]),
    ];
    let (mut imgs, mut labels) = (Vec::new(), Vec::new());
    for (class, mix) in mixes.iter().enumerate() {
        for i in 0..per_class {
            let seed = first_seed + (class * 1000 + i) as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cfg = SceneConfig {
                size: 32,
                class_mix: *mix,
                incidence_deg: rng.random_range(31.0..44.0),
                ..SceneConfig::default()
            };
            let scene = generate_scene(seed, &cfg).unwrap();
            let tile = scene_tiles(&scene, &BackscatterTable::default(), &EmbeddingProjector::new(7), 32, 32, &mut rng)
                .unwrap()
                .remove(0);
            imgs.push(tile_image(&tile, 1, DbWindow::default()).unwrap());
            labels.push(class);
        }
    }
    LabeledSet::new(stack(&imgs).unwrap(), labels, 3).unwrap()
}

#[test]
fn simulator_augmentation_does_not_hurt_classifier() {
    let real = class_set(10_000, 10);
    let extra = class_set(20_000, 40);
    let test = class_set(30_000, 20);
    let cfg = ClassifierConfig {
        epochs: 10,
        batch_size: 16,
        learning_rate: 3e-3,
        seed: 0,
    };
    let (acc_real, acc_aug) = downstream_classify(&real, &real.union(&extra).unwrap(), &test, &cfg).unwrap();
    assert!(acc_aug >= acc_real, "real {acc_real} augmented {acc_aug}");
    assert!(acc_aug > 1.0 / 3.0);
}

#[test]
fn tiles_train_and_sample_end_to_end() {
    let scene = generate_scene(1, &SceneConfig { size: 32, ..SceneConfig::default() }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let tiles = scene_tiles(&scene, &BackscatterTable::default(), &EmbeddingProjector::new(7), 16, 16, &mut rng).unwrap();
    assert_eq!(tiles.len(), 4);
    let data = tiles_to_dataset(&tiles, 1, DbWindow::default(), IncidenceRange::default()).unwrap();
    let cfg = DenoiserConfig {
        base_channels: 8,
        depth: 1,
        time_embed_dim: 16,
        norm_groups: 4,
        ..DenoiserConfig::default()
    };
    let schedule = NoiseSchedule::build(ScheduleKind::Linear, 20, 1e-3, 0.2).unwrap();
    let mut tr = Trainer::new(
        Denoiser::build(&cfg, 0).unwrap(),
        schedule.clone(),
        TrainConfig { steps: 3, batch_size: 2, ..TrainConfig::default() },
    )
    .unwrap();
    tr.run(&data, |_, _| {}).unwrap();
    let sampler = SamplerConfig { steps: 5, ..SamplerConfig::default() };
    let out = generate(&tr.model, &schedule, data.cond.as_ref(), 4, 16, 16, &sampler, 9, 2).unwrap();
    assert_eq!(out.shape(), &[4, 1, 16, 16]);
    assert!(out.data().iter().all(|v| v.is_finite() && (-1.0..=1.0).contains(v)));
    let again = generate(&tr.model, &schedule, data.cond.as_ref(), 4, 16, 16, &sampler, 9, 2).unwrap();
    assert_eq!(out, again);
}
