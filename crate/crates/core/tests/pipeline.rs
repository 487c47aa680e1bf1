mod common;

use common::*;
use hye_core::pipeline::{
    clean, decode_tile, encode_tile, ingest_embedding_raster, tile_condition, window_offsets, write_embedding_raster,
    EmbeddingRaster, IncidenceRange, RasterFormat, TilePatch, COND_CHANNELS, NODATA, TILE_CHANNELS,
};
use hye_core::tensor::Tensor;
use ndarray::Array3;
use ndarray_npy::WriteNpyExt;
use proptest::prelude::*;
use rand::Rng;

fn patch(seed: u64, s: usize) -> TilePatch {
    let mut r = rng(seed);
    let n = s * s;
    let mut sar: Vec<f32> = (0..2 * n).map(|_| r.random_range(-25.0f32..0.0)).collect();
    sar.extend((0..n).map(|_| r.random_range(30.0f32..45.0)));
    TilePatch {
        optical: Tensor::new(&[4, s, s], (0..4 * n).map(|_| r.random_range(0.0f32..1.0)).collect()).unwrap(),
        sar: Tensor::new(&[3, s, s], sar).unwrap(),
        embedding: Some((0..64).map(|_| r.random_range(-1.0f32..1.0)).collect()),
        geo_id: format!("scene{seed}_r0_c0"),
        valid: false,
        class_fractions: Some([0.2; 5]),
    }
}

#[test]
fn tile_and_condition_channel_counts() {
    let p = patch(1, 8);
    assert_eq!(p.flatten().unwrap().shape(), &[71, 8, 8]);
    assert_eq!(TILE_CHANNELS, 71);
    let c = tile_condition(&p, IncidenceRange::default()).unwrap();
    assert_eq!(c.shape(), &[65, 8, 8]);
    assert_eq!(COND_CHANNELS, 65);
}

#[test]
fn half_stride_covers_interior_four_times() {
    for (size, blocks) in [(4usize, 3usize), (8, 4), (16, 5), (32, 3)] {
        let stride = size / 2;
        let n = size + stride * blocks;
        let mut cover = vec![0u32; n * n];
        for (r, c) in window_offsets(n, n, size, stride) {
            for i in r..r + size {
                for j in c..c + size {
                    cover[i * n + j] += 1;
                }
            }
        }
        for i in stride..n - stride {
            for j in stride..n - stride {
                assert_eq!(cover[i * n + j], 4, "size {size} pixel ({i}, {j})");
            }
        }
        assert!(cover.iter().all(|&k| k >= 1));
    }
}

fn oracle_means(data: &[f32], h: usize, w: usize, size: usize, stride: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    let mut r = 0;
    while r + size <= h {
        let mut c = 0;
        while c + size <= w {
            out.push(
                (0..64)
                    .map(|b| {
                        let mut acc = 0.0f64;
                        for i in r..r + size {
                            for j in c..c + size {
                                acc += data[b * h * w + i * w + j] as f64;
                            }
                        }
                        acc / (size * size) as f64
                    })
                    .collect(),
            );
            c += stride;
        }
        r += stride;
    }
    out
}

#[test]
fn embedding_ingestion_matches_window_means() {
    let (h, w, size, stride) = (20usize, 24usize, 8usize, 4usize);
    let mut r = rng(5);
    let data: Vec<f32> = (0..64 * h * w).map(|_| r.random_range(-1.0f32..1.0)).collect();
    let want = oracle_means(&data, h, w, size, stride);
    let dir = tempfile::tempdir().unwrap();

    let bin = dir.path().join("e.hyeb");
    write_embedding_raster(&EmbeddingRaster { bands: 64, height: h, width: w, data: data.clone() }, &bin).unwrap();
    let f32_npy = dir.path().join("e32.npy");
    Array3::from_shape_vec((64, h, w), data.clone()).unwrap().write_npy(std::fs::File::create(&f32_npy).unwrap()).unwrap();
    let f64_npy = dir.path().join("e64.npy");
    Array3::from_shape_vec((64, h, w), data.iter().map(|&v| v as f64).collect()).unwrap()
        .write_npy(std::fs::File::create(&f64_npy).unwrap())
        .unwrap();

    for (path, fmt) in [(&bin, RasterFormat::Binary), (&f32_npy, RasterFormat::Npy), (&f64_npy, RasterFormat::Npy)] {
        let got = ingest_embedding_raster(path, fmt, size, stride).unwrap();
        assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(&want) {
            for (a, b) in g.iter().zip(w) {
                assert!((*a as f64 - b).abs() <= 1e-6, "{a} vs {b}");
            }
        }
    }

    let short = dir.path().join("short.npy");
    Array3::<f32>::zeros((63, 4, 4)).write_npy(std::fs::File::create(&short).unwrap()).unwrap();
    let err = ingest_embedding_raster(&short, RasterFormat::Npy, 4, 4).unwrap_err().to_string();
    assert!(err.contains("63"), "{err}");
}

#[derive(Debug, Clone)]
enum Damage {
    None,
    NoData,
    PartialNoData,
    NanEmbedding,
    MissingEmbedding,
    ShortEmbedding,
}

fn damage() -> impl Strategy<Value = Damage> {
    prop_oneof![
        Just(Damage::None),
        Just(Damage::NoData),
        Just(Damage::PartialNoData),
        Just(Damage::NanEmbedding),
        Just(Damage::MissingEmbedding),
        Just(Damage::ShortEmbedding),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn cleaning_keeps_exactly_the_sound_tiles(seed in 0u64..10_000, kinds in proptest::collection::vec(damage(), 1..12)) {
        let mut expected = Vec::new();
        let tiles: Vec<TilePatch> = kinds
            .iter()
            .enumerate()
            .map(|(i, k)| {
                let mut p = patch(seed + i as u64, 4);
                p.geo_id = format!("t{i}");
                let mut sar = p.sar.to_vec();
                let keep = match k {
                    Damage::None => true,
                    Damage::NoData => {
                        sar[..32].iter_mut().for_each(|v| *v = NODATA);
                        false
                    }
                    Damage::PartialNoData => {
                        sar[..31].iter_mut().for_each(|v| *v = NODATA);
                        true
                    }
                    Damage::NanEmbedding => {
                        p.embedding.as_mut().unwrap()[seed as usize % 64] = f32::NAN;
                        false
                    }
                    Damage::MissingEmbedding => {
                        p.embedding = None;
                        false
                    }
                    Damage::ShortEmbedding => {
                        p.embedding.as_mut().unwrap().pop();
                        false
                    }
                };
                p.sar = Tensor::new(&[3, 4, 4], sar).unwrap();
                if keep {
                    expected.push(p.geo_id.clone());
                }
                p
            })
            .collect();
        let kept = clean(tiles);
        prop_assert_eq!(kept.iter().map(|p| p.geo_id.clone()).collect::<Vec<_>>(), expected);
        prop_assert!(kept.iter().all(|p| p.valid && p.embedding.as_ref().unwrap().iter().all(|v| v.is_finite())));
    }

    #[test]
    fn tile_bytes_round_trip(seed in 0u64..10_000, s in 1usize..10, with_emb in any::<bool>(), valid in any::<bool>()) {
        let mut p = patch(seed, s);
        p.valid = valid;
        if !with_emb {
            p.embedding = None;
            p.class_fractions = None;
        }
        prop_assert_eq!(decode_tile(&encode_tile(&p)).unwrap(), p);
    }

    #[test]
    fn corrupted_tile_is_rejected(seed in 0u64..10_000, pos in any::<prop::sample::Index>(), bit in 0u8..8) {
        let mut bytes = encode_tile(&patch(seed, 4));
        let i = pos.index(bytes.len());
        bytes[i] ^= 1 << bit;
        prop_assert!(decode_tile(&bytes).is_err());
    }
}

#[test]
fn window_offsets_match_enumeration() {
    let mut r = rng(9);
    for _ in 0..200 {
        let (h, w) = (r.random_range(1usize..300), r.random_range(1usize..300));
        let size = r.random_range(1usize..128);
        let stride = r.random_range(1usize..128);
        let want: Vec<(usize, usize)> = (0..h)
            .step_by(stride)
            .filter(|r| r + size <= h)
            .flat_map(|r| (0..w).step_by(stride).filter(|c| c + size <= w).map(move |c| (r, c)))
            .collect();
        assert_eq!(window_offsets(h, w, size, stride), want);
    }
}
