use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use hye_core::metrics::{evaluate_pairs, MetricsError, MetricsReport, PairInput};
use hye_core::pipeline::{
    build_condition, clean, denormalize_sar, ingest_embedding_raster, read_embedding_raster, read_tile_dir, sliding_window,
    tile_condition, write_manifest, write_tile, DbWindow, ManifestEntry, PipelineError, RasterFormat, RasterStack,
    TilePatch, COND_CHANNELS, NODATA, OPTICAL_BANDS,
};
use hye_core::sar_sim::{generate_scene, synth_embedding, BackscatterTable, EmbeddingProjector};
use hye_core::tensor::Tensor;
use hye_core::training::{load_checkpoint, save_checkpoint, CheckpointError, TrainError, Trainer};
use hye_core::workflow::{generate, render_stack, stack, tile_image, tile_rendered, tiles_to_dataset, uniform_condition, unstack, WorkflowError};
use hye_core::denoiser::Denoiser;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ConditionSource, RunConfig};
use crate::CliError;

/// Preview PNGs always map this window to 0..255.
const PREVIEW_WINDOW: DbWindow = DbWindow { low: -25.0, high: 0.0 };

fn pipeline_err(e: PipelineError) -> CliError {
    match e {
        PipelineError::Io(e) => CliError::Io(e.to_string()),
        PipelineError::Config(m) => CliError::Config(m),
        other => CliError::Data(other.to_string()),
    }
}

fn checkpoint_err(e: CheckpointError) -> CliError {
    match e {
        CheckpointError::Io(e) => CliError::Io(e.to_string()),
        other => CliError::Data(other.to_string()),
    }
}

fn train_err(e: TrainError) -> CliError {
    match e {
        TrainError::Config(m) => CliError::Config(m),
        TrainError::Data(m) => CliError::Data(m),
        other => CliError::Training(other.to_string()),
    }
}

fn workflow_err(e: WorkflowError) -> CliError {
    match e {
        WorkflowError::Config(m) => CliError::Config(m),
        WorkflowError::Pipeline(e) => pipeline_err(e),
        WorkflowError::Train(e) => train_err(e),
        WorkflowError::Checkpoint(e) => checkpoint_err(e),
        WorkflowError::Sampling(m) => CliError::Training(m),
        other => CliError::Data(other.to_string()),
    }
}

fn metrics_err(e: MetricsError) -> CliError {
    match e {
        MetricsError::Io(e) => CliError::Io(e.to_string()),
        other => CliError::Data(other.to_string()),
    }
}

/// Output directory written under a temporary name and moved into place
/// only when complete.
struct Staged {
    tmp: PathBuf,
    dest: PathBuf,
    done: bool,
}

impl Staged {
    fn new(dest: PathBuf) -> Result<Self, CliError> {
        let name = dest.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let tmp = dest.with_file_name(format!(".{name}.partial"));
        if tmp.exists() {
            fs::remove_dir_all(&tmp)?;
        }
        fs::create_dir_all(&tmp)?;
        Ok(Self { tmp, dest, done: false })
    }

    fn commit(mut self) -> Result<(), CliError> {
        if self.dest.exists() {
            fs::remove_dir_all(&self.dest)?;
        }
        fs::rename(&self.tmp, &self.dest)?;
        self.done = true;
        Ok(())
    }
}

impl Drop for Staged {
    fn drop(&mut self) {
        if !self.done {
            let _ = fs::remove_dir_all(&self.tmp);
        }
    }
}

fn write_png(db: &Tensor, path: &Path) -> Result<(), CliError> {
    let s = db.shape();
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let span = PREVIEW_WINDOW.high - PREVIEW_WINDOW.low;
    let pixels = db.data()[..h * w]
        .iter()
        .map(|&v| ((v.clamp(PREVIEW_WINDOW.low, PREVIEW_WINDOW.high) - PREVIEW_WINDOW.low) / span * 255.0).round() as u8)
        .collect();
    let img = image::GrayImage::from_raw(w as u32, h as u32, pixels)
        .ok_or_else(|| CliError::Data("preview buffer size mismatch".into()))?;
    img.save(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write_tiles(dir: &Path, tiles: &[TilePatch]) -> Result<(), CliError> {
    let mut entries = Vec::with_capacity(tiles.len());
    for t in tiles {
        let file = format!("{}.hyt", t.geo_id);
        write_tile(t, &dir.join(&file)).map_err(pipeline_err)?;
        entries.push(ManifestEntry::of(t, &file));
    }
    write_manifest(&entries, &dir.join("manifest.jsonl")).map_err(pipeline_err)
}

fn fractions_from_embedding(t: &mut TilePatch) {
    if let Some(e) = &t.embedding {
        if e.len() >= 5 && e[..5].iter().all(|v| v.is_finite()) {
            t.class_fractions = Some([e[0], e[1], e[2], e[3], e[4]]);
        }
    }
}

fn valid_tiles(dir: &Path) -> Result<Vec<TilePatch>, CliError> {
    let tiles: Vec<TilePatch> = read_tile_dir(dir)
        .map_err(pipeline_err)?
        .into_iter()
        .map(|(_, t)| t)
        .filter(|t| t.valid)
        .collect();
    if tiles.is_empty() {
        return Err(CliError::Data(format!("no valid tiles in {}", dir.display())));
    }
    Ok(tiles)
}

pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let sim = &cfg.simulator;
    let p = &cfg.pipeline;
    let table = BackscatterTable::default();
    let projector = EmbeddingProjector::new(sim.projector_seed);
    let scenes_dir = Staged::new(out.join("scenes"))?;
    let tiles_dir = Staged::new(out.join("tiles"))?;
    let mut scene_patches = Vec::with_capacity(sim.scenes);
    let mut tiles = Vec::new();
    let mut candidates = 0;
    for i in 0..sim.scenes {
        let (seed, scene_cfg) = sim.scene(i);
        let scene = generate_scene(seed, &scene_cfg).map_err(|e| CliError::Config(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raster = render_stack(&scene, &table, &mut rng).map_err(workflow_err)?;
        candidates += hye_core::pipeline::window_offsets(scene.height, scene.width, p.tile_size, p.stride).len();
        tiles.extend(tile_rendered(&scene, &raster, &projector, p.tile_size, p.stride).map_err(workflow_err)?);
        write_png(&raster.sar, &scenes_dir.tmp.join(format!("{}.png", raster.name)))?;
        scene_patches.push(TilePatch {
            optical: raster.optical,
            sar: raster.sar,
            embedding: Some(synth_embedding(&scene, &projector).to_vec()),
            geo_id: raster.name,
            valid: true,
            class_fractions: Some(scene.class_fractions().map(|f| f as f32)),
        });
    }
    write_tiles(&scenes_dir.tmp, &scene_patches)?;
    write_tiles(&tiles_dir.tmp, &tiles)?;
    scenes_dir.commit()?;
    tiles_dir.commit()?;
    log::info!(
        "{} scenes, {candidates} candidate tiles, {} kept after cleaning -> {}",
        sim.scenes,
        tiles.len(),
        out.join("tiles").display()
    );
    Ok(())
}

fn embedding_raster_for(dir: &Path, name: &str) -> Option<(PathBuf, RasterFormat)> {
    [("hyeb", RasterFormat::Binary), ("npy", RasterFormat::Npy)]
        .into_iter()
        .map(|(ext, f)| (dir.join(format!("{name}.{ext}")), f))
        .find(|(p, _)| p.exists())
}

pub fn tile(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let p = &cfg.pipeline;
    let scenes_dir = p.scenes_dir.clone().unwrap_or_else(|| out.join("scenes"));
    let scenes = read_tile_dir(&scenes_dir).map_err(pipeline_err)?;
    if scenes.is_empty() {
        return Err(CliError::Data(format!("no scene rasters in {}", scenes_dir.display())));
    }
    let staged = Staged::new(out.join("tiles"))?;
    let mut tiles = Vec::new();
    for (_, scene) in scenes {
        let embedding = match &p.embedding_dir {
            Some(dir) => {
                let (path, format) = embedding_raster_for(dir, &scene.geo_id)
                    .ok_or_else(|| CliError::Data(format!("no embedding raster for {} in {}", scene.geo_id, dir.display())))?;
                let r = read_embedding_raster(&path, format).map_err(pipeline_err)?;
                if (r.height, r.width) != (scene.height(), scene.width()) {
                    return Err(CliError::Data(format!(
                        "embedding raster {} is {}x{}, scene is {}x{}",
                        path.display(),
                        r.height,
                        r.width,
                        scene.height(),
                        scene.width()
                    )));
                }
                Some(r)
            }
            None => None,
        };
        let has_raster = embedding.is_some();
        let raster = RasterStack {
            optical: scene.optical.clone(),
            sar: scene.sar.clone(),
            embedding,
            name: scene.geo_id.clone(),
        };
        let mut cut = sliding_window(&raster, p.tile_size, p.stride).map_err(pipeline_err)?;
        for t in &mut cut {
            if !has_raster {
                t.embedding = scene.embedding.clone();
            }
            fractions_from_embedding(t);
        }
        tiles.extend(clean(cut));
    }
    write_tiles(&staged.tmp, &tiles)?;
    staged.commit()?;
    log::info!("{} tiles -> {}", tiles.len(), out.join("tiles").display());
    Ok(())
}

pub fn train(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let data_dir = cfg.training.data_dir.clone().unwrap_or_else(|| out.join("tiles"));
    let tiles = valid_tiles(&data_dir)?;
    let data = tiles_to_dataset(&tiles, cfg.pipeline.image_channels, cfg.pipeline.window(), cfg.pipeline.incidence())
        .map_err(workflow_err)?;
    let mut trainer = match &cfg.training.resume {
        Some(path) => {
            let mut t = load_checkpoint(path).map_err(checkpoint_err)?.restore().map_err(train_err)?;
            t.config.steps = cfg.training.steps;
            log::info!("resuming from {} at step {}", path.display(), t.step);
            t
        }
        None => {
            let model = Denoiser::build(&cfg.denoiser(), cfg.training.seed).map_err(|e| CliError::Config(e.to_string()))?;
            Trainer::new(model, cfg.schedule()?, cfg.train_config()).map_err(train_err)?
        }
    };
    if trainer.model.config.image_channels != data.x0.shape()[1] {
        return Err(CliError::Config(format!(
            "model expects {} image channels, tiles give {}",
            trainer.model.config.image_channels,
            data.x0.shape()[1]
        )));
    }
    let ck_dir = out.join("checkpoints");
    fs::create_dir_all(&ck_dir)?;
    let log_path = out.join("loss.jsonl");
    let mut log_file = BufWriter::new(if cfg.training.resume.is_some() {
        fs::OpenOptions::new().create(true).append(true).open(&log_path)?
    } else {
        fs::File::create(&log_path)?
    });
    let every = cfg.training.checkpoint_every;
    let mut side_error: Option<CliError> = None;
    log::info!("training on {} tiles for {} steps", data.len(), trainer.config.steps);
    let result = trainer.run(&data, |tr, s| {
        if side_error.is_some() {
            return;
        }
        let line = serde_json::json!({
            "step": s.step, "lr": s.lr, "loss": s.loss, "mean_weight": s.mean_weight, "t": s.t,
        });
        if let Err(e) = writeln!(log_file, "{line}") {
            side_error = Some(e.into());
            return;
        }
        if tr.step % every == 0 || tr.step == tr.config.steps {
            log::info!("{s}");
            let p = ck_dir.join(format!("step_{:06}.hyck", tr.step));
            if let Err(e) = save_checkpoint(tr, &p) {
                side_error = Some(checkpoint_err(e));
            }
        }
    });
    log_file.flush()?;
    result.map_err(train_err)?;
    if let Some(e) = side_error {
        return Err(e);
    }
    save_checkpoint(&trainer, &out.join("model.hyck")).map_err(checkpoint_err)?;
    log::info!("final checkpoint -> {}", out.join("model.hyck").display());
    Ok(())
}

/// One condition per requested sample, with the tile it came from when any.
fn conditions(cfg: &RunConfig, out: &Path) -> Result<(Vec<Tensor>, Vec<Option<TilePatch>>), CliError> {
    let s = &cfg.sampling;
    let p = &cfg.pipeline;
    let range = p.incidence();
    let size = p.tile_size;
    let projector = EmbeddingProjector::new(cfg.simulator.projector_seed);
    let cond_err = |e: PipelineError| CliError::Data(format!("condition error: {e}"));
    let from_tiles = |tiles: Vec<TilePatch>| -> Result<(Vec<Tensor>, Vec<Option<TilePatch>>), CliError> {
        let mut conds = Vec::with_capacity(s.count);
        let mut src = Vec::with_capacity(s.count);
        for i in 0..s.count {
            let t = &tiles[i % tiles.len()];
            conds.push(tile_condition(t, range).map_err(cond_err)?);
            src.push(Some(t.clone()));
        }
        Ok((conds, src))
    };
    match s.source {
        ConditionSource::Tiles => {
            let dir = s.tiles_dir.clone().unwrap_or_else(|| out.join("tiles"));
            from_tiles(valid_tiles(&dir)?)
        }
        ConditionSource::EmbeddingFile => {
            let path = s.embedding_file.as_ref().expect("validated");
            let embs: Vec<Vec<f32>> = ingest_embedding_raster(path, RasterFormat::from_path(path), size, p.stride)
                .map_err(|e| match e {
                    PipelineError::Io(e) => CliError::Io(e.to_string()),
                    other => cond_err(other),
                })?
                .into_iter()
                .filter(|e| e.iter().all(|v| v.is_finite()))
                .collect();
            if embs.is_empty() {
                return Err(CliError::Data(format!("no finite {size}-pixel windows in {}", path.display())));
            }
            let inc = Tensor::full(&[size, size], s.incidence_deg as f32);
            let conds = (0..s.count)
                .map(|i| build_condition(&embs[i % embs.len()], &inc, range).map_err(cond_err))
                .collect::<Result<_, _>>()?;
            Ok((conds, vec![None; s.count]))
        }
        ConditionSource::Simulator => match s.class {
            Some(class) => {
                let c = uniform_condition(class, size, s.incidence_deg, &projector, range).map_err(workflow_err)?;
                Ok((vec![c; s.count], vec![None; s.count]))
            }
            None => {
                let table = BackscatterTable::default();
                let mut tiles = Vec::new();
                for i in 0..cfg.simulator.scenes {
                    let (_, scene_cfg) = cfg.simulator.scene(i);
                    let seed = s.seed.wrapping_add(i as u64);
                    let scene = generate_scene(seed, &scene_cfg).map_err(|e| CliError::Config(e.to_string()))?;
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let raster = render_stack(&scene, &table, &mut rng).map_err(workflow_err)?;
                    tiles.extend(tile_rendered(&scene, &raster, &projector, size, p.stride).map_err(workflow_err)?);
                    if tiles.len() >= s.count {
                        break;
                    }
                }
                if tiles.is_empty() {
                    return Err(CliError::Data("simulator produced no valid tiles".into()));
                }
                from_tiles(tiles)
            }
        },
    }
}

pub fn sample(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let s = &cfg.sampling;
    let ck_path = s.checkpoint.clone().unwrap_or_else(|| out.join("model.hyck"));
    let ck = load_checkpoint(&ck_path).map_err(checkpoint_err)?;
    let model = ck.model().map_err(checkpoint_err)?;
    let schedule = ck.schedule().map_err(checkpoint_err)?;
    let (conds, sources) = conditions(cfg, out)?;
    let want = [model.config.cond_channels, cfg.pipeline.tile_size, cfg.pipeline.tile_size];
    if let Some(c) = conds.iter().find(|c| c.shape() != want) {
        return Err(CliError::Data(format!("condition error: got {:?}, model expects {want:?}", c.shape())));
    }
    debug_assert_eq!(want[0], COND_CHANNELS);
    let size = cfg.pipeline.tile_size;
    let batch = stack(&conds).map_err(workflow_err)?;
    log::info!("sampling {} tiles with {:?}", s.count, s.sampler);
    let x = generate(&model, &schedule, Some(&batch), s.count, size, size, &s.sampler(), s.seed, s.batch)
        .map_err(workflow_err)?;
    let db = denormalize_sar(&x, cfg.pipeline.window()).map_err(pipeline_err)?;
    let staged = Staged::new(out.join("samples"))?;
    let previews = staged.tmp.join("previews");
    fs::create_dir_all(&previews)?;
    let plane = size * size;
    let mut tiles = Vec::with_capacity(s.count);
    for (i, src) in sources.iter().enumerate() {
        let g = unstack(&db, i);
        let mut sar = vec![NODATA; 3 * plane];
        sar[..g.numel()].copy_from_slice(g.data());
        match src {
            Some(t) => sar[2 * plane..].copy_from_slice(t.sar_channel(2).data()),
            None => sar[2 * plane..].fill(s.incidence_deg as f32),
        }
        let cond = &conds[i];
        let embedding = cond.data().chunks_exact(plane).take(COND_CHANNELS - 1).map(|c| c[0]).collect();
        let mut tile = TilePatch {
            optical: Tensor::zeros(&[OPTICAL_BANDS, size, size]),
            sar: Tensor::new(&[3, size, size], sar).map_err(|e| CliError::Data(e.to_string()))?,
            embedding: Some(embedding),
            geo_id: match src {
                Some(t) => format!("sample_{i:04}_{}", t.geo_id),
                None => format!("sample_{i:04}"),
            },
            valid: true,
            class_fractions: src.as_ref().and_then(|t| t.class_fractions),
        };
        if tile.class_fractions.is_none() {
            fractions_from_embedding(&mut tile);
        }
        write_png(&g, &previews.join(format!("{}.png", tile.geo_id)))?;
        tiles.push(tile);
    }
    write_tiles(&staged.tmp, &tiles)?;
    staged.commit()?;
    log::info!("{} samples -> {}", tiles.len(), out.join("samples").display());
    Ok(())
}

fn dominant_class(t: &TilePatch) -> Option<usize> {
    let f = t.class_fractions?;
    (0..5).max_by(|&a, &b| f[a].total_cmp(&f[b]))
}

/// Pairs in directory order when the counts match, otherwise by dominant
/// class when allowed.
fn pair_tiles<'a>(
    gen: &'a [TilePatch],
    real: &'a [TilePatch],
    class_matched: bool,
) -> Result<Vec<(&'a TilePatch, &'a TilePatch)>, CliError> {
    if gen.len() == real.len() && !class_matched {
        return Ok(gen.iter().zip(real).collect());
    }
    if !class_matched {
        return Err(CliError::Data(format!(
            "pairing error: {} generated tiles but {} real tiles; set eval.class_matched = true to pair by class",
            gen.len(),
            real.len()
        )));
    }
    let mut by_class: Vec<Vec<&TilePatch>> = vec![Vec::new(); 5];
    for r in real {
        if let Some(c) = dominant_class(r) {
            by_class[c].push(r);
        }
    }
    let mut next = [0usize; 5];
    gen.iter()
        .map(|g| {
            let c = dominant_class(g)
                .ok_or_else(|| CliError::Data(format!("pairing error: {} has no class fractions", g.geo_id)))?;
            let pool = &by_class[c];
            if pool.is_empty() {
                return Err(CliError::Data(format!("pairing error: no real tile of class {c} for {}", g.geo_id)));
            }
            let r = pool[next[c] % pool.len()];
            next[c] += 1;
            Ok((g, r))
        })
        .collect()
}

pub fn eval(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let gen_dir = cfg.eval.gen_dir.clone().unwrap_or_else(|| out.join("samples"));
    let real_dir = cfg.eval.real_dir.clone().unwrap_or_else(|| out.join("tiles"));
    let gen = valid_tiles(&gen_dir)?;
    let real = valid_tiles(&real_dir)?;
    let pairs = pair_tiles(&gen, &real, cfg.eval.class_matched)?;
    let window = cfg.pipeline.window();
    let mut held = Vec::with_capacity(pairs.len());
    for (g, r) in &pairs {
        if (g.height(), g.width()) != (r.height(), r.width()) {
            return Err(CliError::Data(format!("{} and {} differ in size", g.geo_id, r.geo_id)));
        }
        let gi = tile_image(g, 1, window).map_err(workflow_err)?;
        let ri = tile_image(r, 1, window).map_err(workflow_err)?;
        held.push((gi, g.sar_channel(0), ri, r.sar_channel(0)));
    }
    let gen_in: Vec<PairInput> = pairs
        .iter()
        .zip(&held)
        .map(|((g, _), h)| PairInput { name: g.geo_id.clone(), norm: &h.0, db: &h.1 })
        .collect();
    let real_in: Vec<PairInput> = pairs
        .iter()
        .zip(&held)
        .map(|((_, r), h)| PairInput { name: r.geo_id.clone(), norm: &h.2, db: &h.3 })
        .collect();
    let (report, scores) = evaluate_pairs(&gen_in, &real_in).map_err(metrics_err)?;
    report.write_jsonl(fs::File::create(out.join("report.jsonl"))?).map_err(metrics_err)?;
    let mut pf = BufWriter::new(fs::File::create(out.join("pairs.jsonl"))?);
    for s in &scores {
        serde_json::to_writer(&mut pf, s).map_err(|e| CliError::Io(e.to_string()))?;
        pf.write_all(b"\n")?;
    }
    pf.flush()?;
    MetricsReport::read_jsonl(std::io::BufReader::new(fs::File::open(out.join("report.jsonl"))?)).map_err(metrics_err)?;
    println!("{report}");
    Ok(())
}
