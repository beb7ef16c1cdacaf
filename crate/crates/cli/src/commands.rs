use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use kbdd::autodiff::{write_checkpoint, LrSchedule};
use kbdd::evaluation::{
    confusion, cross_resolution_compare, density_difference, error_density, metrics, ConfusionMatrix,
};
use kbdd::features::StaticGrids;
use kbdd::grid_io::{
    compute_band_statistics, generate_synthetic_dataset, load_labels, load_scene, write_labels, write_plane,
    CloudLabelGrid, DatasetManifest, SplitTag, SynthConfig,
};
use kbdd::inference::{predict_scene, scene_is_night, TiledOptions};
use kbdd::models::CldNet;
use kbdd::training::{fit, load_statics, load_trained, InputSpec, Mode, TrainConfig, EPOCH_LOG_HEADER};

use crate::config::FlatConfig;
use crate::palette::RenderPalette;
use crate::{Cli, Command};

/// Default inference halo in pixels.
pub const DEFAULT_HALO: usize = 32;
/// Default tile size in pixels.
pub const DEFAULT_TILE: usize = 480;

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => FlatConfig::load(p)?,
        None => FlatConfig::default(),
    };
    let mode = cli.mode.as_deref().map(str::parse::<Mode>).transpose()?;
    fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    match &cli.command {
        Command::Stats { manifest, bins } => stats(cli, &cfg, manifest, *bins),
        Command::Synth => synth(cli, &cfg),
        Command::Train { manifest } => train(cli, &cfg, mode, manifest),
        Command::Predict {
            scenes,
            manifest,
            night_checkpoint,
            statics,
            probability,
        } => {
            let mut all = scenes.clone();
            if let Some(m) = manifest {
                let m = DatasetManifest::load(m)?;
                all.extend(m.with_split(SplitTag::Test).into_iter().map(|e| e.scene.clone()));
            }
            if all.is_empty() {
                bail!("no scenes to predict");
            }
            predict(cli, &cfg, mode, &all, night_checkpoint.as_deref(), statics.as_deref(), *probability)
        }
        Command::Evaluate {
            pred,
            reference,
            manifest,
            pred_dir,
            baseline,
            cells,
        } => {
            let mut pairs: Vec<(PathBuf, PathBuf)> = pred.iter().cloned().zip(reference.iter().cloned()).collect();
            if pred.len() != reference.len() {
                bail!("--pred and --reference must be given the same number of times");
            }
            if let (Some(m), Some(dir)) = (manifest, pred_dir) {
                for e in DatasetManifest::load(m)?.with_split(SplitTag::Test) {
                    pairs.push((dir.join(prediction_name(&e.scene)), e.labels.clone()));
                }
            }
            if pairs.is_empty() {
                bail!("nothing to evaluate");
            }
            evaluate(cli, &cfg, &pairs, baseline.as_deref(), *cells)
        }
        Command::CompareResolution { pred, reference } => compare_resolution(cli, &cfg, pred, reference),
        Command::Render { labels, png } => render(cli, &cfg, labels, png.as_deref()),
    }
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| "scene".into(), |s| s.to_string_lossy().into_owned())
}

fn prediction_name(scene: &Path) -> String {
    format!("{}.labels.raster", stem(scene))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn stats(cli: &Cli, cfg: &FlatConfig, manifest: &Path, bins: usize) -> Result<()> {
    cfg.check_keys(&["bins"])?;
    let bins = cfg.get_or("bins", bins)?;
    let manifest = DatasetManifest::load(manifest)?;
    if manifest.is_empty() {
        bail!("manifest has no scenes");
    }
    let scenes = manifest
        .entries
        .iter()
        .map(|e| load_scene(&e.scene))
        .collect::<Result<Vec<_>, _>>()?;
    let st = compute_band_statistics(&scenes, bins)?;
    let mut ranges = String::from("band,min,max,raw_min,raw_max,observed_min,observed_max,coverage,samples,degenerate\n");
    for b in &st.bands {
        if b.degenerate {
            log::warn!("band {} is constant; its range is degenerate", b.band);
        }
        writeln!(
            ranges,
            "{},{},{},{},{},{},{},{:.6},{},{}",
            b.band, b.range.0, b.range.1, b.raw_range.0, b.raw_range.1, b.observed.0, b.observed.1, b.coverage,
            b.samples, b.degenerate
        )?;
        let mut hist = String::from("low,high,count,cumulative_pct\n");
        for i in 0..b.counts.len() {
            writeln!(hist, "{},{},{},{:.6}", b.edges[i], b.edges[i + 1], b.counts[i], b.cumulative_pct[i])?;
        }
        write_text(&cli.out.join(format!("histogram_{}.csv", b.band)), &hist)?;
    }
    write_text(&cli.out.join("ranges.csv"), &ranges)?;
    log::info!("wrote ranges.csv and {} histograms to {}", st.bands.len(), cli.out.display());
    Ok(())
}

fn synth(cli: &Cli, cfg: &FlatConfig) -> Result<()> {
    cfg.check_keys(&[
        "rows",
        "cols",
        "train_scenes",
        "test_scenes",
        "night_fraction",
        "noise_sigma",
        "regions",
        "cell",
        "origin_lat",
        "origin_lon",
        "seed",
    ])?;
    let d = SynthConfig::default();
    let sc = SynthConfig {
        rows: cfg.get_or("rows", d.rows)?,
        cols: cfg.get_or("cols", d.cols)?,
        train_scenes: cfg.get_or("train_scenes", d.train_scenes)?,
        test_scenes: cfg.get_or("test_scenes", d.test_scenes)?,
        night_fraction: cfg.get_or("night_fraction", d.night_fraction)?,
        noise_sigma: cfg.get_or("noise_sigma", d.noise_sigma)?,
        regions: cfg.get_or("regions", d.regions)?,
        cell: cfg.get_or("cell", d.cell)?,
        origin_lat: cfg.get_or("origin_lat", d.origin_lat)?,
        origin_lon: cfg.get_or("origin_lon", d.origin_lon)?,
        ..d
    };
    let seed = cli.seed.map_or_else(|| cfg.get_or("seed", 0u64), Ok)?;
    let m = generate_synthetic_dataset(&sc, seed, &cli.out)?;
    log::info!("wrote {} scenes and manifest.csv to {}", m.len(), cli.out.display());
    Ok(())
}

fn parse_schedule(text: &str) -> Result<LrSchedule> {
    let mut steps = Vec::new();
    for part in text.split(',') {
        let (e, r) = part
            .split_once(':')
            .with_context(|| format!("schedule step {part:?} must be epoch:rate"))?;
        steps.push((e.trim().parse()?, r.trim().parse()?));
    }
    if steps.is_empty() || !steps.windows(2).all(|w: &[(usize, f64)]| w[0].0 < w[1].0) {
        bail!("schedule epochs must increase");
    }
    Ok(LrSchedule { steps })
}

pub const TRAIN_KEYS: &[&str] = &[
    "tile_size",
    "max_epochs",
    "patience",
    "min_delta",
    "folds",
    "validation_fold",
    "seed",
    "mode",
    "aux",
    "static_dir",
    "cache_features",
    "schedule",
    "stem_width",
    "u_widths",
    "bridge_width",
    "aspp_branch_width",
    "aspp_width",
    "aspp_dilations",
    "fuse_width",
];

pub fn train_config(cli: &Cli, cfg: &FlatConfig, mode: Option<Mode>, manifest: &Path) -> Result<TrainConfig> {
    cfg.check_keys(TRAIN_KEYS)?;
    let d = TrainConfig::default();
    let mut model = d.model.clone();
    model.stem_width = cfg.get_or("stem_width", model.stem_width)?;
    if let Some(w) = cfg.get_list("u_widths")? {
        model.u_widths = w;
    }
    model.bridge_width = cfg.get_or("bridge_width", model.bridge_width)?;
    model.aspp_branch_width = cfg.get_or("aspp_branch_width", model.aspp_branch_width)?;
    model.aspp_width = cfg.get_or("aspp_width", model.aspp_width)?;
    if let Some(ds) = cfg.get_list::<usize>("aspp_dilations")? {
        model.aspp_dilations = ds
            .try_into()
            .map_err(|v: Vec<usize>| anyhow::anyhow!("aspp_dilations needs 4 values, got {}", v.len()))?;
    }
    model.fuse_width = cfg.get_or("fuse_width", model.fuse_width)?;
    let mode = match mode {
        Some(m) => m,
        None => cfg.get_or("mode", d.mode)?,
    };
    let static_dir = match cfg.get_str("static_dir") {
        Some(s) => Some(PathBuf::from(s)),
        None => manifest.parent().map(Path::to_path_buf),
    };
    let tc = TrainConfig {
        tile_size: cli.tile.map_or_else(|| cfg.get_or("tile_size", d.tile_size), Ok)?,
        max_epochs: cfg.get_or("max_epochs", d.max_epochs)?,
        patience: cfg.get_or("patience", d.patience)?,
        min_delta: cfg.get_or("min_delta", d.min_delta)?,
        folds: cfg.get_or("folds", d.folds)?,
        validation_fold: cfg.get_or("validation_fold", d.validation_fold)?,
        seed: cli.seed.map_or_else(|| cfg.get_or("seed", d.seed), Ok)?,
        mode,
        aux: cfg.get("aux")?,
        model,
        schedule: cfg.get_str("schedule").map(parse_schedule).transpose()?.unwrap_or(d.schedule),
        static_dir,
        checkpoint_path: None,
        cache_features: cfg.get_or("cache_features", d.cache_features)?,
    };
    tc.validate()?;
    Ok(tc)
}

fn train(cli: &Cli, cfg: &FlatConfig, mode: Option<Mode>, manifest_path: &Path) -> Result<()> {
    let tc = train_config(cli, cfg, mode, manifest_path)?;
    let manifest = DatasetManifest::load(manifest_path)?;
    let ckpt_path = cli.checkpoint.clone().unwrap_or_else(|| cli.out.join("model.ckpt"));
    let params = CldNet::new(tc.model_config(), tc.seed)?.parameter_count();
    log::info!("mode {}, {} input channels, {params} trainable parameters", tc.mode, tc.model_config().in_channels);
    let tc = TrainConfig {
        checkpoint_path: Some(ckpt_path.clone()),
        ..tc
    };
    let r = fit(&tc, &manifest)?;
    write_checkpoint(&ckpt_path, &r.best_checkpoint)?;
    let mut log_text = format!("{EPOCH_LOG_HEADER}\n");
    for e in &r.epochs {
        writeln!(log_text, "{e}")?;
    }
    write_text(&cli.out.join("train_log.tsv"), &log_text)?;
    let mut batch_text = String::from("epoch\tbatch\tscene\tloss\taccuracy\n");
    for b in &r.batches {
        writeln!(batch_text, "{}\t{}\t{}\t{:.6}\t{:.6}", b.epoch, b.batch, b.scene, b.loss, b.accuracy)?;
    }
    write_text(&cli.out.join("batch_log.tsv"), &batch_text)?;
    log::info!(
        "{} epochs{}, best validation loss {:.5}; checkpoint {}",
        r.epochs_run,
        if r.stopped_early { " (early stop)" } else { "" },
        r.last.stopper.best,
        ckpt_path.display()
    );
    Ok(())
}

struct Loaded {
    model: CldNet,
    spec: InputSpec,
    mode: Mode,
}

fn load_model(path: &Path) -> Result<Loaded> {
    if !path.exists() {
        bail!("checkpoint {} not found", path.display());
    }
    let (model, spec, mode) = load_trained(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(Loaded { model, spec, mode })
}

fn predict(
    cli: &Cli,
    cfg: &FlatConfig,
    mode: Option<Mode>,
    scenes: &[PathBuf],
    night_checkpoint: Option<&Path>,
    statics_dir: Option<&Path>,
    probability: bool,
) -> Result<()> {
    cfg.check_keys(&["tile", "halo"])?;
    let day_path = cli.checkpoint.as_deref().context("predict needs --checkpoint")?;
    let day = load_model(day_path)?;
    let night = night_checkpoint.map(load_model).transpose()?;
    if let Some(m) = mode {
        let available = [Some(day.mode), night.as_ref().map(|n| n.mode)];
        if !available.contains(&Some(m)) {
            bail!("no loaded checkpoint was trained in mode {m}");
        }
    }
    let tile = cli.tile.map_or_else(|| cfg.get_or("tile", DEFAULT_TILE), Ok)?;
    let halo = cli.halo.map_or_else(|| cfg.get_or("halo", DEFAULT_HALO), Ok)?;
    for m in std::iter::once(&day).chain(night.as_ref()) {
        let need = m.model.config().required_halo();
        if halo < need {
            log::warn!(
                "halo {halo} is below the {need}-pixel receptive radius of the {} model; tile seams may differ from an untiled pass",
                m.mode
            );
        }
    }
    let opts = TiledOptions::new(tile, halo);
    for path in scenes {
        let scene = load_scene(path)?;
        let is_night = scene_is_night(&scene);
        let chosen = match (mode, &night) {
            (Some(m), Some(n)) if n.mode == m => n,
            (Some(_), _) => &day,
            (None, Some(n)) if is_night => n,
            _ => &day,
        };
        let statics: Option<StaticGrids> = match statics_dir {
            Some(d) => load_statics(d)?,
            None => path.parent().map(load_statics).transpose()?.flatten(),
        };
        let p = predict_scene(&chosen.model, &chosen.spec, &scene, statics.as_ref(), opts)
            .with_context(|| format!("predicting {}", path.display()))?;
        for w in &p.warnings {
            log::warn!("{}: {w}", path.display());
        }
        let grid = CloudLabelGrid {
            geometry: scene.geometry,
            labels: p.labels,
        };
        let out = cli.out.join(prediction_name(path));
        write_labels(&out, &grid)?;
        if probability {
            let prob = cli.out.join(format!("{}.probability.raster", stem(path)));
            write_plane(&prob, scene.geometry, "max_probability", &p.max_probability, None)?;
        }
        log::info!(
            "{} ({}, {} model) -> {}",
            path.display(),
            if is_night { "night" } else { "day" },
            chosen.mode,
            out.display()
        );
    }
    Ok(())
}

fn evaluate(cli: &Cli, cfg: &FlatConfig, pairs: &[(PathBuf, PathBuf)], baseline: Option<&Path>, cells: usize) -> Result<()> {
    cfg.check_keys(&["cells"])?;
    let cells = cfg.get_or("cells", cells)?;
    if baseline.is_some() && pairs.len() != 1 {
        bail!("--baseline needs exactly one prediction/reference pair");
    }
    let mut total = ConfusionMatrix::default();
    for (pred_path, ref_path) in pairs {
        let pred = load_labels(pred_path)?;
        let reference = load_labels(ref_path)?;
        let cm = confusion(&pred, &reference).with_context(|| format!("comparing {}", pred_path.display()))?;
        total.merge(&cm);
        let density = error_density(&pred, &reference, cells, cells)?;
        let name = format!("{}.density.raster", stem(pred_path).trim_end_matches(".labels"));
        write_plane(cli.out.join(name), density.geometry, "error_density", &density.to_plane(), None)?;
        if let Some(b) = baseline {
            let base = load_labels(b)?;
            let other = error_density(&base, &reference, cells, cells)?;
            let diff = density_difference(&density, &other)?;
            write_plane(cli.out.join("density_difference.raster"), density.geometry, "error_density_difference", &diff, None)?;
        }
    }
    let report = metrics(&total);
    write_text(&cli.out.join("metrics.txt"), &report.to_key_value())?;
    write_text(&cli.out.join("confusion.csv"), &total.to_csv())?;
    log::info!(
        "{} labeled pixels, accuracy {:.5}, f1_macro {:.5}",
        report.total,
        report.accuracy,
        report.f1_macro
    );
    println!("accuracy={:.6}", report.accuracy);
    Ok(())
}

fn compare_resolution(cli: &Cli, cfg: &FlatConfig, pred: &Path, reference: &Path) -> Result<()> {
    cfg.check_keys(&[])?;
    let rep = cross_resolution_compare(&load_labels(pred)?, &load_labels(reference)?)?;
    write_text(&cli.out.join("low2high.txt"), &rep.low2high.to_key_value())?;
    write_text(&cli.out.join("high2low.txt"), &rep.high2low.to_key_value())?;
    println!("low2high accuracy={:.6}", rep.low2high.accuracy);
    println!("high2low accuracy={:.6}", rep.high2low.accuracy);
    Ok(())
}

fn render(cli: &Cli, cfg: &FlatConfig, labels: &Path, png: Option<&Path>) -> Result<()> {
    cfg.check_keys(&["palette.*"])?;
    let palette = RenderPalette::from_config(cfg)?;
    let grid = load_labels(labels)?;
    let (w, h) = (grid.geometry.cols as u32, grid.geometry.rows as u32);
    let img = image::RgbImage::from_fn(w, h, |x, y| image::Rgb(palette.color(grid.labels.get(y as usize, x as usize))));
    let out = png.map_or_else(
        || cli.out.join(format!("{}.png", stem(labels).trim_end_matches(".labels"))),
        Path::to_path_buf,
    );
    img.save(&out).with_context(|| format!("writing {}", out.display()))?;
    log::info!("wrote {}", out.display());
    Ok(())
}
