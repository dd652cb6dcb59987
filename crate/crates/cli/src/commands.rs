use std::fs;
use std::path::{Path, PathBuf};

use chromaholo::dataset::{build_dataset, generate_procedural_target, import_rgbd, load_corpus, BuildSpec};
use chromaholo::estimator::{load_checkpoint, load_model, save_checkpoint, train_observed, TrainingItem, TrainingState};
use chromaholo::evaluate::run_convergence_experiment;
use chromaholo::holo::{optimize_multicolor, optimize_single_color, PowerInit};
use chromaholo::imageio::save_preview_png;
use chromaholo::optics::raw::{self, BlobKind};
use chromaholo::optics::{apply_linear_grating, reconstruct_intensity};
use chromaholo::{Error, TargetScene};
use ndarray::{s, Array2, Array3, Axis};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult, EXIT_PARTIAL};

const CHECKPOINT_DIR: &str = "checkpoint";

fn required(value: &Option<PathBuf>, flag: &str) -> CliResult<PathBuf> {
    value.clone().ok_or_else(|| CliError::Usage(format!("{flag} is required")))
}

fn write_json<S: Serialize + ?Sized>(path: &Path, value: &S) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)? + "\n";
    fs::write(path, text).map_err(|e| Error::Io { path: path.into(), source: e })?;
    Ok(())
}

pub fn dataset_gen(flags: RunConfig, file: Option<&Path>) -> CliResult<i32> {
    let cfg = RunConfig::resolve(flags, file, RunConfig::defaults())?;
    let out = cfg.out()?;
    let spec = BuildSpec {
        count: cfg.count.expect("resolved"),
        resolution: cfg.resolution.expect("resolved"),
        config: cfg.optimization()?,
        wavelengths: cfg.wavelengths(),
        pitch: cfg.pitch(),
        plane_distances: cfg.plane_distances(),
        jobs: cfg.jobs(),
    };
    cfg.echo(&out)?;
    let summary = build_dataset(&spec, &out)?;
    let manifest = fs::read_to_string(out.join("manifest.json")).map_err(|e| Error::Io { path: out.join("manifest.json"), source: e })?;
    println!("{}", manifest.trim_end());
    println!(
        "built {}/{} records, mean final loss {:.6}, {:.1} s",
        summary.built.len(),
        summary.requested,
        summary.mean_final_loss,
        summary.wall_time_s
    );
    for (id, why) in &summary.failures {
        eprintln!("failed {id}: {why}");
    }
    Ok(if summary.failures.is_empty() { 0 } else { EXIT_PARTIAL })
}

#[derive(Serialize)]
struct TrainingSummary {
    epochs: usize,
    train_items: usize,
    val_items: usize,
    /// Held-out loss of the model this run started from.
    initial_val_loss: Option<f64>,
    final_train_loss: Option<f64>,
    final_val_loss: Option<f64>,
}

/// Accept either a checkpoint directory or a train output directory holding one.
fn checkpoint_dir(path: &Path) -> PathBuf {
    if path.join("checkpoint.json").exists() {
        path.to_path_buf()
    } else {
        path.join(CHECKPOINT_DIR)
    }
}

pub fn train(flags: RunConfig, file: Option<&Path>) -> CliResult<i32> {
    if flags.epochs == Some(0) {
        return Err(CliError::Usage("--epochs must be at least 1".into()));
    }
    let resume = flags.resume.clone().or(match file {
        Some(p) => RunConfig::load(p)?.resume,
        None => None,
    });
    let (state, base) = match &resume {
        Some(path) => {
            let (state, tc) = load_checkpoint(&checkpoint_dir(path))?;
            let layer = RunConfig {
                epochs: Some(tc.epochs),
                train_lr_start: Some(tc.lr_start),
                train_lr_end: Some(tc.lr_end),
                batch_size: Some(tc.batch_size),
                train_seed: Some(tc.seed),
                val_fraction: Some(tc.val_fraction),
                ..Default::default()
            };
            (Some(state), layer.over(RunConfig::defaults()))
        }
        None => (None, RunConfig::defaults()),
    };
    let cfg = RunConfig::resolve(flags, file, base)?;
    let out = cfg.out()?;
    let corpus = required(&cfg.corpus, "--corpus")?;
    let tc = cfg.training()?;
    let state = state.unwrap_or_else(|| TrainingState::fresh(tc.seed));
    if state.epoch >= tc.epochs {
        return Err(CliError::Usage(format!("checkpoint already has {} epochs; raise --epochs", state.epoch)));
    }

    let (_, records) = load_corpus(&corpus)?;
    if records.is_empty() {
        return Err(Error::EmptyDataset.into());
    }
    let items: Vec<TrainingItem> = records
        .into_iter()
        .map(|r| TrainingItem { id: r.meta.id.clone(), image: r.target, powers: r.powers })
        .collect();
    log::info!("training on {} records from epoch {} to {}", items.len(), state.epoch, tc.epochs);

    cfg.echo(&out)?;
    let ckpt = out.join(CHECKPOINT_DIR);
    let mut on_epoch = |s: &TrainingState| save_checkpoint(&ckpt, s, &tc);
    let outcome = train_observed(state, &items, &tc, tc.epochs, &mut on_epoch)?;

    let log = &outcome.state.log;
    write_json(&out.join("training_log.json"), log)?;
    let last = log.last();
    let summary = TrainingSummary {
        epochs: outcome.state.epoch,
        train_items: outcome.split.train.len(),
        val_items: outcome.split.val.len(),
        initial_val_loss: outcome.initial_val_loss,
        final_train_loss: last.map(|e| e.train_loss),
        final_val_loss: last.and_then(|e| e.val_loss),
    };
    write_json(&out.join("training_summary.json"), &summary)?;
    match (summary.final_train_loss, summary.final_val_loss) {
        (Some(t), Some(v)) => println!("final train loss {t:.6}, val loss {v:.6}"),
        (Some(t), None) => println!("final train loss {t:.6}, no validation split"),
        _ => println!("no epochs run"),
    }
    Ok(0)
}

/// Load a target, with optional depth, as a scene on the configured planes.
fn load_scene(cfg: &RunConfig) -> CliResult<TargetScene> {
    let target = required(&cfg.target, "TARGET")?;
    let (image, depth) = import_rgbd(&target, cfg.depth.as_deref())?;
    Ok(TargetScene::from_depth(image, depth.view(), cfg.plane_distances(), cfg.pitch())?)
}

#[derive(Serialize)]
struct InitRecord<'a> {
    initial_powers: Vec<Vec<f64>>,
    initial_phase_hash: &'a str,
    initial_loss: f64,
    warm_start: bool,
}

pub fn optimize(flags: RunConfig, file: Option<&Path>) -> CliResult<i32> {
    let cfg = RunConfig::resolve(flags, file, RunConfig::defaults())?;
    let out = cfg.out()?;
    let config = cfg.optimization()?;
    let wavelengths = cfg.wavelengths();
    let scene = load_scene(&cfg)?;
    let single = cfg.single_color.unwrap_or(false);
    if single && cfg.model.is_some() {
        return Err(CliError::Usage("--single-color and --warm-start are exclusive".into()));
    }
    let init = match &cfg.model {
        Some(ckpt) => {
            let model = load_model(&checkpoint_dir(ckpt))?;
            PowerInit::Given(model.estimate_powers(scene.intensity())?)
        }
        None => PowerInit::Uniform,
    };
    cfg.echo(&out)?;
    let result = if single {
        optimize_single_color(&scene, &wavelengths, &config)?
    } else {
        optimize_multicolor(&scene, &wavelengths, &config, &init)?
    };
    result.save(&out, &config, scene.pitch())?;
    write_json(
        &out.join("init.json"),
        &InitRecord {
            initial_powers: result.initial_powers.to_rows(),
            initial_phase_hash: &result.initial_phase_hash,
            initial_loss: result.initial_loss,
            warm_start: cfg.model.is_some(),
        },
    )?;

    let peak = config.scale as f32;
    let (h, w) = scene.dim();
    let mut composite = Array3::<f32>::zeros((wavelengths.len(), h, w));
    for (k, (&d, mask)) in scene.plane_distances().iter().zip(scene.plane_masks()).enumerate() {
        let recon = reconstruct_intensity(&result.holograms, &result.powers, &wavelengths, d, scene.pitch())?;
        save_preview_png(&out.join(format!("reconstruction_plane{k}.png")), &recon, peak)?;
        for ((y, x), _) in mask.indexed_iter().filter(|(_, &m)| m) {
            composite.slice_mut(s![.., y, x]).assign(&recon.slice(s![.., y, x]));
        }
    }
    save_preview_png(&out.join("reconstruction.png"), &composite, peak)?;

    if cfg.export_grating.unwrap_or(false) {
        let phases = result.holograms.phases();
        let mut grated = Array3::<f32>::zeros(phases.dim());
        for (f, phase) in phases.outer_iter().enumerate() {
            grated.index_axis_mut(Axis(0), f).assign(&apply_linear_grating(phase));
        }
        raw::save_phases(&out.join("phases_grating.f32"), &grated, scene.pitch())?;
    }
    println!(
        "initial loss {:.6}, final loss {:.6} after {} steps",
        result.initial_loss,
        result.final_loss(),
        result.history.len()
    );
    Ok(0)
}

pub fn estimate(flags: RunConfig, file: Option<&Path>) -> CliResult<i32> {
    let cfg = RunConfig::resolve(flags, file, RunConfig::defaults())?;
    let out = cfg.out()?;
    let model = load_model(&checkpoint_dir(&required(&cfg.model, "--model")?))?;
    let scene = load_scene(&cfg)?;
    let powers = model.estimate_powers(scene.intensity())?;
    cfg.echo(&out)?;
    write_json(&out.join("powers.json"), &powers)?;
    for row in powers.to_rows() {
        println!("{}", row.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(" "));
    }
    Ok(0)
}

pub fn eval(flags: RunConfig, file: Option<&Path>) -> CliResult<i32> {
    let cfg = RunConfig::resolve(flags, file, RunConfig::defaults())?;
    let out = cfg.out()?;
    let experiment = cfg.experiment()?;
    let model = load_model(&checkpoint_dir(&required(&cfg.model, "--model")?))?;
    let procedural = cfg.procedural.expect("resolved");
    let targets: Vec<(String, TargetScene)> = match (&cfg.targets, procedural) {
        (Some(_), n) if n > 0 => return Err(CliError::Usage("--targets and --procedural are exclusive".into())),
        (Some(dir), _) => {
            let (_, records) = load_corpus(dir)?;
            records.into_iter().map(|r| Ok((r.meta.id.clone(), r.scene()?))).collect::<chromaholo::Result<_>>()?
        }
        (None, 0) => return Err(CliError::Usage("one of --targets or --procedural is required".into())),
        (None, n) => {
            let seed0 = cfg.target_seed.expect("resolved");
            let res = cfg.resolution.expect("resolved");
            (0..n as u64)
                .map(|i| {
                    let (image, depth) = generate_procedural_target(seed0 + i, res, res)?;
                    let scene = TargetScene::from_depth(image, depth.view(), cfg.plane_distances(), cfg.pitch())?;
                    Ok((format!("heldout_{:05}", seed0 + i), scene))
                })
                .collect::<chromaholo::Result<_>>()?
        }
    };
    if targets.is_empty() {
        return Err(Error::EmptyDataset.into());
    }
    cfg.echo(&out)?;
    let report = run_convergence_experiment(&targets, &model, &experiment)?;
    report.save(&out)?;
    for agg in &report.aggregate {
        println!(
            "step {}: cold {:.6} warm {:.6}, warm not worse on {:.0}% of targets",
            agg.step,
            agg.cold_loss,
            agg.warm_loss,
            100.0 * agg.warm_not_worse
        );
    }
    for (id, why) in &report.failures {
        eprintln!("failed {id}: {why}");
    }
    Ok(if report.complete() { 0 } else { EXIT_PARTIAL })
}

/// Map values to `[0, 1]` by the array's own maximum.
fn normalized(values: &Array2<f32>) -> Array2<f32> {
    let max = values.iter().cloned().fold(0.0f32, f32::max);
    if max > 0.0 {
        values.mapv(|v| v / max)
    } else {
        values.clone()
    }
}

/// Wrap a phase into `[0, 1)`.
fn phase_gray(values: &Array2<f32>) -> Array2<f32> {
    let tau = std::f32::consts::TAU;
    values.mapv(|v| v.rem_euclid(tau) / tau)
}

/// Lay single-channel tiles side by side.
fn tile(tiles: &[Array2<f32>]) -> Array3<f32> {
    let (h, w) = tiles[0].dim();
    let mut out = Array3::zeros((1, h, w * tiles.len()));
    for (i, t) in tiles.iter().enumerate() {
        out.slice_mut(s![0, .., i * w..(i + 1) * w]).assign(t);
    }
    out
}

pub fn render(flags: RunConfig, file: Option<&Path>) -> CliResult<i32> {
    let cfg = RunConfig::resolve(flags, file, RunConfig::defaults())?;
    let out = cfg.out()?;
    let input = required(&cfg.input, "INPUT")?;
    let (sidecar, values) = raw::read_blob(&input)?;
    let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("render").to_string();
    let shape = sidecar.shape.clone();
    let planes = |values: Vec<f32>| -> CliResult<Vec<Array2<f32>>> {
        let (n, h, w) = match shape.as_slice() {
            [h, w] => (1, *h, *w),
            [n, h, w] => (*n, *h, *w),
            other => return Err(CliError::Data(format!("cannot render shape {other:?}"))),
        };
        let stack = Array3::from_shape_vec((n, h, w), values).map_err(|e| CliError::Data(e.to_string()))?;
        Ok(stack.outer_iter().map(|p| p.to_owned()).collect())
    };
    cfg.echo(&out)?;
    let mut written = Vec::new();
    match sidecar.kind {
        BlobKind::Phase => {
            let tiles: Vec<_> = planes(values)?.iter().map(phase_gray).collect();
            let path = out.join(format!("{stem}.png"));
            save_preview_png(&path, &tile(&tiles), 1.0)?;
            written.push(path);
        }
        BlobKind::Real => {
            let stack = planes(values)?;
            let image = if stack.len() == 3 {
                let max = stack.iter().flat_map(|p| p.iter()).cloned().fold(0.0f32, f32::max);
                let mut rgb = Array3::zeros((3, stack[0].nrows(), stack[0].ncols()));
                for (c, p) in stack.iter().enumerate() {
                    rgb.index_axis_mut(Axis(0), c).assign(p);
                }
                (rgb, max.max(f32::MIN_POSITIVE))
            } else {
                (tile(&stack.iter().map(normalized).collect::<Vec<_>>()), 1.0)
            };
            let path = out.join(format!("{stem}.png"));
            save_preview_png(&path, &image.0, image.1)?;
            written.push(path);
        }
        BlobKind::Complex => {
            let (re, im): (Vec<f32>, Vec<f32>) = values.chunks_exact(2).map(|c| (c[0], c[1])).unzip();
            let re = planes(re)?;
            let im = planes(im)?;
            let amp: Vec<_> = re.iter().zip(&im).map(|(r, i)| normalized(&ndarray::Zip::from(r).and(i).map_collect(|a, b| a.hypot(*b)))).collect();
            let arg: Vec<_> = re.iter().zip(&im).map(|(r, i)| phase_gray(&ndarray::Zip::from(r).and(i).map_collect(|a, b| b.atan2(*a)))).collect();
            for (suffix, tiles) in [("amplitude", amp), ("phase", arg)] {
                let path = out.join(format!("{stem}_{suffix}.png"));
                save_preview_png(&path, &tile(&tiles), 1.0)?;
                written.push(path);
            }
        }
    }
    for p in written {
        println!("{}", p.display());
    }
    Ok(0)
}
