//! Experiment harness: renders synthetic scenes, simulates captures and
//! reconstructs normals, learns display patterns, and sweeps experiment
//! grids into report tables. One JSON config drives every subcommand;
//! every run with a fixed seed is byte-deterministic.

mod config;
mod report;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use ndarray::{Array2, Array3, Axis};
use rayon::prelude::*;
use serde_json::json;

use displaystereo::export;
use displaystereo::io as tio;
use displaystereo::learning::{self, PatternFamily, TrainingEntry, TrainingSet};
use displaystereo::lens::{self, CameraModel, Interp};
use displaystereo::scene::{self, AlbedoMap, PatternSet, SceneKind};
use displaystereo::sensor::{self, LdrFrame, NoiseModel};
use displaystereo::stereo::{self, AngularError, CaptureSet, SolveOptions};
use displaystereo::{
    presets, CameraModelF64, DisplayGeometryF64, ExposureStackF64, LightFieldF64, PatternSetF64,
    RadianceImageF64, SceneMeshF64,
};

use config::{ExperimentConfig, SceneConfig, SolverChoice};
use report::{sig4, Cell, ReportTable};

#[derive(Parser)]
#[command(
    name = "displaystereo",
    version,
    about = "Display photometric stereo experiment harness"
)]
struct Cli {
    /// Experiment config JSON; built-in defaults when absent.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overrides the config output directory (default "out").
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate scenes; write basis, normal, albedo and light tensors.
    Render,
    /// Simulate captures through the sensor and reconstruct normal maps.
    Reconstruct,
    /// Learn display patterns on the configured scenes.
    Learn,
    /// Run a learn+evaluate grid and emit a report table.
    Sweep {
        /// Grid dimension: decay interval or pattern family.
        #[arg(long, value_enum, default_value_t = SweepAxis::Family)]
        axis: SweepAxis,
    },
    /// Merge a bracketed LDR stack (manifest JSON) into radiance.
    MergeHdr {
        /// Stack manifest listing frame tensors and exposure times.
        #[arg(long, value_name = "MANIFEST")]
        stack: PathBuf,
    },
    /// Remove lens distortion from an image tensor.
    Undistort {
        /// Input image tensor, H x W x 3.
        #[arg(long, value_name = "TENSOR")]
        image: PathBuf,
        /// Camera model JSON with distortion coefficients.
        #[arg(long, value_name = "JSON")]
        camera: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SweepAxis {
    Alpha,
    Family,
}

#[derive(Debug)]
enum CliError {
    Config(String),
    Runtime(String),
}

impl From<displaystereo::Error> for CliError {
    fn from(e: displaystereo::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

fn main() {
    env_logger::Builder::from_default_env()
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(()) => 0,
        Err(CliError::Config(msg)) => {
            eprintln!("config error: {msg}");
            2
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            3
        }
    };
    std::process::exit(code);
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    }
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p).map_err(CliError::Config)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.out_dir = Some(out);
    }
    let out = cfg
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("out"));

    match cli.command {
        Command::Render => cmd_render(&cfg, &out),
        Command::Reconstruct => cmd_reconstruct(&cfg, &out),
        Command::Learn => cmd_learn(&cfg, &out),
        Command::Sweep { axis } => cmd_sweep(&cfg, &out, axis),
        Command::MergeHdr { stack } => cmd_merge_hdr(&cfg, &out, &stack),
        Command::Undistort { image, camera } => cmd_undistort(&out, &image, &camera),
    }
}

// ---------------------------------------------------------------------
// Shared plumbing

fn camera_for(cfg: &ExperimentConfig) -> CliResult<CameraModelF64> {
    let camera = match &cfg.camera_json {
        Some(p) => CameraModel::load_json(p)
            .map_err(|e| CliError::Config(format!("camera {}: {e}", p.display())))?,
        None => presets::default_camera(cfg.resolution),
    };
    if camera.width != cfg.resolution || camera.height != cfg.resolution {
        return Err(CliError::Config(format!(
            "camera is {}x{} but config resolution is {}",
            camera.width, camera.height, cfg.resolution
        )));
    }
    Ok(camera)
}

fn build_scene(cfg: &ExperimentConfig, sc: &SceneConfig) -> CliResult<SceneMeshF64> {
    let mut scene = scene::generate_scene::<f64>(
        sc.kind,
        cfg.resolution,
        presets::BASE_DEPTH_M,
        sc.amplitude,
        sc.seed,
    )?;
    scene.ambient_level = cfg.ambient_level;
    Ok(scene)
}

fn load_patterns(cfg: &ExperimentConfig, display: &DisplayGeometryF64) -> CliResult<PatternSetF64> {
    let patterns = match &cfg.patterns_tensor {
        Some(p) => {
            let arr = read_t3(p)?;
            PatternSet::new(arr)
                .map_err(|e| CliError::Config(format!("patterns tensor {}: {e}", p.display())))?
        }
        None => {
            learning::init_patterns(cfg.patterns.family, cfg.patterns.k, display, cfg.seed)?
                .materialize()
        }
    };
    if patterns.b() != display.b() {
        return Err(CliError::Config(format!(
            "patterns drive {} superpixels but the display has {}",
            patterns.b(),
            display.b()
        )));
    }
    Ok(patterns)
}

fn build_training_set(
    cfg: &ExperimentConfig,
    display: &DisplayGeometryF64,
    camera: &CameraModelF64,
) -> CliResult<TrainingSet<f64>> {
    let lights = stereo::light_directions(display, camera, presets::BASE_DEPTH_M)?;
    let mut entries = Vec::with_capacity(cfg.scenes.len());
    for sc in &cfg.scenes {
        let scene = build_scene(cfg, sc)?;
        let basis = scene::render_basis(&scene, display, camera, cfg.falloff)?;
        entries.push(TrainingEntry {
            basis,
            gt: scene.gt_normals,
            lights: lights.clone(),
        });
    }
    Ok(TrainingSet::new(entries)?)
}

fn write_t<D: ndarray::Dimension>(
    path: &Path,
    arr: &ndarray::Array<f64, D>,
    meta: tio::Meta,
) -> CliResult<()> {
    tio::write_tensor(path, &tio::to_f32(arr), meta)?;
    Ok(())
}

fn read_t3(path: &Path) -> CliResult<Array3<f64>> {
    let (a, _) = tio::read_tensor(path)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    tio::from_f32::<f64>(&a)
        .into_dimensionality()
        .map_err(|_| CliError::Runtime(format!("{}: expected a rank-3 tensor", path.display())))
}

fn mask_to_f64(m: &Array2<bool>) -> Array2<f64> {
    m.mapv(|b| if b { 1.0 } else { 0.0 })
}

fn kind_name(kind: SceneKind) -> &'static str {
    match kind {
        SceneKind::Plane => "plane",
        SceneKind::SphereCap => "sphere_cap",
        SceneKind::PerlinHeightfield => "perlin_heightfield",
        SceneKind::LeafHeightfield => "leaf_heightfield",
    }
}

// ---------------------------------------------------------------------
// render

fn cmd_render(cfg: &ExperimentConfig, out: &Path) -> CliResult<()> {
    let display = cfg.display.build()?;
    let camera = camera_for(cfg)?;
    let lights = stereo::light_directions(&display, &camera, presets::BASE_DEPTH_M)?;
    for sc in &cfg.scenes {
        let label = sc.label();
        let scene = build_scene(cfg, sc)?;
        let mut basis = scene::render_basis(&scene, &display, &camera, cfg.falloff)?;
        basis.values.mapv_inplace(|v| v * cfg.display_gain);

        let dir = out.join(&label);
        std::fs::create_dir_all(&dir)?;
        let meta = tio::meta_kv(&[
            ("scene", json!(label)),
            ("kind", json!(kind_name(sc.kind))),
            ("seed", json!(sc.seed)),
        ]);
        write_t(&dir.join("height.dmdt"), &scene.height_field, meta.clone())?;
        write_t(&dir.join("gt_albedo.dmdt"), &scene.gt_albedo, meta.clone())?;
        write_t(
            &dir.join("gt_normals.dmdt"),
            &scene.gt_normals.values,
            meta.clone(),
        )?;
        write_t(
            &dir.join("gt_valid.dmdt"),
            &mask_to_f64(&scene.gt_normals.valid_mask),
            meta.clone(),
        )?;
        write_t(&dir.join("basis.dmdt"), &basis.values, meta.clone())?;
        write_t(
            &dir.join("basis_valid.dmdt"),
            &mask_to_f64(&basis.valid_mask),
            meta.clone(),
        )?;
        write_t(&dir.join("lights.dmdt"), &lights.directions, meta)?;
        export::write_normal_png(&scene.gt_normals, &dir.join("gt_normals.png"))?;
        export::write_albedo_png(
            &AlbedoMap {
                values: scene.gt_albedo.clone(),
                valid_mask: scene.gt_normals.valid_mask.clone(),
            },
            &dir.join("gt_albedo.png"),
        )?;
        camera.save_json(dir.join("camera.json"))?;
        println!("scene {label}: rendered {} basis images to {}", display.b(), dir.display());
    }
    Ok(())
}

// ---------------------------------------------------------------------
// reconstruct

fn cmd_reconstruct(cfg: &ExperimentConfig, out: &Path) -> CliResult<()> {
    let display = cfg.display.build()?;
    let camera = camera_for(cfg)?;
    let patterns = load_patterns(cfg, &display)?;
    let lights = stereo::light_directions(&display, &camera, presets::BASE_DEPTH_M)?;
    let mut table = ReportTable::new(
        "Reconstruction",
        "scene",
        vec!["mean_error".into(), "valid_fraction".into()],
    );
    for sc in &cfg.scenes {
        let label = sc.label();
        let scene = build_scene(cfg, sc)?;
        let err = reconstruct_scene(cfg, &label, &scene, &camera, &patterns, &lights, out)?;
        let total = (cfg.resolution * cfg.resolution) as f64;
        let valid = err.valid.iter().filter(|&&v| v).count() as f64;
        println!("scene {label}: mean angular error {}", sig4(err.mean));
        table.push_row(
            label,
            vec![Cell::Value(err.mean), Cell::Value(valid / total)],
        );
    }
    table.save(out, "reconstruct_report")?;
    print!("{}", table.to_markdown());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn reconstruct_scene(
    cfg: &ExperimentConfig,
    label: &str,
    scene: &SceneMeshF64,
    camera: &CameraModelF64,
    patterns: &PatternSetF64,
    lights: &LightFieldF64,
    out: &Path,
) -> CliResult<AngularError<f64>> {
    let dir = out.join(label).join("recon");
    std::fs::create_dir_all(&dir)?;

    let display = cfg.display.build()?;
    let mut basis = scene::render_basis(scene, &display, camera, cfg.falloff)?;
    basis.values.mapv_inplace(|v| v * cfg.display_gain);
    let captures = stereo::relight(patterns, &basis)?;

    let noise = NoiseModel::new(cfg.sensor.read_sigma, cfg.sensor.quantization_bits, cfg.seed)?;
    let weight = cfg.sensor.weight.build();
    let distorting = !camera.dist.is_zero();

    // Pixels fed by data from outside the captured frame are not
    // reconstructable; the warp validity is pattern-independent.
    let (h, w) = scene.gt_normals.resolution();
    let mut warp_valid = Array2::from_elem((h, w), true);
    if distorting {
        let probe = Array3::from_elem((h, w, 3), 1.0);
        let (_, capture_mask) = lens::distort_image(camera, &probe, Interp::Bilinear)?;
        warp_valid = capture_mask;
        if cfg.undistort {
            let mask_img = Array3::from_shape_fn((h, w, 3), |(y, x, _)| {
                if warp_valid[[y, x]] {
                    1.0
                } else {
                    0.0
                }
            });
            let (warped, resample_mask) = lens::undistort_image(camera, &mask_img, Interp::Bilinear)?;
            warp_valid = Array2::from_shape_fn((h, w), |(y, x)| {
                resample_mask[[y, x]] && warped[[y, x, 0]] > 0.999
            });
        }
    }

    let mut processed = captures.images.clone();
    // Pixels no exposure could read (flagged by the merge) carry no usable
    // signal in that capture, so they poison the per-pixel solve.
    let mut unread = Array2::from_elem((h, w), false);
    for i in 0..captures.k() {
        let ideal = captures.images.index_axis(Axis(0), i).to_owned();
        let seen = if distorting {
            lens::distort_image(camera, &ideal, Interp::Bilinear)?.0
        } else {
            ideal
        };
        let radiance = RadianceImageF64::from_values(seen);
        let mut frames = Vec::with_capacity(cfg.sensor.exposures.len());
        for &t in &cfg.sensor.exposures {
            frames.push(LdrFrame {
                image: sensor::simulate_ldr(&radiance, t, &noise)?,
                exposure_s: t,
            });
        }
        if i == 0 {
            write_stack(&dir.join("stack"), &frames)?;
        }
        let stack = ExposureStackF64::new(frames)?;
        let merged = sensor::merge_hdr(&stack, &weight)?;
        let mut img = merged.values;
        let mut readable = Array3::from_shape_fn((h, w, 3), |(y, x, _)| {
            if merged.saturated_mask[[y, x]] {
                0.0
            } else {
                1.0
            }
        });
        if cfg.blur_sigma > 0.0 {
            img = sensor::gaussian_filter(&img, cfg.blur_sigma)?;
        }
        if cfg.undistort && distorting {
            img = lens::undistort_image(camera, &img, Interp::Bilinear)?.0;
            readable = lens::undistort_image(camera, &readable, Interp::Bilinear)?.0;
        }
        ndarray::Zip::from(&mut unread)
            .and(readable.index_axis(Axis(2), 0))
            .for_each(|u, &r| *u |= r < 0.999);
        if i == 0 {
            write_t(
                &dir.join("hdr_capture0.dmdt"),
                &img,
                tio::meta_kv(&[("scene", json!(label))]),
            )?;
        }
        processed.index_axis_mut(Axis(0), i).assign(&img);
    }

    let sensed = CaptureSet {
        images: processed,
        patterns: patterns.clone(),
    };
    let mut albedo = stereo::estimate_albedo(&sensed);
    ndarray::Zip::from(&mut albedo.valid_mask)
        .and(&warp_valid)
        .and(&unread)
        .for_each(|m, &v, &u| *m &= v && !u);
    let opts = match cfg.solver {
        SolverChoice::Flag => SolveOptions::default(),
        SolverChoice::Ridge => SolveOptions::ridge(),
    };
    let normals = stereo::solve_normals(&sensed, lights, &albedo, &opts)?;
    let err = stereo::angular_error(&normals, &scene.gt_normals)?;

    let meta = tio::meta_kv(&[("scene", json!(label))]);
    write_t(&dir.join("normals.dmdt"), &normals.values, meta.clone())?;
    write_t(
        &dir.join("normals_valid.dmdt"),
        &mask_to_f64(&normals.valid_mask),
        meta.clone(),
    )?;
    write_t(&dir.join("albedo.dmdt"), &albedo.values, meta.clone())?;
    write_t(&dir.join("error_map.dmdt"), &err.map, meta)?;
    export::write_normal_png(&normals, &dir.join("normals.png"))?;
    export::write_albedo_png(&albedo, &dir.join("albedo.png"))?;
    export::write_error_png(&err, 0.05, &dir.join("error.png"))?;
    Ok(err)
}

fn write_stack(dir: &Path, frames: &[LdrFrame<f64>]) -> CliResult<()> {
    std::fs::create_dir_all(dir)?;
    let mut listed = Vec::with_capacity(frames.len());
    for (i, f) in frames.iter().enumerate() {
        let name = format!("frame_{i:02}.dmdt");
        write_t(
            &dir.join(&name),
            &f.image,
            tio::meta_kv(&[("exposure_s", json!(f.exposure_s))]),
        )?;
        listed.push(tio::ManifestFrame {
            path: name,
            exposure_s: f.exposure_s,
        });
    }
    tio::StackManifest { frames: listed }.save(dir.join("manifest.json"))?;
    Ok(())
}

// ---------------------------------------------------------------------
// learn

fn cmd_learn(cfg: &ExperimentConfig, out: &Path) -> CliResult<()> {
    let display = cfg.display.build()?;
    let camera = camera_for(cfg)?;
    let train = build_training_set(cfg, &display, &camera)?;
    let family = cfg.patterns.family;

    let init = learning::init_patterns(family, cfg.patterns.k, &display, cfg.seed)?.materialize();
    let initial_loss = learning::evaluate_patterns(&init, &train)?;
    let outcome = learning::learn(
        &train,
        family,
        cfg.patterns.k,
        &display,
        &cfg.schedule,
        cfg.smooth_sigma,
        cfg.seed,
    )?;
    let final_loss = learning::evaluate_patterns(&outcome.patterns, &train)?;

    let dir = out.join("learn").join(family.name());
    std::fs::create_dir_all(&dir)?;
    let meta = tio::meta_kv(&[
        ("family", json!(family.name())),
        ("k", json!(cfg.patterns.k)),
        ("seed", json!(cfg.seed)),
    ]);
    learning::write_history_csv(&outcome.history, &dir.join("history.csv"))?;
    write_t(&dir.join("initial_patterns.dmdt"), &init.values, meta.clone())?;
    write_t(&dir.join("patterns.dmdt"), &outcome.patterns.values, meta)?;
    export::write_pattern_pngs(&init, (display.rows, display.cols), 24, &dir, "initial")?;
    export::write_pattern_pngs(
        &outcome.patterns,
        (display.rows, display.cols),
        24,
        &dir,
        "pattern",
    )?;

    let mut table = ReportTable::new(
        "Pattern learning",
        "family",
        vec!["initial".into(), "learned".into()],
    );
    table.push_row(
        family.name(),
        vec![Cell::Value(initial_loss), Cell::Value(final_loss)],
    );
    table.save(out, "learn_summary")?;
    println!(
        "family {family}: loss {} -> {} over {} epochs",
        sig4(initial_loss),
        sig4(final_loss),
        outcome.history.len()
    );
    Ok(())
}

// ---------------------------------------------------------------------
// sweep

fn cmd_sweep(cfg: &ExperimentConfig, out: &Path, axis: SweepAxis) -> CliResult<()> {
    let display = cfg.display.build()?;
    let camera = camera_for(cfg)?;
    let train = build_training_set(cfg, &display, &camera)?;
    match axis {
        SweepAxis::Alpha => sweep_alpha(cfg, out, &display, &train),
        SweepAxis::Family => sweep_family(cfg, out, &display, &train),
    }
}

/// Learns one grid cell in its own subdirectory and returns the final
/// loss on the training set.
fn run_learn_cell(
    cfg: &ExperimentConfig,
    display: &DisplayGeometryF64,
    train: &TrainingSet<f64>,
    family: PatternFamily,
    schedule: &learning::OptimizerSchedule<f64>,
    dir: &Path,
) -> CliResult<f64> {
    std::fs::create_dir_all(dir)?;
    let outcome = learning::learn(
        train,
        family,
        cfg.patterns.k,
        display,
        schedule,
        cfg.smooth_sigma,
        cfg.seed,
    )?;
    let loss = learning::evaluate_patterns(&outcome.patterns, train)?;
    learning::write_history_csv(&outcome.history, &dir.join("history.csv"))?;
    write_t(
        &dir.join("patterns.dmdt"),
        &outcome.patterns.values,
        tio::meta_kv(&[("family", json!(family.name()))]),
    )?;
    Ok(loss)
}

fn sweep_alpha(
    cfg: &ExperimentConfig,
    out: &Path,
    display: &DisplayGeometryF64,
    train: &TrainingSet<f64>,
) -> CliResult<()> {
    const FAMILIES: [PatternFamily; 3] = [
        PatternFamily::MonoGradient,
        PatternFamily::Olat,
        PatternFamily::MonoRandom,
    ];
    const ALPHAS: [usize; 4] = [5, 10, 15, 20];

    let cells: Vec<(PatternFamily, usize)> = FAMILIES
        .iter()
        .flat_map(|&f| ALPHAS.iter().map(move |&a| (f, a)))
        .collect();
    let results: Vec<Result<f64, String>> = cells
        .par_iter()
        .map(|&(family, alpha)| {
            let mut schedule = cfg.schedule;
            schedule.alpha = alpha;
            let dir = out
                .join("sweep")
                .join("alpha")
                .join(format!("{}_a{alpha}", family.name()));
            run_learn_cell(cfg, display, train, family, &schedule, &dir).map_err(|e| match e {
                CliError::Config(m) | CliError::Runtime(m) => m,
            })
        })
        .collect();

    let mut table = ReportTable::new(
        "Reconstruction loss by decay interval",
        "family",
        ALPHAS.iter().map(|a| format!("alpha={a}")).collect(),
    );
    for (fi, family) in FAMILIES.iter().enumerate() {
        let row = (0..ALPHAS.len())
            .map(|ai| match &results[fi * ALPHAS.len() + ai] {
                Ok(v) => Cell::Value(*v),
                Err(msg) => {
                    log::error!("cell {}/alpha={}: {msg}", family.name(), ALPHAS[ai]);
                    Cell::Failed
                }
            })
            .collect();
        table.push_row(family.name(), row);
    }
    let avg_row = (0..ALPHAS.len())
        .map(|ai| {
            let ok: Vec<f64> = (0..FAMILIES.len())
                .filter_map(|fi| results[fi * ALPHAS.len() + ai].as_ref().ok().copied())
                .collect();
            if ok.is_empty() {
                Cell::Failed
            } else {
                Cell::Value(ok.iter().sum::<f64>() / ok.len() as f64)
            }
        })
        .collect();
    table.push_row("Average", avg_row);
    table.save(out, "sweep_alpha")?;
    print!("{}", table.to_markdown());
    Ok(())
}

fn sweep_family(
    cfg: &ExperimentConfig,
    out: &Path,
    display: &DisplayGeometryF64,
    train: &TrainingSet<f64>,
) -> CliResult<()> {
    let results: Vec<Result<(f64, f64), String>> = PatternFamily::ALL
        .par_iter()
        .map(|&family| {
            let dir = out.join("sweep").join("family").join(family.name());
            let cell = || -> CliResult<(f64, f64)> {
                let init =
                    learning::init_patterns(family, cfg.patterns.k, display, cfg.seed)?
                        .materialize();
                let initial = learning::evaluate_patterns(&init, train)?;
                let learned = run_learn_cell(cfg, display, train, family, &cfg.schedule, &dir)?;
                Ok((initial, learned))
            };
            cell().map_err(|e| match e {
                CliError::Config(m) | CliError::Runtime(m) => m,
            })
        })
        .collect();

    let mut table = ReportTable::new(
        "Reconstruction loss by initial pattern family",
        "family",
        vec!["K".into(), "initial".into(), "learned".into()],
    );
    for (family, result) in PatternFamily::ALL.iter().zip(&results) {
        let row = match result {
            Ok((initial, learned)) => vec![
                Cell::Int(cfg.patterns.k as u64),
                Cell::Value(*initial),
                Cell::Value(*learned),
            ],
            Err(msg) => {
                log::error!("cell {}: {msg}", family.name());
                vec![
                    Cell::Int(cfg.patterns.k as u64),
                    Cell::Failed,
                    Cell::Failed,
                ]
            }
        };
        table.push_row(family.name(), row);
    }
    table.save(out, "sweep_family")?;
    print!("{}", table.to_markdown());
    Ok(())
}

// ---------------------------------------------------------------------
// merge-hdr

fn cmd_merge_hdr(cfg: &ExperimentConfig, out: &Path, stack_path: &Path) -> CliResult<()> {
    let manifest = tio::StackManifest::load(stack_path)
        .map_err(|e| CliError::Config(format!("stack manifest {}: {e}", stack_path.display())))?;
    if manifest.frames.is_empty() {
        return Err(CliError::Config("stack manifest lists no frames".into()));
    }
    let base = stack_path.parent().unwrap_or(Path::new("."));
    let mut frames = Vec::with_capacity(manifest.frames.len());
    for mf in &manifest.frames {
        frames.push(LdrFrame {
            image: read_t3(&base.join(&mf.path))?,
            exposure_s: mf.exposure_s,
        });
    }
    let n = frames.len();
    let stack = ExposureStackF64::new(frames)
        .map_err(|e| CliError::Config(format!("stack: {e}")))?;
    let merged = sensor::merge_hdr(&stack, &cfg.sensor.weight.build())?;

    std::fs::create_dir_all(out)?;
    let meta = tio::meta_kv(&[("frames", json!(n))]);
    write_t(&out.join("hdr.dmdt"), &merged.values, meta.clone())?;
    write_t(
        &out.join("hdr_saturated.dmdt"),
        &mask_to_f64(&merged.saturated_mask),
        meta,
    )?;
    let white = merged
        .values
        .iter()
        .cloned()
        .fold(0.0_f64, f64::max)
        .max(1e-9);
    export::write_radiance_png(&merged.values, white, &out.join("hdr.png"))?;
    println!("merged {n} frames; peak radiance {}", sig4(white));
    Ok(())
}

// ---------------------------------------------------------------------
// undistort

fn cmd_undistort(out: &Path, image: &Path, camera: &Path) -> CliResult<()> {
    let cam: CameraModelF64 = CameraModel::load_json(camera)
        .map_err(|e| CliError::Config(format!("camera {}: {e}", camera.display())))?;
    let img = read_t3(image)?;
    let (und, mask) = lens::undistort_image(&cam, &img, Interp::Bilinear)?;

    std::fs::create_dir_all(out)?;
    let source = image
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let meta = tio::meta_kv(&[("source", json!(source))]);
    write_t(&out.join("undistorted.dmdt"), &und, meta.clone())?;
    write_t(&out.join("undistorted_mask.dmdt"), &mask_to_f64(&mask), meta)?;
    let white = und.iter().cloned().fold(0.0_f64, f64::max).max(1e-9);
    export::write_radiance_png(&und, white, &out.join("undistorted.png"))?;
    let covered = mask.iter().filter(|&&m| m).count();
    println!(
        "undistorted {}x{} image; {covered}/{} pixels covered",
        cam.width,
        cam.height,
        mask.len()
    );
    Ok(())
}
