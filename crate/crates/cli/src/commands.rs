use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;
use serde_json::json;

use holofield::bench::{bench_csv, doubling_ratios, run_bench, BenchConfig};
use holofield::camera::{CameraSpec, CameraView};
use holofield::field::{plane_positions, ComplexField, WaveConfig};
use holofield::gradcheck::{run_gradcheck, GradcheckOptions};
use holofield::io::{write_intensity_png, write_phase_png, write_srgb_preview};
use holofield::phase_only::{convert_phase_only, PhaseOnlyConfig};
use holofield::pipeline::{Assignment, Pipeline};
use holofield::propagation::propagate as propagate_field;
use holofield::run::{run_training, RunConfig};
use holofield::scene::{GaussianScene, ParamGroup};
use holofield::stats::scene_stats;
use holofield::train::{evaluate_view, CheckpointSidecar};

use crate::error::CliError;

pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    if !path.is_file() {
        return Err(CliError::usage("config_not_found", format!("no config file at {}", path.display())));
    }
    Ok(RunConfig::load(path)?)
}

pub fn train(cfg: &RunConfig) -> Result<(), CliError> {
    let summary = run_training(cfg)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

/// A checkpoint sidecar with the run configuration saved next to it.
struct Checkpoint {
    sidecar: CheckpointSidecar,
    config: RunConfig,
    scene: GaussianScene,
}

fn sidecar_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join("checkpoint.json")
    } else {
        path.to_path_buf()
    }
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    let path = sidecar_path(path);
    if !path.is_file() {
        return Err(CliError::usage("checkpoint_not_found", format!("no checkpoint at {}", path.display())));
    }
    let dir = path.parent().unwrap_or(Path::new("."));
    let sidecar: CheckpointSidecar = serde_json::from_slice(&std::fs::read(&path)?)
        .map_err(|e| CliError::runtime("malformed_file", format!("{}: {e}", path.display())))?;
    let config = RunConfig::load(&dir.join("config.json"))?;
    let scene = GaussianScene::load(dir.join(&sidecar.scene))?;
    Ok(Checkpoint { sidecar, config, scene })
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Checkpoint sidecar (`checkpoint.json`) or the directory holding it.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Camera as a JSON object `{"pose": [x, y, z, φx, φy, φz], "focal": f}`
    /// or a path to a file holding one.
    #[arg(long, conflicts_with_all = ["pose", "view"])]
    pub camera: Option<String>,
    /// Camera position (meters) and Euler angles (radians), comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, num_args = 1, requires = "focal", conflicts_with = "view")]
    pub pose: Option<Vec<f64>>,
    /// Focal length in pixels.
    #[arg(long)]
    pub focal: Option<f64>,
    /// Index of a training view; its target is used to report PSNR.
    #[arg(long)]
    pub view: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write 8-bit sRGB previews.
    #[arg(long)]
    pub composite: bool,
}

fn bad_camera(msg: impl std::fmt::Display) -> CliError {
    CliError::usage("invalid_camera", msg.to_string())
}

fn camera_spec(args: &RenderArgs) -> Result<Option<CameraSpec>, CliError> {
    if let Some(text) = &args.camera {
        let text = if text.trim_start().starts_with('{') {
            text.clone()
        } else {
            std::fs::read_to_string(text).map_err(|e| bad_camera(format!("cannot read camera file {text}: {e}")))?
        };
        return serde_json::from_str(&text).map(Some).map_err(bad_camera);
    }
    if let Some(pose) = &args.pose {
        let pose: [f64; 6] =
            pose.as_slice().try_into().map_err(|_| bad_camera(format!("--pose takes 6 numbers, got {}", pose.len())))?;
        let focal = args.focal.ok_or_else(|| bad_camera("--pose needs --focal"))?;
        return Ok(Some(CameraSpec { pose, focal, principal_point: None, near_clip: None }));
    }
    Ok(None)
}

#[derive(Debug, Serialize)]
struct RenderManifest {
    config_hash: String,
    intrinsic_digest: String,
    step: u64,
    wave: WaveConfig,
    camera: CameraSpec,
    view: Option<usize>,
    hologram: String,
    planes: Vec<Vec<String>>,
    plane_positions: Vec<f64>,
    psnr: Option<Vec<f64>>,
    psnr_mean: Option<f64>,
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn render(args: &RenderArgs) -> Result<(), CliError> {
    let spec = camera_spec(args)?;
    let ck = load_checkpoint(&args.checkpoint)?;
    let wave = &ck.config.wave;
    let pipeline = Pipeline::new(wave)?;

    let (camera, view) = match (spec, args.view) {
        (Some(spec), _) => (CameraView::from_spec(&spec, wave).map_err(bad_camera)?, None),
        (None, Some(i)) => {
            let mut views = ck.config.build_views()?;
            if i >= views.len() {
                return Err(bad_camera(format!("view {i} out of range, the run has {} views", views.len())));
            }
            (views[i].camera.clone(), Some(views.swap_remove(i)))
        }
        (None, None) => return Err(bad_camera("give --camera, --pose with --focal, or --view")),
    };

    let r = pipeline.render(&ck.scene, &camera, &Assignment::Hard)?;
    let eval = match (&view, args.view) {
        (Some(v), Some(i)) => Some(evaluate_view(&pipeline, &ck.scene, v, i)?),
        _ => None,
    };

    std::fs::create_dir_all(&args.out)?;
    let holo_path = args.out.join("hologram.hfld");
    r.hologram.save(&holo_path)?;
    let mut planes = Vec::new();
    for (l, img) in r.intensities.iter().enumerate() {
        let files = write_intensity_png(&args.out.join(format!("plane_{l}.png")), img)?;
        planes.push(files.iter().map(|f| file_name(f)).collect());
        if args.composite && (img.channels == 1 || img.channels == 3) {
            write_srgb_preview(&args.out.join(format!("plane_{l}_srgb.png")), img)?;
        }
    }
    let manifest = RenderManifest {
        config_hash: ck.sidecar.config_hash.clone(),
        intrinsic_digest: ck.scene.intrinsic_digest(),
        step: ck.sidecar.step,
        wave: wave.clone(),
        camera: camera.to_spec(),
        view: args.view.filter(|_| view.is_some()),
        hologram: file_name(&holo_path),
        planes,
        plane_positions: plane_positions(wave),
        psnr: eval.as_ref().map(|e| e.psnr.clone()),
        psnr_mean: eval.as_ref().map(|e| e.psnr_mean),
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(args.out.join("manifest.json"), &text)?;
    println!("{text}");
    Ok(())
}

pub fn propagate(
    input: &Path,
    out: &Path,
    z: f64,
    pixel_pitch: f64,
    wavelengths: Vec<f64>,
    band_limit: bool,
) -> Result<(), CliError> {
    let field = ComplexField::load(input, pixel_pitch)?;
    let wavelengths = match (wavelengths.is_empty(), field.channels()) {
        (false, _) => wavelengths,
        (true, 3) => WaveConfig::new(1, 1, 1).wavelengths,
        (true, c) => {
            return Err(CliError::usage("invalid_argument", format!("a {c}-channel field needs --wavelength for every channel")))
        }
    };
    if wavelengths.len() != field.channels() {
        return Err(CliError::usage(
            "invalid_argument",
            format!("{} wavelengths for a {}-channel field", wavelengths.len(), field.channels()),
        ));
    }
    let mut cfg = WaveConfig::new(1, field.width(), field.height());
    cfg.pixel_pitch = pixel_pitch;
    cfg.wavelengths = wavelengths;
    cfg.band_limit = band_limit;
    cfg.validate()?;
    propagate_field(&field, z, &cfg)?.save(out)?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct PhaseOnlyArgs {
    /// Complex hologram (HOLOFIELD).
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Phase PNG to write; the unit-amplitude field goes next to it as `.hfld`.
    #[arg(long)]
    pub out: PathBuf,
    /// Run configuration with the optics. Defaults to the `manifest.json`
    /// written next to a rendered hologram.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    pub iters: usize,
    /// Phase quantization: 8 or 10.
    #[arg(long, default_value_t = 8)]
    pub bits: u32,
    #[arg(long, default_value_t = 0.02)]
    pub lr: f64,
}

fn optics_for(args: &PhaseOnlyArgs) -> Result<(WaveConfig, Option<String>), CliError> {
    if let Some(p) = &args.config {
        let cfg = load_config(p)?;
        let hash = cfg.hash();
        return Ok((cfg.wave, Some(hash)));
    }
    let manifest = args.input.parent().unwrap_or(Path::new(".")).join("manifest.json");
    if !manifest.is_file() {
        return Err(CliError::usage("config_not_found", "no --config and no manifest.json next to the hologram"));
    }
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&manifest)?)?;
    let wave: WaveConfig = serde_json::from_value(v["wave"].clone())
        .map_err(|e| CliError::usage("invalid_config", format!("{}: {e}", manifest.display())))?;
    wave.validate()?;
    Ok((wave, v["config_hash"].as_str().map(String::from)))
}

pub fn phase_only(args: &PhaseOnlyArgs) -> Result<(), CliError> {
    if args.bits != 8 && args.bits != 10 {
        return Err(CliError::usage("invalid_argument", format!("--bits must be 8 or 10, got {}", args.bits)));
    }
    let (wave, config_hash) = optics_for(args)?;
    let holo = ComplexField::load(&args.input, wave.pixel_pitch)?;
    let opts = PhaseOnlyConfig { iters: args.iters, lr: args.lr, ..PhaseOnlyConfig::default() };
    let res = convert_phase_only(&holo, &wave, &opts)?;
    let h = &res.hologram;
    write_phase_png(&args.out, &h.wrapped(), h.width, h.height, h.channels, args.bits)?;
    let field_path = args.out.with_extension("hfld");
    h.field().save(&field_path)?;
    let summary = json!({
        "config_hash": config_hash,
        "iters": args.iters,
        "bits": args.bits,
        "initial_loss": res.trace.first(),
        "final_loss": res.trace.last(),
        "phase_png": file_name(&args.out),
        "field": file_name(&field_path),
    });
    let text = serde_json::to_string_pretty(&summary)?;
    std::fs::write(args.out.with_extension("json"), &text)?;
    println!("{text}");
    Ok(())
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub scenes: usize,
    #[arg(long, default_value_t = 50)]
    pub max_gaussians: usize,
    #[arg(long, default_value_t = 64)]
    pub resolution: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,2")]
    pub planes: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    pub channels: usize,
    /// Negate one group's analytic gradient.
    #[arg(long, hide = true)]
    pub inject_fault: Option<String>,
}

pub fn gradcheck(args: &GradcheckArgs) -> Result<(), CliError> {
    let inject_fault = match &args.inject_fault {
        None => None,
        Some(name) => Some(
            ParamGroup::from_name(name)
                .ok_or_else(|| CliError::usage("invalid_argument", format!("unknown parameter group {name:?}")))?,
        ),
    };
    if args.resolution > 128 || args.max_gaussians > 200 {
        return Err(CliError::usage("size_guard", "finite differences are limited to 128x128 and 200 primitives"));
    }
    let opts = GradcheckOptions {
        seed: args.seed,
        scenes: args.scenes,
        max_gaussians: args.max_gaussians,
        resolution: args.resolution,
        planes: args.planes.clone(),
        channels: args.channels,
        inject_fault,
        ..GradcheckOptions::default()
    };
    let report = run_gradcheck(&opts)?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    for g in &report.groups {
        println!(
            "{:<12} checked {:>6}  max rel err {:.3e}  max abs err {:.3e}  max |grad| {:.3e}  {}",
            g.group,
            g.checked,
            g.max_rel_err,
            g.max_abs_err,
            g.max_grad,
            if g.failures == 0 { "PASS" } else { "FAIL" }
        );
    }
    if report.passed {
        println!("gradcheck PASS");
        Ok(())
    } else {
        println!("gradcheck FAIL");
        Err(CliError::runtime("gradcheck_failed", format!("failing groups: {}", report.failing_groups().join(", "))))
    }
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// JSON file with bench settings; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub resolution: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub counts: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub planes: Option<Vec<usize>>,
    #[arg(long)]
    pub repeats: Option<usize>,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn bench(args: &BenchArgs) -> Result<(), CliError> {
    let mut cfg = match &args.config {
        Some(p) if !p.is_file() => {
            return Err(CliError::usage("config_not_found", format!("no config file at {}", p.display())))
        }
        Some(p) => serde_json::from_slice::<BenchConfig>(&std::fs::read(p)?)
            .map_err(|e| CliError::usage("invalid_config", e.to_string()))?,
        None => BenchConfig::default(),
    };
    if let Some(r) = args.resolution {
        cfg.resolution = r;
    }
    if let Some(c) = &args.counts {
        cfg.counts = c.clone();
    }
    if let Some(p) = &args.planes {
        cfg.planes = p.clone();
    }
    if let Some(r) = args.repeats {
        cfg.repeats = r;
    }
    let rows = run_bench(&cfg)?;
    let (n_ratio, l_ratio) = doubling_ratios(&rows);
    log::info!("worst doubling ratio: primitives {n_ratio:.3}, planes {l_ratio:.3}");
    let csv = bench_csv(&rows);
    match &args.out {
        Some(p) => std::fs::write(p, csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

pub fn stats(path: &Path) -> Result<(), CliError> {
    let scene = if path.extension().is_some_and(|e| e == "hscene") {
        GaussianScene::load(path)?
    } else {
        load_checkpoint(path)?.scene
    };
    println!("{}", serde_json::to_string_pretty(&scene_stats(&scene))?);
    Ok(())
}
