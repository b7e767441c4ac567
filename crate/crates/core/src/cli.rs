//! Command-line front end. [`run`] parses argv, executes one subcommand and
//! returns the process exit code: 0 on success, 1 for usage or validation
//! errors, 2 for runtime failures.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::Vector3;

use crate::cdgd::DropoutMode;
use crate::config::CalibConfig;
use crate::dcp::{self, DcpReport};
use crate::diagnostics::{decompose, haze_approx_error};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::io::{self, depth, ply, ppm};
use crate::metrics::{metric_rows, rows_to_csv};
use crate::rasterizer::render;
use crate::scene::{self, load_scene, read_floater_flags, save_scene, write_floater_flags, Scene};
use crate::scenegen::{self, FloaterSpec, SceneSpec, Template};
use crate::trainer::{self, Ablation, RemovalSummary, TrainOptions};

pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.toml";
pub const THREADS_ENV: &str = "SPLATCAL_THREADS";

#[derive(Debug, Parser)]
#[command(name = "splatcal", version, about = "CPU Gaussian splatting with depth-guided dropout and dark-channel pruning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Config file with `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (falls back to SPLATCAL_THREADS).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Extra config override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub lambda_base: Option<f64>,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub tau1: Option<f64>,
    #[arg(long)]
    pub tau2: Option<f64>,
    #[arg(long)]
    pub alpha_min: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub t_prune: Option<u32>,
    #[arg(long)]
    pub t_start: Option<u32>,
    #[arg(long)]
    pub iters: Option<u32>,
}

impl CommonArgs {
    fn overrides(&self) -> Vec<String> {
        let mut out = self.set.clone();
        let mut push = |key: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push(format!("{key}={v}"));
            }
        };
        push("lambda_base", self.lambda_base.map(|v| format!("{v:?}")));
        push("kappa", self.kappa.map(|v| format!("{v:?}")));
        push("tau1", self.tau1.map(|v| format!("{v:?}")));
        push("tau2", self.tau2.map(|v| format!("{v:?}")));
        push("alpha_min", self.alpha_min.map(|v| format!("{v:?}")));
        push("eta", self.eta.map(|v| format!("{v:?}")));
        push("t_prune", self.t_prune.map(|v| v.to_string()));
        push("t_start", self.t_start.map(|v| v.to_string()));
        push("total_iters", self.iters.map(|v| v.to_string()));
        out
    }

    /// Defaults, then the scene's `config.toml`, then `--config`, then flags.
    fn resolve_config(&self, scene_dir: Option<&Path>) -> Result<CalibConfig> {
        let mut cfg = CalibConfig::default();
        if let Some(path) = scene_dir.map(|d| d.join(scene::CONFIG_FILE)).filter(|p| p.is_file()) {
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            cfg = cfg.merged_with_text(&text, &path.display().to_string())?;
        }
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            cfg = cfg.merged_with_text(&text, &path.display().to_string())?;
        }
        let overrides = self.overrides();
        if !overrides.is_empty() {
            cfg = cfg.with_overrides(&overrides)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn threads(&self) -> Result<Option<usize>> {
        let n = match self.threads {
            Some(n) => Some(n),
            None => match std::env::var(THREADS_ENV) {
                Ok(v) if !v.trim().is_empty() => Some(
                    v.trim()
                        .parse()
                        .map_err(|_| Error::InvalidArgument(format!("{THREADS_ENV}=`{v}` is not a thread count")))?,
                ),
                _ => None,
            },
        };
        if n == Some(0) {
            return Err(Error::InvalidArgument("thread count must be positive".into()));
        }
        Ok(n)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scene with rendered ground truth.
    GenScene {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_enum, default_value_t = Template::TwoPlaneBox)]
        template: Template,
        #[arg(long, default_value_t = 2000)]
        surface_count: usize,
        /// Training cameras.
        #[arg(long, default_value_t = 6)]
        cameras: usize,
        #[arg(long, default_value_t = 4.0)]
        rig_radius: f64,
        #[arg(long, default_value_t = 64)]
        image_size: usize,
        #[arg(long, default_value_t = 50.0)]
        fov: f64,
    },
    /// Copy a scene and plant low-opacity floaters in free space.
    InjectFloaters {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value_t = 500)]
        count: usize,
        #[arg(long, default_value_t = 0.02)]
        opacity_min: f64,
        #[arg(long, default_value_t = 0.15)]
        opacity_max: f64,
        #[arg(long, default_value_t = 0.08)]
        opacity_mean: f64,
        /// Mean gray level of floater colors.
        #[arg(long, default_value_t = 0.8)]
        color: f64,
        #[arg(long, default_value_t = 0.05)]
        color_std: f64,
    },
    /// Optimize a scene's Gaussians against its training views.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        scene: PathBuf,
        /// baseline, ddgs, cdgd, dcp_gp or cdgd+dcp_gp.
        #[arg(long, default_value = "cdgd+dcp_gp")]
        ablation: Ablation,
        /// Overrides the dropout mode of the ablation preset.
        #[arg(long, value_enum)]
        dropout: Option<DropoutMode>,
    },
    /// Render every camera of a scene, optionally with another Gaussian set.
    Render {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        scene: PathBuf,
        /// Gaussian PLY to render instead of the scene's own.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Dark-channel statistics and violation ratio for each image.
    AnalyzeDcp {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Split renders into floater and surface layers using floater flags.
    AnalyzeDecompose {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Defaults to the scene's floater_flags.txt.
        #[arg(long)]
        flags: Option<PathBuf>,
    },
    /// Suggest DCP thresholds from clean renders.
    CalibrateDcp {
        #[command(flatten)]
        common: CommonArgs,
        /// Render the scene's training cameras and use those.
        #[arg(long)]
        scene: Option<PathBuf>,
        images: Vec<PathBuf>,
    },
    /// PSNR and SSIM for same-named PPM files in two directories.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        renders: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
}

impl Command {
    fn common(&self) -> &CommonArgs {
        match self {
            Command::GenScene { common, .. }
            | Command::InjectFloaters { common, .. }
            | Command::Train { common, .. }
            | Command::Render { common, .. }
            | Command::AnalyzeDcp { common, .. }
            | Command::AnalyzeDecompose { common, .. }
            | Command::CalibrateDcp { common, .. }
            | Command::Eval { common, .. } => common,
        }
    }

    fn scene_dir(&self) -> Option<&Path> {
        match self {
            Command::InjectFloaters { scene, .. }
            | Command::Train { scene, .. }
            | Command::Render { scene, .. }
            | Command::AnalyzeDecompose { scene, .. } => Some(scene),
            Command::CalibrateDcp { scene, .. } => scene.as_deref(),
            _ => None,
        }
    }

    fn inputs(&self) -> Vec<&Path> {
        let mut v: Vec<&Path> = self.scene_dir().into_iter().collect();
        if let Command::Eval { renders, truth, .. } = self {
            v.push(renders);
            v.push(truth);
        }
        v
    }
}

/// Whether an error is the caller's fault (exit 1) rather than a runtime
/// failure (exit 2).
pub fn is_validation_error(e: &Error) -> bool {
    matches!(
        e,
        Error::Config { .. }
            | Error::InvalidArgument(_)
            | Error::Parse { .. }
            | Error::ShapeMismatch(_)
            | Error::ImageTooSmall { .. }
    )
}

pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if is_validation_error(&e) {
                1
            } else {
                2
            }
        }
    }
}

fn same_path(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    }
}

pub fn execute(cmd: &Command) -> Result<()> {
    let common = cmd.common();
    let cfg = common.resolve_config(cmd.scene_dir())?;
    if let Some(input) = cmd.inputs().into_iter().find(|p| same_path(p, &common.out)) {
        return Err(Error::InvalidArgument(format!(
            "output directory {} would overwrite input {}",
            common.out.display(),
            input.display()
        )));
    }
    let threads = common.threads()?;
    std::fs::create_dir_all(&common.out).map_err(|e| Error::io(&common.out, e))?;
    cfg.save(&common.out.join(RESOLVED_CONFIG_FILE))?;

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    pool.install(|| dispatch(cmd, &cfg))
}

fn dispatch(cmd: &Command, cfg: &CalibConfig) -> Result<()> {
    match cmd {
        Command::GenScene {
            common,
            template,
            surface_count,
            cameras,
            rig_radius,
            image_size,
            fov,
        } => {
            let spec = SceneSpec {
                template: *template,
                surface_count: *surface_count,
                camera_count: *cameras,
                rig_radius: *rig_radius,
                image_size: *image_size,
                fov_y_degrees: *fov,
                seed: common.seed,
            };
            save_scene(&scenegen::generate(&spec)?, &common.out)
        }
        Command::InjectFloaters {
            common,
            scene,
            count,
            opacity_min,
            opacity_max,
            opacity_mean,
            color,
            color_std,
        } => {
            let input = load_scene(scene)?;
            let prior = existing_flags(scene, input.gaussians.len())?;
            let fspec = FloaterSpec {
                count: *count,
                opacity_range: (*opacity_min, *opacity_max),
                opacity_mean: *opacity_mean,
                color_mean: Vector3::repeat(*color),
                color_std: *color_std,
                ..Default::default()
            };
            let (out, mut flags) = scenegen::inject_floaters(&input, &fspec, common.seed)?;
            for (f, p) in flags.iter_mut().zip(prior) {
                *f = p;
            }
            save_scene(&out, &common.out)?;
            write_floater_flags(&common.out.join(scene::FLOATER_FLAGS_FILE), &flags)
        }
        Command::Train {
            common,
            scene,
            ablation,
            dropout,
        } => {
            let input = load_scene(scene)?;
            let opts = TrainOptions {
                out_dir: Some(common.out.clone()),
                dropout: *dropout,
            };
            let (state, report) = trainer::train_with(&input, cfg, *ablation, common.seed, &opts)?;
            trainer::write_outputs(&common.out, &state, &report)?;
            let flags_path = scene.join(scene::FLOATER_FLAGS_FILE);
            if flags_path.is_file() {
                let flags = read_floater_flags(&flags_path, input.gaussians.len())?;
                let s = RemovalSummary::from_events(&state.events, &flags);
                let text = format!(
                    "floaters,surface,floaters_pruned,surface_pruned,floaters_culled,surface_culled\n{},{},{},{},{},{}\n",
                    s.floaters, s.surface, s.floaters_pruned, s.surface_pruned, s.floaters_culled, s.surface_culled
                );
                io::write_file(&common.out.join("removal.csv"), text.as_bytes())?;
            }
            Ok(())
        }
        Command::Render { common, scene, model } => {
            let input = load_scene(scene)?;
            let gaussians = model_or_scene(model.as_deref(), &input)?;
            let mut pairs = Vec::new();
            let views: Vec<_> = input.train.iter().chain(&input.test).collect();
            let mut renders = Vec::new();
            for v in &views {
                let out = render(&gaussians, &v.camera, None)?;
                let id = v.camera.id;
                ppm::write(&common.out.join("renders").join(format!("{id}.ppm")), &out.color)?;
                depth::write(&common.out.join("depth").join(format!("{id}.depth")), &out.depth_map)?;
                renders.push(out.color);
            }
            for (v, r) in views.iter().zip(&renders) {
                pairs.push((v.camera.id.to_string(), r, &v.image));
            }
            io::write_file(&common.out.join("metrics.csv"), rows_to_csv(&metric_rows(&pairs)?).as_bytes())
        }
        Command::AnalyzeDcp { common, images } => {
            let mut csv = String::from("image,violation_ratio,mean_dark,bad_pixels\n");
            for (k, path) in images.iter().enumerate() {
                let img = ppm::read(path)?;
                let rep = DcpReport::compute(&img, cfg)?;
                let stem = format!("{k}_{}", file_stem(path));
                ppm::write(&common.out.join("dcp").join(format!("{stem}_dark.ppm")), &rep.dark.to_gray_image())?;
                ppm::write(&common.out.join("dcp").join(format!("{stem}_mask.ppm")), &rep.mask_image())?;
                writeln!(
                    csv,
                    "{},{:.8},{:.8},{}",
                    path.display(),
                    rep.violation_ratio,
                    rep.dark.mean(),
                    rep.bad_mask.iter().filter(|b| **b).count()
                )
                .unwrap();
            }
            io::write_file(&common.out.join("dcp.csv"), csv.as_bytes())
        }
        Command::AnalyzeDecompose {
            common,
            scene,
            model,
            flags,
        } => {
            let input = load_scene(scene)?;
            let gaussians = model_or_scene(model.as_deref(), &input)?;
            let flags_path = flags.clone().unwrap_or_else(|| scene.join(scene::FLOATER_FLAGS_FILE));
            let flags = read_floater_flags(&flags_path, gaussians.len())?;
            let mut csv = String::from("camera,haze_error,mean_floater_transmittance,max_reconstruction_error,a_r,a_g,a_b\n");
            for v in input.train.iter().chain(&input.test) {
                let d = decompose(&gaussians, &v.camera, &flags)?;
                let haze = match haze_approx_error(&d) {
                    Ok(e) => e,
                    Err(Error::NoFloaterCoverage) => f64::NAN,
                    Err(e) => return Err(e),
                };
                let recon = d.reconstruct();
                let max_err = recon
                    .as_slice()
                    .iter()
                    .zip(d.color.as_slice())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                let id = v.camera.id;
                let dir = common.out.join("decompose");
                ppm::write(&dir.join(format!("{id}_floaters.ppm")), &d.c_f)?;
                ppm::write(&dir.join(format!("{id}_surface.ppm")), &d.c_surf)?;
                ppm::write(&dir.join(format!("{id}_transmittance.ppm")), &d.t_f.to_gray_image())?;
                writeln!(
                    csv,
                    "{id},{haze:.8},{:.8},{max_err:.3e},{:.6},{:.6},{:.6}",
                    d.t_f.mean(),
                    d.a_est[0],
                    d.a_est[1],
                    d.a_est[2]
                )
                .unwrap();
            }
            io::write_file(&common.out.join("decompose.csv"), csv.as_bytes())
        }
        Command::CalibrateDcp { common, scene, images } => {
            let mut renders: Vec<Image> = images.iter().map(|p| ppm::read(p)).collect::<Result<_>>()?;
            if let Some(dir) = scene {
                let input = load_scene(dir)?;
                for v in &input.train {
                    renders.push(render(&input.gaussians, &v.camera, None)?.color);
                }
            }
            if renders.is_empty() {
                return Err(Error::InvalidArgument("calibrate-dcp needs --scene or at least one image".into()));
            }
            let cal = dcp::calibrate(&renders, cfg)?;
            let text = format!("# {} samples, 95th percentile\ntau1 = {:?}\ntau2 = {:?}\n", cal.samples, cal.tau1, cal.tau2);
            io::write_file(&common.out.join("calibration.toml"), text.as_bytes())
        }
        Command::Eval { common, renders, truth } => {
            let names = ppm_names(renders)?;
            if names.is_empty() {
                return Err(Error::InvalidArgument(format!("no .ppm files in {}", renders.display())));
            }
            let mut images = Vec::new();
            for name in &names {
                let t = truth.join(name);
                if !t.is_file() {
                    return Err(Error::InvalidArgument(format!("no ground truth for {name} in {}", truth.display())));
                }
                images.push((name.clone(), ppm::read(&renders.join(name))?, ppm::read(&t)?));
            }
            let pairs: Vec<_> = images.iter().map(|(n, a, b)| (n.clone(), a, b)).collect();
            io::write_file(&common.out.join("metrics.csv"), rows_to_csv(&metric_rows(&pairs)?).as_bytes())
        }
    }
}

fn existing_flags(scene_dir: &Path, len: usize) -> Result<Vec<bool>> {
    let path = scene_dir.join(scene::FLOATER_FLAGS_FILE);
    if path.is_file() {
        read_floater_flags(&path, len)
    } else {
        Ok(vec![false; len])
    }
}

fn model_or_scene(model: Option<&Path>, scene: &Scene) -> Result<Vec<crate::GaussianPrimitive>> {
    match model {
        Some(p) => ply::read(p),
        None => Ok(scene.gaussians.clone()),
    }
}

fn file_stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into())
}

fn ppm_names(dir: &Path) -> Result<Vec<String>> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".ppm"))
        .collect();
    names.sort();
    Ok(names)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_map_to_config_keys() {
        let cli = Cli::try_parse_from([
            "splatcal", "train", "--scene", "s", "--out", "o", "--kappa", "5", "--iters", "100", "--t-start", "50", "--set",
            "lambda1=0.1",
        ])
        .unwrap();
        let cfg = cli.command.common().resolve_config(None).unwrap();
        assert_eq!(cfg.kappa, 5.0);
        assert_eq!(cfg.total_iters, 100);
        assert_eq!(cfg.t_start, 50);
        assert_eq!(cfg.lambda1, 0.1);
    }

    #[test]
    fn flags_beat_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "kappa = 3.0\neta = 0.25\n").unwrap();
        let cli = Cli::try_parse_from(["splatcal", "analyze-dcp", "x.ppm", "--out", "o", "--config", path.to_str().unwrap(), "--kappa", "7"])
            .unwrap();
        let cfg = cli.command.common().resolve_config(None).unwrap();
        assert_eq!(cfg.kappa, 7.0);
        assert_eq!(cfg.eta, 0.25);
    }

    #[test]
    fn bad_usage_exits_one() {
        assert_eq!(run(["splatcal", "train", "--bogus"]), 1);
        assert_eq!(run(["splatcal"]), 1);
        assert_eq!(run(["splatcal", "train", "--scene", "s", "--out", "o", "--set", "nope=1"]), 1);
    }
}
