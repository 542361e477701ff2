use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use meshsplat::error::{Error, Result};
use meshsplat::image::GrayImage;
use meshsplat::losses_metrics::{LossReport, Stage};
use meshsplat::mesh_pipeline::Pose;
use meshsplat::splatting::{render_frame, Background, RenderMode, Scene};
use meshsplat::synthetic_scenes::{generate_dataset, load_dataset, orbit_camera, save_dataset, Dataset, FrameRecord, SceneSpec};
use meshsplat::training_pipeline::{refine_pose_test_time, report_model, run_pipeline, Checkpoint, Model, ModelReport, Observer, TrainingConfig};
use meshsplat::util::{read_to_string, write_atomic};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(name = "meshsplat", version, about = "Mesh-attached Gaussian splatting: data generation, training, rendering, evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    MeshOnly,
    GaussiansOnly,
    Hybrid,
}

impl From<ModeArg> for RenderMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::MeshOnly => RenderMode::MeshOnly,
            ModeArg::GaussiansOnly => RenderMode::GaussiansOnly,
            ModeArg::Hybrid => RenderMode::Hybrid,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from a scene spec.
    Gen {
        /// Scene spec (TOML); defaults to the reference scene.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the training stages and write a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Training config (TOML); defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Last stage to run (1, 2 or 3).
        #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u8).range(1..=3))]
        stages: u8,
        /// Continue from a checkpoint's stage tag.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Per-iteration JSON-lines log.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Directory for periodic preview renders.
        #[arg(long)]
        previews: Option<PathBuf>,
    },
    /// Render frames of a dataset split, or an orbit, from a checkpoint.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long, value_enum, default_value = "hybrid")]
        mode: ModeArg,
        /// Test-time pose refinement iterations per frame.
        #[arg(long, default_value_t = 0)]
        refine_pose: u64,
        /// Render this many novel orbit views instead of the split's cameras.
        #[arg(long)]
        orbit: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset split.
    Eval {
        /// Checkpoint file, or a run manifest naming one.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long, value_enum, default_value = "hybrid")]
        mode: ModeArg,
        #[arg(long, default_value_t = 0)]
        refine_pose: u64,
        /// Structured metrics output (JSON).
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the resolved training config.
    Config {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct RunManifest {
    command: String,
    config_path: Option<PathBuf>,
    config: serde_json::Value,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    seed: u64,
    stage_seconds: Vec<(String, f64)>,
    report: Option<ModelReport>,
}

impl RunManifest {
    fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, serde_json::to_string_pretty(self).expect("manifest serializes").as_bytes())
    }
}

fn run_manifest_path(out: &Path) -> PathBuf {
    if out.is_dir() {
        out.join("run.json")
    } else {
        out.with_extension("run.json")
    }
}

fn load_config(path: Option<&Path>) -> Result<TrainingConfig> {
    match path {
        Some(p) => TrainingConfig::from_toml(&read_to_string(p)?),
        None => Ok(TrainingConfig::default()),
    }
}

fn mkdir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(format!("creating {}", p.display()), e))
}

fn cmd_gen(spec_path: Option<&Path>, out: &Path) -> Result<()> {
    let spec = match spec_path {
        Some(p) => SceneSpec::from_toml(&read_to_string(p)?)?,
        None => SceneSpec::default(),
    };
    let (data, gt) = generate_dataset(&spec)?;
    mkdir(out)?;
    save_dataset(&data, Some(&gt), out)?;
    println!("wrote {} train and {} test frames to {}", data.train.len(), data.test.len(), out.display());
    RunManifest {
        command: "gen".into(),
        config_path: spec_path.map(Path::to_path_buf),
        config: serde_json::to_value(&spec).expect("spec serializes"),
        inputs: vec![],
        outputs: vec![out.to_path_buf()],
        seed: spec.seed,
        stage_seconds: vec![],
        report: None,
    }
    .write(&out.join("run.json"))
}

struct TrainObserver<'a> {
    log: Option<BufWriter<File>>,
    previews: Option<PathBuf>,
    every: u64,
    data: &'a Dataset,
    started: Instant,
    stage_seconds: Vec<(String, f64)>,
    error: Option<Error>,
}

#[derive(Serialize)]
struct LogLine<'a> {
    stage: u8,
    iteration: u64,
    loss: &'a LossReport,
}

impl TrainObserver<'_> {
    fn preview(&self, dir: &Path, stage: Stage, iteration: u64, model: &Model) -> Result<()> {
        let f = &self.data.train[0];
        let mode = match stage {
            Stage::Gaussians => RenderMode::GaussiansOnly,
            Stage::Texture => RenderMode::MeshOnly,
            Stage::Filter => RenderMode::Hybrid,
        };
        let scene = Scene { gaussians: &model.gaussians, mesh: &self.data.mesh, texture: &model.texture, pose: &model.poses[0], camera: &f.camera };
        let b = render_frame(&scene, mode, Background::Color([0.0; 3]))?;
        let name = |s: &str| dir.join(format!("stage{}_{iteration:05}_{s}.png", stage.number()));
        b.gaussians.save_png(&name("gaussians"))?;
        b.alpha.save_png(&name("alpha"))?;
        b.mesh.save_png(&name("mesh"))?;
        GrayImage::normalized_finite(&b.depth).save_png(&name("depth"))?;
        b.image.save_png(&name("image"))
    }
}

impl Observer for TrainObserver<'_> {
    fn iteration(&mut self, stage: Stage, iteration: u64, report: &LossReport, model: &Model) {
        if self.error.is_some() {
            return;
        }
        if let Some(log) = &mut self.log {
            let line = serde_json::to_string(&LogLine { stage: stage.number(), iteration, loss: report }).expect("log line serializes");
            if let Err(e) = writeln!(log, "{line}") {
                self.error = Some(Error::io("writing log", e));
            }
        }
        if let Some(dir) = self.previews.clone() {
            if self.every > 0 && iteration % self.every == 0 {
                if let Err(e) = self.preview(&dir, stage, iteration, model) {
                    self.error = Some(e);
                }
            }
        }
    }

    fn stage_done(&mut self, stage: Stage, _model: &Model) {
        let now = Instant::now();
        self.stage_seconds.push((format!("stage{}", stage.number()), (now - self.started).as_secs_f64()));
        self.started = now;
    }
}

struct TrainArgs<'a> {
    data: &'a Path,
    config: Option<&'a Path>,
    out: &'a Path,
    stages: u8,
    resume: Option<&'a Path>,
    log: Option<&'a Path>,
    previews: Option<&'a Path>,
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let cfg = load_config(a.config)?;
    let data = load_dataset(a.data)?;
    let resume = a.resume.map(Checkpoint::load).transpose()?;
    let last = Stage::from_number(a.stages).ok_or_else(|| Error::InvalidSpec(format!("stage {}", a.stages)))?;
    if let Some(dir) = a.previews {
        mkdir(dir)?;
    }
    let log = a.log.map(|p| File::create(p).map(BufWriter::new).map_err(|e| Error::io(format!("creating {}", p.display()), e))).transpose()?;
    let mut obs = TrainObserver {
        log,
        previews: a.previews.map(Path::to_path_buf),
        every: cfg.preview_every,
        data: &data,
        started: Instant::now(),
        stage_seconds: vec![],
        error: None,
    };
    let ckpt = run_pipeline(&data, &cfg, resume.as_ref(), last, &mut obs)?;
    if let Some(e) = obs.error.take() {
        return Err(e);
    }
    if let Some(mut log) = obs.log.take() {
        log.flush().map_err(|e| Error::io("flushing log", e))?;
    }
    ckpt.save(a.out)?;
    let report = report_model(&ckpt, &data.mesh, &data.train, &ckpt.poses, RenderMode::Hybrid)?;
    println!("stage {} checkpoint: {} Gaussians, {} bytes, train PSNR {:.2} dB", ckpt.stage, report.gaussian_count, report.storage_bytes, report.mean_psnr);
    let mut inputs = vec![a.data.to_path_buf()];
    inputs.extend(a.resume.map(Path::to_path_buf));
    let mut outputs = vec![a.out.to_path_buf()];
    outputs.extend(a.log.map(Path::to_path_buf));
    outputs.extend(a.previews.map(Path::to_path_buf));
    RunManifest {
        command: "train".into(),
        config_path: a.config.map(Path::to_path_buf),
        config: serde_json::to_value(&cfg).expect("config serializes"),
        inputs,
        outputs,
        seed: cfg.seed,
        stage_seconds: obs.stage_seconds,
        report: Some(report),
    }
    .write(&run_manifest_path(a.out))
}

fn split_frames(data: &Dataset, split: SplitArg) -> &[FrameRecord] {
    match split {
        SplitArg::Train => &data.train,
        SplitArg::Test => &data.test,
    }
}

/// Starting poses: refined training poses from the checkpoint where they
/// exist, otherwise the dataset's.
fn start_poses(ckpt: &Checkpoint, frames: &[FrameRecord], split: SplitArg) -> Vec<Pose> {
    match split {
        SplitArg::Train if ckpt.poses.len() == frames.len() => ckpt.poses.clone(),
        _ => frames.iter().map(|f| f.pose.clone()).collect(),
    }
}

fn refined_poses(ckpt: &Checkpoint, data: &Dataset, frames: &[FrameRecord], split: SplitArg, iterations: u64) -> Result<Vec<Pose>> {
    let poses = start_poses(ckpt, frames, split);
    if iterations == 0 {
        return Ok(poses);
    }
    let cfg = if ckpt.config.is_empty() { TrainingConfig::default() } else { TrainingConfig::from_toml(&ckpt.config)? };
    frames
        .iter()
        .zip(&poses)
        .map(|(f, p)| refine_pose_test_time(f, &data.mesh, &ckpt.gaussians, &ckpt.texture, p, iterations, cfg.lr_pose, &cfg.weights()).map(|r| r.0))
        .collect()
}

struct RenderArgs<'a> {
    checkpoint: &'a Path,
    data: &'a Path,
    split: SplitArg,
    mode: RenderMode,
    refine_pose: u64,
    orbit: Option<usize>,
    out: &'a Path,
}

fn cmd_render(a: RenderArgs) -> Result<()> {
    let ckpt = Checkpoint::load(a.checkpoint)?;
    let data = load_dataset(a.data)?;
    let frames = split_frames(&data, a.split);
    mkdir(a.out)?;
    let mut written = vec![];
    match a.orbit {
        Some(n) => {
            let spec = data.spec.clone().unwrap_or_default();
            let pose = frames.first().map(|f| f.pose.clone()).unwrap_or_else(|| Pose::identity(data.mesh.joints.len()));
            for i in 0..n {
                let cam = orbit_camera(&spec, std::f64::consts::TAU * i as f64 / n.max(1) as f64)?;
                let scene = Scene { gaussians: &ckpt.gaussians, mesh: &data.mesh, texture: &ckpt.texture, pose: &pose, camera: &cam };
                let path = a.out.join(format!("orbit_{i:04}.png"));
                render_frame(&scene, a.mode, Background::Color([0.0; 3]))?.image.save_png(&path)?;
                written.push(path);
            }
        }
        None => {
            if frames.is_empty() {
                return Err(Error::InvalidScene("split has no frames".into()));
            }
            let poses = refined_poses(&ckpt, &data, frames, a.split, a.refine_pose)?;
            for (i, (f, pose)) in frames.iter().zip(&poses).enumerate() {
                let scene = Scene { gaussians: &ckpt.gaussians, mesh: &data.mesh, texture: &ckpt.texture, pose, camera: &f.camera };
                let path = a.out.join(format!("{i:04}.png"));
                render_frame(&scene, a.mode, Background::Color([0.0; 3]))?.image.save_png(&path)?;
                written.push(path);
            }
        }
    }
    println!("wrote {} frames to {}", written.len(), a.out.display());
    RunManifest {
        command: "render".into(),
        config_path: None,
        config: serde_json::json!({ "mode": a.mode, "refine_pose": a.refine_pose, "orbit": a.orbit }),
        inputs: vec![a.checkpoint.to_path_buf(), a.data.to_path_buf()],
        outputs: written,
        seed: 0,
        stage_seconds: vec![],
        report: None,
    }
    .write(&a.out.join("run.json"))
}

/// Accepts a checkpoint or a run manifest whose first output is one.
fn resolve_checkpoint(path: &Path) -> Result<PathBuf> {
    if path.extension().is_some_and(|e| e == "json") {
        let m: RunManifest = serde_json::from_str(&read_to_string(path)?).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        return m.outputs.into_iter().next().ok_or_else(|| Error::Parse("run manifest lists no outputs".into()));
    }
    Ok(path.to_path_buf())
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    split: &'a str,
    mode: RenderMode,
    /// Dataset frames are 8-bit, which bounds round-trip PSNR near 48 dB.
    note: &'a str,
    report: &'a ModelReport,
}

fn cmd_eval(checkpoint: &Path, data_dir: &Path, split: SplitArg, mode: RenderMode, refine: u64, out: &Path) -> Result<()> {
    let ckpt_path = resolve_checkpoint(checkpoint)?;
    let ckpt = Checkpoint::load(&ckpt_path)?;
    let data = load_dataset(data_dir)?;
    let frames = split_frames(&data, split);
    if frames.is_empty() {
        return Err(Error::InvalidScene("split has no frames".into()));
    }
    let poses = refined_poses(&ckpt, &data, frames, split, refine)?;
    let report = report_model(&ckpt, &data.mesh, frames, &poses, mode)?;
    let split_name = match split {
        SplitArg::Train => "train",
        SplitArg::Test => "test",
    };
    println!("frame  psnr_db  ssim");
    for (i, m) in report.frames.iter().enumerate() {
        println!("{i:5}  {:7.3}  {:.4}", m.psnr, m.ssim);
    }
    println!("mean   {:7.3}  {:.4}", report.mean_psnr, report.mean_ssim);
    println!("gaussians {}  storage {} bytes", report.gaussian_count, report.storage_bytes);
    let note = "ground truth is stored as 8-bit PNG; renders are rounded to 8 bits before scoring";
    let body = EvalOutput { split: split_name, mode, note, report: &report };
    write_atomic(out, serde_json::to_string_pretty(&body).expect("metrics serialize").as_bytes())?;
    RunManifest {
        command: "eval".into(),
        config_path: None,
        config: serde_json::json!({ "split": split_name, "mode": mode, "refine_pose": refine }),
        inputs: vec![ckpt_path, data_dir.to_path_buf()],
        outputs: vec![out.to_path_buf()],
        seed: 0,
        stage_seconds: vec![],
        report: Some(report),
    }
    .write(&run_manifest_path(out))
}

fn cmd_config(path: Option<&Path>) -> Result<()> {
    print!("{}", load_config(path)?.to_toml());
    Ok(())
}

fn configure_threads() -> std::result::Result<(), String> {
    let Ok(v) = std::env::var("MESHSPLAT_THREADS") else { return Ok(()) };
    let n: usize = v.parse().map_err(|_| format!("MESHSPLAT_THREADS must be a positive integer, got {v:?}"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonFiniteGradient(_) => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(EXIT_USAGE);
    }
    let result = match &cli.command {
        Command::Gen { spec, out } => cmd_gen(spec.as_deref(), out),
        Command::Train { data, config, out, stages, resume, log, previews } => cmd_train(TrainArgs {
            data,
            config: config.as_deref(),
            out,
            stages: *stages,
            resume: resume.as_deref(),
            log: log.as_deref(),
            previews: previews.as_deref(),
        }),
        Command::Render { checkpoint, data, split, mode, refine_pose, orbit, out } => {
            cmd_render(RenderArgs { checkpoint, data, split: *split, mode: (*mode).into(), refine_pose: *refine_pose, orbit: *orbit, out })
        }
        Command::Eval { checkpoint, data, split, mode, refine_pose, out } => cmd_eval(checkpoint, data, *split, (*mode).into(), *refine_pose, out),
        Command::Config { config } => cmd_config(config.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
