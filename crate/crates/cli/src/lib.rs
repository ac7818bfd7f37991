//! The `depthtrack` command line: synthetic data generation, tracking, the
//! patch-size sweep, random error and the registration baselines.
//!
//! Every command writes its outputs plus a `manifest.json` into `--out`. The
//! manifest stores the resolved invocation, so `depthtrack rerun` can repeat
//! a run from it alone.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use depthtrack::baselines::{evaluate_baselines, BaselineConfig, IcpInit, Method};
use depthtrack::depthio::{
    load_camera_rig, load_depth_frame, load_mask, save_camera_rig, save_depth_frame, CameraRig,
    DepthFrame,
};
use depthtrack::geometry::{estimate_pose_size, locate_corners};
use depthtrack::metrics::{
    corner_error, patch_sweep, pixel_corner_error, random_error, DepthSeries, LabeledFrame,
    SweepTiming,
};
use depthtrack::synthcam::{
    load_noise_spec, load_scene_spec, orbit_trajectory, render_sequence, save_scene_spec,
    save_truth, static_offset_pose, Background, NoiseSpec, SceneSpec, SceneTruth,
};
use depthtrack::tracker::{track, TrackerConfig};
use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Parser, Debug)]
#[command(
    name = "depthtrack",
    version,
    about = "Planar target tracking on depth frames"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Render numbered synthetic frames with ground truth.
    Synth(SynthArgs),
    /// Track every frame in a directory.
    Track(TrackArgs),
    /// Track every frame once per patch size.
    Sweep(SweepArgs),
    /// Per-pixel depth standard deviation over a static series.
    Randerr(RanderrArgs),
    /// Compare ICP, RANSAC and the tracker.
    Baseline(BaselineArgs),
    /// Repeat the run recorded in a manifest.
    Rerun(RerunArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Track(_) => "track",
            Command::Sweep(_) => "sweep",
            Command::Randerr(_) => "randerr",
            Command::Baseline(_) => "baseline",
            Command::Rerun(_) => "rerun",
        }
    }
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct Common {
    /// Camera rig JSON.
    #[arg(long)]
    pub rig: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Command-specific JSON settings; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Po1,
    Po2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Trajectory {
    Orbit,
    Static,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackgroundArg {
    NoReturn,
    Far,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    /// Scene JSON; overrides --preset.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Preset::Po1)]
    pub preset: Preset,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub frames: u64,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub boundary_scale: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long, value_enum, default_value_t = Trajectory::Orbit)]
    pub trajectory: Trajectory,
    #[arg(long, default_value_t = 300.0)]
    pub min_range: f64,
    #[arg(long, default_value_t = 900.0)]
    pub max_range: f64,
    /// Static trajectory: distance in front of the plate.
    #[arg(long, default_value_t = 500.0)]
    pub distance: f64,
    /// Static trajectory: camera height above the plate center.
    #[arg(long, default_value_t = 142.0)]
    pub height: f64,
    #[arg(long)]
    pub no_arm: bool,
    #[arg(long, value_enum)]
    pub background: Option<BackgroundArg>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrackerFlags {
    #[arg(long, value_parser = odd_size)]
    pub patch: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub threshold_lo: Option<u16>,
    #[arg(long)]
    pub threshold_hi: Option<u16>,
    #[arg(long)]
    pub min_region: Option<usize>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct TrackArgs {
    #[command(flatten)]
    pub common: Common,
    /// Directory of frame_NNNN.pgm files.
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub tracker: TrackerFlags,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_delimiter = ',', value_parser = odd_size, default_values_t = [1, 3, 5, 7, 9, 11, 13])]
    pub sizes: Vec<usize>,
    /// Timed repetitions of patch sampling per frame and size.
    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
    pub repeats: u64,
    #[command(flatten)]
    pub tracker: TrackerFlags,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct RanderrArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub input: PathBuf,
    /// Mask PGM; defaults to the truth mask of the first frame.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Erode the mask by this many pixels first.
    #[arg(long, default_value_t = 0)]
    pub erode: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodArg {
    Icp,
    Ransac,
    Tracker,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Icp => Method::Icp,
            MethodArg::Ransac => Method::Ransac,
            MethodArg::Tracker => Method::Tracker,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitArg {
    Truth,
    Perturbed,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct BaselineArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [MethodArg::Icp, MethodArg::Ransac])]
    pub method: Vec<MethodArg>,
    #[arg(long, value_enum)]
    pub init: Option<InitArg>,
    #[arg(long, default_value_t = 5.0)]
    pub rot_deg: f64,
    #[arg(long, default_value_t = 10.0)]
    pub trans_mm: f64,
    #[arg(long)]
    pub threshold_mm: Option<f64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub icp_iters: Option<usize>,
    #[arg(long)]
    pub model_points: Option<usize>,
    /// Tracker settings JSON, used when `tracker` is among the methods.
    #[arg(long)]
    pub tracker_config: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct RerunArgs {
    pub manifest: PathBuf,
    /// Write to this directory instead of the recorded one.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn odd_size(s: &str) -> std::result::Result<usize, String> {
    let v: usize = s.parse().map_err(|e| format!("{e}"))?;
    if v == 0 || v.is_multiple_of(2) {
        return Err(format!("patch size must be odd and at least 1, got {v}"));
    }
    Ok(v)
}

/// Bad settings, as opposed to a failure while running.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub invocation: Command,
    pub config: serde_json::Value,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub error_tallies: BTreeMap<String, usize>,
}

impl RunManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

struct Run {
    out: PathBuf,
    inputs: Vec<String>,
    outputs: Vec<String>,
    tallies: BTreeMap<String, usize>,
}

impl Run {
    fn new(out: &Path) -> Result<Self> {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Self {
            out: out.to_path_buf(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            tallies: BTreeMap::new(),
        })
    }

    fn output(&mut self, name: &str) -> PathBuf {
        let p = self.out.join(name);
        self.outputs.push(p.display().to_string());
        p
    }

    fn input(&mut self, p: &Path) {
        self.inputs.push(p.display().to_string());
    }

    fn tally(&mut self, code: &str) {
        if code != "ok" {
            *self.tallies.entry(code.to_string()).or_insert(0) += 1;
        }
    }

    fn finish(
        mut self,
        command: &Command,
        seed: u64,
        config: serde_json::Value,
    ) -> Result<RunManifest> {
        let path = self.output(MANIFEST_NAME);
        let manifest = RunManifest {
            command: command.name().into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            invocation: command.clone(),
            config,
            inputs: self.inputs,
            outputs: self.outputs,
            error_tallies: self.tallies,
        };
        fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
        Ok(manifest)
    }
}

/// Parses `args` (without the program name) and runs the command.
pub fn run_args<I, S>(args: I) -> Result<RunManifest>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(
        std::iter::once("depthtrack".into()).chain(args.into_iter().map(Into::into)),
    )?;
    run(cli.command)
}

pub fn run(command: Command) -> Result<RunManifest> {
    let command = absolutize(command)?;
    match &command {
        Command::Synth(a) => cmd_synth(&command, a),
        Command::Track(a) => cmd_track(&command, a),
        Command::Sweep(a) => cmd_sweep(&command, a),
        Command::Randerr(a) => cmd_randerr(&command, a),
        Command::Baseline(a) => cmd_baseline(&command, a),
        Command::Rerun(a) => {
            let manifest = RunManifest::load(&a.manifest)?;
            let mut recorded = manifest.invocation;
            if let Some(out) = &a.out {
                common_mut(&mut recorded)
                    .ok_or_else(|| config_err("manifest records a rerun"))?
                    .out = out.clone();
            }
            if matches!(recorded, Command::Rerun(_)) {
                bail!(config_err("manifest records a rerun"));
            }
            run(recorded)
        }
    }
}

fn common_mut(c: &mut Command) -> Option<&mut Common> {
    match c {
        Command::Synth(a) => Some(&mut a.common),
        Command::Track(a) => Some(&mut a.common),
        Command::Sweep(a) => Some(&mut a.common),
        Command::Randerr(a) => Some(&mut a.common),
        Command::Baseline(a) => Some(&mut a.common),
        Command::Rerun(_) => None,
    }
}

fn absolute(p: &mut PathBuf) -> Result<()> {
    *p = std::path::absolute(&*p)?;
    Ok(())
}

fn absolute_opt(p: &mut Option<PathBuf>) -> Result<()> {
    if let Some(p) = p {
        absolute(p)?;
    }
    Ok(())
}

/// Makes every path absolute so the recorded invocation does not depend on
/// the working directory.
fn absolutize(mut c: Command) -> Result<Command> {
    if let Some(common) = common_mut(&mut c) {
        absolute(&mut common.out)?;
        absolute_opt(&mut common.rig)?;
        absolute_opt(&mut common.config)?;
    }
    match &mut c {
        Command::Synth(a) => absolute_opt(&mut a.scene)?,
        Command::Track(a) => absolute(&mut a.input)?,
        Command::Sweep(a) => absolute(&mut a.input)?,
        Command::Randerr(a) => {
            absolute(&mut a.input)?;
            absolute_opt(&mut a.mask)?;
        }
        Command::Baseline(a) => {
            absolute(&mut a.input)?;
            absolute_opt(&mut a.tracker_config)?;
        }
        Command::Rerun(a) => {
            absolute(&mut a.manifest)?;
            absolute_opt(&mut a.out)?;
        }
    }
    Ok(c)
}

/// Stable 64-bit mix of a seed with a purpose tag.
pub fn sub_seed(seed: u64, purpose: u64) -> u64 {
    let mut z = seed ^ purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const NOISE_PURPOSE: u64 = 1;
const BASELINE_PURPOSE: u64 = 2;

/// The rig used when `--rig` is absent: 488×450 pinhole, f = 300 px.
pub fn default_rig() -> CameraRig {
    CameraRig::new(
        488,
        450,
        300.0,
        300.0,
        243.5,
        224.5,
        0.0,
        0.0,
        Matrix4::identity(),
    )
    .expect("valid built-in rig")
}

fn frame_stem(i: usize) -> String {
    format!("frame_{i:04}")
}

fn fmt_f(v: f64) -> String {
    format!("{v}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f).unwrap_or_default()
}

// ---------------------------------------------------------------------------
// synth

fn cmd_synth(command: &Command, a: &SynthArgs) -> Result<RunManifest> {
    let mut run = Run::new(&a.common.out)?;
    let mut spec = match &a.scene {
        Some(p) => {
            run.input(p);
            load_scene_spec(p).map_err(|e| config_err(format!("scene {}: {e}", p.display())))?
        }
        None => match a.preset {
            Preset::Po1 => SceneSpec::po1(),
            Preset::Po2 => SceneSpec::po2(),
        },
    };
    if a.no_arm {
        spec.arm_enabled = false;
    }
    if let Some(b) = a.background {
        spec.background = match b {
            BackgroundArg::NoReturn => Background::NoReturn,
            BackgroundArg::Far => Background::Far,
        };
    }
    spec.validate().map_err(|e| config_err(e.to_string()))?;

    let mut noise = match &a.common.config {
        Some(p) => {
            run.input(p);
            load_noise_spec(p).map_err(|e| config_err(format!("noise {}: {e}", p.display())))?
        }
        None => NoiseSpec::none(),
    };
    noise.sigma = a.sigma.unwrap_or(noise.sigma);
    noise.boundary_sigma_scale = a.boundary_scale.unwrap_or(noise.boundary_sigma_scale);
    noise.dropout_prob = a.dropout.unwrap_or(noise.dropout_prob);
    noise.seed = sub_seed(a.common.seed, NOISE_PURPOSE);
    noise.validate().map_err(|e| config_err(e.to_string()))?;

    let rig = load_rig(&mut run, a.common.rig.as_deref())?;
    let n = a.frames as usize;
    if !(a.min_range > 0.0 && a.min_range <= a.max_range) {
        bail!(config_err(format!(
            "range [{}, {}]",
            a.min_range, a.max_range
        )));
    }
    let poses = match a.trajectory {
        Trajectory::Orbit => orbit_trajectory(&spec, n, a.min_range, a.max_range),
        Trajectory::Static => vec![static_offset_pose(&spec, a.distance, a.height); n],
    };
    let rendered = render_sequence(&spec, &rig, &noise, n, &poses)?;

    save_scene_spec(&spec, run.output("scene.json"))?;
    for (i, ((frame, truth), pose)) in rendered.iter().zip(&poses).enumerate() {
        let stem = frame_stem(i);
        save_depth_frame(frame, run.output(&format!("{stem}.pgm")))?;
        let truth_path = run.output(&format!("{stem}.truth.json"));
        save_truth(truth, truth_path, run.output(&format!("{stem}.mask.pgm")))?;
        save_camera_rig(
            &rig.with_pose(*pose)?,
            run.output(&format!("{stem}.rig.json")),
        )?;
    }
    let config = serde_json::json!({
        "scene": spec.to_file(),
        "noise": noise,
        "rig": rig.to_file(),
        "trajectory": a.trajectory,
        "frames": n,
    });
    run.finish(command, a.common.seed, config)
}

fn load_rig(run: &mut Run, path: Option<&Path>) -> Result<CameraRig> {
    match path {
        Some(p) => {
            run.input(p);
            load_camera_rig(p).map_err(|e| config_err(format!("rig {}: {e}", p.display())))
        }
        None => Ok(default_rig()),
    }
}

// ---------------------------------------------------------------------------
// frame directories

/// Frame indices and paths of `frame_NNNN.pgm` files, ascending.
pub fn list_frames(dir: &Path) -> Result<Vec<(usize, PathBuf)>> {
    let mut frames = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        let Some(digits) = name
            .strip_prefix("frame_")
            .and_then(|r| r.strip_suffix(".pgm"))
        else {
            continue;
        };
        if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) {
            frames.push((digits.parse()?, path));
        }
    }
    frames.sort();
    if frames.is_empty() {
        bail!(config_err(format!(
            "no frame_NNNN.pgm files in {}",
            dir.display()
        )));
    }
    Ok(frames)
}

struct FrameInputs {
    frame: Result<DepthFrame, String>,
    rig: Option<CameraRig>,
    truth: Option<SceneTruth>,
}

fn sidecar(frame: &Path, suffix: &str) -> PathBuf {
    let stem = frame
        .file_stem()
        .unwrap_or_default()
        .to_string_lossy()
        .into_owned();
    frame.with_file_name(format!("{stem}{suffix}"))
}

fn load_inputs(run: &mut Run, path: &Path, fallback_rig: Option<&CameraRig>) -> FrameInputs {
    run.input(path);
    let frame = load_depth_frame(path).map_err(|e| e.to_string());
    let rig_path = sidecar(path, ".rig.json");
    let rig = if rig_path.exists() {
        run.input(&rig_path);
        load_camera_rig(&rig_path).ok()
    } else {
        fallback_rig.cloned()
    };
    let truth_path = sidecar(path, ".truth.json");
    let truth = if truth_path.exists() {
        run.input(&truth_path);
        depthtrack::synthcam::load_truth(&truth_path).ok()
    } else {
        None
    };
    FrameInputs { frame, rig, truth }
}

fn optional_rig(run: &mut Run, path: Option<&Path>) -> Result<Option<CameraRig>> {
    path.map(|p| load_rig(run, Some(p))).transpose()
}

fn tracker_config(
    run: &mut Run,
    path: Option<&Path>,
    flags: &TrackerFlags,
) -> Result<TrackerConfig> {
    let mut cfg = match path {
        Some(p) => {
            run.input(p);
            TrackerConfig::load(p)
                .map_err(|e| config_err(format!("tracker config {}: {e}", p.display())))?
        }
        None => TrackerConfig::default(),
    };
    if let Some(v) = flags.patch {
        cfg.patch_size = v;
    }
    if let Some(v) = flags.epsilon {
        cfg.simplify_epsilon = v;
    }
    if let Some(v) = flags.threshold_lo {
        cfg.threshold_lo = v;
    }
    if let Some(v) = flags.threshold_hi {
        cfg.threshold_hi = v;
    }
    if let Some(v) = flags.min_region {
        cfg.min_region_px = v;
    }
    cfg.validate().map_err(|e| config_err(e.to_string()))?;
    Ok(cfg)
}

// ---------------------------------------------------------------------------
// track

pub const TRACK_COLUMNS: [&str; 30] = [
    "frame_id",
    "error_code",
    "latency_ms",
    "u0",
    "v0",
    "u1",
    "v1",
    "u2",
    "v2",
    "u3",
    "v3",
    "x0",
    "y0",
    "z0",
    "x1",
    "y1",
    "z1",
    "x2",
    "y2",
    "z2",
    "x3",
    "y3",
    "z3",
    "center_x",
    "center_y",
    "center_z",
    "width_mm",
    "height_mm",
    "pixel_err_px",
    "corner_err_mm",
];

fn cmd_track(command: &Command, a: &TrackArgs) -> Result<RunManifest> {
    let mut run = Run::new(&a.common.out)?;
    let cfg = tracker_config(&mut run, a.common.config.as_deref(), &a.tracker)?;
    let rig = optional_rig(&mut run, a.common.rig.as_deref())?;
    let frames = list_frames(&a.input)?;
    let mut w = csv::Writer::from_path(run.output("track.csv"))?;
    w.write_record(TRACK_COLUMNS)?;
    for (id, path) in frames {
        let inputs = load_inputs(&mut run, &path, rig.as_ref());
        let mut record = vec![id.to_string(), String::new(), String::new()];
        let code = match track_frame(&inputs, &cfg) {
            Ok(t) => {
                record[2] = fmt_f(t.latency_ms);
                record.extend(t.pixels.iter().flat_map(|p| [fmt_f(p.x), fmt_f(p.y)]));
                record.extend(
                    t.world
                        .iter()
                        .flat_map(|p| [fmt_f(p.0.x), fmt_f(p.0.y), fmt_f(p.0.z)]),
                );
                match t.pose {
                    Some(pose) => {
                        record
                            .extend([pose.center.0.x, pose.center.0.y, pose.center.0.z].map(fmt_f));
                        record.extend([pose.edge_u, pose.edge_v].map(fmt_f));
                    }
                    None => record.extend(std::iter::repeat_n(String::new(), 5)),
                }
                record.push(fmt_opt(t.pixel_err_px));
                record.push(fmt_opt(t.corner_err_mm));
                "ok".to_string()
            }
            Err(code) => code,
        };
        record.resize(TRACK_COLUMNS.len(), String::new());
        record[1] = code.clone();
        run.tally(&code);
        w.write_record(&record)?;
    }
    w.flush()?;
    let config = serde_json::json!({ "tracker": cfg });
    run.finish(command, a.common.seed, config)
}

struct Tracked {
    latency_ms: f64,
    pixels: [nalgebra::Point2<f64>; 4],
    world: [depthtrack::geometry::WorldPoint; 4],
    pose: Option<depthtrack::geometry::PlanePose>,
    corner_err_mm: Option<f64>,
    pixel_err_px: Option<f64>,
}

fn track_frame(inputs: &FrameInputs, cfg: &TrackerConfig) -> std::result::Result<Tracked, String> {
    let frame = inputs.frame.as_ref().map_err(|_| "io-error".to_string())?;
    let rig = inputs
        .rig
        .as_ref()
        .ok_or_else(|| "missing-rig".to_string())?;
    let start = Instant::now();
    let out = track(frame, cfg).map_err(|e| e.code().to_string())?;
    let world = locate_corners(rig, &out.quad.corners, &out.quad.depths)
        .map_err(|_| "degenerate-geometry".to_string())?;
    let latency_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(Tracked {
        latency_ms,
        pixels: out.quad.corners,
        world,
        pose: estimate_pose_size(&world).ok(),
        corner_err_mm: inputs
            .truth
            .as_ref()
            .map(|t| corner_error(&world, &t.world_corners).mean),
        pixel_err_px: inputs
            .truth
            .as_ref()
            .map(|t| pixel_corner_error(&out.quad.corners, &t.pixel_corners).mean),
    })
}

// ---------------------------------------------------------------------------
// sweep

pub const SWEEP_COLUMNS: [&str; 6] = [
    "patch_size",
    "frame_id",
    "latency_ms",
    "mean_corner_err_mm",
    "dice",
    "error_code",
];

/// Loaded frames, their file indices, and the indices that failed with a code.
type Labeled = (Vec<LabeledFrame>, Vec<usize>, Vec<(usize, String)>);

fn labeled_frames(run: &mut Run, input: &Path, rig: Option<&CameraRig>) -> Result<Labeled> {
    let mut labeled = Vec::new();
    let mut ids = Vec::new();
    let mut failed = Vec::new();
    for (id, path) in list_frames(input)? {
        let inputs = load_inputs(run, &path, rig);
        match (inputs.frame, inputs.rig, inputs.truth) {
            (Err(_), _, _) => failed.push((id, "io-error".to_string())),
            (_, None, _) => failed.push((id, "missing-rig".to_string())),
            (_, _, None) => failed.push((id, "missing-truth".to_string())),
            (Ok(frame), Some(rig), Some(truth)) => {
                labeled.push(LabeledFrame { frame, truth, rig });
                ids.push(id);
            }
        }
    }
    Ok((labeled, ids, failed))
}

fn cmd_sweep(command: &Command, a: &SweepArgs) -> Result<RunManifest> {
    let mut run = Run::new(&a.common.out)?;
    let cfg = tracker_config(&mut run, a.common.config.as_deref(), &a.tracker)?;
    let rig = optional_rig(&mut run, a.common.rig.as_deref())?;
    let (labeled, ids, failed) = labeled_frames(&mut run, &a.input, rig.as_ref())?;
    let timing = SweepTiming {
        repeats: a.repeats as usize,
    };
    let result =
        patch_sweep(&labeled, &a.sizes, &cfg, timing).map_err(|e| config_err(e.to_string()))?;

    let mut rows: Vec<(usize, usize, [String; 4])> = result
        .rows
        .iter()
        .map(|r| {
            (
                r.patch_size,
                ids[r.frame_id],
                [
                    fmt_opt(r.latency_ms),
                    fmt_opt(r.mean_corner_err_mm),
                    fmt_opt(r.dice),
                    r.error_code.clone(),
                ],
            )
        })
        .collect();
    for s in &result.summaries {
        for (id, code) in &failed {
            rows.push((
                s.patch_size,
                *id,
                [String::new(), String::new(), String::new(), code.clone()],
            ));
        }
    }
    rows.sort_by_key(|r| (r.0, r.1));

    let mut w = csv::Writer::from_path(run.output("sweep.csv"))?;
    w.write_record(SWEEP_COLUMNS)?;
    for (size, id, [lat, err, dice, code]) in &rows {
        run.tally(code);
        w.write_record([
            size.to_string(),
            id.to_string(),
            lat.clone(),
            err.clone(),
            dice.clone(),
            code.clone(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(run.output("sweep_summary.csv"))?;
    w.write_record([
        "patch_size",
        "frames_ok",
        "latency_mean_ms",
        "latency_sd_ms",
        "accuracy_mean_mm",
        "accuracy_sd_mm",
        "dice_mean",
        "dice_sd",
        "work_per_frame",
        "errors",
    ])?;
    for s in &result.summaries {
        let stat = |m: &Option<depthtrack::metrics::MetricsRecord>| {
            m.as_ref().map_or([String::new(), String::new()], |m| {
                [fmt_f(m.mean), fmt_f(m.sd)]
            })
        };
        let [lm, ls] = stat(&s.latency);
        let [am, asd] = stat(&s.accuracy);
        let [dm, ds] = stat(&s.dice);
        let frames_ok = s.accuracy.as_ref().map_or(0, |m| m.values.len());
        let mut errors = s.errors.clone();
        for (_, code) in &failed {
            *errors.entry(code.clone()).or_insert(0) += 1;
        }
        let errors = errors
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(";");
        w.write_record([
            s.patch_size.to_string(),
            frames_ok.to_string(),
            lm,
            ls,
            am,
            asd,
            dm,
            ds,
            s.work_per_frame.to_string(),
            errors,
        ])?;
    }
    w.flush()?;
    let config = serde_json::json!({ "tracker": cfg, "sizes": a.sizes, "repeats": a.repeats });
    run.finish(command, a.common.seed, config)
}

// ---------------------------------------------------------------------------
// randerr

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RanderrReport {
    pub frames: usize,
    pub pixels: usize,
    pub mean_mm: f64,
    pub sd_mm: f64,
    pub min_mm: f64,
    pub max_mm: f64,
}

fn cmd_randerr(command: &Command, a: &RanderrArgs) -> Result<RunManifest> {
    let mut run = Run::new(&a.common.out)?;
    let paths = list_frames(&a.input)?;
    let mask_path = match &a.mask {
        Some(p) => p.clone(),
        None => sidecar(&paths[0].1, ".mask.pgm"),
    };
    run.input(&mask_path);
    let mask = load_mask(&mask_path)
        .map_err(|e| config_err(format!("mask {}: {e}", mask_path.display())))?
        .eroded(a.erode);
    let mut frames = Vec::with_capacity(paths.len());
    for (_, p) in &paths {
        run.input(p);
        frames.push(load_depth_frame(p).with_context(|| format!("reading {}", p.display()))?);
    }
    let series = DepthSeries::new(frames, mask).map_err(|e| config_err(e.to_string()))?;
    let report = random_error(&series).map_err(|e| config_err(e.to_string()))?;

    let width = series.mask().width;
    let mut w = csv::Writer::from_path(run.output("randerr_map.csv"))?;
    w.write_record(["x", "y", "random_error_mm"])?;
    for (i, v) in report.map.iter().enumerate() {
        if let Some(v) = v {
            w.write_record([(i % width).to_string(), (i / width).to_string(), fmt_f(*v)])?;
        }
    }
    w.flush()?;
    let summary = RanderrReport {
        frames: series.frames().len(),
        pixels: series.mask().count(),
        mean_mm: report.mean,
        sd_mm: report.sd,
        min_mm: report.min,
        max_mm: report.max,
    };
    fs::write(
        run.output("randerr.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    let config = serde_json::json!({ "erode": a.erode, "mask": mask_path.display().to_string() });
    run.finish(command, a.common.seed, config)
}

// ---------------------------------------------------------------------------
// baseline

pub const BASELINE_COLUMNS: [&str; 6] = [
    "method",
    "frame",
    "accuracy_value",
    "accuracy_kind",
    "elapsed_ms",
    "error_code",
];

fn cmd_baseline(command: &Command, a: &BaselineArgs) -> Result<RunManifest> {
    let mut run = Run::new(&a.common.out)?;
    let mut cfg = match &a.common.config {
        Some(p) => {
            run.input(p);
            let text = fs::read_to_string(p)?;
            serde_json::from_str::<BaselineConfig>(&text)
                .map_err(|e| config_err(format!("baseline config {}: {e}", p.display())))?
        }
        None => BaselineConfig::default(),
    };
    match a.init {
        Some(InitArg::Truth) => cfg.icp_init = IcpInit::Truth,
        Some(InitArg::Perturbed) => {
            cfg.icp_init = IcpInit::Perturbed {
                rotation_deg: a.rot_deg,
                translation_mm: a.trans_mm,
            }
        }
        None => {}
    }
    cfg.ransac_threshold_mm = a.threshold_mm.unwrap_or(cfg.ransac_threshold_mm);
    cfg.ransac_iterations = a.iterations.unwrap_or(cfg.ransac_iterations);
    cfg.icp_max_iters = a.icp_iters.unwrap_or(cfg.icp_max_iters);
    cfg.model_points = a.model_points.unwrap_or(cfg.model_points);
    cfg.seed = sub_seed(a.common.seed, BASELINE_PURPOSE);
    if !(cfg.ransac_threshold_mm > 0.0)
        || cfg.ransac_iterations == 0
        || cfg.icp_max_iters == 0
        || cfg.model_points < 3
    {
        bail!(config_err(format!("invalid baseline settings {cfg:?}")));
    }
    let tracker_cfg = tracker_config(
        &mut run,
        a.tracker_config.as_deref(),
        &TrackerFlags::default(),
    )?;
    let rig = optional_rig(&mut run, a.common.rig.as_deref())?;
    let methods: Vec<Method> = a.method.iter().map(|&m| m.into()).collect();
    let (labeled, ids, failed) = labeled_frames(&mut run, &a.input, rig.as_ref())?;
    let evaluated = evaluate_baselines(&labeled, &methods, &cfg, &tracker_cfg);

    let mut rows: Vec<(usize, usize, [String; 4])> = evaluated
        .iter()
        .map(|r| {
            let m = methods
                .iter()
                .position(|m| m.name() == r.method)
                .unwrap_or(0);
            (
                ids[r.frame],
                m,
                [
                    fmt_opt(r.accuracy_value),
                    r.accuracy_kind.clone(),
                    fmt_f(r.elapsed_ms),
                    r.error_code.clone(),
                ],
            )
        })
        .collect();
    for (id, code) in &failed {
        for (m, method) in methods.iter().enumerate() {
            let kind = if *method == Method::Icp { "mm" } else { "dice" };
            rows.push((
                *id,
                m,
                [String::new(), kind.into(), String::new(), code.clone()],
            ));
        }
    }
    rows.sort_by_key(|r| (r.0, r.1));
    let mut w = csv::Writer::from_path(run.output("baseline.csv"))?;
    w.write_record(BASELINE_COLUMNS)?;
    for (id, m, [acc, kind, elapsed, code]) in &rows {
        run.tally(code);
        w.write_record([
            methods[*m].name().to_string(),
            id.to_string(),
            acc.clone(),
            kind.clone(),
            elapsed.clone(),
            code.clone(),
        ])?;
    }
    w.flush()?;
    let config =
        serde_json::json!({ "baseline": cfg, "tracker": tracker_cfg, "methods": a.method });
    run.finish(command, a.common.seed, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn odd_sizes_only() {
        assert_eq!(odd_size("5"), Ok(5));
        assert!(odd_size("4").is_err());
        assert!(odd_size("0").is_err());
        assert!(odd_size("x").is_err());
    }

    #[test]
    fn sub_seeds_differ_by_purpose() {
        assert_ne!(sub_seed(7, NOISE_PURPOSE), sub_seed(7, BASELINE_PURPOSE));
        assert_eq!(sub_seed(7, 1), sub_seed(7, 1));
    }

    #[test]
    fn usage_errors() {
        let parse = |args: &[&str]| {
            Cli::try_parse_from(std::iter::once("depthtrack").chain(args.iter().copied()))
        };
        assert!(parse(&["synth", "--frames", "0", "--out", "x"]).is_err());
        assert!(parse(&["track", "--input", "x", "--out", "y", "--patch", "4"]).is_err());
        assert!(parse(&["sweep", "--input", "x", "--out", "y", "--sizes", "1,2"]).is_err());
        assert!(parse(&["track", "--input", "x", "--out", "y", "--patch", "5"]).is_ok());
    }

    #[test]
    fn default_sweep_sizes() {
        let cli =
            Cli::try_parse_from(["depthtrack", "sweep", "--input", "x", "--out", "y"]).unwrap();
        let Command::Sweep(a) = cli.command else {
            panic!()
        };
        assert_eq!(a.sizes, vec![1, 3, 5, 7, 9, 11, 13]);
    }

    #[test]
    fn invocation_round_trips_through_json() {
        let cli = Cli::try_parse_from([
            "depthtrack",
            "baseline",
            "--input",
            "x",
            "--out",
            "y",
            "--method",
            "icp,tracker",
        ])
        .unwrap();
        let text = serde_json::to_string(&cli.command).unwrap();
        let back: Command = serde_json::from_str(&text).unwrap();
        assert_eq!(serde_json::to_string(&back).unwrap(), text);
    }
}
