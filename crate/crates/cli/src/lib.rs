//! The `selfcontact` command-line pipeline: `synth → detect → refine → eval`.
//!
//! Every stage computes all of its outputs in memory, writes them into a
//! temporary directory next to the destination, and renames that directory
//! into place only on success. A failed run leaves no partial outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use selfcontact::body::{BodyModel, Side};
use selfcontact::capsule::capsule_person;
use selfcontact::metrics::{evaluate_sequence, MetricsConfig};
use selfcontact::optimizer::{refine_sequence, ContactPair, LossTerms, RefinementConfig};
use selfcontact::signal::{align_to_frames, detect, ContactTimeline, DetectorConfig};
use selfcontact::smoothing::{smooth_poses, OneEuroParams};
use selfcontact::synth::{build_motion_script, gen_motion, gen_signal, signal_for_motion, Scenario, SequenceSpec, SignalParams};
use selfcontact::{io, plot, Error, Result};

pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_CONFIG: i32 = 4;

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InsufficientData(_)
        | Error::InvalidInput(_)
        | Error::ModelMismatch(_)
        | Error::Parse { .. }
        | Error::Io { .. } => EXIT_INPUT,
        Error::ThresholdUndefined { .. }
        | Error::BehindCamera { .. }
        | Error::DegenerateAlignment(_)
        | Error::Numerical(_) => EXIT_NUMERICAL,
        Error::Config(_) | Error::ScriptInfeasible(_) => EXIT_CONFIG,
    }
}

#[derive(Parser, Debug)]
#[command(name = "selfcontact", version, about = "Bioimpedance self-contact detection and arm pose refinement")]
pub struct Cli {
    /// Configuration file, JSON or TOML.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for generated data; overrides the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Apply One Euro smoothing to refined poses.
    #[arg(long, global = true)]
    pub smooth: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Detect contact intervals in an impedance trace.
    Detect(DetectArgs),
    /// Refine arm poses of frames in contact.
    Refine(RefineArgs),
    /// Score a pose sequence against ground truth.
    Eval(EvalArgs),
    /// Generate a synthetic contact sequence.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
pub struct DetectArgs {
    /// Trace CSV with header `time_s,impedance_ohm`.
    #[arg(long)]
    pub signal: PathBuf,
    /// Frame timestamps CSV with header `time_s`.
    #[arg(long)]
    pub frame_times: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct RefineArgs {
    /// Pose sequence, JSON or CSV.
    #[arg(long)]
    pub poses: PathBuf,
    /// Per-frame keypoints JSON.
    #[arg(long)]
    pub keypoints: PathBuf,
    #[arg(long)]
    pub camera: PathBuf,
    /// Body model JSON; the built-in capsule person when omitted.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Contact source: a timeline JSON, or a trace CSV to run detection on.
    #[arg(long)]
    pub signal: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Estimated pose sequence, JSON or CSV.
    #[arg(long)]
    pub est: PathBuf,
    /// Ground-truth pose sequence, JSON or CSV.
    #[arg(long)]
    pub gt: PathBuf,
    /// A second estimate to score and plot alongside, e.g. the unrefined input.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Scenario name, e.g. `hand_to_head:left`.
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Generator settings of the `synth` stage.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub sequence: SequenceSpec,
    pub signal: SignalParams,
}

/// Everything a run can be configured with. Missing keys take defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub threads: Option<usize>,
    pub detector: DetectorConfig,
    pub refinement: RefinementConfig,
    pub metrics: MetricsConfig,
    pub smoothing: OneEuroParams,
    pub synth: SynthConfig,
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Config> {
        let cfg: Config = match path {
            Some(p) => io::read_config(p)?,
            None => Config::default(),
        };
        cfg.detector.validate()?;
        cfg.refinement.validate()?;
        cfg.metrics.validate()?;
        cfg.smoothing.validate()?;
        Ok(cfg)
    }
}

/// Files of one stage, written together or not at all.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Outputs {
    pub files: BTreeMap<String, Vec<u8>>,
}

impl Outputs {
    fn add(&mut self, name: &str, contents: impl Into<Vec<u8>>) {
        self.files.insert(name.to_string(), contents.into());
    }

    /// Writes every file into a fresh directory beside `out` and renames it
    /// to `out`, replacing any previous directory there.
    pub fn commit(&self, out: &Path) -> Result<()> {
        let parent = match out.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent).map_err(|e| io_error(&parent, e))?;
        if out.exists() && !out.is_dir() {
            return Err(Error::InvalidInput(format!("{} exists and is not a directory", out.display())));
        }
        let staging = tempfile::Builder::new()
            .prefix(".selfcontact-new-")
            .tempdir_in(&parent)
            .map_err(|e| io_error(&parent, e))?;
        for (name, bytes) in &self.files {
            let path = staging.path().join(name);
            fs::write(&path, bytes).map_err(|e| io_error(&path, e))?;
        }
        if out.exists() {
            let old = tempfile::Builder::new()
                .prefix(".selfcontact-old-")
                .tempdir_in(&parent)
                .map_err(|e| io_error(&parent, e))?;
            fs::rename(out, old.path()).map_err(|e| io_error(out, e))?;
            if let Err(e) = fs::rename(staging.path(), out) {
                let _ = fs::rename(old.path(), out);
                return Err(io_error(out, e));
            }
        } else {
            fs::rename(staging.path(), out).map_err(|e| io_error(out, e))?;
        }
        Ok(())
    }
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn load_model(path: Option<&Path>) -> Result<BodyModel> {
    match path {
        Some(p) => io::read_body_model(p),
        None => Ok(capsule_person()),
    }
}

/// Parses `kind:hand`, e.g. `hand_to_arm:right`.
pub fn parse_scenario(s: &str) -> Result<Scenario> {
    let (kind, hand) = s
        .split_once(':')
        .ok_or_else(|| Error::Config(format!("scenario `{}` is not of the form kind:hand", s)))?;
    let side = match hand {
        "left" => Side::Left,
        "right" => Side::Right,
        _ => return Err(Error::Config(format!("unknown hand `{}`", hand))),
    };
    match kind {
        "hand_to_head" => Ok(Scenario::HandToHead(side)),
        "hand_to_torso" => Ok(Scenario::HandToTorso(side)),
        "hand_to_hand" => Ok(Scenario::HandToHand(side)),
        "hand_to_arm" => Ok(Scenario::HandToArm(side)),
        _ => Err(Error::Config(format!("unknown scenario kind `{}`", kind))),
    }
}

/// Contact timeline from a trace: detection followed by frame alignment.
/// Frame `k` sits at `frame_times[k]`, or at `k / frame_rate` when only a
/// frame count is known.
fn timeline_from_trace(
    trace: &selfcontact::signal::BioimpedanceTrace,
    cfg: &DetectorConfig,
    frames: FrameSpec,
) -> Result<(ContactTimeline, selfcontact::signal::Detection)> {
    let det = detect(trace, cfg)?;
    let times: Vec<f64> = match frames {
        FrameSpec::Times(t) => t,
        FrameSpec::Count(n) => (0..n).map(|k| k as f64 / cfg.frame_rate).collect(),
        FrameSpec::Span => {
            let end = trace.samples().last().map_or(0.0, |s| s.time);
            let n = (end * cfg.frame_rate + 1e-9).floor().max(0.0) as usize + 1;
            (0..n).map(|k| k as f64 / cfg.frame_rate).collect()
        }
    };
    let probe = ContactTimeline::new(det.intervals.clone(), cfg.frame_rate, 0)?;
    let flags = align_to_frames(&probe, &times);
    Ok((
        ContactTimeline {
            intervals: probe.intervals,
            frame_rate: cfg.frame_rate,
            frame_flags: flags,
        },
        det,
    ))
}

enum FrameSpec {
    Times(Vec<f64>),
    Count(usize),
    Span,
}

pub fn run_detect(args: &DetectArgs, cfg: &Config) -> Result<Outputs> {
    let trace = io::read_trace_csv(&args.signal)?;
    let frames = match &args.frame_times {
        Some(p) => FrameSpec::Times(io::read_frame_times(p)?),
        None => FrameSpec::Span,
    };
    let (timeline, _) = timeline_from_trace(&trace, &cfg.detector, frames)?;
    let mut out = Outputs::default();
    out.add("timeline.json", io::to_json(&timeline)?);
    out.add("signal.svg", plot::signal_svg(&trace, &timeline.intervals, "impedance and detected contacts"));
    Ok(out)
}

/// Per-frame entry of the refinement diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameDiagnostics {
    pub frame: usize,
    pub contact: bool,
    pub converged: Option<bool>,
    pub iterations: usize,
    pub active_arms: Vec<Side>,
    /// Per pair, per camera axis, millimeters.
    pub gaps_mm: Vec<[f64; 3]>,
    pub pairs: Vec<ContactPair>,
    pub loss: Option<LossTerms>,
    pub diagnostic: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalInitDiagnostics {
    pub converged: bool,
    pub iterations: usize,
    pub loss: f64,
    pub global_orient: [f64; 3],
    pub translation: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineDiagnostics {
    pub global_init: GlobalInitDiagnostics,
    pub contact_frames: usize,
    pub converged_frames: usize,
    pub smoothed: bool,
    pub frames: Vec<FrameDiagnostics>,
}

pub fn run_refine(args: &RefineArgs, cfg: &Config, smooth: bool) -> Result<Outputs> {
    let poses = io::read_poses(&args.poses)?;
    let keypoints = io::read_keypoints(&args.keypoints)?;
    let camera = io::read_camera(&args.camera)?;
    let model = load_model(args.model.as_deref())?;
    let mut out = Outputs::default();
    let is_csv = args.signal.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let timeline = if is_csv {
        let trace = io::read_trace_csv(&args.signal)?;
        let (tl, _) = timeline_from_trace(&trace, &cfg.detector, FrameSpec::Count(poses.len()))?;
        out.add("timeline.json", io::to_json(&tl)?);
        tl
    } else {
        io::read_timeline(&args.signal)?
    };
    if keypoints.len() != poses.len() || timeline.frame_flags.len() != poses.len() {
        return Err(Error::Config(format!(
            "frame counts differ: {} poses, {} keypoint frames, {} timeline flags",
            poses.len(),
            keypoints.len(),
            timeline.frame_flags.len()
        )));
    }

    let res = refine_sequence(&poses, &timeline.frame_flags, &keypoints, &camera, &model, &cfg.refinement)?;
    let mut refined = res.poses();
    if smooth {
        refined = smooth_poses(&refined, &cfg.smoothing)?;
    }
    let frames: Vec<FrameDiagnostics> = res
        .frames
        .iter()
        .enumerate()
        .map(|(k, f)| FrameDiagnostics {
            frame: k,
            contact: timeline.frame_flags[k],
            converged: f.converged,
            iterations: f.iterations,
            active_arms: f.active_arms.clone(),
            gaps_mm: f.gaps.iter().map(|g| g.map(|x| x * 1000.0)).collect(),
            pairs: f.pairs.clone(),
            loss: f.loss,
            diagnostic: f.diagnostic.clone(),
        })
        .collect();
    let diagnostics = RefineDiagnostics {
        global_init: GlobalInitDiagnostics {
            converged: res.init.converged,
            iterations: res.init.iterations,
            loss: res.init.loss,
            global_orient: res.init.pose.global_orient,
            translation: res.init.pose.translation,
        },
        contact_frames: frames.iter().filter(|f| f.converged.is_some()).count(),
        converged_frames: frames.iter().filter(|f| f.converged == Some(true)).count(),
        smoothed: smooth,
        frames,
    };
    out.add("refined_poses.json", io::to_json(&refined)?);
    out.add("refined_poses.csv", io::poses_to_csv(&refined));
    out.add("diagnostics.json", io::to_json(&diagnostics)?);
    Ok(out)
}

pub fn run_eval(args: &EvalArgs, cfg: &Config) -> Result<Outputs> {
    let est = io::read_poses(&args.est)?;
    let gt = io::read_poses(&args.gt)?;
    let baseline = args.baseline.as_deref().map(io::read_poses).transpose()?;
    let model = load_model(args.model.as_deref())?;
    let (report, frames) = evaluate_sequence(&est, &gt, &model, &cfg.metrics)?;
    let mut out = Outputs::default();
    out.add("metrics.json", io::to_json(&report)?);
    out.add("frames.csv", io::frame_metrics_to_csv(&frames));
    let est_curve: Vec<f64> = frames.iter().map(|f| f.pa_v2v_mm).collect();
    let contact: Vec<bool> = frames.iter().map(|f| f.gt_pairs > 0).collect();
    let svg = match baseline {
        Some(b) => {
            let (b_report, b_frames) = evaluate_sequence(&b, &gt, &model, &cfg.metrics)?;
            out.add("baseline_metrics.json", io::to_json(&b_report)?);
            out.add("baseline_frames.csv", io::frame_metrics_to_csv(&b_frames));
            let b_curve: Vec<f64> = b_frames.iter().map(|f| f.pa_v2v_mm).collect();
            plot::error_curve_svg(
                &[("baseline", &b_curve), ("estimate", &est_curve)],
                &contact,
                "arm PA-V2V per frame",
                "mm",
            )
        }
        None => plot::error_curve_svg(&[("estimate", &est_curve)], &contact, "arm PA-V2V per frame", "mm"),
    };
    out.add("errors.svg", svg);
    Ok(out)
}

pub fn run_synth(args: &SynthArgs, cfg: &Config, seed: u64) -> Result<Outputs> {
    let mut spec = cfg.synth.sequence.clone();
    spec.seed = seed;
    if let Some(s) = &args.scenario {
        spec.scenario = parse_scenario(s)?;
    }
    let model = capsule_person();
    let script = build_motion_script(&model, &spec)?;
    let sample = gen_motion(&script, &model)?;
    let (trace, truth) = gen_signal(&signal_for_motion(&script, &cfg.synth.signal))?;
    let times: String = std::iter::once(io::FRAME_TIMES_HEADER.to_string())
        .chain((0..script.frames).map(|k| (k as f64 / script.frame_rate).to_string()))
        .map(|l| l + "\n")
        .collect();
    let truth = ContactTimeline {
        frame_flags: sample.contact_flags.clone(),
        ..truth
    };
    let mut out = Outputs::default();
    out.add("model.json", io::body_model_to_json(&model)?);
    out.add("camera.json", io::to_json(&sample.camera)?);
    out.add("gt_poses.json", io::to_json(&sample.gt)?);
    out.add("poses.json", io::to_json(&sample.perturbed)?);
    out.add("keypoints.json", io::to_json(&sample.keypoints)?);
    out.add("signal.csv", io::trace_to_csv(&trace));
    out.add("frame_times.csv", times);
    out.add("truth_timeline.json", io::to_json(&truth)?);
    out.add("script.json", io::to_json(&script)?);
    Ok(out)
}

/// Runs one parsed invocation and commits its outputs.
pub fn run(cli: &Cli) -> Result<()> {
    let cfg = Config::load(cli.config.as_deref())?;
    let threads = cli.threads.or(cfg.threads);
    if threads == Some(0) {
        return Err(Error::Config("threads must be at least 1".into()));
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::Config(e.to_string()))?;
    let seed = cli.seed.unwrap_or(cfg.seed);
    pool.install(|| {
        let (outputs, dir) = match &cli.command {
            Command::Detect(a) => (run_detect(a, &cfg)?, &a.out),
            Command::Refine(a) => (run_refine(a, &cfg, cli.smooth)?, &a.out),
            Command::Eval(a) => (run_eval(a, &cfg)?, &a.out),
            Command::Synth(a) => (run_synth(a, &cfg, seed)?, &a.out),
        };
        outputs.commit(dir)
    })
}
