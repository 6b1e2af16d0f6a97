use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;

use occhmm::eval::evaluate;
use occhmm::oracle::brute_force_marginals;
use occhmm::pipeline::{target_boxes, track_video, Detector, DetectorConfig, PipelineError};
use occhmm::scene::{generate, ScenarioMode};

use crate::config::{ConfigError, RunConfig};
use crate::format::{self, FormatError, Stream};
use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "occhmm", version, about = "Occlusion and appearance-change detection over multi-camera streams")]
pub struct Cli {
    /// TOML run configuration; falls back to $OCCHMM_CONFIG, then defaults.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic stream and its ground truth.
    Simulate(SimulateArgs),
    /// Filter a z or patch stream into a posterior trace.
    Filter(FilterArgs),
    /// Track targets through a frames stream or a generated scenario.
    Track(TrackArgs),
    /// Score a posterior trace against ground truth.
    Eval(EvalArgs),
    /// Exact marginals of a z stream by enumeration.
    Oracle(OracleArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Stream output (NDJSON); stdout when absent.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Ground-truth CSV; defaults to `<out stem>.truth.csv` next to `--out`.
    #[arg(long, value_name = "PATH")]
    pub truth: Option<PathBuf>,
    /// patch, direct_z or frames.
    #[arg(long)]
    pub mode: Option<ScenarioMode>,
    /// paper-analog or drift.
    #[arg(long)]
    pub preset: Option<String>,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    /// Input stream; `-` reads stdin.
    #[arg(long, value_name = "PATH")]
    pub stream: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    /// Frames stream; a scenario is generated from the configuration when
    /// absent.
    #[arg(long, value_name = "PATH")]
    pub stream: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub preset: Option<String>,
    /// Learn with a constant parameter.
    #[arg(long, value_name = "LAMBDA", conflicts_with = "controlled")]
    pub fixed_lambda: Option<f64>,
    /// Learn with the posterior-controlled parameter.
    #[arg(long)]
    pub controlled: bool,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Posterior or oracle trace.
    #[arg(long, value_name = "PATH")]
    pub posterior: Option<PathBuf>,
    /// Ground-truth CSV.
    #[arg(long, value_name = "PATH")]
    pub truth: Option<PathBuf>,
    /// Track trace; adds the final IoU.
    #[arg(long, value_name = "PATH")]
    pub track: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long, value_name = "PATH")]
    pub stream: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Simulate(a) => simulate(&cfg, a),
        Command::Filter(a) => filter(&cfg, a),
        Command::Track(a) => track(&cfg, a),
        Command::Eval(a) => eval(&cfg, a),
        Command::Oracle(a) => oracle(&cfg, a),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_owned(),
        source,
    }
}

fn read_input(path: &Path) -> Result<String, CliError> {
    if path == Path::new("-") {
        let mut text = String::new();
        std::io::stdin().read_to_string(&mut text).map_err(io_err(path))?;
        Ok(text)
    } else {
        std::fs::read_to_string(path).map_err(io_err(path))
    }
}

fn write_output(path: Option<&Path>, content: &[u8]) -> Result<(), CliError> {
    match path {
        Some(p) if p != Path::new("-") => std::fs::write(p, content).map_err(io_err(p)),
        _ => {
            let mut out = std::io::stdout().lock();
            out.write_all(content)
                .and_then(|_| out.flush())
                .map_err(io_err(Path::new("<stdout>")))
        }
    }
}

fn required(flag: Option<PathBuf>, fallback: &Option<PathBuf>, what: &str) -> Result<PathBuf, CliError> {
    flag.or_else(|| fallback.clone())
        .ok_or_else(|| CliError::Config(ConfigError::Invalid(format!("no {what} given (flag or io.{what})"))))
}

fn load_stream(path: &Path) -> Result<Stream, CliError> {
    let text = read_input(path)?;
    format::read_stream(&text).map_err(|source| CliError::Stream {
        path: path.to_owned(),
        source,
    })
}

fn stream_err(path: &Path, line: Option<usize>, msg: impl ToString) -> CliError {
    let msg = msg.to_string();
    CliError::Stream {
        path: path.to_owned(),
        source: match line {
            Some(line) => FormatError::Line { line, msg },
            None => FormatError::Invalid(msg),
        },
    }
}

fn default_truth_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.truth.csv"))
}

fn simulate(cfg: &RunConfig, a: SimulateArgs) -> Result<(), CliError> {
    let seed = a.seed.unwrap_or(cfg.seed);
    let sc = cfg.scenario_config(a.preset.as_deref(), a.mode, seed)?;
    let scenario = generate(&sc).map_err(|e| ConfigError::Invalid(e.to_string()))?;
    let out = a.out.or_else(|| cfg.io.stream.clone());
    let mut buf = Vec::new();
    format::write_stream(&mut buf, sc.mode, sc.n_cameras, &scenario.records)
        .map_err(io_err(Path::new("<buffer>")))?;
    write_output(out.as_deref(), &buf)?;
    let truth = a
        .truth
        .or_else(|| cfg.io.truth.clone())
        .or_else(|| out.as_deref().filter(|p| *p != Path::new("-")).map(default_truth_path));
    if let Some(p) = truth {
        write_output(Some(&p), format::truth_csv(&scenario.truth).as_bytes())?;
    }
    info!(
        "simulated {} frames, {} cameras, mode {}",
        sc.n_frames,
        sc.n_cameras,
        sc.mode.as_str()
    );
    Ok(())
}

fn filter(cfg: &RunConfig, a: FilterArgs) -> Result<(), CliError> {
    let path = required(a.stream, &cfg.io.stream, "stream")?;
    let stream = load_stream(&path)?;
    let params = cfg.model_params(stream.n_cameras)?;
    let detector_cfg = match stream.mode {
        ScenarioMode::DirectZ => DetectorConfig {
            control: cfg.control_config()?,
            calibration_window: None,
            ..DetectorConfig::default()
        },
        ScenarioMode::Patch => cfg.detector_config()?,
        ScenarioMode::Frames => {
            return Err(stream_err(&path, None, "filter reads z or patch streams; use `track` for frames"))
        }
    };
    let mut detector = Detector::new(params, detector_cfg).map_err(|e| ConfigError::Invalid(e.to_string()))?;
    let mut outputs = Vec::with_capacity(stream.records.len());
    for (rec, &line) in stream.records.iter().zip(&stream.lines) {
        let step = match stream.mode {
            ScenarioMode::DirectZ => {
                let z = rec.z_values().expect("checked by the reader");
                detector.push_z(&z).map(|o| vec![o])
            }
            _ => {
                let patches: Vec<&[f64]> = rec
                    .cameras
                    .iter()
                    .map(|c| match c {
                        occhmm::scene::CameraObservation::Patch(p) => p.as_slice(),
                        _ => unreachable!("checked by the reader"),
                    })
                    .collect();
                detector.push_patches(&patches)
            }
        };
        outputs.extend(step.map_err(|e| stream_err(&path, Some(line), e))?);
    }
    outputs.extend(detector.flush().map_err(|e| stream_err(&path, None, e))?);
    let emission = detector.params().emission;
    if emission.weak_separation() {
        log::warn!("weak separation: M / mu = {:.2}", emission.m_max() / emission.mu());
    }
    write_output(a.out.as_deref(), format::posterior_csv(&outputs, stream.n_cameras).as_bytes())
}

fn oracle(cfg: &RunConfig, a: OracleArgs) -> Result<(), CliError> {
    let path = required(a.stream, &cfg.io.stream, "stream")?;
    let stream = load_stream(&path)?;
    if stream.mode != ScenarioMode::DirectZ {
        return Err(stream_err(&path, None, "the oracle reads direct_z streams"));
    }
    let params = cfg.model_params(stream.n_cameras)?;
    let z: Vec<Vec<f64>> = stream
        .records
        .iter()
        .map(|r| r.z_values().expect("checked by the reader"))
        .collect();
    let marginals = brute_force_marginals(&z, &params).map_err(|e| stream_err(&path, None, e))?;
    write_output(a.out.as_deref(), format::marginals_csv(&marginals, stream.n_cameras).as_bytes())
}

fn track(cfg: &RunConfig, a: TrackArgs) -> Result<(), CliError> {
    let source = a.stream.clone().or_else(|| cfg.io.stream.clone());
    let (records, origin) = match &source {
        Some(path) => {
            let stream = load_stream(path)?;
            if stream.mode != ScenarioMode::Frames {
                return Err(stream_err(path, None, "track reads frames streams"));
            }
            (stream.records, path.clone())
        }
        None => {
            let seed = a.seed.unwrap_or(cfg.seed);
            let sc = cfg.scenario_config(a.preset.as_deref(), Some(ScenarioMode::Frames), seed)?;
            let scenario = generate(&sc).map_err(|e| ConfigError::Invalid(e.to_string()))?;
            (scenario.records, PathBuf::from("<generated>"))
        }
    };
    let Some(first) = records.first() else {
        return Err(stream_err(&origin, None, "no frames"));
    };
    let init = target_boxes(first).ok_or_else(|| stream_err(&origin, None, "first frame has no boxes"))?;
    let fixed = match (a.fixed_lambda, a.controlled) {
        (Some(l), _) => Some(Some(l)),
        (None, true) => Some(None),
        (None, false) => None,
    };
    if let Some(Some(l)) = fixed {
        if !(0.0..=1.0).contains(&l) {
            return Err(ConfigError::Invalid(format!("--fixed-lambda {l} outside [0, 1]")).into());
        }
    }
    let tc = cfg.track_config(fixed)?;
    let params = cfg.model_params(init.len())?;
    let frames = track_video(&records, &init, params, &tc).map_err(|e| match e {
        PipelineError::CameraCount { t, .. } | PipelineError::WrongKind { t, .. } => {
            stream_err(&origin, Some(t + 1), e)
        }
        other => stream_err(&origin, None, other),
    })?;
    let truth: Vec<_> = records.iter().map(target_boxes).collect();
    if let (Some(tf), Some(Some(boxes))) = (frames.last(), truth.last()) {
        if let Some(iou) = occhmm::eval::final_iou(&tf.boxes, boxes) {
            info!("final mean IoU {iou:.3}");
        }
    }
    write_output(a.out.as_deref(), format::track_csv(&frames, &truth).as_bytes())
}

fn eval(cfg: &RunConfig, a: EvalArgs) -> Result<(), CliError> {
    let posterior = required(a.posterior, &cfg.io.posterior, "posterior")?;
    let truth = required(a.truth, &cfg.io.truth, "truth")?;
    let bad = |p: &Path, e: FormatError| CliError::Eval(format!("{}: {e}", p.display()));
    let marginals = format::read_marginals(&read_input(&posterior)?).map_err(|e| bad(&posterior, e))?;
    let gt = format::read_truth(&read_input(&truth)?).map_err(|e| bad(&truth, e))?;
    let mut report = evaluate(&gt, &marginals, &cfg.eval_config()).map_err(|e| CliError::Eval(e.to_string()))?;
    if let Some(track) = a.track.or_else(|| cfg.io.track.clone()) {
        report.final_iou = format::final_track_iou(&read_input(&track)?).map_err(|e| bad(&track, e))?;
    }
    write_output(a.out.as_deref(), report.to_string().as_bytes())
}
