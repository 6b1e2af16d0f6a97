//! End-to-end loops: per-camera subspace predictors feeding the joint filter,
//! and the controlled tracker built on top of it.

use thiserror::Error;

use crate::control::{AlarmDebounce, ControlConfig, ControlError, LambdaHysteresis};
use crate::filter::{EmissionParams, Filter, FilterError, Marginals, ModelParams, Observation};
use crate::scene::{CameraObservation, FrameRecord};
use crate::subspace::{PredictorConfig, SubspaceError, SubspacePredictor};
use crate::tracker::{BoundingBox, SparseFeatureExtractor, Tracker, TrackerError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Subspace(#[from] SubspaceError),
    #[error(transparent)]
    Tracker(#[from] TrackerError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error("frame {t}: expected {expected} cameras, got {got}")]
    CameraCount { t: usize, expected: usize, got: usize },
    #[error("frame {t}, camera {camera}: expected {expected} observation")]
    WrongKind {
        t: usize,
        camera: usize,
        expected: &'static str,
    },
}

pub type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    pub predictor: PredictorConfig,
    pub control: ControlConfig,
    /// Frames of warm residuals buffered to fit `mu` and `M` before the
    /// filter starts; `None` keeps the model's emission parameters.
    pub calibration_window: Option<usize>,
    /// Lower bound on the calibrated `M / mu`.
    pub min_separation: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            predictor: PredictorConfig::default(),
            control: ControlConfig::default(),
            calibration_window: Some(50),
            min_separation: 20.0,
        }
    }
}

/// Filter output and control decisions for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutput {
    pub t: usize,
    pub z: Vec<f64>,
    pub marginals: Marginals,
    pub lambdas: Vec<f64>,
    pub alarm: bool,
}

#[derive(Debug, Clone)]
enum Stage {
    Calibrating { buffered: Vec<Vec<f64>> },
    Running(Filter),
}

/// Streaming detector: patches in, posteriors and control decisions out.
#[derive(Debug, Clone)]
pub struct Detector {
    cfg: DetectorConfig,
    params: ModelParams,
    predictors: Vec<SubspacePredictor>,
    stage: Stage,
    hysteresis: Vec<LambdaHysteresis>,
    debounce: AlarmDebounce,
    t: usize,
}

impl Detector {
    pub fn new(params: ModelParams, cfg: DetectorConfig) -> Result<Self> {
        cfg.control.validate()?;
        let n = params.n_cameras();
        let predictors = (0..n)
            .map(|cam| {
                SubspacePredictor::new(PredictorConfig {
                    seed: cfg.predictor.seed.wrapping_add(cam as u64),
                    ..cfg.predictor
                })
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let stage = match cfg.calibration_window {
            Some(_) => Stage::Calibrating {
                buffered: Vec::new(),
            },
            None => Stage::Running(Filter::new(params.clone())),
        };
        Ok(Detector {
            predictors,
            stage,
            hysteresis: vec![LambdaHysteresis::default(); n],
            debounce: AlarmDebounce::default(),
            t: 0,
            params,
            cfg,
        })
    }

    pub fn n_cameras(&self) -> usize {
        self.params.n_cameras()
    }

    /// Emission parameters in use; calibrated ones once calibration is done.
    pub fn params(&self) -> &ModelParams {
        match &self.stage {
            Stage::Running(f) => f.params(),
            Stage::Calibrating { .. } => &self.params,
        }
    }

    pub fn is_calibrating(&self) -> bool {
        matches!(self.stage, Stage::Calibrating { .. })
    }

    /// Feeds one frame of patches. Returns the outputs that became available:
    /// nothing while calibrating, every buffered frame once calibration
    /// completes, and one frame afterwards.
    pub fn push_patches<P: AsRef<[f64]>>(&mut self, patches: &[P]) -> Result<Vec<FrameOutput>> {
        self.t += 1;
        let n = self.n_cameras();
        if patches.len() != n {
            return Err(PipelineError::CameraCount {
                t: self.t,
                expected: n,
                got: patches.len(),
            });
        }
        let z = patches
            .iter()
            .zip(&self.predictors)
            .map(|(p, pred)| pred.prediction_error(p.as_ref()))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let out = match &mut self.stage {
            Stage::Calibrating { buffered } => {
                buffered.push(z);
                for (p, pred) in patches.iter().zip(self.predictors.iter_mut()) {
                    pred.learn(p.as_ref(), 0.0)?;
                }
                self.try_finish_calibration(false)?
            }
            Stage::Running(_) => {
                let output = self.filter_frame(z)?;
                for ((p, pred), &po) in patches
                    .iter()
                    .zip(self.predictors.iter_mut())
                    .zip(&output.marginals.p_occlusion)
                {
                    pred.learn(p.as_ref(), po)?;
                }
                vec![output]
            }
        };
        Ok(out)
    }

    /// Ends calibration early with whatever was buffered.
    pub fn flush(&mut self) -> Result<Vec<FrameOutput>> {
        self.try_finish_calibration(true)
    }

    /// Feeds prediction errors directly, bypassing the subspace predictors.
    pub fn push_z(&mut self, z: &[f64]) -> Result<FrameOutput> {
        if let Stage::Calibrating { buffered } = &self.stage {
            if buffered.is_empty() {
                self.stage = Stage::Running(Filter::new(self.params.clone()));
            } else {
                self.try_finish_calibration(true)?;
            }
        }
        self.t += 1;
        self.filter_frame(z.to_vec())
    }

    fn try_finish_calibration(&mut self, force: bool) -> Result<Vec<FrameOutput>> {
        let Stage::Calibrating { buffered } = &mut self.stage else {
            return Ok(Vec::new());
        };
        let window = self.cfg.calibration_window.unwrap_or(0);
        let warm: Vec<f64> = buffered
            .iter()
            .skip(self.cfg.predictor.init_window)
            .flatten()
            .copied()
            .collect();
        let warm_frames = buffered.len().saturating_sub(self.cfg.predictor.init_window);
        if !force && warm_frames < window {
            return Ok(Vec::new());
        }
        let buffered = std::mem::take(buffered);
        let mut params = self.params.clone();
        match EmissionParams::calibrate_separated(&warm, self.cfg.min_separation) {
            Ok(e) => {
                log::info!("calibrated mu = {}, M = {}", e.mu(), e.m_max());
                params.emission = e;
            }
            Err(e) => log::warn!("calibration failed ({e}); keeping configured emission"),
        }
        self.stage = Stage::Running(Filter::new(params));
        let start = self.t - buffered.len();
        let mut outputs = Vec::with_capacity(buffered.len());
        for (i, z) in buffered.into_iter().enumerate() {
            let mut out = self.filter_frame(z)?;
            out.t = start + i + 1;
            outputs.push(out);
        }
        Ok(outputs)
    }

    fn filter_frame(&mut self, z: Vec<f64>) -> Result<FrameOutput> {
        let Stage::Running(filter) = &mut self.stage else {
            unreachable!("filter_frame while calibrating");
        };
        let obs = Observation::new(z.clone())?;
        let marginals = filter.push(&obs)?.marginals();
        let cfg = &self.cfg.control;
        let lambdas = marginals
            .p_occlusion
            .iter()
            .zip(self.hysteresis.iter_mut())
            .map(|(&po, h)| h.lambda(po, marginals.p_change, cfg))
            .collect();
        let alarm = self.debounce.alarm(marginals.p_change, cfg);
        Ok(FrameOutput {
            t: self.t,
            z,
            marginals,
            lambdas,
            alarm,
        })
    }
}

/// How the tracker's learning parameter is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaPolicy {
    Fixed(f64),
    /// From the filtered posteriors via the control rule.
    Controlled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackConfig {
    pub detector: DetectorConfig,
    pub policy: LambdaPolicy,
    pub num_features: usize,
    pub search_radius: usize,
    pub init_var: f64,
    pub feature_seed: u64,
}

impl Default for TrackConfig {
    fn default() -> Self {
        TrackConfig {
            detector: DetectorConfig::default(),
            policy: LambdaPolicy::Controlled,
            num_features: 50,
            search_radius: 4,
            init_var: 1.0,
            feature_seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackFrame {
    pub t: usize,
    pub boxes: Vec<BoundingBox>,
    pub lambdas: Vec<f64>,
    /// Present once the filter has produced this frame.
    pub output: Option<FrameOutput>,
}

/// Tracks every camera through `records`, starting from `init` boxes.
///
/// Per frame and camera: locate the target, crop the patch, compute its
/// prediction error, filter, choose the learning parameter, update the
/// tracker, then update the subspace gated on the occlusion posterior.
/// While the detector calibrates, the tracker learns with the normal
/// parameter.
pub fn track_video(
    records: &[FrameRecord],
    init: &[BoundingBox],
    params: ModelParams,
    cfg: &TrackConfig,
) -> Result<Vec<TrackFrame>> {
    let n = params.n_cameras();
    if init.len() != n {
        return Err(PipelineError::CameraCount {
            t: 0,
            expected: n,
            got: init.len(),
        });
    }
    let mut detector = Detector::new(params, cfg.detector.clone())?;
    let mut trackers: Vec<Tracker> = Vec::with_capacity(n);
    let mut out: Vec<TrackFrame> = Vec::with_capacity(records.len());
    let normal = cfg.detector.control.lambda_normal;

    for rec in records {
        let frames = frames_of(rec, n)?;
        if trackers.is_empty() {
            for (cam, (frame, b)) in frames.iter().zip(init).enumerate() {
                let fx = SparseFeatureExtractor::new(
                    cfg.num_features,
                    b.h,
                    b.w,
                    cfg.feature_seed.wrapping_add(cam as u64),
                )?;
                trackers.push(Tracker::start(fx, frame, *b, cfg.search_radius, cfg.init_var)?);
            }
        } else {
            for (tr, frame) in trackers.iter_mut().zip(&frames) {
                tr.locate(frame)?;
            }
        }
        let boxes: Vec<BoundingBox> = trackers.iter().map(|tr| tr.current).collect();
        let patches = frames
            .iter()
            .zip(&boxes)
            .map(|(f, b)| f.crop(b))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let produced = detector.push_patches(&patches)?;
        let current = produced.iter().find(|o| o.t == rec.t).cloned();
        let lambdas: Vec<f64> = match (cfg.policy, &current) {
            (LambdaPolicy::Fixed(l), _) => vec![l; n],
            (LambdaPolicy::Controlled, Some(o)) => o.lambdas.clone(),
            (LambdaPolicy::Controlled, None) => vec![normal; n],
        };
        for ((tr, frame), &l) in trackers.iter_mut().zip(&frames).zip(&lambdas) {
            tr.learn(frame, l)?;
        }
        for o in produced {
            if let Some(tf) = out.iter_mut().find(|tf| tf.t == o.t) {
                tf.output = Some(o);
            } else if o.t == rec.t {
                out.push(TrackFrame {
                    t: rec.t,
                    boxes: boxes.clone(),
                    lambdas: lambdas.clone(),
                    output: Some(o),
                });
            }
        }
        if out.last().map(|tf| tf.t) != Some(rec.t) {
            out.push(TrackFrame {
                t: rec.t,
                boxes,
                lambdas,
                output: None,
            });
        }
    }
    for o in detector.flush()? {
        if let Some(tf) = out.iter_mut().find(|tf| tf.t == o.t) {
            tf.output = Some(o);
        }
    }
    Ok(out)
}

fn frames_of(rec: &FrameRecord, n: usize) -> Result<Vec<&crate::tracker::Frame>> {
    if rec.cameras.len() != n {
        return Err(PipelineError::CameraCount {
            t: rec.t,
            expected: n,
            got: rec.cameras.len(),
        });
    }
    rec.cameras
        .iter()
        .enumerate()
        .map(|(camera, c)| match c {
            CameraObservation::Frame { frame, .. } => Ok(frame),
            _ => Err(PipelineError::WrongKind {
                t: rec.t,
                camera,
                expected: "frame",
            }),
        })
        .collect()
}

/// True target boxes per frame, when the records carry them.
pub fn target_boxes(rec: &FrameRecord) -> Option<Vec<BoundingBox>> {
    rec.cameras
        .iter()
        .map(|c| match c {
            CameraObservation::Frame { target, .. } => Some(*target),
            _ => None,
        })
        .collect()
}

/// Runs the detector over patch records.
pub fn detect_patches(
    records: &[FrameRecord],
    params: ModelParams,
    cfg: &DetectorConfig,
) -> Result<Vec<FrameOutput>> {
    let n = params.n_cameras();
    let mut detector = Detector::new(params, cfg.clone())?;
    let mut out = Vec::with_capacity(records.len());
    for rec in records {
        if rec.cameras.len() != n {
            return Err(PipelineError::CameraCount {
                t: rec.t,
                expected: n,
                got: rec.cameras.len(),
            });
        }
        let patches = rec
            .cameras
            .iter()
            .enumerate()
            .map(|(camera, c)| match c {
                CameraObservation::Patch(p) => Ok(p.as_slice()),
                _ => Err(PipelineError::WrongKind {
                    t: rec.t,
                    camera,
                    expected: "patch",
                }),
            })
            .collect::<Result<Vec<_>>>()?;
        out.extend(detector.push_patches(&patches)?);
    }
    out.extend(detector.flush()?);
    Ok(out)
}

/// Runs filter and control over residual records.
pub fn detect_z(
    records: &[FrameRecord],
    params: ModelParams,
    control: &ControlConfig,
) -> Result<Vec<FrameOutput>> {
    let cfg = DetectorConfig {
        control: *control,
        calibration_window: None,
        ..DetectorConfig::default()
    };
    let mut detector = Detector::new(params, cfg)?;
    records
        .iter()
        .map(|rec| {
            let z = rec
                .cameras
                .iter()
                .enumerate()
                .map(|(camera, c)| match c {
                    CameraObservation::Z(z) => Ok(*z),
                    _ => Err(PipelineError::WrongKind {
                        t: rec.t,
                        camera,
                        expected: "z",
                    }),
                })
                .collect::<Result<Vec<_>>>()?;
            detector.push_z(&z)
        })
        .collect()
}
