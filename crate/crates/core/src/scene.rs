//! Synthetic multi-camera streams with ground-truth occlusion and
//! appearance-change events.
//!
//! Three modes share one configuration:
//!
//! * `Patch` emits per-camera appearance vectors. A latent appearance `a(t)`
//!   takes small bounded random-walk steps; camera `n` observes
//!   `mean_n + L_n a(t)` plus noise. An occluded camera observes an
//!   independent occluder appearance instead, and a change event redraws
//!   every `mean_n` and `L_n` at once.
//! * `Frames` renders the same patches into full frames over a textured
//!   background, with a moving target and an occluder that covers the target
//!   for the duration of an occlusion event and then slides away.
//! * `DirectZ` samples residuals straight from the filter's emission law:
//!   exponential with mean `mu` for normal cameras, uniform on `[0, M]`
//!   otherwise. Hidden states come from planted events when any are given,
//!   and are sampled from the model's Markov chains otherwise.
//!
//! Frames are numbered from 1. Everything is a deterministic function of the
//! configuration, seed included.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, StandardNormal};
use thiserror::Error;

use crate::filter::{state_count, ModelParams};
use crate::tracker::{BoundingBox, Frame};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("event {what} covers frames {start}..={end}, outside 1..={n_frames}")]
    EventRange {
        what: String,
        start: usize,
        end: usize,
        n_frames: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScenarioMode {
    #[default]
    Patch,
    DirectZ,
    Frames,
}

impl ScenarioMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioMode::Patch => "patch",
            ScenarioMode::DirectZ => "direct_z",
            ScenarioMode::Frames => "frames",
        }
    }
}

impl std::str::FromStr for ScenarioMode {
    type Err = SceneError;

    fn from_str(s: &str) -> Result<Self, SceneError> {
        match s {
            "patch" => Ok(ScenarioMode::Patch),
            "direct_z" => Ok(ScenarioMode::DirectZ),
            "frames" => Ok(ScenarioMode::Frames),
            other => Err(SceneError::Invalid(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OcclusionEvent {
    pub camera: usize,
    pub start: usize,
    pub duration: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChangeEvent {
    pub start: usize,
    /// Frames labelled `S = 1` from `start` on.
    pub duration: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub n_cameras: usize,
    pub n_frames: usize,
    pub patch_h: usize,
    pub patch_w: usize,
    pub latent_rank: usize,
    pub occlusions: Vec<OcclusionEvent>,
    pub changes: Vec<ChangeEvent>,
    pub noise_sigma: f64,
    pub seed: u64,
    pub mode: ScenarioMode,
    /// Residual law and chains used in `DirectZ` mode.
    pub model: ModelParams,
    /// Random-walk step as a fraction of `|a(t)|`.
    pub walk_step: f64,
    /// Standard deviation of the entries of `L_n`.
    pub appearance_scale: f64,
    pub frame_h: usize,
    pub frame_w: usize,
    /// Extra border of the occluder around the target, in pixels.
    pub occluder_margin: usize,
    /// Pixels per frame the occluder moves once an occlusion ends.
    pub occluder_speed: usize,
    /// Amplitude in pixels of the target's slow wander.
    pub target_wander: f64,
}

impl ScenarioConfig {
    /// Event-free patch-mode scenario with default generator settings.
    pub fn new(n_cameras: usize, n_frames: usize) -> Result<Self, SceneError> {
        let model = ModelParams::with_defaults(n_cameras)
            .map_err(|e| SceneError::Invalid(e.to_string()))?;
        Ok(ScenarioConfig {
            n_cameras,
            n_frames,
            patch_h: 8,
            patch_w: 8,
            latent_rank: 3,
            occlusions: Vec::new(),
            changes: Vec::new(),
            noise_sigma: 0.01,
            seed: 0,
            mode: ScenarioMode::Patch,
            model,
            walk_step: 0.02,
            appearance_scale: 0.1,
            frame_h: 48,
            frame_w: 64,
            occluder_margin: 2,
            occluder_speed: 3,
            target_wander: 2.0,
        })
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_h * self.patch_w
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let invalid = |m: String| Err(SceneError::Invalid(m));
        if self.n_cameras == 0 || self.n_cameras > crate::filter::MAX_CAMERAS {
            return invalid(format!("n_cameras = {}", self.n_cameras));
        }
        if self.n_frames == 0 {
            return invalid("n_frames must be at least 1".into());
        }
        if self.patch_dim() == 0 {
            return invalid("patch dimensions must be positive".into());
        }
        if self.latent_rank == 0 {
            return invalid("latent_rank must be at least 1".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return invalid(format!("noise_sigma = {}", self.noise_sigma));
        }
        if self.model.n_cameras() != self.n_cameras {
            return invalid(format!(
                "model has {} cameras, scenario has {}",
                self.model.n_cameras(),
                self.n_cameras
            ));
        }
        for e in &self.occlusions {
            if e.camera >= self.n_cameras {
                return invalid(format!("occlusion on camera {} of {}", e.camera, self.n_cameras));
            }
            self.check_range(&format!("occlusion on camera {}", e.camera), e.start, e.duration)?;
        }
        for e in &self.changes {
            self.check_range("change", e.start, e.duration)?;
        }
        if self.mode == ScenarioMode::Frames {
            let m = 2 * self.occluder_margin;
            let need_h = self.patch_h + m + 2 * self.target_wander.ceil() as usize + 2;
            let need_w = self.patch_w + m + 2 * self.target_wander.ceil() as usize + 2;
            if self.frame_h < need_h || self.frame_w < need_w {
                return invalid(format!(
                    "frame {}x{} too small for a {}x{} target",
                    self.frame_h, self.frame_w, self.patch_h, self.patch_w
                ));
            }
        }
        Ok(())
    }

    fn check_range(&self, what: &str, start: usize, duration: usize) -> Result<(), SceneError> {
        let end = start + duration.max(1) - 1;
        if start < 1 || duration == 0 || end > self.n_frames {
            return Err(SceneError::EventRange {
                what: what.to_string(),
                start,
                end,
                n_frames: self.n_frames,
            });
        }
        Ok(())
    }

    fn has_events(&self) -> bool {
        !self.occlusions.is_empty() || !self.changes.is_empty()
    }

    /// Occlusion intervals of one camera, merged where they overlap or touch.
    pub fn merged_occlusions(&self, camera: usize) -> Vec<(usize, usize)> {
        merge(
            self.occlusions
                .iter()
                .filter(|e| e.camera == camera)
                .map(|e| (e.start, e.start + e.duration - 1))
                .collect(),
        )
    }

    pub fn merged_changes(&self) -> Vec<(usize, usize)> {
        merge(
            self.changes
                .iter()
                .map(|e| (e.start, e.start + e.duration - 1))
                .collect(),
        )
    }
}

fn merge(mut intervals: Vec<(usize, usize)>) -> Vec<(usize, usize)> {
    intervals.sort_unstable();
    let mut out: Vec<(usize, usize)> = Vec::new();
    for (s, e) in intervals {
        match out.last_mut() {
            Some(last) if s <= last.1 + 1 => last.1 = last.1.max(e),
            _ => out.push((s, e)),
        }
    }
    out
}

/// Scales a frame index of a 3000-frame reference sequence to `n_frames`.
pub fn scale_frame(reference: usize, n_frames: usize) -> usize {
    (reference * n_frames / 3000).max(1)
}

/// Four cameras, 1000 frames: an occlusion of camera 0 at frame 192 and a
/// global change at frame 283 (frames 577 and 851 of 3000, scaled).
pub fn paper_analog(mode: ScenarioMode, seed: u64) -> ScenarioConfig {
    let n_frames = 1000;
    let mut cfg = ScenarioConfig::new(4, n_frames).expect("valid preset");
    cfg.mode = mode;
    cfg.seed = seed;
    cfg.occlusions = vec![OcclusionEvent {
        camera: 0,
        start: scale_frame(577, n_frames),
        duration: 12,
    }];
    cfg.changes = vec![ChangeEvent {
        start: scale_frame(851, n_frames),
        duration: 10,
    }];
    cfg
}

/// Two cameras rendered as frames; camera 0 is occluded for 12 frames from
/// frame 70, after which the occluder slides away.
pub fn drift(seed: u64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::new(2, 120).expect("valid preset");
    cfg.mode = ScenarioMode::Frames;
    cfg.seed = seed;
    cfg.occlusions = vec![OcclusionEvent {
        camera: 0,
        start: 70,
        duration: 12,
    }];
    cfg
}

/// Hidden-state labels per frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    pub s: Vec<bool>,
    /// `o[camera][t - 1]`.
    pub o: Vec<Vec<bool>>,
}

impl GroundTruth {
    fn empty(n_cameras: usize, n_frames: usize) -> Self {
        GroundTruth {
            s: vec![false; n_frames],
            o: vec![vec![false; n_frames]; n_cameras],
        }
    }

    pub fn n_frames(&self) -> usize {
        self.s.len()
    }

    pub fn n_cameras(&self) -> usize {
        self.o.len()
    }

    /// Labels at 1-based frame `t`.
    pub fn at(&self, t: usize) -> (bool, Vec<bool>) {
        (self.s[t - 1], self.o.iter().map(|row| row[t - 1]).collect())
    }

    /// CSV with columns `t,s,o_1..o_N`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,s");
        for n in 1..=self.n_cameras() {
            out.push_str(&format!(",o_{n}"));
        }
        out.push('\n');
        for t in 1..=self.n_frames() {
            let (s, o) = self.at(t);
            out.push_str(&format!("{t},{}", u8::from(s)));
            for b in o {
                out.push_str(&format!(",{}", u8::from(b)));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, SceneError> {
        let bad = |m: String| SceneError::Invalid(format!("ground truth CSV: {m}"));
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| bad("empty".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.len() < 3 || cols[0] != "t" || cols[1] != "s" {
            return Err(bad(format!("unexpected header {header:?}")));
        }
        let n = cols.len() - 2;
        let mut truth = GroundTruth {
            s: Vec::new(),
            o: vec![Vec::new(); n],
        };
        for (i, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != n + 2 {
                return Err(bad(format!("row {} has {} fields", i + 1, fields.len())));
            }
            if fields[0].parse::<usize>().ok() != Some(i + 1) {
                return Err(bad(format!("row {} has t = {}", i + 1, fields[0])));
            }
            let flag = |f: &str| match f {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(bad(format!("bad flag {other:?}"))),
            };
            truth.s.push(flag(fields[1])?);
            for (row, f) in truth.o.iter_mut().zip(&fields[2..]) {
                row.push(flag(f)?);
            }
        }
        Ok(truth)
    }
}

/// What one camera delivers at one frame.
#[derive(Debug, Clone, PartialEq)]
pub enum CameraObservation {
    Z(f64),
    Patch(Vec<f64>),
    Frame { frame: Frame, target: BoundingBox },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub t: usize,
    pub cameras: Vec<CameraObservation>,
    /// Optional `(s, o)` labels.
    pub truth: Option<(bool, Vec<bool>)>,
}

impl FrameRecord {
    /// Residuals of every camera, if this is a residual-only record.
    pub fn z_values(&self) -> Option<Vec<f64>> {
        self.cameras
            .iter()
            .map(|c| match c {
                CameraObservation::Z(z) => Some(*z),
                _ => None,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub records: Vec<FrameRecord>,
    pub truth: GroundTruth,
}

/// Runs the generator described by `cfg`.
pub fn generate(cfg: &ScenarioConfig) -> Result<Scenario, SceneError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    match cfg.mode {
        ScenarioMode::DirectZ => generate_direct_z(cfg, &mut rng),
        ScenarioMode::Patch | ScenarioMode::Frames => generate_appearance(cfg, &mut rng),
    }
}

fn planted_truth(cfg: &ScenarioConfig) -> GroundTruth {
    let mut truth = GroundTruth::empty(cfg.n_cameras, cfg.n_frames);
    for (s, e) in cfg.merged_changes() {
        truth.s[s - 1..e].fill(true);
    }
    for (cam, row) in truth.o.iter_mut().enumerate() {
        for (s, e) in cfg.merged_occlusions(cam) {
            row[s - 1..e].fill(true);
        }
    }
    truth
}

fn sampled_truth(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> GroundTruth {
    let n = cfg.n_cameras;
    let model = &cfg.model;
    let mut truth = GroundTruth::empty(n, cfg.n_frames);
    // initial joint state from the prior at t = 0
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut index = state_count(n) - 1;
    for (i, p) in model.prior.probs().iter().enumerate() {
        acc += p;
        if u < acc {
            index = i;
            break;
        }
    }
    let mut s = index >> n & 1 == 1;
    let mut o: Vec<bool> = (0..n).map(|i| index >> i & 1 == 1).collect();
    for t in 0..cfg.n_frames {
        s = rng.random::<f64>() < model.transitions.s_chain.prob(s, true);
        for (oi, chain) in o.iter_mut().zip(&model.transitions.o_chains) {
            *oi = rng.random::<f64>() < chain.prob(*oi, true);
        }
        truth.s[t] = s;
        for (row, &oi) in truth.o.iter_mut().zip(&o) {
            row[t] = oi;
        }
    }
    truth
}

fn generate_direct_z(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Result<Scenario, SceneError> {
    let truth = if cfg.has_events() {
        planted_truth(cfg)
    } else {
        sampled_truth(cfg, rng)
    };
    let mu = cfg.model.emission.mu();
    let m = cfg.model.emission.m_max();
    let exp = Exp::new(1.0 / mu).map_err(|e| SceneError::Invalid(e.to_string()))?;
    let records = (1..=cfg.n_frames)
        .map(|t| {
            let (s, o) = truth.at(t);
            let cameras = o
                .iter()
                .map(|&occ| {
                    let z = if s || occ {
                        rng.random::<f64>() * m
                    } else {
                        exp.sample(rng)
                    };
                    CameraObservation::Z(z)
                })
                .collect();
            FrameRecord {
                t,
                cameras,
                truth: Some((s, o)),
            }
        })
        .collect();
    Ok(Scenario { records, truth })
}

// Ranges of the per-pixel mean intensity. The background lies in
// [0, BACKGROUND_LEVEL).
const TARGET_LEVEL: (f64, f64) = (0.35, 0.85);
const OCCLUDER_LEVEL: (f64, f64) = (0.05, 0.35);
const BACKGROUND_LEVEL: f64 = 0.25;

/// Latent-linear appearance model `mean + L a`.
#[derive(Debug, Clone)]
struct Appearance {
    mean: DVector<f64>,
    loadings: DMatrix<f64>,
}

impl Appearance {
    fn draw(dim: usize, rank: usize, scale: f64, level: (f64, f64), rng: &mut ChaCha8Rng) -> Self {
        let mean = DVector::from_fn(dim, |_, _| level.0 + (level.1 - level.0) * rng.random::<f64>());
        let loadings = DMatrix::from_fn(dim, rank, |_, _| {
            scale * rng.sample::<f64, _>(StandardNormal)
        });
        Appearance { mean, loadings }
    }

    fn render(&self, latent: &DVector<f64>, noise: &Normal<f64>, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (&self.mean + &self.loadings * latent)
            .iter()
            .map(|v| v + noise.sample(rng))
            .collect()
    }
}

/// Bounded random walk: steps of `step * |a|` in a random direction, with
/// the norm kept within `[0.5, 1.5]`.
#[derive(Debug, Clone)]
struct LatentWalk {
    state: DVector<f64>,
    step: f64,
}

impl LatentWalk {
    fn new(rank: usize, step: f64, rng: &mut ChaCha8Rng) -> Self {
        let v = DVector::from_fn(rank, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = v.norm().max(1e-12);
        LatentWalk {
            state: v / norm,
            step,
        }
    }

    fn advance(&mut self, rng: &mut ChaCha8Rng) {
        let dir = DVector::from_fn(self.state.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let len = self.step * self.state.norm();
        self.state += dir.normalize() * len;
        let norm = self.state.norm();
        if norm > 1.5 {
            self.state *= 1.5 / norm;
        } else if norm < 0.5 && norm > 0.0 {
            self.state *= 0.5 / norm;
        }
    }
}

struct CameraRender {
    background: Vec<f64>,
    origin: (f64, f64),
    phase: f64,
}

fn target_box(cfg: &ScenarioConfig, cam: &CameraRender, t: usize) -> BoundingBox {
    let angle = t as f64 / 40.0 + cam.phase;
    let x = cam.origin.0 + cfg.target_wander * angle.sin();
    let y = cam.origin.1 + cfg.target_wander * angle.cos();
    BoundingBox::new(x.round() as i64, y.round() as i64, cfg.patch_w, cfg.patch_h)
}

fn generate_appearance(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Result<Scenario, SceneError> {
    let n = cfg.n_cameras;
    let d = cfg.patch_dim();
    let r = cfg.latent_rank;
    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| SceneError::Invalid(e.to_string()))?;
    let frames = cfg.mode == ScenarioMode::Frames;
    let margin = cfg.occluder_margin;
    let (occ_h, occ_w) = if frames {
        (cfg.patch_h + 2 * margin, cfg.patch_w + 2 * margin)
    } else {
        (cfg.patch_h, cfg.patch_w)
    };

    let mut targets: Vec<Appearance> = (0..n)
        .map(|_| Appearance::draw(d, r, cfg.appearance_scale, TARGET_LEVEL, rng))
        .collect();
    let occluders: Vec<Appearance> = (0..n)
        .map(|_| Appearance::draw(occ_h * occ_w, r, cfg.appearance_scale, OCCLUDER_LEVEL, rng))
        .collect();
    let mut walk = LatentWalk::new(r, cfg.walk_step, rng);
    let mut occluder_walk = LatentWalk::new(r, cfg.walk_step, rng);

    let cams: Vec<CameraRender> = (0..n)
        .map(|_| {
            let background = (0..cfg.frame_h * cfg.frame_w)
                .map(|_| BACKGROUND_LEVEL * rng.random::<f64>())
                .collect();
            let wander = cfg.target_wander.ceil();
            let lo_x = margin as f64 + wander + 1.0;
            let lo_y = margin as f64 + wander + 1.0;
            let hi_x = (cfg.frame_w - cfg.patch_w - margin) as f64 - wander - 1.0;
            let hi_y = (cfg.frame_h - cfg.patch_h - margin) as f64 - wander - 1.0;
            // keep the start in the left half so a departing occluder has room
            let hi_x = lo_x.max((lo_x + hi_x) / 2.0);
            let origin = (
                lo_x + (hi_x - lo_x).max(0.0) * rng.random::<f64>(),
                lo_y + (hi_y - lo_y).max(0.0) * rng.random::<f64>(),
            );
            CameraRender {
                background,
                origin,
                phase: std::f64::consts::TAU * rng.random::<f64>(),
            }
        })
        .collect();

    let truth = planted_truth(cfg);
    let change_starts: Vec<usize> = cfg.merged_changes().iter().map(|c| c.0).collect();
    let occlusion_intervals: Vec<Vec<(usize, usize)>> =
        (0..n).map(|c| cfg.merged_occlusions(c)).collect();

    let mut records = Vec::with_capacity(cfg.n_frames);
    for t in 1..=cfg.n_frames {
        if t > 1 {
            walk.advance(rng);
            occluder_walk.advance(rng);
        }
        if change_starts.contains(&t) {
            for a in targets.iter_mut() {
                *a = Appearance::draw(d, r, cfg.appearance_scale, TARGET_LEVEL, rng);
            }
        }
        let (s, o) = truth.at(t);
        let mut cameras = Vec::with_capacity(n);
        for cam in 0..n {
            let target_patch = targets[cam].render(&walk.state, &noise, rng);
            let occluder_patch = occluders[cam].render(&occluder_walk.state, &noise, rng);
            if !frames {
                cameras.push(CameraObservation::Patch(if o[cam] {
                    occluder_patch
                } else {
                    target_patch
                }));
                continue;
            }
            let render = &cams[cam];
            let target = target_box(cfg, render, t);
            let mut frame = Frame::new(
                cfg.frame_h,
                cfg.frame_w,
                render
                    .background
                    .iter()
                    .map(|b| b + noise.sample(rng))
                    .collect(),
            )
            .expect("frame size");
            paint(&mut frame, &target, cfg.patch_w, &target_patch);
            // the occluder sits on the target during an event and slides
            // right afterwards
            let placement = occlusion_intervals[cam].iter().find_map(|&(start, end)| {
                if t >= start && t <= end {
                    Some(target_box(cfg, render, t).shifted(-(margin as i64), -(margin as i64)))
                } else if t > end {
                    let anchor = target_box(cfg, render, end).shifted(-(margin as i64), -(margin as i64));
                    let shift = (cfg.occluder_speed * (t - end)) as i64;
                    (anchor.x + shift < cfg.frame_w as i64).then(|| anchor.shifted(shift, 0))
                } else {
                    None
                }
            });
            if let Some(b) = placement {
                let occ_box = BoundingBox::new(b.x, b.y, occ_w, occ_h);
                paint(&mut frame, &occ_box, occ_w, &occluder_patch);
            }
            cameras.push(CameraObservation::Frame { frame, target });
        }
        records.push(FrameRecord {
            t,
            cameras,
            truth: Some((s, o)),
        });
    }
    Ok(Scenario { records, truth })
}

// Draws a row-major patch at `b`, clipping at the frame border.
fn paint(frame: &mut Frame, b: &BoundingBox, patch_w: usize, patch: &[f64]) {
    for (i, &v) in patch.iter().enumerate() {
        let row = b.y + (i / patch_w) as i64;
        let col = b.x + (i % patch_w) as i64;
        if row >= 0 && col >= 0 && (row as usize) < frame.height() && (col as usize) < frame.width() {
            frame.set(row as usize, col as usize, v);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::{BeliefState, Chain, EmissionParams, TransitionParams};
    use crate::subspace::AffineSubspace;

    fn patches(s: &Scenario, cam: usize) -> Vec<Vec<f64>> {
        s.records
            .iter()
            .map(|r| match &r.cameras[cam] {
                CameraObservation::Patch(p) => p.clone(),
                other => panic!("unexpected {other:?}"),
            })
            .collect()
    }

    #[test]
    fn noiseless_patches_lie_in_a_fixed_affine_set() {
        let mut cfg = ScenarioConfig::new(2, 60).unwrap();
        cfg.noise_sigma = 0.0;
        let s = generate(&cfg).unwrap();
        for cam in 0..2 {
            let p = patches(&s, cam);
            let space = AffineSubspace::init_from_batch(&p[..10], cfg.latent_rank).unwrap();
            for y in &p[10..] {
                assert!(space.residual_distance(y).unwrap() < 1e-9);
            }
        }
    }

    #[test]
    fn occlusion_bookkeeping() {
        let mut cfg = ScenarioConfig::new(2, 100).unwrap();
        cfg.occlusions.push(OcclusionEvent {
            camera: 0,
            start: 50,
            duration: 11,
        });
        let s = generate(&cfg).unwrap();
        for t in 1..=100 {
            let (st, o) = s.truth.at(t);
            assert!(!st);
            assert_eq!(o[0], (50..=60).contains(&t), "t = {t}");
            assert!(!o[1]);
            assert_eq!(s.records[t - 1].truth.as_ref().unwrap().1, o);
        }
    }

    #[test]
    fn overlapping_events_merge() {
        let mut cfg = ScenarioConfig::new(1, 100).unwrap();
        cfg.occlusions = vec![
            OcclusionEvent { camera: 0, start: 10, duration: 5 },
            OcclusionEvent { camera: 0, start: 12, duration: 10 },
            OcclusionEvent { camera: 0, start: 22, duration: 2 },
            OcclusionEvent { camera: 0, start: 40, duration: 1 },
        ];
        assert_eq!(cfg.merged_occlusions(0), vec![(10, 23), (40, 40)]);
    }

    #[test]
    fn events_out_of_range_are_rejected() {
        let mut cfg = ScenarioConfig::new(1, 100).unwrap();
        cfg.changes.push(ChangeEvent { start: 95, duration: 10 });
        assert!(matches!(generate(&cfg), Err(SceneError::EventRange { .. })));
        cfg.changes = vec![ChangeEvent { start: 0, duration: 1 }];
        assert!(generate(&cfg).is_err());
        cfg.changes.clear();
        cfg.occlusions.push(OcclusionEvent { camera: 3, start: 1, duration: 1 });
        assert!(generate(&cfg).is_err());
    }

    #[test]
    fn generation_is_reproducible() {
        for mode in [ScenarioMode::Patch, ScenarioMode::DirectZ, ScenarioMode::Frames] {
            let mut cfg = ScenarioConfig::new(2, 30).unwrap();
            cfg.mode = mode;
            cfg.seed = 99;
            cfg.occlusions.push(OcclusionEvent { camera: 1, start: 5, duration: 4 });
            assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
            let mut other = cfg.clone();
            other.seed = 100;
            assert_ne!(generate(&cfg).unwrap(), generate(&other).unwrap());
        }
    }

    #[test]
    fn change_redraws_every_camera() {
        let mut cfg = ScenarioConfig::new(3, 40).unwrap();
        cfg.noise_sigma = 0.0;
        cfg.changes.push(ChangeEvent { start: 30, duration: 5 });
        let s = generate(&cfg).unwrap();
        for cam in 0..3 {
            let p = patches(&s, cam);
            let space = AffineSubspace::init_from_batch(&p[..29], cfg.latent_rank).unwrap();
            assert!(space.residual_distance(&p[28]).unwrap() < 1e-9);
            assert!(space.residual_distance(&p[29]).unwrap() > 0.1);
        }
        assert!(s.truth.s[29] && s.truth.s[33] && !s.truth.s[34]);
    }

    #[test]
    fn sampled_chains_follow_the_model() {
        let mut cfg = ScenarioConfig::new(2, 2000).unwrap();
        cfg.mode = ScenarioMode::DirectZ;
        cfg.model = ModelParams::new(
            EmissionParams::new(1.0, 20.0).unwrap(),
            TransitionParams::shared(
                Chain::sticky(0.9, 0.5).unwrap(),
                Chain::sticky(0.8, 0.6).unwrap(),
                2,
            )
            .unwrap(),
            BeliefState::mostly_normal(2, 1.0).unwrap(),
        )
        .unwrap();
        let s = generate(&cfg).unwrap();
        let frac = |v: &[bool]| v.iter().filter(|&&b| b).count() as f64 / v.len() as f64;
        // stationary anomalous probabilities: 1/6 and 1/3
        assert!((frac(&s.truth.s) - 1.0 / 6.0).abs() < 0.05);
        assert!((frac(&s.truth.o[0]) - 1.0 / 3.0).abs() < 0.05);
        for r in &s.records {
            let (st, o) = r.truth.clone().unwrap();
            for (cam, c) in r.cameras.iter().enumerate() {
                let CameraObservation::Z(z) = c else { panic!() };
                assert!(*z >= 0.0);
                if st || o[cam] {
                    assert!(*z <= 20.0);
                }
            }
        }
    }

    #[test]
    fn frames_show_target_and_occluder() {
        let mut cfg = ScenarioConfig::new(1, 30).unwrap();
        cfg.mode = ScenarioMode::Frames;
        cfg.noise_sigma = 0.0;
        cfg.occlusions.push(OcclusionEvent { camera: 0, start: 10, duration: 5 });
        let s = generate(&cfg).unwrap();
        let crop_at = |t: usize| match &s.records[t - 1].cameras[0] {
            CameraObservation::Frame { frame, target } => (frame.crop(target).unwrap(), *target),
            _ => panic!(),
        };
        let (before, b) = crop_at(9);
        let (during, _) = crop_at(12);
        assert!(frame_in_bounds(&cfg, &b));
        let diff: f64 = before.iter().zip(&during).map(|(a, b)| (a - b).abs()).sum();
        assert!(diff / before.len() as f64 > 0.05);
        // ten frames after the event the occluder has moved 30 pixels away
        let (after, _) = crop_at(24);
        let target_level: f64 = after.iter().sum::<f64>() / after.len() as f64;
        assert!(target_level > 0.3);
    }

    fn frame_in_bounds(cfg: &ScenarioConfig, b: &BoundingBox) -> bool {
        b.x >= 0 && b.y >= 0 && b.x as usize + b.w <= cfg.frame_w && b.y as usize + b.h <= cfg.frame_h
    }

    #[test]
    fn paper_analog_preset_scales_frames() {
        let cfg = paper_analog(ScenarioMode::DirectZ, 1);
        assert_eq!(cfg.n_cameras, 4);
        assert_eq!(cfg.n_frames, 1000);
        assert_eq!(cfg.occlusions[0].start, 192);
        assert_eq!(cfg.changes[0].start, 283);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn truth_csv_round_trip() {
        let mut cfg = ScenarioConfig::new(2, 12).unwrap();
        cfg.mode = ScenarioMode::DirectZ;
        cfg.occlusions.push(OcclusionEvent { camera: 1, start: 3, duration: 2 });
        cfg.changes.push(ChangeEvent { start: 8, duration: 1 });
        let s = generate(&cfg).unwrap();
        let csv = s.truth.to_csv();
        assert!(csv.starts_with("t,s,o_1,o_2\n1,0,0,0\n"));
        assert_eq!(GroundTruth::from_csv(&csv).unwrap(), s.truth);
        assert!(GroundTruth::from_csv("t,s,o_1\n2,0,0\n").is_err());
    }
}
