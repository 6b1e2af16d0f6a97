//! Run configuration: a TOML file with one table per component.
//!
//! Every key is optional. Unknown keys are collected and reported together.
//!
//! ```toml
//! format_version = 1
//! seed = 3
//!
//! [model]
//! mu = 1.0
//! m_max = 20.0
//!
//! [scenario]
//! preset = "paper-analog"
//! mode = "direct_z"
//! occlusions = [{ camera = 2, start = 100, duration = 8 }]
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use occhmm::control::{ControlConfig, FreezeRule};
use occhmm::eval::EvalConfig;
use occhmm::filter::{BeliefState, Chain, EmissionParams, ModelParams, TransitionParams};
use occhmm::pipeline::{DetectorConfig, LambdaPolicy, TrackConfig};
use occhmm::scene::{self, ChangeEvent, OcclusionEvent, ScenarioConfig, ScenarioMode};
use occhmm::subspace::{PredictorConfig, PredictorMode, SubspacePredictor};

use crate::format::FORMAT_VERSION;

pub const CONFIG_ENV: &str = "OCCHMM_CONFIG";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("cannot read config {path}: {reason}")]
    Read { path: PathBuf, reason: String },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("unknown config keys: {}", .0.join(", "))]
    UnknownKeys(Vec<String>),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid(e: impl std::fmt::Display) -> ConfigError {
    ConfigError::Invalid(e.to_string())
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub format_version: u32,
    pub seed: u64,
    pub model: ModelSection,
    pub subspace: SubspaceSection,
    pub tracker: TrackerSection,
    pub control: ControlSection,
    pub scenario: ScenarioSection,
    pub eval: EvalSection,
    pub io: IoSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            format_version: FORMAT_VERSION,
            seed: 0,
            model: ModelSection::default(),
            subspace: SubspaceSection::default(),
            tracker: TrackerSection::default(),
            control: ControlSection::default(),
            scenario: ScenarioSection::default(),
            eval: EvalSection::default(),
            io: IoSection::default(),
        }
    }
}

/// Shared chains for every camera; the prior puts `prior_normal` on the
/// all-normal state.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default)]
pub struct ModelSection {
    pub mu: f64,
    pub m_max: f64,
    pub s_stay_normal: f64,
    pub s_stay_change: f64,
    pub o_stay_normal: f64,
    pub o_stay_occluded: f64,
    pub prior_normal: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            mu: 1.0,
            m_max: 20.0,
            s_stay_normal: 0.99,
            s_stay_change: 0.80,
            o_stay_normal: 0.95,
            o_stay_occluded: 0.70,
            prior_normal: 0.99,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default)]
pub struct SubspaceSection {
    pub rank: usize,
    pub forgetting: f64,
    pub init_window: usize,
    pub init_jitter: f64,
    pub gate_threshold: f64,
    /// Refit on the last `window` patches instead of incremental updates.
    pub window: Option<usize>,
    pub seed: u64,
    /// Frames used to fit `mu` and `M`; 0 keeps the model section's values.
    pub calibration_window: usize,
    pub min_separation: f64,
}

impl Default for SubspaceSection {
    fn default() -> Self {
        let p = PredictorConfig::default();
        let d = DetectorConfig::default();
        SubspaceSection {
            rank: p.rank_cap,
            forgetting: p.forgetting,
            init_window: p.init_window,
            init_jitter: p.init_jitter,
            gate_threshold: p.gate_threshold,
            window: None,
            seed: p.seed,
            calibration_window: d.calibration_window.unwrap_or(0),
            min_separation: d.min_separation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default)]
pub struct TrackerSection {
    pub num_features: usize,
    pub search_radius: usize,
    pub init_var: f64,
    pub feature_seed: u64,
    /// Learn with this parameter on every frame; unset means controlled.
    pub fixed_lambda: Option<f64>,
}

impl Default for TrackerSection {
    fn default() -> Self {
        let t = TrackConfig::default();
        TrackerSection {
            num_features: t.num_features,
            search_radius: t.search_radius,
            init_var: t.init_var,
            feature_seed: t.feature_seed,
            fixed_lambda: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default)]
pub struct ControlSection {
    pub alarm_threshold: f64,
    pub occlusion_threshold: f64,
    pub lambda_normal: f64,
    pub lambda_frozen: f64,
    /// `occlusion_or_change` or `occlusion_only`.
    pub freeze_rule: String,
    pub release_threshold: Option<f64>,
    pub alarm_debounce: usize,
}

impl Default for ControlSection {
    fn default() -> Self {
        let c = ControlConfig::default();
        ControlSection {
            alarm_threshold: c.alarm_threshold,
            occlusion_threshold: c.occlusion_threshold,
            lambda_normal: c.lambda_normal,
            lambda_frozen: c.lambda_frozen,
            freeze_rule: "occlusion_or_change".into(),
            release_threshold: c.release_threshold,
            alarm_debounce: c.alarm_debounce,
        }
    }
}

/// Overrides applied on top of the preset (or an event-free base scenario).
/// Cameras are numbered from 1.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default)]
pub struct ScenarioSection {
    pub preset: Option<String>,
    pub mode: Option<String>,
    pub n_cameras: Option<usize>,
    pub n_frames: Option<usize>,
    pub patch_h: Option<usize>,
    pub patch_w: Option<usize>,
    pub latent_rank: Option<usize>,
    pub noise_sigma: Option<f64>,
    pub walk_step: Option<f64>,
    pub appearance_scale: Option<f64>,
    pub frame_h: Option<usize>,
    pub frame_w: Option<usize>,
    pub occluder_margin: Option<usize>,
    pub occluder_speed: Option<usize>,
    pub target_wander: Option<f64>,
    pub occlusions: Option<Vec<OcclusionSpec>>,
    pub changes: Option<Vec<ChangeSpec>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcclusionSpec {
    pub camera: usize,
    pub start: usize,
    pub duration: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChangeSpec {
    pub start: usize,
    pub duration: usize,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    pub threshold: f64,
    pub alarm_tolerance: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        let e = EvalConfig::default();
        EvalSection {
            threshold: e.threshold,
            alarm_tolerance: e.alarm_tolerance,
        }
    }
}

/// Default paths; command-line flags take precedence.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default)]
pub struct IoSection {
    pub stream: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub posterior: Option<PathBuf>,
    pub track: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

pub const PRESETS: [&str; 2] = ["paper-analog", "drift"];

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let de = toml::Deserializer::parse(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let mut unknown = Vec::new();
        let cfg: RunConfig = serde_ignored::deserialize(de, |path| unknown.push(path.to_string()))
            .map_err(|e| ConfigError::Parse(e.to_string()))?;
        if !unknown.is_empty() {
            return Err(ConfigError::UnknownKeys(unknown));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.to_owned(),
            reason: e.to_string(),
        })?;
        Self::from_toml_str(&text)
    }

    /// Reads `path`, else the file named by `OCCHMM_CONFIG`, else defaults.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        match path {
            Some(p) => Self::from_path(p),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) if !p.is_empty() => Self::from_path(Path::new(&p)),
                _ => Ok(RunConfig::default()),
            },
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.format_version != FORMAT_VERSION {
            return Err(invalid(format!(
                "format_version {} is not supported (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        self.model_params(1)?;
        self.control_config()?;
        SubspacePredictor::new(self.predictor_config()).map_err(invalid)?;
        let e = &self.eval;
        if !(e.threshold > 0.0 && e.threshold < 1.0) {
            return Err(invalid(format!("eval.threshold {} outside (0, 1)", e.threshold)));
        }
        if let Some(l) = self.tracker.fixed_lambda {
            if !(0.0..=1.0).contains(&l) {
                return Err(invalid(format!("tracker.fixed_lambda {l} outside [0, 1]")));
            }
        }
        if self.tracker.num_features == 0 {
            return Err(invalid("tracker.num_features must be positive"));
        }
        if let Some(p) = &self.scenario.preset {
            check_preset(p)?;
        }
        if let Some(m) = &self.scenario.mode {
            m.parse::<ScenarioMode>().map_err(invalid)?;
        }
        Ok(())
    }

    pub fn model_params(&self, n_cameras: usize) -> Result<ModelParams, ConfigError> {
        let m = &self.model;
        let build = || {
            ModelParams::new(
                EmissionParams::new(m.mu, m.m_max)?,
                TransitionParams::shared(
                    Chain::sticky(m.s_stay_normal, m.s_stay_change)?,
                    Chain::sticky(m.o_stay_normal, m.o_stay_occluded)?,
                    n_cameras,
                )?,
                BeliefState::mostly_normal(n_cameras, m.prior_normal)?,
            )
        };
        build().map_err(invalid)
    }

    pub fn control_config(&self) -> Result<ControlConfig, ConfigError> {
        let c = &self.control;
        let freeze_rule = match c.freeze_rule.as_str() {
            "occlusion_or_change" => FreezeRule::OcclusionOrChange,
            "occlusion_only" => FreezeRule::OcclusionOnly,
            other => {
                return Err(invalid(format!(
                    "control.freeze_rule {other:?} (expected occlusion_or_change or occlusion_only)"
                )))
            }
        };
        let cfg = ControlConfig {
            alarm_threshold: c.alarm_threshold,
            occlusion_threshold: c.occlusion_threshold,
            lambda_normal: c.lambda_normal,
            lambda_frozen: c.lambda_frozen,
            freeze_rule,
            release_threshold: c.release_threshold,
            alarm_debounce: c.alarm_debounce,
        };
        cfg.validate().map_err(invalid)?;
        Ok(cfg)
    }

    pub fn predictor_config(&self) -> PredictorConfig {
        let s = &self.subspace;
        PredictorConfig {
            rank_cap: s.rank,
            forgetting: s.forgetting,
            init_window: s.init_window,
            init_jitter: s.init_jitter,
            gate_threshold: s.gate_threshold,
            mode: match s.window {
                Some(size) => PredictorMode::Window { size },
                None => PredictorMode::Incremental,
            },
            seed: s.seed,
        }
    }

    pub fn detector_config(&self) -> Result<DetectorConfig, ConfigError> {
        Ok(DetectorConfig {
            predictor: self.predictor_config(),
            control: self.control_config()?,
            calibration_window: match self.subspace.calibration_window {
                0 => None,
                w => Some(w),
            },
            min_separation: self.subspace.min_separation,
        })
    }

    /// `fixed` overrides the configured policy; `Some(None)` forces control.
    pub fn track_config(&self, fixed: Option<Option<f64>>) -> Result<TrackConfig, ConfigError> {
        let lambda = fixed.unwrap_or(self.tracker.fixed_lambda);
        Ok(TrackConfig {
            detector: self.detector_config()?,
            policy: match lambda {
                Some(l) => LambdaPolicy::Fixed(l),
                None => LambdaPolicy::Controlled,
            },
            num_features: self.tracker.num_features,
            search_radius: self.tracker.search_radius,
            init_var: self.tracker.init_var,
            feature_seed: self.tracker.feature_seed,
        })
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            threshold: self.eval.threshold,
            alarm_tolerance: self.eval.alarm_tolerance,
        }
    }

    /// Builds the scenario: preset (flag, then config), then the config's
    /// overrides, then the mode flag. The model section drives `DirectZ`
    /// residuals.
    pub fn scenario_config(
        &self,
        preset: Option<&str>,
        mode: Option<ScenarioMode>,
        seed: u64,
    ) -> Result<ScenarioConfig, ConfigError> {
        let sc = &self.scenario;
        let config_mode = sc.mode.as_deref().map(str::parse::<ScenarioMode>).transpose().map_err(invalid)?;
        let mut cfg = match preset.or(sc.preset.as_deref()) {
            Some(p) => {
                check_preset(p)?;
                if p == "drift" {
                    scene::drift(seed)
                } else {
                    scene::paper_analog(ScenarioMode::Patch, seed)
                }
            }
            None => ScenarioConfig::new(sc.n_cameras.unwrap_or(4), sc.n_frames.unwrap_or(1000)).map_err(invalid)?,
        };
        cfg.seed = seed;
        macro_rules! overlay {
            ($($field:ident),*) => {
                $(if let Some(v) = sc.$field { cfg.$field = v; })*
            };
        }
        overlay!(
            n_cameras,
            n_frames,
            patch_h,
            patch_w,
            latent_rank,
            noise_sigma,
            walk_step,
            appearance_scale,
            frame_h,
            frame_w,
            occluder_margin,
            occluder_speed,
            target_wander
        );
        if let Some(occ) = &sc.occlusions {
            cfg.occlusions = occ
                .iter()
                .map(|o| {
                    if o.camera == 0 {
                        return Err(invalid("scenario.occlusions: cameras are numbered from 1"));
                    }
                    Ok(OcclusionEvent {
                        camera: o.camera - 1,
                        start: o.start,
                        duration: o.duration,
                    })
                })
                .collect::<Result<_, _>>()?;
        }
        if let Some(ch) = &sc.changes {
            cfg.changes = ch
                .iter()
                .map(|c| ChangeEvent {
                    start: c.start,
                    duration: c.duration,
                })
                .collect();
        }
        if let Some(m) = mode.or(config_mode) {
            cfg.mode = m;
        }
        cfg.model = self.model_params(cfg.n_cameras)?;
        cfg.validate().map_err(invalid)?;
        Ok(cfg)
    }
}

fn check_preset(p: &str) -> Result<(), ConfigError> {
    if PRESETS.contains(&p) {
        Ok(())
    } else {
        Err(invalid(format!("unknown preset {p:?} (expected one of {})", PRESETS.join(", "))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_library() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.model_params(3).unwrap(), ModelParams::with_defaults(3).unwrap());
        assert_eq!(cfg.control_config().unwrap(), ControlConfig::default());
        assert_eq!(cfg.detector_config().unwrap(), DetectorConfig::default());
        assert_eq!(cfg.track_config(None).unwrap(), TrackConfig::default());
        assert_eq!(cfg.eval_config(), EvalConfig::default());
    }

    #[test]
    fn empty_file_is_default() {
        assert_eq!(RunConfig::from_toml_str("").unwrap(), RunConfig::default());
    }

    #[test]
    fn all_unknown_keys_listed() {
        let text = "bogus = 1\n[model]\nmu = 2.0\nsigma = 3\n[extra]\nx = 1\n";
        match RunConfig::from_toml_str(text) {
            Err(ConfigError::UnknownKeys(keys)) => {
                assert_eq!(keys.len(), 3, "{keys:?}");
                assert!(keys.contains(&"bogus".to_string()));
                assert!(keys.contains(&"model.sigma".to_string()));
                assert!(keys.iter().any(|k| k.starts_with("extra")));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn values_are_validated() {
        for text in [
            "[model]\nmu = -1.0",
            "[model]\ns_stay_normal = 1.5",
            "[control]\nfreeze_rule = \"sometimes\"",
            "[eval]\nthreshold = 1.0",
            "format_version = 7",
            "[scenario]\npreset = \"nope\"",
            "[subspace]\nforgetting = 0.0",
        ] {
            assert!(
                matches!(RunConfig::from_toml_str(text), Err(ConfigError::Invalid(_))),
                "{text}"
            );
        }
        assert!(matches!(RunConfig::from_toml_str("[model"), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn scenario_overlays_preset() {
        let text = "[scenario]\npreset = \"paper-analog\"\nn_frames = 400\n\
                    occlusions = [{ camera = 2, start = 50, duration = 5 }]\n";
        let cfg = RunConfig::from_toml_str(text).unwrap();
        let sc = cfg.scenario_config(None, Some(ScenarioMode::DirectZ), 9).unwrap();
        assert_eq!(sc.n_cameras, 4);
        assert_eq!(sc.n_frames, 400);
        assert_eq!(sc.mode, ScenarioMode::DirectZ);
        assert_eq!(sc.seed, 9);
        assert_eq!(sc.occlusions, vec![OcclusionEvent { camera: 1, start: 50, duration: 5 }]);
        assert_eq!(sc.changes[0].start, 283);
    }

    #[test]
    fn scenario_out_of_range_event_is_config_error() {
        let text = "[scenario]\nn_cameras = 2\nn_frames = 10\nchanges = [{ start = 8, duration = 5 }]\n";
        let cfg = RunConfig::from_toml_str(text).unwrap();
        assert!(matches!(cfg.scenario_config(None, None, 0), Err(ConfigError::Invalid(_))));
    }
}
