//! Maps filtered posteriors to tracker learning rates and to the alarm.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("{name} = {value} must lie in [0, 1]")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("hysteresis release threshold {release} must not exceed the freeze threshold {freeze}")]
    Hysteresis { release: f64, freeze: f64 },
    #[error("alarm debounce must be at least one frame")]
    Debounce,
}

/// Which posteriors freeze the tracker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FreezeRule {
    /// Freeze when either the occlusion or the change posterior is high.
    #[default]
    OcclusionOrChange,
    OcclusionOnly,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlConfig {
    pub alarm_threshold: f64,
    pub occlusion_threshold: f64,
    pub lambda_normal: f64,
    pub lambda_frozen: f64,
    pub freeze_rule: FreezeRule,
    /// Release threshold for the optional [`LambdaHysteresis`]; `None`
    /// disables hysteresis.
    pub release_threshold: Option<f64>,
    /// Consecutive frames above the alarm threshold required by
    /// [`AlarmDebounce`].
    pub alarm_debounce: usize,
}

impl Default for ControlConfig {
    fn default() -> Self {
        ControlConfig {
            alarm_threshold: 0.9,
            occlusion_threshold: 0.5,
            lambda_normal: 0.85,
            lambda_frozen: 1.0,
            freeze_rule: FreezeRule::OcclusionOrChange,
            release_threshold: None,
            alarm_debounce: 1,
        }
    }
}

impl ControlConfig {
    pub fn validate(&self) -> Result<(), ControlError> {
        let unit = [
            ("alarm_threshold", self.alarm_threshold),
            ("occlusion_threshold", self.occlusion_threshold),
            ("lambda_normal", self.lambda_normal),
            ("lambda_frozen", self.lambda_frozen),
        ];
        for (name, value) in unit {
            if !(0.0..=1.0).contains(&value) {
                return Err(ControlError::OutOfRange { name, value });
            }
        }
        if let Some(release) = self.release_threshold {
            if !(0.0..=1.0).contains(&release) {
                return Err(ControlError::OutOfRange {
                    name: "release_threshold",
                    value: release,
                });
            }
            if release > self.occlusion_threshold {
                return Err(ControlError::Hysteresis {
                    release,
                    freeze: self.occlusion_threshold,
                });
            }
        }
        if self.alarm_debounce == 0 {
            return Err(ControlError::Debounce);
        }
        Ok(())
    }

    fn freeze_signal(&self, p_occlusion: f64, p_change: f64) -> f64 {
        match self.freeze_rule {
            FreezeRule::OcclusionOrChange => p_occlusion.max(p_change),
            FreezeRule::OcclusionOnly => p_occlusion,
        }
    }
}

/// Learning parameter for one camera: frozen when the posterior is strictly
/// above the occlusion threshold.
pub fn lambda_for(p_occlusion: f64, p_change: f64, cfg: &ControlConfig) -> f64 {
    if cfg.freeze_signal(p_occlusion, p_change) > cfg.occlusion_threshold {
        cfg.lambda_frozen
    } else {
        cfg.lambda_normal
    }
}

/// Raised when the change posterior is strictly above the alarm threshold.
pub fn alarm(p_change: f64, cfg: &ControlConfig) -> bool {
    p_change > cfg.alarm_threshold
}

/// Two-threshold variant of [`lambda_for`]: freezes above the occlusion
/// threshold and releases only once the signal drops to the release
/// threshold or below.
#[derive(Debug, Clone, Default)]
pub struct LambdaHysteresis {
    frozen: bool,
}

impl LambdaHysteresis {
    pub fn lambda(&mut self, p_occlusion: f64, p_change: f64, cfg: &ControlConfig) -> f64 {
        let Some(release) = cfg.release_threshold else {
            return lambda_for(p_occlusion, p_change, cfg);
        };
        let signal = cfg.freeze_signal(p_occlusion, p_change);
        if signal > cfg.occlusion_threshold {
            self.frozen = true;
        } else if signal <= release {
            self.frozen = false;
        }
        if self.frozen {
            cfg.lambda_frozen
        } else {
            cfg.lambda_normal
        }
    }
}

/// Requires `alarm_debounce` consecutive frames above threshold.
#[derive(Debug, Clone, Default)]
pub struct AlarmDebounce {
    run: usize,
}

impl AlarmDebounce {
    pub fn alarm(&mut self, p_change: f64, cfg: &ControlConfig) -> bool {
        if alarm(p_change, cfg) {
            self.run += 1;
        } else {
            self.run = 0;
        }
        self.run >= cfg.alarm_debounce.max(1)
    }
}
