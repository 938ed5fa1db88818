//! Study configuration.
//!
//! Stored as TOML; every key is optional and falls back to its default.
//!
//! ```toml
//! [sim]
//! forward_speed = 5.0      # m/s
//! dt = 0.01                # s (100 Hz)
//! spawn_offset = 4.0       # m before the tube entrance
//! max_slew = 8.0           # m/s vertical speed limit
//! altitude_range = [7.0, 13.0]
//!
//! [feedback]
//! threshold = 0.4          # m
//! release_band = 0.05      # m
//! voltage = 300            # V
//!
//! [clutch]
//! force_per_volt = 0.05    # N/V
//! disengage_time = 0.040   # s
//! force_law = "linear"     # or "quadratic"
//! compliance = 0.05        # m of spring travel past the engagement point
//!
//! [course]
//! knot_spacing = 4.0
//! sine_midline = 10.0
//!
//! [realtime]
//! telemetry_hz = 30
//! preview_m = 30.0
//! overrun_warn_fraction = 0.01
//!
//! [pilot]                  # scripted proportional pilot
//! gain = 3.0
//! delay = 0.2
//! preview = 1.0
//! noise_sigma = 1.2
//! noise_tau = 0.6
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::clutch::{ClutchModel, ForceLaw};
use crate::dynamics::SimConfig;
use crate::feedback::FeedbackConfig;
use crate::trajectory::{DEFAULT_KNOT_SPACING, DEFAULT_SINE_MIDLINE};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading config: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClutchConfig {
    pub force_per_volt: f64,
    pub disengage_time: f64,
    pub force_law: ForceLaw,
    pub compliance: f64,
}

impl Default for ClutchConfig {
    fn default() -> Self {
        let m = ClutchModel::default();
        Self { force_per_volt: m.force_per_volt, disengage_time: m.disengage_time, force_law: m.force_law, compliance: 0.05 }
    }
}

impl ClutchConfig {
    pub fn model(&self) -> ClutchModel {
        ClutchModel { force_per_volt: self.force_per_volt, disengage_time: self.disengage_time, force_law: self.force_law }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CourseConfig {
    pub knot_spacing: f64,
    pub sine_midline: f64,
}

impl Default for CourseConfig {
    fn default() -> Self {
        Self { knot_spacing: DEFAULT_KNOT_SPACING, sine_midline: DEFAULT_SINE_MIDLINE }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RealtimeConfig {
    pub telemetry_hz: u32,
    /// Length of the geometry window sent ahead of the drone, m.
    pub preview_m: f64,
    pub overrun_warn_fraction: f64,
}

impl Default for RealtimeConfig {
    fn default() -> Self {
        Self { telemetry_hz: 30, preview_m: 30.0, overrun_warn_fraction: 0.01 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PilotConfig {
    /// Proportional gain on the perceived altitude error, 1/s.
    pub gain: f64,
    /// Perception delay, s.
    pub delay: f64,
    /// Look-ahead along the course, m.
    pub preview: f64,
    /// Stationary std-dev of the arm-velocity noise, m/s.
    pub noise_sigma: f64,
    /// Correlation time of the noise, s.
    pub noise_tau: f64,
}

impl Default for PilotConfig {
    fn default() -> Self {
        Self { gain: 3.0, delay: 0.2, preview: 1.0, noise_sigma: 1.2, noise_tau: 0.6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct StudyConfig {
    pub sim: SimConfig,
    pub feedback: FeedbackConfig,
    pub clutch: ClutchConfig,
    pub course: CourseConfig,
    pub realtime: RealtimeConfig,
    pub pilot: PilotConfig,
}

impl StudyConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: StudyConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.sim.validate().map_err(|e| invalid(&e))?;
        self.feedback.validate().map_err(|e| invalid(&e))?;
        if !(self.clutch.force_per_volt > 0.0 && self.clutch.disengage_time > 0.0 && self.clutch.compliance >= 0.0) {
            return Err(ConfigError::Invalid("clutch constants must be positive".into()));
        }
        if self.realtime.telemetry_hz == 0 {
            return Err(ConfigError::Invalid("telemetry_hz must be positive".into()));
        }
        let tick_hz = 1.0 / self.sim.dt;
        if (tick_hz - tick_hz.round()).abs() > 1e-6 {
            return Err(ConfigError::Invalid("dt must be the reciprocal of an integer tick rate".into()));
        }
        if !(self.pilot.gain >= 0.0 && self.pilot.delay >= 0.0 && self.pilot.noise_sigma >= 0.0 && self.pilot.noise_tau > 0.0) {
            return Err(ConfigError::Invalid("pilot parameters must be non-negative".into()));
        }
        Ok(())
    }

    /// Integer tick rate, Hz.
    pub fn tick_hz(&self) -> u32 {
        (1.0 / self.sim.dt).round() as u32
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
