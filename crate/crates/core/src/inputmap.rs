//! Elbow angle → commanded altitude.
//!
//! A [`Calibration`] is an affine map from the subject's measured elbow range
//! onto the simulator's altitude range. Out-of-range angles clamp to the
//! nearest limit and are flagged rather than rejected.

use std::io::BufRead;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Minimum usable elbow range, degrees.
pub const MIN_CALIBRATION_SPAN_DEG: f64 = 10.0;
/// Samples older than this are flagged stale, seconds.
pub const STALE_AFTER_S: f64 = 0.200;

#[derive(Debug, Error, PartialEq)]
pub enum InputError {
    #[error("calibration range {span:.1} deg is narrower than the {min} deg minimum")]
    CalibrationTooNarrow { span: f64, min: f64 },
    #[error("invalid calibration: {0}")]
    InvalidCalibration(String),
    #[error("no calibration recorded for this subject")]
    MissingCalibration,
    #[error("no input sample has been received")]
    NoSignal,
    #[error("malformed device line {0:?}")]
    Malformed(String),
    #[error("input source failed: {0}")]
    SourceFailed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    /// Flexion raises the drone.
    #[default]
    FlexionUp,
    FlexionDown,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Maximum extension, degrees.
    pub angle_min: f64,
    /// Maximum flexion, degrees.
    pub angle_max: f64,
    pub alt_min: f64,
    pub alt_max: f64,
    #[serde(default)]
    pub polarity: Polarity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MappedCommand {
    pub commanded_z: f64,
    pub out_of_range: bool,
}

pub fn calibrate(angle_min: f64, angle_max: f64, alt_range: (f64, f64)) -> Result<Calibration, InputError> {
    calibrate_with(angle_min, angle_max, alt_range, Polarity::FlexionUp)
}

pub fn calibrate_with(
    angle_min: f64,
    angle_max: f64,
    alt_range: (f64, f64),
    polarity: Polarity,
) -> Result<Calibration, InputError> {
    let cal = Calibration { angle_min, angle_max, alt_min: alt_range.0, alt_max: alt_range.1, polarity };
    cal.validate()?;
    Ok(cal)
}

/// Calibration from a recorded sweep; the extremes of the sweep are the limits.
pub fn calibrate_from_sweep(angles: &[f64], alt_range: (f64, f64)) -> Result<Calibration, InputError> {
    let finite = angles.iter().copied().filter(|a| a.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), a| (lo.min(a), hi.max(a)));
    if !lo.is_finite() {
        return Err(InputError::NoSignal);
    }
    calibrate(lo, hi, alt_range)
}

impl Calibration {
    pub fn validate(&self) -> Result<(), InputError> {
        if !(self.angle_min.is_finite() && self.angle_max.is_finite()) {
            return Err(InputError::InvalidCalibration("angles must be finite".into()));
        }
        let span = self.angle_max - self.angle_min;
        if span < MIN_CALIBRATION_SPAN_DEG {
            return Err(InputError::CalibrationTooNarrow { span, min: MIN_CALIBRATION_SPAN_DEG });
        }
        if !(self.alt_min.is_finite() && self.alt_max.is_finite() && self.alt_min < self.alt_max) {
            return Err(InputError::InvalidCalibration("altitude range must be increasing".into()));
        }
        Ok(())
    }

    /// Affine angle → altitude map with clamping.
    pub fn map(&self, angle: f64) -> MappedCommand {
        let clamped = angle.clamp(self.angle_min, self.angle_max);
        let mut u = (clamped - self.angle_min) / (self.angle_max - self.angle_min);
        if self.polarity == Polarity::FlexionDown {
            u = 1.0 - u;
        }
        MappedCommand {
            commanded_z: self.alt_min + u * (self.alt_max - self.alt_min),
            out_of_range: clamped != angle,
        }
    }

    /// Angle that maps to `altitude` (clamped into the altitude range).
    pub fn inverse(&self, altitude: f64) -> f64 {
        let mut u = (altitude.clamp(self.alt_min, self.alt_max) - self.alt_min) / (self.alt_max - self.alt_min);
        if self.polarity == Polarity::FlexionDown {
            u = 1.0 - u;
        }
        self.angle_min + u * (self.angle_max - self.angle_min)
    }

    /// Angle for a proxy axis normalised to `[0, 1]` (keyboard ramp, gamepad axis).
    pub fn angle_from_axis(&self, axis01: f64) -> f64 {
        self.angle_min + axis01.clamp(0.0, 1.0) * (self.angle_max - self.angle_min)
    }
}

pub fn map_angle(cal: Option<&Calibration>, sample: &InputSample) -> Result<MappedCommand, InputError> {
    cal.map(|c| c.map(sample.angle)).ok_or(InputError::MissingCalibration)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Device,
    Keyboard,
    Gamepad,
    Scripted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputSample {
    /// Elbow angle, degrees.
    pub angle: f64,
    /// Seconds on the source's monotonic clock.
    pub timestamp: f64,
    pub source: SourceKind,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Polled {
    pub sample: InputSample,
    pub stale: bool,
}

/// Single-slot, latest-value-wins mailbox shared between an input producer
/// and the simulation loop. Reads never block on producers for longer than
/// the slot swap.
#[derive(Debug, Clone)]
pub struct Mailbox {
    slot: Arc<Mutex<Option<InputSample>>>,
    epoch: Instant,
}

impl Default for Mailbox {
    fn default() -> Self {
        Self::new()
    }
}

impl Mailbox {
    pub fn new() -> Self {
        Self { slot: Arc::new(Mutex::new(None)), epoch: Instant::now() }
    }

    /// Seconds since the mailbox was created.
    pub fn now(&self) -> f64 {
        self.epoch.elapsed().as_secs_f64()
    }

    /// Stamp `angle` with the mailbox clock and publish it.
    pub fn push_angle(&self, angle: f64, source: SourceKind) {
        self.push(InputSample { angle, timestamp: self.now(), source });
    }

    pub fn push(&self, sample: InputSample) {
        let mut slot = self.slot.lock().expect("mailbox poisoned");
        // timestamps are non-decreasing per source; drop reordered samples
        if let Some(prev) = *slot {
            if prev.source == sample.source && sample.timestamp < prev.timestamp {
                return;
            }
        }
        *slot = Some(sample);
    }

    pub fn poll_latest_at(&self, now: f64) -> Result<Polled, InputError> {
        let sample = self.slot.lock().expect("mailbox poisoned").ok_or(InputError::NoSignal)?;
        Ok(Polled { sample, stale: now - sample.timestamp > STALE_AFTER_S })
    }

    pub fn poll_latest(&self) -> Result<Polled, InputError> {
        self.poll_latest_at(self.now())
    }
}

/// Parse one device line: `ANG <degrees> <monotonic-ms>`.
pub fn parse_device_line(line: &str) -> Result<InputSample, InputError> {
    let malformed = || InputError::Malformed(line.to_string());
    let mut parts = line.trim_end_matches(['\r', '\n']).split(' ');
    if parts.next() != Some("ANG") {
        return Err(malformed());
    }
    let angle: f64 = parts.next().and_then(|p| p.parse().ok()).ok_or_else(malformed)?;
    let ms: f64 = parts.next().and_then(|p| p.parse().ok()).ok_or_else(malformed)?;
    if parts.next().is_some() || !angle.is_finite() || !ms.is_finite() || ms < 0.0 {
        return Err(malformed());
    }
    Ok(InputSample { angle, timestamp: ms / 1000.0, source: SourceKind::Device })
}

pub fn format_device_line(sample: &InputSample) -> String {
    format!("ANG {} {}\n", sample.angle, (sample.timestamp * 1000.0).round() as u64)
}

/// Read every `ANG` line from a byte stream. Blank lines and `#` comments are skipped.
pub fn read_device_lines<R: BufRead>(reader: R, source: SourceKind) -> Result<Vec<InputSample>, InputError> {
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line.map_err(|e| InputError::SourceFailed(e.to_string()))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut s = parse_device_line(trimmed)?;
        s.source = source;
        out.push(s);
    }
    Ok(out)
}

/// Replays a recorded sample list: at time `t` the latest sample with
/// `timestamp <= t` is current, in file order.
#[derive(Debug, Clone)]
pub struct ScriptedReplay {
    samples: Vec<InputSample>,
    cursor: usize,
}

impl ScriptedReplay {
    pub fn new(samples: Vec<InputSample>) -> Self {
        Self { samples, cursor: 0 }
    }

    pub fn poll_at(&mut self, t: f64) -> Result<Polled, InputError> {
        while self.cursor + 1 < self.samples.len() && self.samples[self.cursor + 1].timestamp <= t {
            self.cursor += 1;
        }
        let sample = *self.samples.get(self.cursor).ok_or(InputError::NoSignal)?;
        if sample.timestamp > t {
            return Err(InputError::NoSignal);
        }
        Ok(Polled { sample, stale: t - sample.timestamp > STALE_AFTER_S })
    }
}
