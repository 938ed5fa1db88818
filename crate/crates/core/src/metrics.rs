//! Performance errors and their summaries.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::RingCrossing;
use crate::feedback::FeedbackMode;
use crate::trajectory::{Trajectory, AMPLITUDES, AMPLITUDE_SETS, WAVELENGTHS, WAVELENGTH_SETS};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("trace covers x in [{from:.3}, {to:.3}] m but the course spans [0, {length}] m")]
    PartialCoverage { from: f64, to: f64, length: f64 },
    #[error("missing ring crossings for ring(s) {0:?}")]
    MissingRings(Vec<usize>),
    #[error("missing training session(s) {0:?}")]
    MissingSessions(Vec<usize>),
    #[error("percent change undefined for baseline {0}")]
    UndefinedChange(f64),
    #[error("csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    PathFollowing,
    Waypoint,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::PathFollowing => "path_following",
            Task::Waypoint => "waypoint",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Baseline,
    Training,
    Evaluation,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Baseline => "baseline",
            Phase::Training => "training",
            Phase::Evaluation => "evaluation",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionError {
    pub task: Task,
    pub phase: Phase,
    /// 1-based index within the phase.
    pub session_index: usize,
    /// Mean absolute altitude error, m.
    pub error: f64,
    /// Wall-contact episodes (tubes only).
    pub collisions: u32,
}

/// Mean |z − centreline(x)| over the samples inside the tube, one sample per tick.
pub fn pf_error(samples: &[(f64, f64)], traj: &Trajectory) -> Result<f64, MetricsError> {
    const EPS: f64 = 1e-9;
    let length = traj.length();
    let inside: Vec<(f64, f64)> =
        samples.iter().copied().filter(|(x, _)| (-EPS..=length + EPS).contains(x)).collect();
    let (from, to) = match (inside.first(), inside.last()) {
        (Some(a), Some(b)) => (a.0, b.0),
        _ => return Err(MetricsError::PartialCoverage { from: f64::NAN, to: f64::NAN, length }),
    };
    let max_gap = inside.windows(2).map(|w| w[1].0 - w[0].0).fold(0.0, f64::max);
    let slack = max_gap + EPS;
    if from > slack || to < length - slack {
        return Err(MetricsError::PartialCoverage { from, to, length });
    }
    let total: f64 = inside
        .iter()
        .map(|&(x, z)| (z - traj.centerline(x.clamp(0.0, length)).expect("clamped into course")).abs())
        .sum();
    Ok(total / inside.len() as f64)
}

/// Mean |z_crossing − ring centre| over all rings.
pub fn wp_error(crossings: &[RingCrossing], ring_count: usize) -> Result<f64, MetricsError> {
    let missing: Vec<usize> =
        (0..ring_count).filter(|i| !crossings.iter().any(|c| c.ring == *i)).map(|i| i + 1).collect();
    if !missing.is_empty() {
        return Err(MetricsError::MissingRings(missing));
    }
    Ok(crossings.iter().map(|c| (c.z - c.center_z).abs()).sum::<f64>() / crossings.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    Amplitude,
    Wavelength,
}

impl Grouping {
    pub fn sets(self) -> &'static [[usize; 3]; 3] {
        match self {
            Grouping::Amplitude => &AMPLITUDE_SETS,
            Grouping::Wavelength => &WAVELENGTH_SETS,
        }
    }

    /// Amplitude or wavelength value of each set, metres.
    pub fn levels(self) -> [f64; 3] {
        match self {
            Grouping::Amplitude => AMPLITUDES,
            Grouping::Wavelength => WAVELENGTHS,
        }
    }
}

/// Mean training error of each three-session set. `errors[i]` must hold
/// the error of training session `i + 1`; use [`training_errors`] to build it.
pub fn set_mean(errors: &[Option<f64>; 9], grouping: Grouping) -> Result<[f64; 3], MetricsError> {
    let missing: Vec<usize> = (1..=9).filter(|s| errors[s - 1].is_none()).collect();
    if !missing.is_empty() {
        return Err(MetricsError::MissingSessions(missing));
    }
    let mut out = [0.0; 3];
    for (slot, set) in out.iter_mut().zip(grouping.sets()) {
        *slot = set.iter().map(|s| errors[s - 1].unwrap()).sum::<f64>() / 3.0;
    }
    Ok(out)
}

/// Pick the nine path-following training errors out of a session list.
pub fn training_errors(sessions: &[SessionError]) -> [Option<f64>; 9] {
    let mut out = [None; 9];
    for s in sessions {
        if s.phase == Phase::Training && s.task == Task::PathFollowing && (1..=9).contains(&s.session_index) {
            out[s.session_index - 1] = Some(s.error);
        }
    }
    out
}

/// Improvement from baseline to evaluation, percent. Positive means fewer errors.
pub fn percent_change(baseline_mean: f64, eval_mean: f64) -> Result<f64, MetricsError> {
    if !(baseline_mean > 0.0) {
        return Err(MetricsError::UndefinedChange(baseline_mean));
    }
    Ok(100.0 * (baseline_mean - eval_mean) / baseline_mean)
}

/// One line of the CSV results summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub subject: String,
    pub group: FeedbackMode,
    pub task: Task,
    pub phase: Phase,
    pub session: usize,
    pub error: f64,
    pub collisions: u32,
}

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], out: W) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| MetricsError::Csv(e.to_string()))?;
    }
    w.flush().map_err(|e| MetricsError::Csv(e.to_string()))
}

pub fn read_summary_csv<R: std::io::Read>(input: R) -> Result<Vec<SummaryRow>, MetricsError> {
    csv::Reader::from_reader(input)
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| MetricsError::Csv(e.to_string()))
}
