//! Threshold-triggered training feedback.
//!
//! Each tick the altitude error `z - centreline` is compared with a
//! symmetric threshold. Crossing it activates the side that was crossed;
//! the side releases once the error is back inside `threshold - release_band`.
//! What an active side *does* depends on the subject's group:
//!
//! | group  | above centreline      | below centreline       |
//! |--------|-----------------------|------------------------|
//! | FPV    | nothing (logged only) | nothing (logged only)  |
//! | ARROWS | arrow down            | arrow up               |
//! | HAPTIC | dorsal clutch engaged | ventral clutch engaged |

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clutch::{ClutchSide, Command};
use crate::metrics::Phase;

#[derive(Debug, Error, PartialEq)]
pub enum FeedbackError {
    #[error("feedback is only evaluated during training (phase was {0:?})")]
    NotTraining(Phase),
    #[error("invalid feedback config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackMode {
    Fpv,
    Arrows,
    Haptic,
}

impl FeedbackMode {
    pub const ALL: [FeedbackMode; 3] = [FeedbackMode::Fpv, FeedbackMode::Arrows, FeedbackMode::Haptic];

    pub fn as_str(self) -> &'static str {
        match self {
            FeedbackMode::Fpv => "fpv",
            FeedbackMode::Arrows => "arrows",
            FeedbackMode::Haptic => "haptic",
        }
    }
}

impl std::str::FromStr for FeedbackMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fpv" => Ok(FeedbackMode::Fpv),
            "arrows" => Ok(FeedbackMode::Arrows),
            "haptic" => Ok(FeedbackMode::Haptic),
            other => Err(format!("unknown feedback group {other:?} (expected fpv, arrows or haptic)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Excursion {
    /// Above the centreline, towards the ceiling.
    High,
    /// Below the centreline, towards the floor.
    Low,
}

impl Excursion {
    pub fn clutch_side(self) -> ClutchSide {
        match self {
            Excursion::High => ClutchSide::Dorsal,
            Excursion::Low => ClutchSide::Ventral,
        }
    }

    pub fn arrow(self) -> ArrowDir {
        match self {
            Excursion::High => ArrowDir::Down,
            Excursion::Low => ArrowDir::Up,
        }
    }
}

/// Which side, if any, is currently active. Serialized into traces as
/// `none` / `high_side` / `low_side`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ActiveSide {
    #[default]
    None,
    HighSide,
    LowSide,
}

impl ActiveSide {
    pub fn excursion(self) -> Option<Excursion> {
        match self {
            ActiveSide::None => None,
            ActiveSide::HighSide => Some(Excursion::High),
            ActiveSide::LowSide => Some(Excursion::Low),
        }
    }

    fn from_excursion(e: Excursion) -> Self {
        match e {
            Excursion::High => ActiveSide::HighSide,
            Excursion::Low => ActiveSide::LowSide,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrowDir {
    Up,
    Down,
}

/// What the subject is receiving on this tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FeedbackAction {
    #[default]
    None,
    Arrow { dir: ArrowDir },
    Clutch { side: ClutchSide, volts: u16 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", content = "side", rename_all = "snake_case")]
pub enum Transition {
    Engage(Excursion),
    Release(Excursion),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeedbackConfig {
    pub threshold: f64,
    pub release_band: f64,
    /// Clutch operating voltage, V.
    pub voltage: u16,
}

impl Default for FeedbackConfig {
    fn default() -> Self {
        Self { threshold: 0.4, release_band: 0.05, voltage: 300 }
    }
}

impl FeedbackConfig {
    pub fn validate(&self) -> Result<(), FeedbackError> {
        if !(self.threshold > 0.0) {
            return Err(FeedbackError::Config("threshold must be positive".into()));
        }
        if !(0.0 <= self.release_band && self.release_band < self.threshold) {
            return Err(FeedbackError::Config("release_band must lie in [0, threshold)".into()));
        }
        if self.voltage == 0 || self.voltage as f64 > crate::clutch::MAX_VOLTAGE {
            return Err(FeedbackError::Config("voltage must lie in (0, 400] V".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeedbackState {
    pub active: ActiveSide,
    pub threshold: f64,
    pub release_band: f64,
    pub last_transition_t: f64,
}

impl FeedbackState {
    pub fn new(cfg: &FeedbackConfig) -> Self {
        Self { active: ActiveSide::None, threshold: cfg.threshold, release_band: cfg.release_band, last_transition_t: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeedbackOutput {
    pub action: FeedbackAction,
    /// At most two: a release followed by an engage when the error jumps sides.
    pub transitions: Vec<Transition>,
}

impl FeedbackOutput {
    /// Device commands for this tick's transitions (HAPTIC only).
    pub fn clutch_commands(&self, mode: FeedbackMode, volts: u16) -> Vec<Command> {
        if mode != FeedbackMode::Haptic {
            return Vec::new();
        }
        self.transitions
            .iter()
            .map(|t| match *t {
                Transition::Engage(e) => Command::Engage { side: e.clutch_side(), volts },
                Transition::Release(e) => Command::Disengage { side: e.clutch_side() },
            })
            .collect()
    }
}

/// One tick of the feedback state machine.
pub fn evaluate(
    error: f64,
    state: &FeedbackState,
    mode: FeedbackMode,
    phase: Phase,
    t: f64,
    volts: u16,
) -> Result<(FeedbackOutput, FeedbackState), FeedbackError> {
    if phase != Phase::Training {
        return Err(FeedbackError::NotTraining(phase));
    }
    let mut next = *state;
    let mut transitions = Vec::new();

    let crossed = if error > state.threshold {
        Some(Excursion::High)
    } else if error < -state.threshold {
        Some(Excursion::Low)
    } else {
        None
    };

    match (state.active.excursion(), crossed) {
        (None, Some(side)) => {
            transitions.push(Transition::Engage(side));
            next.active = ActiveSide::from_excursion(side);
        }
        (Some(current), Some(side)) if side != current => {
            transitions.push(Transition::Release(current));
            transitions.push(Transition::Engage(side));
            next.active = ActiveSide::from_excursion(side);
        }
        (Some(current), None) if error.abs() < state.threshold - state.release_band => {
            transitions.push(Transition::Release(current));
            next.active = ActiveSide::None;
        }
        _ => {}
    }
    if !transitions.is_empty() {
        next.last_transition_t = t;
    }

    let action = match (mode, next.active.excursion()) {
        (_, None) | (FeedbackMode::Fpv, _) => FeedbackAction::None,
        (FeedbackMode::Arrows, Some(e)) => FeedbackAction::Arrow { dir: e.arrow() },
        (FeedbackMode::Haptic, Some(e)) => FeedbackAction::Clutch { side: e.clutch_side(), volts },
    };
    Ok((FeedbackOutput { action, transitions }, next))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeedbackEvent {
    pub t: f64,
    pub transition: Transition,
}

/// Transition log reconstructed from a per-tick `(t, active side)` column.
pub fn feedback_events<I>(column: I) -> Vec<FeedbackEvent>
where
    I: IntoIterator<Item = (f64, ActiveSide)>,
{
    let mut events = Vec::new();
    let mut prev = ActiveSide::None;
    for (t, side) in column {
        if side != prev {
            if let Some(e) = prev.excursion() {
                events.push(FeedbackEvent { t, transition: Transition::Release(e) });
            }
            if let Some(e) = side.excursion() {
                events.push(FeedbackEvent { t, transition: Transition::Engage(e) });
            }
            prev = side;
        }
    }
    events
}
