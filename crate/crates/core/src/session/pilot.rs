//! Input sources consumed by the session loop, including the scripted pilots
//! used for headless runs.

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::PilotConfig;
use crate::inputmap::{Calibration, InputError, InputSample, Mailbox, Polled, ScriptedReplay, SourceKind};
use crate::trajectory::Trajectory;

/// What a source may look at when producing the sample for the next tick.
#[derive(Debug, Clone, Copy)]
pub struct PilotView<'a> {
    /// Tick about to be computed (1-based).
    pub tick: u64,
    /// Simulated time at the end of that tick.
    pub t: f64,
    pub x: f64,
    /// x at the end of the tick.
    pub next_x: f64,
    pub z: f64,
    /// Command actually applied on the previous tick (after restraint).
    pub applied_z: f64,
    pub dt: f64,
    pub traj: &'a Trajectory,
    pub cal: &'a Calibration,
}

impl PilotView<'_> {
    /// Centreline at `x`, clamped onto the course.
    pub fn centerline_clamped(&self, x: f64) -> f64 {
        let x = x.clamp(0.0, self.traj.length());
        self.traj.centerline_opt(x).expect("clamped x is on the course")
    }
}

pub trait InputSource: Send {
    fn kind(&self) -> SourceKind;
    fn sample(&mut self, view: &PilotView<'_>) -> Result<Polled, InputError>;
}

fn fresh(angle: f64, view: &PilotView<'_>) -> Polled {
    Polled { sample: InputSample { angle, timestamp: view.t, source: SourceKind::Scripted }, stale: false }
}

/// Commands the centreline at the position the drone will reach this tick.
#[derive(Debug, Clone, Copy, Default)]
pub struct PerfectTracker;

impl InputSource for PerfectTracker {
    fn kind(&self) -> SourceKind {
        SourceKind::Scripted
    }

    fn sample(&mut self, view: &PilotView<'_>) -> Result<Polled, InputError> {
        Ok(fresh(view.cal.inverse(view.centerline_clamped(view.next_x)), view))
    }
}

/// Holds a constant altitude.
#[derive(Debug, Clone, Copy)]
pub struct HoldAltitude(pub f64);

impl InputSource for HoldAltitude {
    fn kind(&self) -> SourceKind {
        SourceKind::Scripted
    }

    fn sample(&mut self, view: &PilotView<'_>) -> Result<Polled, InputError> {
        Ok(fresh(view.cal.inverse(self.0), view))
    }
}

/// Proportional tracker with perception delay and Ornstein-Uhlenbeck velocity noise.
///
/// The arm integrates `gain * (target - perceived_z) + noise`. Its position is
/// reset every tick to the previously applied command, so a clutch that blocks
/// the elbow also blocks the arm.
#[derive(Debug, Clone)]
pub struct ProportionalPilot {
    cfg: PilotConfig,
    rng: ChaCha8Rng,
    noise: f64,
    history: VecDeque<f64>,
}

impl ProportionalPilot {
    pub fn new(cfg: PilotConfig, seed: u64) -> Self {
        Self { cfg, rng: ChaCha8Rng::seed_from_u64(seed), noise: 0.0, history: VecDeque::new() }
    }
}

impl InputSource for ProportionalPilot {
    fn kind(&self) -> SourceKind {
        SourceKind::Scripted
    }

    fn sample(&mut self, view: &PilotView<'_>) -> Result<Polled, InputError> {
        let delay_ticks = (self.cfg.delay / view.dt).round() as usize;
        self.history.push_back(view.z);
        while self.history.len() > delay_ticks + 1 {
            self.history.pop_front();
        }
        let perceived = self.history[0];
        let target = view.centerline_clamped(view.x + self.cfg.preview);

        let decay = (-view.dt / self.cfg.noise_tau).exp();
        let shock: f64 = StandardNormal.sample(&mut self.rng);
        self.noise = self.noise * decay + self.cfg.noise_sigma * (1.0 - decay * decay).sqrt() * shock;

        let arm = view.applied_z + (self.cfg.gain * (target - perceived) + self.noise) * view.dt;
        Ok(fresh(view.cal.inverse(arm), view))
    }
}

/// One recorded angle per tick; fails when the recording runs out.
#[derive(Debug, Clone)]
pub struct RecordedAngles {
    angles: Vec<f64>,
    kind: SourceKind,
    next: usize,
}

impl RecordedAngles {
    pub fn new(angles: Vec<f64>, kind: SourceKind) -> Self {
        Self { angles, kind, next: 0 }
    }
}

impl InputSource for RecordedAngles {
    fn kind(&self) -> SourceKind {
        self.kind
    }

    fn sample(&mut self, view: &PilotView<'_>) -> Result<Polled, InputError> {
        let angle = *self
            .angles
            .get(self.next)
            .ok_or_else(|| InputError::SourceFailed(format!("recording ended after {} ticks", self.next)))?;
        self.next += 1;
        Ok(Polled { sample: InputSample { angle, timestamp: view.t, source: self.kind }, stale: false })
    }
}

/// Device-line script replayed against simulated time.
#[derive(Debug, Clone)]
pub struct ScriptSource(pub ScriptedReplay);

impl InputSource for ScriptSource {
    fn kind(&self) -> SourceKind {
        SourceKind::Scripted
    }

    fn sample(&mut self, view: &PilotView<'_>) -> Result<Polled, InputError> {
        self.0.poll_at(view.t)
    }
}

/// Live input from a latest-value mailbox. Until the first sample arrives the
/// `neutral` angle (if any) is used.
#[derive(Debug, Clone)]
pub struct LiveInput {
    pub mailbox: Mailbox,
    pub kind: SourceKind,
    pub neutral: Option<f64>,
}

impl InputSource for LiveInput {
    fn kind(&self) -> SourceKind {
        self.kind
    }

    fn sample(&mut self, view: &PilotView<'_>) -> Result<Polled, InputError> {
        match (self.mailbox.poll_latest(), self.neutral) {
            (Err(InputError::NoSignal), Some(angle)) => {
                Ok(Polled { sample: InputSample { angle, timestamp: view.t, source: self.kind }, stale: true })
            }
            (r, _) => r,
        }
    }
}
