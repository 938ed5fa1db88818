//! The per-tick session engine: input → mapping → restraint → dynamics →
//! feedback → trace. Owns all session state; nothing here reads a clock.

use serde::{Deserialize, Serialize};

use super::pilot::PilotView;
use super::plan::PlanEntry;
use super::SessionError;
use crate::clutch::{restrain, ClutchBank, ClutchSide, Command};
use crate::config::StudyConfig;
use crate::dynamics::{ring_crossings, step, DroneState};
use crate::feedback::{evaluate, FeedbackAction, FeedbackEvent, FeedbackMode, FeedbackState, Transition};
use crate::inputmap::{Calibration, Polled};
use crate::metrics::{self, pf_error, wp_error, Phase, Task};
use crate::trace::{samples_xz, TraceRow};
use crate::trajectory::{Trajectory, RING_COUNT};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedCommand {
    pub t: f64,
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickResult {
    pub row: TraceRow,
    pub commands: Vec<Command>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub trace: Vec<TraceRow>,
    pub events: Vec<FeedbackEvent>,
    pub commands: Vec<TimedCommand>,
    pub stale_ticks: u64,
}

#[derive(Debug, Clone)]
pub struct SessionSim {
    traj: Trajectory,
    cfg: StudyConfig,
    cal: Calibration,
    group: FeedbackMode,
    entry: PlanEntry,
    state: DroneState,
    feedback: FeedbackState,
    bank: ClutchBank,
    applied_z: f64,
    trace: Vec<TraceRow>,
    events: Vec<FeedbackEvent>,
    commands: Vec<TimedCommand>,
    stale_ticks: u64,
    total_ticks: u64,
}

impl SessionSim {
    pub fn new(
        entry: PlanEntry,
        group: FeedbackMode,
        cfg: &StudyConfig,
        cal: Calibration,
    ) -> Result<Self, SessionError> {
        cfg.validate()?;
        cal.validate()?;
        let traj = entry.course.build(&cfg.course)?;
        let state = DroneState::spawn(&traj, &cfg.sim);
        let total_ticks = ((traj.length() - state.x_start) / cfg.sim.step_length()).round() as u64;
        Ok(Self {
            feedback: FeedbackState::new(&cfg.feedback),
            applied_z: state.z,
            traj,
            cfg: *cfg,
            cal,
            group,
            entry,
            state,
            bank: ClutchBank::default(),
            trace: Vec::with_capacity(total_ticks as usize),
            events: Vec::new(),
            commands: Vec::new(),
            stale_ticks: 0,
            total_ticks,
        })
    }

    pub fn trajectory(&self) -> &Trajectory {
        &self.traj
    }

    pub fn entry(&self) -> &PlanEntry {
        &self.entry
    }

    pub fn group(&self) -> FeedbackMode {
        self.group
    }

    pub fn state(&self) -> &DroneState {
        &self.state
    }

    pub fn bank(&self) -> &ClutchBank {
        &self.bank
    }

    pub fn trace(&self) -> &[TraceRow] {
        &self.trace
    }

    pub fn stale_ticks(&self) -> u64 {
        self.stale_ticks
    }

    pub fn total_ticks(&self) -> u64 {
        self.total_ticks
    }

    pub fn finished(&self) -> bool {
        self.state.tick >= self.total_ticks
    }

    fn restraint_active(&self) -> bool {
        self.entry.feedback_enabled && self.group == FeedbackMode::Haptic
    }

    pub fn view(&self) -> PilotView<'_> {
        let tick = self.state.tick + 1;
        PilotView {
            tick,
            t: tick as f64 * self.cfg.sim.dt,
            x: self.state.x,
            next_x: self.state.x_start + tick as f64 * self.cfg.sim.step_length(),
            z: self.state.z,
            applied_z: self.applied_z,
            dt: self.cfg.sim.dt,
            traj: &self.traj,
            cal: &self.cal,
        }
    }

    pub fn tick(&mut self, input: Polled) -> Result<TickResult, SessionError> {
        if self.finished() {
            return Err(SessionError::Record("session already complete".into()));
        }
        let angle = input.sample.angle;
        if !angle.is_finite() {
            return Err(crate::inputmap::InputError::Malformed(format!("non-finite angle {angle}")).into());
        }
        if input.stale {
            self.stale_ticks += 1;
        }
        let commanded_z = self.cal.map(angle).commanded_z;
        let applied_z = if self.restraint_active() {
            restrain(commanded_z, &self.bank, self.cfg.clutch.compliance).z
        } else {
            commanded_z
        };
        self.state = step(&self.state, applied_z, &self.cfg.sim, &self.traj)?;
        self.applied_z = applied_z;

        let s = self.state;
        let centerline_z =
            if (0.0..=self.traj.length()).contains(&s.x) { self.traj.centerline_opt(s.x) } else { None };

        let mut action = FeedbackAction::None;
        let mut commands = Vec::new();
        if let (true, Some(c)) = (self.entry.feedback_enabled, centerline_z) {
            let volts = self.cfg.feedback.voltage;
            let (out, next) = evaluate(s.z - c, &self.feedback, self.group, Phase::Training, s.t, volts)?;
            self.feedback = next;
            action = out.action;
            for tr in &out.transitions {
                self.events.push(FeedbackEvent { t: s.t, transition: *tr });
            }
            for cmd in out.clutch_commands(self.group, volts) {
                // the restraint bound is the threshold wall at the engagement tick
                let engage_z = match cmd {
                    Command::Engage { side: ClutchSide::Dorsal, .. } => c + self.feedback.threshold,
                    _ => c - self.feedback.threshold,
                };
                self.bank.apply(&cmd, engage_z, s.t)?;
                self.commands.push(TimedCommand { t: s.t, command: cmd });
                commands.push(cmd);
            }
        }

        if self.finished() {
            commands.extend(self.release_all());
        }

        let row = TraceRow {
            t: s.t,
            x: s.x,
            z: s.z,
            commanded_z,
            applied_z,
            centerline_z,
            colliding: s.colliding,
            feedback_state: self.feedback.active,
            action,
            angle,
        };
        self.trace.push(row);
        Ok(TickResult { row, commands })
    }

    /// Release anything still engaged; returns the issued commands.
    pub fn release_all(&mut self) -> Vec<Command> {
        let t = self.state.t;
        let mut out = Vec::new();
        for side in [ClutchSide::Ventral, ClutchSide::Dorsal] {
            if self.bank.channel(side).engaged {
                let cmd = Command::Disengage { side };
                self.bank.channel_mut(side).release(t);
                self.commands.push(TimedCommand { t, command: cmd });
                out.push(cmd);
            }
        }
        if let Some(e) = self.feedback.active.excursion() {
            if self.finished() {
                self.events.push(FeedbackEvent { t, transition: Transition::Release(e) });
                self.feedback.active = Default::default();
            }
        }
        out
    }

    pub fn finish(self) -> SimOutput {
        SimOutput { trace: self.trace, events: self.events, commands: self.commands, stale_ticks: self.stale_ticks }
    }
}

/// Recompute a session's error from its trace.
pub fn session_error(
    entry: &PlanEntry,
    traj: &Trajectory,
    trace: &[TraceRow],
) -> Result<metrics::SessionError, SessionError> {
    let samples = samples_xz(trace);
    let error = match entry.task {
        Task::PathFollowing => pf_error(&samples, traj)?,
        Task::Waypoint => {
            let rings = traj.rings().ok_or_else(|| SessionError::Record("waypoint task on a tube".into()))?;
            wp_error(&ring_crossings(&samples, rings)?, RING_COUNT)?
        }
    };
    Ok(metrics::SessionError {
        task: entry.task,
        phase: entry.phase,
        session_index: entry.session_index,
        error,
        collisions: collision_count(trace),
    })
}

/// Number of distinct wall-contact episodes.
pub fn collision_count(trace: &[TraceRow]) -> u32 {
    let mut prev = false;
    let mut n = 0;
    for r in trace {
        if r.colliding && !prev {
            n += 1;
        }
        prev = r.colliding;
    }
    n
}
