//! Fixed-timestep tick loop with telemetry down-sampling.
//!
//! Trace content depends only on the session inputs: pacing changes when a
//! tick runs, never what it computes.

use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::clutch::ClutchLink;
use crate::config::RealtimeConfig;
use crate::feedback::{FeedbackAction, FeedbackMode};
use crate::metrics::{Phase, Task};
use crate::session::{InputSource, SessionSim};
use crate::trace::TraceRow;
use crate::trajectory::{Ring, Trajectory};

pub const PROTOCOL_VERSION: u32 = 1;

/// Spacing of centreline samples in the geometry window, m.
pub const GEOMETRY_STEP: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pacing {
    /// As fast as possible.
    Headless,
    /// Sleep to absolute tick deadlines.
    RealTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionDescriptor {
    pub number: usize,
    pub task: Task,
    pub phase: Phase,
    pub session_index: usize,
    pub group: FeedbackMode,
    pub feedback_enabled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeometryWindow {
    /// `[x, z]` centreline samples.
    Tube { radius: f64, samples: Vec<[f64; 2]> },
    Rings { diameter: f64, rings: Vec<Ring> },
}

impl GeometryWindow {
    pub fn ahead(traj: &Trajectory, x: f64, span: f64) -> Self {
        let lo = x.max(0.0);
        let hi = (x + span).min(traj.length());
        match traj.rings() {
            Some(rings) => GeometryWindow::Rings {
                diameter: crate::trajectory::RING_DIAMETER,
                rings: rings.iter().filter(|r| r.x >= x && r.x <= x + span).copied().collect(),
            },
            None => {
                let mut samples = Vec::new();
                if lo <= hi {
                    let first = (lo / GEOMETRY_STEP).ceil() as i64;
                    let last = (hi / GEOMETRY_STEP).floor() as i64;
                    for k in first..=last {
                        let sx = k as f64 * GEOMETRY_STEP;
                        if let Some(z) = traj.centerline_opt(sx) {
                            samples.push([sx, z]);
                        }
                    }
                }
                GeometryWindow::Tube { radius: traj.tube_radius().unwrap_or_default(), samples }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryFrame {
    pub v: u32,
    pub tick: u64,
    pub t: f64,
    pub x: f64,
    pub z: f64,
    pub commanded_z: f64,
    pub centerline_z: Option<f64>,
    pub error: Option<f64>,
    pub action: FeedbackAction,
    pub session: SessionDescriptor,
    pub geometry: GeometryWindow,
}

impl TelemetryFrame {
    pub fn from_row(tick: u64, row: &TraceRow, session: SessionDescriptor, geometry: GeometryWindow) -> Self {
        Self {
            v: PROTOCOL_VERSION,
            tick,
            t: row.t,
            x: row.x,
            z: row.z,
            commanded_z: row.commanded_z,
            centerline_z: row.centerline_z,
            error: row.error(),
            action: row.action,
            session,
            geometry,
        }
    }
}

/// Receives telemetry; must not block the loop.
pub trait TelemetrySink {
    fn publish(&self, frame: TelemetryFrame);
}

impl<F: Fn(TelemetryFrame)> TelemetrySink for F {
    fn publish(&self, frame: TelemetryFrame) {
        self(frame)
    }
}

/// Optional attachments to a running loop.
#[derive(Default)]
pub struct LoopHooks<'a> {
    pub telemetry: Option<&'a dyn TelemetrySink>,
    pub clutch: Option<&'a ClutchLink>,
    pub stop: Option<&'a AtomicBool>,
    /// Runs inside each tick's compute window (tests use it to inject load).
    pub inject: Option<&'a mut dyn FnMut(u64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct LoopReport {
    pub ticks: u64,
    /// Ticks whose computation exceeded the period.
    pub overruns: u64,
    pub p99_tick_ms: f64,
    pub max_tick_ms: f64,
    pub mean_tick_ms: f64,
    /// Simulated time spent inside the course, s.
    pub course_duration: f64,
    pub stale_ticks: u64,
    /// Ticks that finished after their wall-clock deadline, whatever the
    /// cause (including late wake-ups from the OS). Paced runs only.
    pub late_ticks: u64,
    pub max_lateness_ms: f64,
    pub telemetry_frames: u64,
    pub warnings: Vec<String>,
    /// Set when the loop stopped before the course was complete.
    pub aborted: Option<String>,
}

/// Whether tick `k` (1-based) carries a telemetry frame: a strict
/// subsample at `telemetry_hz` of a `tick_hz` loop.
pub fn telemetry_due(k: u64, tick_hz: u32, telemetry_hz: u32) -> bool {
    let (th, lh) = (telemetry_hz as u64, tick_hz as u64);
    th >= lh || (k * th) / lh != ((k - 1) * th) / lh
}

pub fn tick_loop(
    sim: &mut SessionSim,
    source: &mut dyn InputSource,
    rt: &RealtimeConfig,
    tick_hz: u32,
    pacing: Pacing,
    mut hooks: LoopHooks<'_>,
) -> LoopReport {
    let dt = Duration::from_secs_f64(1.0 / tick_hz as f64);
    let descriptor = SessionDescriptor {
        number: sim.entry().number,
        task: sim.entry().task,
        phase: sim.entry().phase,
        session_index: sim.entry().session_index,
        group: sim.group(),
        feedback_enabled: sim.entry().feedback_enabled,
    };
    let mut report = LoopReport::default();
    let mut compute = Vec::with_capacity(sim.total_ticks() as usize);
    let start = Instant::now();

    while !sim.finished() {
        if hooks.stop.is_some_and(|s| s.load(Ordering::Relaxed)) {
            report.aborted = Some("stopped by operator".into());
            break;
        }
        let k = sim.state().tick + 1;
        let tick_start = Instant::now();

        let polled = match source.sample(&sim.view()) {
            Ok(p) => p,
            Err(e) => {
                report.aborted = Some(format!("input source failed at tick {k}: {e}"));
                break;
            }
        };
        let result = match sim.tick(polled) {
            Ok(r) => r,
            Err(e) => {
                report.aborted = Some(format!("tick {k}: {e}"));
                break;
            }
        };
        if let Some(link) = hooks.clutch {
            for cmd in &result.commands {
                if let Err(e) = link.submit(*cmd) {
                    report.warnings.push(format!("clutch dispatch at t={:.2}: {e}", result.row.t));
                }
            }
        }
        if let Some(sink) = hooks.telemetry {
            if telemetry_due(k, tick_hz, rt.telemetry_hz) {
                let geometry = GeometryWindow::ahead(sim.trajectory(), result.row.x, rt.preview_m);
                sink.publish(TelemetryFrame::from_row(k, &result.row, descriptor, geometry));
                report.telemetry_frames += 1;
            }
        }
        if let Some(inject) = hooks.inject.as_mut() {
            inject(k);
        }

        let spent = tick_start.elapsed();
        compute.push(spent);
        if spent > dt {
            report.overruns += 1;
        }
        if pacing == Pacing::RealTime {
            let deadline = start + dt * k as u32;
            let now = Instant::now();
            if now > deadline {
                report.late_ticks += 1;
                report.max_lateness_ms = report.max_lateness_ms.max((now - deadline).as_secs_f64() * 1e3);
            } else {
                std::thread::sleep(deadline - now);
            }
        }
    }

    if report.aborted.is_some() {
        if let Some(link) = hooks.clutch {
            let _ = sim.release_all().into_iter().try_for_each(|c| link.submit(c));
        } else {
            sim.release_all();
        }
    }

    report.ticks = compute.len() as u64;
    report.stale_ticks = sim.stale_ticks();
    if !compute.is_empty() {
        let ms: Vec<f64> = compute.iter().map(|d| d.as_secs_f64() * 1e3).collect();
        let mut sorted = ms.clone();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let idx = ((sorted.len() as f64 * 0.99).ceil() as usize).clamp(1, sorted.len()) - 1;
        report.p99_tick_ms = sorted[idx];
        report.max_tick_ms = *sorted.last().expect("non-empty");
        report.mean_tick_ms = ms.iter().sum::<f64>() / ms.len() as f64;
    }
    let len = sim.trajectory().length();
    report.course_duration = sim.trace().iter().filter(|r| r.x >= 0.0 && r.x <= len).count().saturating_sub(1) as f64
        / tick_hz as f64;
    if report.ticks > 0 && report.overruns as f64 > rt.overrun_warn_fraction * report.ticks as f64 {
        report.warnings.push(format!(
            "sustained overrun: {} of {} ticks exceeded {:.1} ms",
            report.overruns,
            report.ticks,
            dt.as_secs_f64() * 1e3
        ));
    }
    if report.ticks > 0 && report.late_ticks as f64 > rt.overrun_warn_fraction * report.ticks as f64 {
        report.warnings.push(format!(
            "scheduler lateness: {} of {} ticks missed their deadline (worst {:.1} ms)",
            report.late_ticks, report.ticks, report.max_lateness_ms
        ));
    }
    report
}
