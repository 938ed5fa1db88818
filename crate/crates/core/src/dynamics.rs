//! Fixed-tick x–z drone simulation.
//!
//! The drone moves forward at a constant speed. Altitude is a single
//! integrator whose velocity saturates at `max_slew` while it chases the
//! commanded altitude. Inside a tube the drone is a point clamped to the
//! closed wall band `centreline ± radius`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trajectory::{Ring, Trajectory};

#[derive(Debug, Error, PartialEq)]
pub enum DynamicsError {
    #[error("non-finite command {0}")]
    NonFinite(f64),
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("collision check is not applicable to ring courses")]
    NotATube,
    #[error("x = {x} m is outside the course extent [0, {length}] m")]
    OutsideCourse { x: f64, length: f64 },
    #[error("trace never reaches ring(s) {0:?}")]
    MissingCrossings(Vec<usize>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Constant forward speed, m/s.
    pub forward_speed: f64,
    /// Tick length, s.
    pub dt: f64,
    /// Distance before a tube entrance at which the drone spawns, m.
    pub spawn_offset: f64,
    /// Saturation of the vertical speed, m/s. `f64::INFINITY` gives direct position control.
    pub max_slew: f64,
    /// World floor and ceiling, m.
    pub altitude_range: (f64, f64),
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            forward_speed: 5.0,
            dt: 0.01,
            spawn_offset: 4.0,
            max_slew: 8.0,
            altitude_range: (7.0, 13.0),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let err = |m: &str| Err(DynamicsError::Config(m.to_string()));
        if !(self.forward_speed.is_finite() && self.forward_speed > 0.0) {
            return err("forward_speed must be positive");
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return err("dt must be positive");
        }
        if !(self.spawn_offset.is_finite() && self.spawn_offset >= 0.0) {
            return err("spawn_offset must be non-negative");
        }
        if !(self.max_slew > 0.0) {
            return err("max_slew must be positive");
        }
        let (lo, hi) = self.altitude_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return err("altitude_range must be an increasing pair");
        }
        Ok(())
    }

    /// Forward distance covered per tick.
    pub fn step_length(&self) -> f64 {
        self.forward_speed * self.dt
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DroneState {
    pub tick: u64,
    /// Spawn x; `x = x_start + tick * v * dt`.
    pub x_start: f64,
    pub x: f64,
    pub z: f64,
    pub t: f64,
    pub colliding: bool,
    pub clamped: bool,
}

impl DroneState {
    pub fn at(x: f64, z: f64) -> Self {
        Self { tick: 0, x_start: x, x, z, t: 0.0, colliding: false, clamped: false }
    }

    /// Spawn position for a course: tubes are entered after a `spawn_offset`
    /// lead-in, ring courses start at their entrance (the first ring is already
    /// 4 m ahead). Altitude starts on the centreline at the entrance.
    pub fn spawn(traj: &Trajectory, cfg: &SimConfig) -> Self {
        let x = if traj.is_tube() { -cfg.spawn_offset } else { 0.0 };
        let z = traj.centerline(0.0).expect("entrance is on the course");
        Self::at(x, z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionReport {
    pub colliding: bool,
    pub clamped_z: f64,
}

/// Advance one tick towards `commanded_z`.
pub fn step(
    state: &DroneState,
    commanded_z: f64,
    cfg: &SimConfig,
    traj: &Trajectory,
) -> Result<DroneState, DynamicsError> {
    if !commanded_z.is_finite() {
        return Err(DynamicsError::NonFinite(commanded_z));
    }
    if !state.z.is_finite() {
        return Err(DynamicsError::NonFinite(state.z));
    }
    let tick = state.tick + 1;
    let x = state.x_start + tick as f64 * cfg.step_length();
    let t = tick as f64 * cfg.dt;

    let max_dz = cfg.max_slew * cfg.dt;
    let mut z = state.z + (commanded_z - state.z).clamp(-max_dz, max_dz);
    let (lo, hi) = cfg.altitude_range;
    let mut clamped = false;
    if z < lo || z > hi {
        z = z.clamp(lo, hi);
        clamped = true;
    }

    let mut colliding = false;
    if let Some(radius) = traj.tube_radius() {
        if (0.0..=traj.length()).contains(&x) {
            let probe = DroneState { x, z, ..*state };
            let report = check_collision(&probe, traj, radius)?;
            if report.colliding {
                colliding = true;
                if report.clamped_z != z {
                    clamped = true;
                }
                z = report.clamped_z;
            }
        }
    }
    Ok(DroneState { tick, x_start: state.x_start, x, z, t, colliding, clamped })
}

/// Wall contact test with a closed boundary; the clamp target is the wall the drone touched.
pub fn check_collision(
    state: &DroneState,
    traj: &Trajectory,
    tube_radius: f64,
) -> Result<CollisionReport, DynamicsError> {
    if !traj.is_tube() {
        return Err(DynamicsError::NotATube);
    }
    let c = traj
        .centerline(state.x)
        .map_err(|_| DynamicsError::OutsideCourse { x: state.x, length: traj.length() })?;
    let offset = state.z - c;
    if offset.abs() >= tube_radius {
        Ok(CollisionReport { colliding: true, clamped_z: c + tube_radius.copysign(offset) })
    } else {
        Ok(CollisionReport { colliding: false, clamped_z: state.z })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RingCrossing {
    /// 0-based ring index.
    pub ring: usize,
    pub z: f64,
    pub center_z: f64,
}

/// Altitude of the trace at each ring, linearly interpolated between the
/// bracketing samples. `samples` are `(x, z)` pairs in flight order.
pub fn ring_crossings(samples: &[(f64, f64)], rings: &[Ring]) -> Result<Vec<RingCrossing>, DynamicsError> {
    let mut out = Vec::with_capacity(rings.len());
    let mut missing = Vec::new();
    let mut cursor = 0;
    for (i, ring) in rings.iter().enumerate() {
        while cursor + 1 < samples.len() && samples[cursor + 1].0 < ring.x {
            cursor += 1;
        }
        match (samples.get(cursor), samples.get(cursor + 1)) {
            (Some(&(xa, za)), _) if xa == ring.x => {
                out.push(RingCrossing { ring: i, z: za, center_z: ring.center_z })
            }
            (Some(&(xa, za)), Some(&(xb, zb))) if xa <= ring.x && ring.x <= xb => {
                let w = (ring.x - xa) / (xb - xa);
                out.push(RingCrossing { ring: i, z: za + w * (zb - za), center_z: ring.center_z });
            }
            _ => missing.push(i + 1),
        }
    }
    if missing.is_empty() {
        Ok(out)
    } else {
        Err(DynamicsError::MissingCrossings(missing))
    }
}

pub fn ring_crossings_from_states(
    trace: &[DroneState],
    rings: &[Ring],
) -> Result<Vec<RingCrossing>, DynamicsError> {
    let samples: Vec<(f64, f64)> = trace.iter().map(|s| (s.x, s.z)).collect();
    ring_crossings(&samples, rings)
}
