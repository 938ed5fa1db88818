//! Drone teleoperation motor-training simulator.
//!
//! The crate is organised bottom-up:
//!
//! - [`trajectory`]: reference courses (sine training tubes, spline tubes, ring courses)
//! - [`dynamics`]: fixed-tick x–z drone simulation with tube-wall clamping
//! - [`inputmap`]: elbow-angle calibration and input sources
//! - [`clutch`]: electroadhesive clutch model, wire protocol and simulated restraint
//! - [`feedback`]: threshold-triggered arrow / clutch state machine
//! - [`metrics`]: path-following and waypoint errors, set means, percent change
//! - [`stats`]: t-tests, ANOVA, repeated-measures ANOVA, Holm-Šidák, study analysis
//! - [`session`]: plans, scripted pilots, the session simulator, persistence
//! - [`realtime`]: fixed-timestep tick loop with telemetry down-sampling

pub mod clutch;
pub mod config;
pub mod dynamics;
pub mod feedback;
pub mod inputmap;
pub mod metrics;
pub mod realtime;
pub mod session;
pub mod stats;
pub mod trace;
pub mod trajectory;

pub use config::StudyConfig;
pub use dynamics::{DroneState, SimConfig};
pub use feedback::{FeedbackAction, FeedbackMode};
pub use trajectory::Trajectory;
