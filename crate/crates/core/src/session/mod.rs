//! Experiment orchestration: plans, questionnaires, scripted pilots, the
//! per-tick session simulator, trial records and the study store.

pub mod pilot;
pub mod plan;
pub mod questionnaire;
pub mod record;
pub mod sim;
pub mod store;

use thiserror::Error;

pub use pilot::{HoldAltitude, InputSource, PerfectTracker, PilotView, ProportionalPilot, RecordedAngles};
pub use plan::{build_plan, CourseRef, PlanEntry, SessionPlan};
pub use questionnaire::{capture_questionnaire, QuestionnaireAnswers, QuestionnaireResponse};
pub use record::{replay_trial, run_session, RunOptions, TrialRecord};
pub use sim::{SessionSim, SimOutput};
pub use store::StudyStore;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("session {requested} requested but session {expected} is next in the plan")]
    OutOfOrder { expected: usize, requested: usize },
    #[error("plan has no session {0}")]
    NoSuchSession(usize),
    #[error("unknown subject {0:?}")]
    UnknownSubject(String),
    #[error("subject {0:?} already exists")]
    DuplicateSubject(String),
    #[error("questionnaire: {0}")]
    Questionnaire(String),
    #[error("trajectory: {0}")]
    Trajectory(#[from] crate::trajectory::TrajectoryError),
    #[error("dynamics: {0}")]
    Dynamics(#[from] crate::dynamics::DynamicsError),
    #[error("input: {0}")]
    Input(#[from] crate::inputmap::InputError),
    #[error("feedback: {0}")]
    Feedback(#[from] crate::feedback::FeedbackError),
    #[error("clutch: {0}")]
    Clutch(#[from] crate::clutch::ClutchError),
    #[error("metrics: {0}")]
    Metrics(#[from] crate::metrics::MetricsError),
    #[error("config: {0}")]
    Config(#[from] crate::config::ConfigError),
    #[error("trial record: {0}")]
    Record(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
