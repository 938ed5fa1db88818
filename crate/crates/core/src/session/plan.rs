//! The 21-session plan shared by every subject of a study.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::CourseConfig;
use crate::feedback::FeedbackMode;
use crate::metrics::{Phase, Task};
use crate::trajectory::{
    gen_ring_course, gen_spline_tube, gen_training_tube, training_schedule, SineTubeSpec, Trajectory, TrajectoryError,
};

/// Total number of sessions per subject.
pub const SESSION_COUNT: usize = 21;

/// `(task, phase, index within phase)` in execution order.
pub fn session_layout() -> Vec<(Task, Phase, usize)> {
    let blocks = [
        (Task::Waypoint, Phase::Baseline, 3),
        (Task::PathFollowing, Phase::Baseline, 3),
        (Task::PathFollowing, Phase::Training, 9),
        (Task::PathFollowing, Phase::Evaluation, 3),
        (Task::Waypoint, Phase::Evaluation, 3),
    ];
    blocks.iter().flat_map(|&(task, phase, n)| (1..=n).map(move |i| (task, phase, i))).collect()
}

/// Deterministic per-session seed: the first 8 bytes of
/// SHA-256(master_seed ‖ "course" ‖ session number), little-endian.
pub fn derive_seed(master_seed: u64, session: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(master_seed.to_le_bytes());
    h.update(b"course");
    h.update((session as u64).to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Noise seed for a scripted pilot flying `session` as `subject_id`.
pub fn pilot_seed(seed: u64, subject_id: &str, session: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(b"pilot");
    h.update(subject_id.as_bytes());
    h.update((session as u64).to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// How to rebuild a session's course.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CourseRef {
    SineTube { amplitude: f64, wavelength: f64 },
    SplineTube { seed: u64 },
    RingCourse { seed: u64 },
}

impl CourseRef {
    pub fn build(&self, course: &CourseConfig) -> Result<Trajectory, TrajectoryError> {
        match *self {
            CourseRef::SineTube { amplitude, wavelength } => {
                gen_training_tube(SineTubeSpec::new(amplitude, wavelength, course.sine_midline))
            }
            CourseRef::SplineTube { seed } => gen_spline_tube(seed, course.knot_spacing),
            CourseRef::RingCourse { seed } => Ok(gen_ring_course(seed)),
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match *self {
            CourseRef::SineTube { .. } => None,
            CourseRef::SplineTube { seed } | CourseRef::RingCourse { seed } => Some(seed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    /// 1-based position in the plan.
    pub number: usize,
    pub task: Task,
    pub phase: Phase,
    /// 1-based index within the phase.
    pub session_index: usize,
    pub feedback_enabled: bool,
    pub course: CourseRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionPlan {
    pub subject_id: String,
    pub group: FeedbackMode,
    pub master_seed: u64,
    pub entries: Vec<PlanEntry>,
}

impl SessionPlan {
    pub fn entry(&self, number: usize) -> Option<&PlanEntry> {
        number.checked_sub(1).and_then(|i| self.entries.get(i))
    }
}

/// Courses depend only on `master_seed`, so every subject of a study flies the same geometry.
pub fn build_plan(subject_id: &str, group: FeedbackMode, master_seed: u64) -> SessionPlan {
    let schedule = training_schedule();
    let entries = session_layout()
        .into_iter()
        .enumerate()
        .map(|(i, (task, phase, session_index))| {
            let number = i + 1;
            let course = match (task, phase) {
                (Task::PathFollowing, Phase::Training) => {
                    let s = schedule[session_index - 1];
                    CourseRef::SineTube { amplitude: s.amplitude, wavelength: s.wavelength }
                }
                (Task::PathFollowing, _) => CourseRef::SplineTube { seed: derive_seed(master_seed, number) },
                (Task::Waypoint, _) => CourseRef::RingCourse { seed: derive_seed(master_seed, number) },
            };
            PlanEntry { number, task, phase, session_index, feedback_enabled: phase == Phase::Training, course }
        })
        .collect();
    SessionPlan { subject_id: subject_id.to_string(), group, master_seed, entries }
}
