//! Trial records: running a plan entry, persisting its trace, replaying it.

use std::io::{BufRead, Write};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::pilot::{InputSource, RecordedAngles};
use super::plan::{PlanEntry, SessionPlan};
use super::sim::{session_error, SessionSim, TimedCommand};
use super::SessionError;
use crate::config::StudyConfig;
use crate::feedback::{FeedbackEvent, FeedbackMode};
use crate::inputmap::{Calibration, SourceKind};
use crate::metrics;
use crate::realtime::{tick_loop, LoopHooks, LoopReport, Pacing};
use crate::trace::{trace_bytes, TraceRow};

pub const TRIAL_FORMAT: u32 = 1;

/// Tolerance between a stored error and its recomputation.
pub const ERROR_RECOMPUTE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMeta {
    pub format: u32,
    pub subject_id: String,
    pub group: FeedbackMode,
    pub master_seed: u64,
    pub entry: PlanEntry,
    pub course_seed: Option<u64>,
    pub config: StudyConfig,
    pub config_hash: String,
    pub calibration: Calibration,
    pub input_source: SourceKind,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
    pub valid: bool,
    pub abort_reason: Option<String>,
    /// `None` for aborted sessions.
    pub error: Option<metrics::SessionError>,
    pub events: Vec<FeedbackEvent>,
    pub clutch_commands: Vec<TimedCommand>,
    pub loop_report: LoopReport,
    /// Hex SHA-256 of the trace JSONL bytes.
    pub trace_sha256: String,
}

/// One session. Serialized as JSONL: a metadata line followed by one line per tick.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub meta: TrialMeta,
    pub trace: Vec<TraceRow>,
}

impl TrialRecord {
    pub fn trace_bytes(&self) -> Vec<u8> {
        trace_bytes(&self.trace)
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), SessionError> {
        serde_json::to_writer(&mut out, &self.meta)?;
        out.write_all(b"\n")?;
        out.write_all(&self.trace_bytes())?;
        Ok(())
    }

    pub fn to_jsonl(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        buf
    }

    /// Parse and check integrity (config hash, trace hash, stored error).
    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self, SessionError> {
        let mut lines = input.lines();
        let head = lines.next().ok_or_else(|| SessionError::Record("empty trial file".into()))??;
        let meta: TrialMeta = serde_json::from_str(&head)?;
        if meta.format != TRIAL_FORMAT {
            return Err(SessionError::Record(format!("unsupported trial format {}", meta.format)));
        }
        let mut trace = Vec::new();
        for line in lines {
            let line = line?;
            if !line.trim().is_empty() {
                trace.push(serde_json::from_str(&line)?);
            }
        }
        let record = Self { meta, trace };
        record.verify()?;
        Ok(record)
    }

    pub fn verify(&self) -> Result<(), SessionError> {
        if self.meta.config.hash() != self.meta.config_hash {
            return Err(SessionError::Record("config hash does not match the stored config".into()));
        }
        if sha256_hex(&self.trace_bytes()) != self.meta.trace_sha256 {
            return Err(SessionError::Record("trace hash mismatch".into()));
        }
        if let Some(stored) = self.meta.error {
            let traj = self.meta.entry.course.build(&self.meta.config.course)?;
            let again = session_error(&self.meta.entry, &traj, &self.trace)?;
            if (again.error - stored.error).abs() > ERROR_RECOMPUTE_TOL || again.collisions != stored.collisions {
                return Err(SessionError::Record(format!(
                    "stored error {} disagrees with recomputation {}",
                    stored.error, again.error
                )));
            }
        }
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn unix_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub pacing: Pacing,
    /// Sessions of the plan already completed.
    pub completed: usize,
    /// Development override for the plan-order check.
    pub allow_out_of_order: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { pacing: Pacing::Headless, completed: 0, allow_out_of_order: false }
    }
}

/// Run plan session `number` to completion (or abort) and package the result.
pub fn run_session(
    plan: &SessionPlan,
    number: usize,
    source: &mut dyn InputSource,
    cfg: &StudyConfig,
    cal: Calibration,
    opts: RunOptions,
    hooks: LoopHooks<'_>,
) -> Result<TrialRecord, SessionError> {
    let entry = *plan.entry(number).ok_or(SessionError::NoSuchSession(number))?;
    if !opts.allow_out_of_order && number != opts.completed + 1 {
        return Err(SessionError::OutOfOrder { expected: opts.completed + 1, requested: number });
    }
    let mut sim = SessionSim::new(entry, plan.group, cfg, cal)?;
    let started_unix_ms = unix_ms();
    let report = tick_loop(&mut sim, source, &cfg.realtime, cfg.tick_hz(), opts.pacing, hooks);
    let traj = sim.trajectory().clone();
    let out = sim.finish();

    let mut abort_reason = report.aborted.clone();
    let error = if abort_reason.is_none() {
        match session_error(&entry, &traj, &out.trace) {
            Ok(e) => Some(e),
            Err(e) => {
                abort_reason = Some(format!("metrics: {e}"));
                None
            }
        }
    } else {
        None
    };
    let meta = TrialMeta {
        format: TRIAL_FORMAT,
        subject_id: plan.subject_id.clone(),
        group: plan.group,
        master_seed: plan.master_seed,
        entry,
        course_seed: entry.course.seed(),
        config: *cfg,
        config_hash: cfg.hash(),
        calibration: cal,
        input_source: source.kind(),
        started_unix_ms,
        finished_unix_ms: unix_ms(),
        valid: abort_reason.is_none(),
        abort_reason,
        error,
        events: out.events,
        clutch_commands: out.commands,
        loop_report: report,
        trace_sha256: sha256_hex(&trace_bytes(&out.trace)),
    };
    Ok(TrialRecord { meta, trace: out.trace })
}

/// Re-run a stored trial from its config, calibration and recorded angles.
pub fn replay_trial(record: &TrialRecord) -> Result<Vec<TraceRow>, SessionError> {
    let m = &record.meta;
    let mut sim = SessionSim::new(m.entry, m.group, &m.config, m.calibration)?;
    let mut source = RecordedAngles::new(record.trace.iter().map(|r| r.angle).collect(), m.input_source);
    tick_loop(&mut sim, &mut source, &m.config.realtime, m.config.tick_hz(), Pacing::Headless, LoopHooks::default());
    Ok(sim.finish().trace)
}
