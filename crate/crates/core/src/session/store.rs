//! Append-only study directory.
//!
//! ```text
//! <study>/manifest.json                      config, master seed, group assignments
//! <study>/maintenance.json                   clutch polarity and spring service state
//! <study>/metrics.csv                        summary export
//! <study>/subjects/<id>/calibration.json
//! <study>/subjects/<id>/sessions.jsonl       one line per stored trial
//! <study>/subjects/<id>/questionnaire.jsonl
//! <study>/subjects/<id>/trials/<NN>-<task>-<phase><i>.jsonl
//! ```

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use super::plan::{build_plan, SessionPlan};
use super::questionnaire::{capture_questionnaire, QuestionnaireAnswers, QuestionnaireResponse};
use super::record::TrialRecord;
use super::SessionError;
use crate::clutch::ClutchMaintenance;
use crate::config::StudyConfig;
use crate::feedback::FeedbackMode;
use crate::inputmap::Calibration;
use crate::metrics::{self, write_summary_csv, Phase, SummaryRow};

pub const MANIFEST_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectEntry {
    pub id: String,
    pub group: FeedbackMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyManifest {
    pub format: u32,
    pub master_seed: u64,
    pub config: StudyConfig,
    pub config_hash: String,
    pub groups: Vec<FeedbackMode>,
    pub subjects: Vec<SubjectEntry>,
}

/// One line of `sessions.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionLogLine {
    pub number: usize,
    pub valid: bool,
    pub file: String,
    pub error: Option<metrics::SessionError>,
    pub abort_reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectStatus {
    pub id: String,
    pub group: FeedbackMode,
    pub completed: usize,
    pub calibrated: bool,
}

#[derive(Debug, Clone)]
pub struct StudyStore {
    root: PathBuf,
    manifest: StudyManifest,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), SessionError> {
    let tmp = path.with_extension("tmp");
    let mut w = BufWriter::new(File::create(&tmp)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
    fs::rename(tmp, path)?;
    Ok(())
}

fn append_jsonl<T: Serialize>(path: &Path, value: &T) -> Result<(), SessionError> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    let mut line = serde_json::to_vec(value)?;
    line.push(b'\n');
    f.write_all(&line)?;
    Ok(())
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, SessionError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

impl StudyStore {
    /// Create a study; subjects `s01..` are assigned to `groups` round-robin.
    pub fn create(
        root: &Path,
        groups: &[FeedbackMode],
        subjects: usize,
        master_seed: u64,
        config: StudyConfig,
    ) -> Result<Self, SessionError> {
        config.validate()?;
        if groups.is_empty() {
            return Err(SessionError::Record("at least one group is required".into()));
        }
        if root.join("manifest.json").exists() {
            return Err(SessionError::Record(format!("{} already holds a study", root.display())));
        }
        fs::create_dir_all(root.join("subjects"))?;
        let width = subjects.to_string().len().max(2);
        let subjects = (0..subjects)
            .map(|i| SubjectEntry { id: format!("s{:0width$}", i + 1), group: groups[i % groups.len()] })
            .collect();
        let manifest = StudyManifest {
            format: MANIFEST_FORMAT,
            master_seed,
            config_hash: config.hash(),
            config,
            groups: groups.to_vec(),
            subjects,
        };
        write_json(&root.join("manifest.json"), &manifest)?;
        write_json(&root.join("maintenance.json"), &ClutchMaintenance::default())?;
        Ok(Self { root: root.to_path_buf(), manifest })
    }

    pub fn open(root: &Path) -> Result<Self, SessionError> {
        let manifest: StudyManifest = serde_json::from_reader(BufReader::new(File::open(root.join("manifest.json"))?))?;
        if manifest.format != MANIFEST_FORMAT {
            return Err(SessionError::Record(format!("unsupported manifest format {}", manifest.format)));
        }
        if manifest.config.hash() != manifest.config_hash {
            return Err(SessionError::Record("manifest config hash mismatch".into()));
        }
        Ok(Self { root: root.to_path_buf(), manifest })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &StudyManifest {
        &self.manifest
    }

    pub fn config(&self) -> &StudyConfig {
        &self.manifest.config
    }

    pub fn subject(&self, id: &str) -> Result<&SubjectEntry, SessionError> {
        self.manifest.subjects.iter().find(|s| s.id == id).ok_or_else(|| SessionError::UnknownSubject(id.into()))
    }

    fn subject_dir(&self, id: &str) -> Result<PathBuf, SessionError> {
        self.subject(id)?;
        let dir = self.root.join("subjects").join(id);
        fs::create_dir_all(dir.join("trials"))?;
        Ok(dir)
    }

    pub fn plan(&self, id: &str) -> Result<SessionPlan, SessionError> {
        let s = self.subject(id)?;
        Ok(build_plan(&s.id, s.group, self.manifest.master_seed))
    }

    pub fn set_calibration(&self, id: &str, cal: &Calibration) -> Result<(), SessionError> {
        cal.validate()?;
        write_json(&self.subject_dir(id)?.join("calibration.json"), cal)
    }

    pub fn calibration(&self, id: &str) -> Result<Calibration, SessionError> {
        let path = self.subject_dir(id)?.join("calibration.json");
        if !path.exists() {
            return Err(crate::inputmap::InputError::MissingCalibration.into());
        }
        Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
    }

    pub fn session_log(&self, id: &str) -> Result<Vec<SessionLogLine>, SessionError> {
        read_jsonl(&self.subject_dir(id)?.join("sessions.jsonl"))
    }

    /// Length of the valid prefix of the plan.
    pub fn completed(&self, id: &str) -> Result<usize, SessionError> {
        let done: std::collections::BTreeSet<usize> =
            self.session_log(id)?.into_iter().filter(|l| l.valid).map(|l| l.number).collect();
        Ok((1..).take_while(|n| done.contains(n)).count())
    }

    pub fn status(&self) -> Result<Vec<SubjectStatus>, SessionError> {
        self.manifest
            .subjects
            .iter()
            .map(|s| {
                Ok(SubjectStatus {
                    id: s.id.clone(),
                    group: s.group,
                    completed: self.completed(&s.id)?,
                    calibrated: self.root.join("subjects").join(&s.id).join("calibration.json").exists(),
                })
            })
            .collect()
    }

    pub fn trial_path(&self, id: &str, file: &str) -> Result<PathBuf, SessionError> {
        if file.contains(['/', '\\']) || file.starts_with('.') {
            return Err(SessionError::Record(format!("bad trial file name {file:?}")));
        }
        Ok(self.subject_dir(id)?.join("trials").join(file))
    }

    /// Persist a trial and append it to the subject's session log.
    pub fn save_trial(&self, record: &TrialRecord) -> Result<PathBuf, SessionError> {
        let m = &record.meta;
        let subject = self.subject(&m.subject_id)?;
        if subject.group != m.group || m.master_seed != self.manifest.master_seed {
            return Err(SessionError::Record("trial does not belong to this study".into()));
        }
        let e = &m.entry;
        let file = format!("{:02}-{}-{}{}.jsonl", e.number, e.task.as_str(), e.phase.as_str(), e.session_index);
        let path = self.trial_path(&m.subject_id, &file)?;
        let mut target = path.clone();
        let mut n = 1;
        while target.exists() {
            target = path.with_file_name(format!("{}.retry{n}.jsonl", file.trim_end_matches(".jsonl")));
            n += 1;
        }
        let mut w = BufWriter::new(File::create(&target)?);
        record.write_jsonl(&mut w)?;
        w.flush()?;

        if m.group == FeedbackMode::Haptic && m.entry.feedback_enabled && m.valid {
            let path = self.root.join("maintenance.json");
            let mut maint: ClutchMaintenance = serde_json::from_reader(BufReader::new(File::open(&path)?))?;
            if m.entry.session_index == 1 {
                maint.start_subject();
            }
            maint.record_session();
            write_json(&path, &maint)?;
        }

        let line = SessionLogLine {
            number: e.number,
            valid: m.valid,
            file: target.file_name().expect("file name").to_string_lossy().into_owned(),
            error: m.error,
            abort_reason: m.abort_reason.clone(),
        };
        append_jsonl(&self.subject_dir(&m.subject_id)?.join("sessions.jsonl"), &line)?;
        Ok(target)
    }

    pub fn load_trial(path: &Path) -> Result<TrialRecord, SessionError> {
        TrialRecord::read_jsonl(BufReader::new(File::open(path)?))
    }

    pub fn maintenance(&self) -> Result<ClutchMaintenance, SessionError> {
        Ok(serde_json::from_reader(BufReader::new(File::open(self.root.join("maintenance.json"))?))?)
    }

    /// Validate and append a questionnaire; the phase must be complete.
    pub fn record_questionnaire(
        &self,
        id: &str,
        phase: Phase,
        answers: &QuestionnaireAnswers,
    ) -> Result<QuestionnaireResponse, SessionError> {
        let plan = self.plan(id)?;
        let last = plan.entries.iter().filter(|e| e.phase == phase).map(|e| e.number).max().unwrap_or(0);
        let completed = self.completed(id)?;
        if completed < last {
            return Err(SessionError::Questionnaire(format!(
                "{} phase not finished ({completed} of {last} sessions done)",
                phase.as_str()
            )));
        }
        let response = capture_questionnaire(plan.group, phase, answers)?;
        append_jsonl(&self.subject_dir(id)?.join("questionnaire.jsonl"), &response)?;
        Ok(response)
    }

    pub fn questionnaires(&self, id: &str) -> Result<Vec<QuestionnaireResponse>, SessionError> {
        read_jsonl(&self.subject_dir(id)?.join("questionnaire.jsonl"))
    }

    /// Latest valid result for every completed session of every subject.
    pub fn summary_rows(&self) -> Result<Vec<SummaryRow>, SessionError> {
        let mut rows = Vec::new();
        for s in &self.manifest.subjects {
            let mut latest = std::collections::BTreeMap::new();
            for line in self.session_log(&s.id)? {
                if let (true, Some(err)) = (line.valid, line.error) {
                    latest.insert(line.number, err);
                }
            }
            rows.extend(latest.into_values().map(|e| SummaryRow {
                subject: s.id.clone(),
                group: s.group,
                task: e.task,
                phase: e.phase,
                session: e.session_index,
                error: e.error,
                collisions: e.collisions,
            }));
        }
        Ok(rows)
    }

    pub fn export_csv(&self) -> Result<PathBuf, SessionError> {
        let path = self.root.join("metrics.csv");
        let rows = self.summary_rows()?;
        write_summary_csv(&rows, BufWriter::new(File::create(&path)?))?;
        Ok(path)
    }
}
