//! Post-phase questionnaires on a 0–6 Likert scale.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::SessionError;
use crate::feedback::FeedbackMode;
use crate::metrics::Phase;

pub const LIKERT_MAX: i64 = 6;

/// Standard Likert items asked after every phase.
pub const LIKERT_ITEMS: [&str; 3] = ["control", "comfort", "performance"];

/// Raw answers as submitted by a client; validated by [`capture_questionnaire`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct QuestionnaireAnswers {
    pub likert: BTreeMap<String, i64>,
    pub improved: bool,
    #[serde(default)]
    pub helpfulness: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionnaireResponse {
    pub phase: Phase,
    pub likert: BTreeMap<String, u8>,
    pub improved: bool,
    /// Present iff the phase is training and the group received feedback.
    pub helpfulness: Option<u8>,
}

fn likert(name: &str, v: i64) -> Result<u8, SessionError> {
    if (0..=LIKERT_MAX).contains(&v) {
        Ok(v as u8)
    } else {
        Err(SessionError::Questionnaire(format!("{name} = {v} is outside 0..={LIKERT_MAX}")))
    }
}

pub fn helpfulness_expected(group: FeedbackMode, phase: Phase) -> bool {
    phase == Phase::Training && group != FeedbackMode::Fpv
}

pub fn capture_questionnaire(
    group: FeedbackMode,
    phase: Phase,
    answers: &QuestionnaireAnswers,
) -> Result<QuestionnaireResponse, SessionError> {
    let mut out = BTreeMap::new();
    for item in LIKERT_ITEMS {
        let v = answers
            .likert
            .get(item)
            .ok_or_else(|| SessionError::Questionnaire(format!("missing answer for {item}")))?;
        out.insert(item.to_string(), likert(item, *v)?);
    }
    if let Some(extra) = answers.likert.keys().find(|k| !LIKERT_ITEMS.contains(&k.as_str())) {
        return Err(SessionError::Questionnaire(format!("unknown item {extra}")));
    }
    let helpfulness = match (helpfulness_expected(group, phase), answers.helpfulness) {
        (true, Some(v)) => Some(likert("helpfulness", v)?),
        (true, None) => return Err(SessionError::Questionnaire("helpfulness answer required".into())),
        (false, Some(_)) => {
            return Err(SessionError::Questionnaire(format!(
                "helpfulness is only asked after training in feedback groups (group {}, phase {})",
                group.as_str(),
                phase.as_str()
            )))
        }
        (false, None) => None,
    };
    Ok(QuestionnaireResponse { phase, likert: out, improved: answers.improved, helpfulness })
}
