//! WebSocket message schema. Every message is a JSON object carrying the
//! protocol version in `"v"`; a message whose `"v"` differs from
//! [`PROTOCOL_VERSION`] is answered with `rejected` and the socket is closed.
//! A missing `"v"` is read as the current version.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use dronetrain::metrics::Phase;
use dronetrain::realtime::{Pacing, TelemetryFrame};
pub use dronetrain::realtime::PROTOCOL_VERSION;
use dronetrain::session::QuestionnaireAnswers;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AngleSource {
    Keyboard,
    Gamepad,
    Device,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    /// Angles arrive over the socket.
    #[default]
    Live,
    /// Built-in proportional pilot.
    Pilot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case")]
pub enum Control {
    /// Start the next session of `subject` (or the selected subject).
    StartSession {
        #[serde(default)]
        subject: Option<String>,
        #[serde(default)]
        session: Option<usize>,
        #[serde(default)]
        input: InputMode,
        #[serde(default)]
        pacing: Option<Pacing>,
        #[serde(default)]
        seed: Option<u64>,
    },
    StopSession,
    SelectSubject { subject: String },
    Calibrate { subject: String, angle_min: f64, angle_max: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Hello {
        #[serde(default)]
        client: Option<String>,
    },
    Angle {
        deg: f64,
        #[serde(default)]
        source: Option<AngleSource>,
    },
    Control(Control),
    Questionnaire { subject: String, phase: Phase, answers: QuestionnaireAnswers },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunState {
    Idle,
    Running,
    Completed,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStatus {
    pub state: RunState,
    pub subject: Option<String>,
    pub session: Option<usize>,
    pub error: Option<f64>,
    pub trial_file: Option<String>,
    pub message: Option<String>,
}

impl SessionStatus {
    pub fn idle() -> Self {
        Self { state: RunState::Idle, subject: None, session: None, error: None, trial_file: None, message: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Welcome { v: u32, server_version: u32, subjects: Vec<String>, selected: Option<String> },
    Rejected { v: u32, reason: String, server_version: u32, client_version: Option<u64> },
    Telemetry(TelemetryFrame),
    Session { v: u32, status: SessionStatus },
    Ack { v: u32, what: String },
    Error { v: u32, message: String },
}

impl ServerMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages serialize")
    }

    pub fn error(message: impl Into<String>) -> Self {
        ServerMessage::Error { v: PROTOCOL_VERSION, message: message.into() }
    }

    pub fn ack(what: impl Into<String>) -> Self {
        ServerMessage::Ack { v: PROTOCOL_VERSION, what: what.into() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Decoded {
    Message(ClientMessage),
    VersionMismatch(Option<u64>),
    Invalid(String),
}

/// Parse a client frame. `{"cmd": ...}` without a `type` is a control message.
pub fn decode(text: &str) -> Decoded {
    let mut value: Value = match serde_json::from_str(text) {
        Ok(v) => v,
        Err(e) => return Decoded::Invalid(format!("not JSON: {e}")),
    };
    let Some(obj) = value.as_object_mut() else {
        return Decoded::Invalid("expected a JSON object".into());
    };
    match obj.remove("v") {
        None => {}
        Some(v) if v.as_u64() == Some(PROTOCOL_VERSION as u64) => {}
        Some(v) => return Decoded::VersionMismatch(v.as_u64()),
    }
    if !obj.contains_key("type") && obj.contains_key("cmd") {
        obj.insert("type".into(), Value::String("control".into()));
    }
    match serde_json::from_value(value) {
        Ok(m) => Decoded::Message(m),
        Err(e) => Decoded::Invalid(e.to_string()),
    }
}
