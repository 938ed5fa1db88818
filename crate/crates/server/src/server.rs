//! WebSocket + HTTP gateway around a study store.
//!
//! The sim loop runs on its own OS thread. Telemetry leaves it through a
//! broadcast channel whose `send` never waits, so a slow client only loses
//! frames; input enters through the latest-value mailbox.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures_util::{SinkExt, StreamExt};
use serde::Deserialize;
use serde_json::json;
use tokio::sync::broadcast;

use dronetrain::clutch::{ClutchLink, LoopbackClutch};
use dronetrain::inputmap::{calibrate, Mailbox, SourceKind};
use dronetrain::metrics::Phase;
use dronetrain::realtime::{LoopHooks, Pacing, TelemetryFrame};
use dronetrain::session::pilot::LiveInput;
use dronetrain::session::plan::pilot_seed;
use dronetrain::session::{run_session, InputSource, ProportionalPilot, QuestionnaireAnswers, RunOptions, StudyStore};
use dronetrain::FeedbackMode;

use crate::protocol::{
    decode, AngleSource, ClientMessage, Control, Decoded, InputMode, RunState, ServerMessage, SessionStatus,
    PROTOCOL_VERSION,
};

/// Frames buffered per client before the oldest are dropped.
pub const BROADCAST_CAPACITY: usize = 256;

#[derive(Debug, Clone, Copy)]
pub struct ServerOptions {
    pub pacing: Pacing,
    pub allow_out_of_order: bool,
}

impl Default for ServerOptions {
    fn default() -> Self {
        Self { pacing: Pacing::RealTime, allow_out_of_order: false }
    }
}

struct Active {
    status: SessionStatus,
    stop: Option<Arc<AtomicBool>>,
    handle: Option<std::thread::JoinHandle<()>>,
}

struct Inner {
    store: Mutex<StudyStore>,
    tx: broadcast::Sender<Arc<str>>,
    mailbox: Mailbox,
    selected: Mutex<Option<String>>,
    active: Mutex<Active>,
    opts: ServerOptions,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    pub fn new(store: StudyStore, opts: ServerOptions) -> Self {
        let (tx, _) = broadcast::channel(BROADCAST_CAPACITY);
        Self(Arc::new(Inner {
            store: Mutex::new(store),
            tx,
            mailbox: Mailbox::new(),
            selected: Mutex::new(None),
            active: Mutex::new(Active { status: SessionStatus::idle(), stop: None, handle: None }),
            opts,
        }))
    }

    pub fn subscribe(&self) -> broadcast::Receiver<Arc<str>> {
        self.0.tx.subscribe()
    }

    pub fn mailbox(&self) -> &Mailbox {
        &self.0.mailbox
    }

    pub fn status(&self) -> SessionStatus {
        self.0.active.lock().expect("session lock").status.clone()
    }

    fn broadcast(&self, msg: &ServerMessage) {
        // no receivers is fine: the session runs headless
        let _ = self.0.tx.send(Arc::from(msg.to_json()));
    }

    fn set_status(&self, status: SessionStatus) {
        self.0.active.lock().expect("session lock").status = status.clone();
        self.broadcast(&ServerMessage::Session { v: PROTOCOL_VERSION, status });
    }

    pub fn select_subject(&self, id: &str) -> Result<(), String> {
        self.0.store.lock().expect("store lock").subject(id).map_err(|e| e.to_string())?;
        *self.0.selected.lock().expect("selection lock") = Some(id.to_string());
        Ok(())
    }

    pub fn start_session(
        &self,
        subject: Option<String>,
        session: Option<usize>,
        input: InputMode,
        pacing: Option<Pacing>,
        seed: Option<u64>,
    ) -> Result<SessionStatus, String> {
        let mut active = self.0.active.lock().expect("session lock");
        if active.status.state == RunState::Running {
            return Err("a session is already running".into());
        }
        if let Some(h) = active.handle.take() {
            let _ = h.join();
        }
        let subject = subject
            .or_else(|| self.0.selected.lock().expect("selection lock").clone())
            .ok_or("no subject selected")?;
        let (plan, cal, completed, cfg) = {
            let store = self.0.store.lock().expect("store lock");
            let plan = store.plan(&subject).map_err(|e| e.to_string())?;
            let cal = store.calibration(&subject).map_err(|e| e.to_string())?;
            (plan, cal, store.completed(&subject).map_err(|e| e.to_string())?, *store.config())
        };
        let number = session.unwrap_or(completed + 1);
        let opts = RunOptions {
            pacing: pacing.unwrap_or(self.0.opts.pacing),
            completed,
            allow_out_of_order: self.0.opts.allow_out_of_order,
        };
        if plan.entry(number).is_none() {
            return Err(format!("plan has no session {number}"));
        }
        if !opts.allow_out_of_order && number != completed + 1 {
            return Err(format!("session {number} requested but session {} is next", completed + 1));
        }

        let stop = Arc::new(AtomicBool::new(false));
        let status = SessionStatus {
            state: RunState::Running,
            subject: Some(subject.clone()),
            session: Some(number),
            error: None,
            trial_file: None,
            message: None,
        };
        active.status = status.clone();
        active.stop = Some(stop.clone());
        self.broadcast(&ServerMessage::Session { v: PROTOCOL_VERSION, status: status.clone() });

        let state = self.clone();
        let mut source: Box<dyn InputSource> = match input {
            InputMode::Live => Box::new(LiveInput {
                mailbox: self.0.mailbox.clone(),
                kind: SourceKind::Keyboard,
                neutral: Some(cal.inverse(10.0)),
            }),
            InputMode::Pilot => {
                Box::new(ProportionalPilot::new(cfg.pilot, pilot_seed(seed.unwrap_or(plan.master_seed), &plan.subject_id, number)))
            }
        };
        active.handle = Some(std::thread::spawn(move || {
            let tx = state.0.tx.clone();
            let sink = move |frame: TelemetryFrame| {
                let _ = tx.send(Arc::from(ServerMessage::Telemetry(frame).to_json()));
            };
            let link = (plan.group == FeedbackMode::Haptic).then(|| ClutchLink::spawn(Box::new(LoopbackClutch::new())));
            let hooks = LoopHooks { telemetry: Some(&sink), clutch: link.as_ref(), stop: Some(&stop), inject: None };
            let result = run_session(&plan, number, source.as_mut(), &cfg, cal, opts, hooks);
            if let Some(link) = link {
                let (_, results) = link.close();
                if let Some(bad) = results.iter().find(|d| d.result.is_err()) {
                    tracing::warn!(?bad, "clutch device reported an error");
                }
            }
            let status = match result {
                Ok(rec) => {
                    let saved = state.0.store.lock().expect("store lock").save_trial(&rec);
                    let file = saved.ok().and_then(|p| p.file_name().map(|f| f.to_string_lossy().into_owned()));
                    SessionStatus {
                        state: if rec.meta.valid { RunState::Completed } else { RunState::Aborted },
                        subject: Some(plan.subject_id.clone()),
                        session: Some(number),
                        error: rec.meta.error.map(|e| e.error),
                        trial_file: file,
                        message: rec.meta.abort_reason.clone(),
                    }
                }
                Err(e) => SessionStatus {
                    state: RunState::Aborted,
                    subject: Some(plan.subject_id.clone()),
                    session: Some(number),
                    error: None,
                    trial_file: None,
                    message: Some(e.to_string()),
                },
            };
            tracing::info!(?status, "session finished");
            state.set_status(status);
        }));
        Ok(status)
    }

    pub fn stop_session(&self) -> bool {
        let active = self.0.active.lock().expect("session lock");
        match (&active.stop, active.status.state) {
            (Some(stop), RunState::Running) => {
                stop.store(true, Ordering::Relaxed);
                true
            }
            _ => false,
        }
    }

    /// Block until the current session thread (if any) has exited.
    pub fn join_session(&self) {
        let handle = self.0.active.lock().expect("session lock").handle.take();
        if let Some(h) = handle {
            let _ = h.join();
        }
    }

    fn calibrate(&self, subject: &str, angle_min: f64, angle_max: f64) -> Result<(), String> {
        let store = self.0.store.lock().expect("store lock");
        let alt = store.config().sim.altitude_range;
        let cal = calibrate(angle_min, angle_max, alt).map_err(|e| e.to_string())?;
        store.set_calibration(subject, &cal).map_err(|e| e.to_string())
    }

    fn questionnaire(&self, subject: &str, phase: Phase, answers: &QuestionnaireAnswers) -> Result<serde_json::Value, String> {
        let store = self.0.store.lock().expect("store lock");
        let r = store.record_questionnaire(subject, phase, answers).map_err(|e| e.to_string())?;
        Ok(serde_json::to_value(r).expect("response serializes"))
    }

    fn welcome(&self) -> ServerMessage {
        let store = self.0.store.lock().expect("store lock");
        ServerMessage::Welcome {
            v: PROTOCOL_VERSION,
            server_version: PROTOCOL_VERSION,
            subjects: store.manifest().subjects.iter().map(|s| s.id.clone()).collect(),
            selected: self.0.selected.lock().expect("selection lock").clone(),
        }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/ws", get(ws_upgrade))
        .route("/api/study", get(study_status))
        .route("/api/subjects/{id}/sessions", get(subject_sessions))
        .route("/api/trials/{subject}/{file}", get(trial_file))
        .route("/api/questionnaire", post(post_questionnaire))
        .with_state(state)
}

pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

pub async fn bind(addr: SocketAddr) -> std::io::Result<tokio::net::TcpListener> {
    tokio::net::TcpListener::bind(addr).await
}

fn json_error(code: StatusCode, message: impl Into<String>) -> Response {
    (code, Json(json!({ "error": message.into() }))).into_response()
}

async fn ws_upgrade(
    State(state): State<AppState>,
    Query(q): Query<HashMap<String, String>>,
    ws: WebSocketUpgrade,
) -> Response {
    if let Some(v) = q.get("v") {
        if v.parse::<u32>().ok() != Some(PROTOCOL_VERSION) {
            let body = json!({
                "error": "protocol version mismatch",
                "server_version": PROTOCOL_VERSION,
                "client_version": v,
            });
            return (StatusCode::UPGRADE_REQUIRED, Json(body)).into_response();
        }
    }
    ws.on_upgrade(move |socket| client_loop(socket, state))
}

async fn client_loop(socket: WebSocket, state: AppState) {
    let (mut sender, mut receiver) = socket.split();
    let mut rx = state.subscribe();
    if sender.send(Message::text(state.welcome().to_json())).await.is_err() {
        return;
    }
    let status = ServerMessage::Session { v: PROTOCOL_VERSION, status: state.status() };
    if sender.send(Message::text(status.to_json())).await.is_err() {
        return;
    }
    loop {
        tokio::select! {
            incoming = receiver.next() => {
                let text = match incoming {
                    Some(Ok(Message::Text(t))) => t,
                    Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                    Some(Ok(_)) => continue,
                };
                match handle_client_message(&state, text.as_str()) {
                    Reply::None => {}
                    Reply::Send(msg) => {
                        if sender.send(Message::text(msg.to_json())).await.is_err() {
                            break;
                        }
                    }
                    Reply::Close(msg) => {
                        let _ = sender.send(Message::text(msg.to_json())).await;
                        let _ = sender.send(Message::Close(None)).await;
                        break;
                    }
                }
            }
            frame = rx.recv() => match frame {
                Ok(text) => {
                    if sender.send(Message::text(text.as_ref())).await.is_err() {
                        break;
                    }
                }
                // this client fell behind; its oldest frames are gone
                Err(broadcast::error::RecvError::Lagged(n)) => tracing::debug!(n, "client lagging, frames dropped"),
                Err(broadcast::error::RecvError::Closed) => break,
            },
        }
    }
}

enum Reply {
    None,
    Send(ServerMessage),
    Close(ServerMessage),
}

fn handle_client_message(state: &AppState, text: &str) -> Reply {
    let msg = match decode(text) {
        Decoded::Message(m) => m,
        Decoded::VersionMismatch(client_version) => {
            return Reply::Close(ServerMessage::Rejected {
                v: PROTOCOL_VERSION,
                reason: "protocol version mismatch".into(),
                server_version: PROTOCOL_VERSION,
                client_version,
            })
        }
        Decoded::Invalid(e) => return Reply::Send(ServerMessage::error(e)),
    };
    let result = match msg {
        ClientMessage::Hello { .. } => return Reply::Send(state.welcome()),
        ClientMessage::Angle { deg, source } => {
            if !deg.is_finite() {
                return Reply::Send(ServerMessage::error("angle must be finite"));
            }
            let kind = match source {
                Some(AngleSource::Gamepad) => SourceKind::Gamepad,
                Some(AngleSource::Device) => SourceKind::Device,
                Some(AngleSource::Keyboard) | None => SourceKind::Keyboard,
            };
            state.mailbox().push_angle(deg, kind);
            return Reply::None;
        }
        ClientMessage::Control(Control::StartSession { subject, session, input, pacing, seed }) => {
            state.start_session(subject, session, input, pacing, seed).map(|_| "start_session".to_string())
        }
        ClientMessage::Control(Control::StopSession) => {
            if state.stop_session() {
                Ok("stop_session".into())
            } else {
                Err("no session is running".into())
            }
        }
        ClientMessage::Control(Control::SelectSubject { subject }) => {
            state.select_subject(&subject).map(|_| "select_subject".into())
        }
        ClientMessage::Control(Control::Calibrate { subject, angle_min, angle_max }) => {
            state.calibrate(&subject, angle_min, angle_max).map(|_| "calibrate".into())
        }
        ClientMessage::Questionnaire { subject, phase, answers } => {
            state.questionnaire(&subject, phase, &answers).map(|_| "questionnaire".into())
        }
    };
    Reply::Send(match result {
        Ok(what) => ServerMessage::ack(what),
        Err(e) => ServerMessage::error(e),
    })
}

async fn study_status(State(state): State<AppState>) -> Response {
    let store = state.0.store.lock().expect("store lock");
    let subjects = match store.status() {
        Ok(s) => s,
        Err(e) => return json_error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    };
    let m = store.manifest();
    Json(json!({
        "v": PROTOCOL_VERSION,
        "master_seed": m.master_seed,
        "config_hash": m.config_hash,
        "groups": m.groups,
        "subjects": subjects,
        "session": state.status(),
    }))
    .into_response()
}

async fn subject_sessions(State(state): State<AppState>, Path(id): Path<String>) -> Response {
    let store = state.0.store.lock().expect("store lock");
    match store.session_log(&id) {
        Ok(log) => Json(log).into_response(),
        Err(e) => json_error(StatusCode::NOT_FOUND, e.to_string()),
    }
}

async fn trial_file(State(state): State<AppState>, Path((subject, file)): Path<(String, String)>) -> Response {
    let path = match state.0.store.lock().expect("store lock").trial_path(&subject, &file) {
        Ok(p) => p,
        Err(e) => return json_error(StatusCode::NOT_FOUND, e.to_string()),
    };
    match tokio::fs::read(&path).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, "application/x-ndjson")], bytes).into_response(),
        Err(_) => json_error(StatusCode::NOT_FOUND, format!("no trial {file} for {subject}")),
    }
}

#[derive(Debug, Deserialize)]
struct QuestionnaireBody {
    subject: String,
    phase: Phase,
    answers: QuestionnaireAnswers,
}

async fn post_questionnaire(State(state): State<AppState>, Json(body): Json<QuestionnaireBody>) -> Response {
    match state.questionnaire(&body.subject, body.phase, &body.answers) {
        Ok(v) => (StatusCode::CREATED, Json(v)).into_response(),
        Err(e) => json_error(StatusCode::UNPROCESSABLE_ENTITY, e),
    }
}
