use std::net::SocketAddr;
use std::path::Path;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

use dronetrain::inputmap::calibrate;
use dronetrain::realtime::{LoopHooks, Pacing};
use dronetrain::session::{run_session, PerfectTracker, RunOptions, StudyStore};
use dronetrain::trace::read_jsonl;
use dronetrain::{FeedbackMode, StudyConfig};
use dronetrain_server::protocol::InputMode;
use dronetrain_server::server::{self, AppState, ServerOptions};

type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

fn new_study(dir: &Path) -> StudyStore {
    let store = StudyStore::create(dir, &FeedbackMode::ALL, 3, 21, StudyConfig::default()).unwrap();
    for s in ["s01", "s02", "s03"] {
        store.set_calibration(s, &calibrate(30.0, 150.0, (7.0, 13.0)).unwrap()).unwrap();
    }
    store
}

async fn start(store: StudyStore, pacing: Pacing) -> (SocketAddr, AppState) {
    let state = AppState::new(store, ServerOptions { pacing, allow_out_of_order: false });
    let listener = server::bind("127.0.0.1:0".parse().unwrap()).await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(server::serve(listener, state.clone()));
    (addr, state)
}

async fn connect(addr: SocketAddr) -> Ws {
    let (ws, _) = connect_async(format!("ws://{addr}/ws")).await.unwrap();
    ws
}

async fn recv(ws: &mut Ws) -> Value {
    loop {
        let msg = tokio::time::timeout(Duration::from_secs(20), ws.next()).await.expect("timed out").unwrap().unwrap();
        if let Message::Text(t) = msg {
            return serde_json::from_str(t.as_str()).unwrap();
        }
    }
}

async fn recv_type(ws: &mut Ws, ty: &str) -> Value {
    loop {
        let v = recv(ws).await;
        if v["type"] == ty {
            return v;
        }
    }
}

async fn send(ws: &mut Ws, v: Value) {
    ws.send(Message::text(v.to_string())).await.unwrap();
}

async fn wait_state(ws: &mut Ws, state: &str) -> Value {
    loop {
        let v = recv_type(ws, "session").await;
        if v["status"]["state"] == state {
            return v;
        }
    }
}

async fn http(addr: SocketAddr, method: &str, path: &str, body: Option<Value>) -> (u16, Vec<u8>) {
    let mut stream = TcpStream::connect(addr).await.unwrap();
    let body = body.map(|b| b.to_string()).unwrap_or_default();
    let req = format!(
        "{method} {path} HTTP/1.1\r\nHost: test\r\nConnection: close\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{body}",
        body.len()
    );
    stream.write_all(req.as_bytes()).await.unwrap();
    let mut buf = Vec::new();
    stream.read_to_end(&mut buf).await.unwrap();
    let split = buf.windows(4).position(|w| w == b"\r\n\r\n").unwrap();
    let head = String::from_utf8_lossy(&buf[..split]).to_string();
    let status = head.split_whitespace().nth(1).unwrap().parse().unwrap();
    (status, buf[split + 4..].to_vec())
}

#[tokio::test(flavor = "multi_thread")]
async fn welcome_then_start_session_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (addr, _) = start(new_study(dir.path()), Pacing::Headless).await;
    let mut ws = connect(addr).await;
    let welcome = recv(&mut ws).await;
    assert_eq!(welcome["type"], "welcome");
    assert_eq!(welcome["server_version"], 1);
    assert_eq!(welcome["subjects"], json!(["s01", "s02", "s03"]));

    send(&mut ws, json!({"cmd": "start_session"})).await;
    let err = recv_type(&mut ws, "error").await;
    assert!(err["message"].as_str().unwrap().contains("no subject"));

    send(&mut ws, json!({"v": 1, "type": "control", "cmd": "select_subject", "subject": "s02"})).await;
    assert_eq!(recv_type(&mut ws, "ack").await["what"], "select_subject");
    send(&mut ws, json!({"cmd": "start_session", "input": "pilot"})).await;
    let running = wait_state(&mut ws, "running").await;
    assert_eq!(running["status"]["subject"], "s02");
    assert_eq!(running["status"]["session"], 1);
    let done = wait_state(&mut ws, "completed").await;
    let file = done["status"]["trial_file"].as_str().unwrap().to_string();
    assert!(done["status"]["error"].as_f64().unwrap() >= 0.0);

    let (code, body) = http(addr, "GET", &format!("/api/trials/s02/{file}"), None).await;
    assert_eq!(code, 200);
    let record = dronetrain::session::TrialRecord::read_jsonl(body.as_slice()).unwrap();
    assert!(record.meta.valid);
    assert_eq!(record.trace.len(), 1600);

    let (code, body) = http(addr, "GET", "/api/study", None).await;
    assert_eq!(code, 200);
    let study: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(study["subjects"][1]["completed"], 1);
    assert_eq!(study["session"]["state"], "completed");
}

#[tokio::test(flavor = "multi_thread")]
async fn angle_message_drives_next_tick() {
    let dir = tempfile::tempdir().unwrap();
    let (addr, _) = start(new_study(dir.path()), Pacing::RealTime).await;
    let mut ws = connect(addr).await;
    send(&mut ws, json!({"cmd": "start_session", "subject": "s01"})).await;
    wait_state(&mut ws, "running").await;
    recv_type(&mut ws, "telemetry").await;
    send(&mut ws, json!({"v": 1, "type": "angle", "deg": 95.0})).await;
    tokio::time::sleep(Duration::from_millis(300)).await;
    send(&mut ws, json!({"cmd": "stop_session"})).await;
    let aborted = wait_state(&mut ws, "aborted").await;
    let file = aborted["status"]["trial_file"].as_str().unwrap().to_string();

    let (code, body) = http(addr, "GET", &format!("/api/trials/s01/{file}"), None).await;
    assert_eq!(code, 200);
    let mut lines = body.splitn(2, |b| *b == b'\n');
    let meta: Value = serde_json::from_slice(lines.next().unwrap()).unwrap();
    assert_eq!(meta["valid"], false);
    let trace = read_jsonl(lines.next().unwrap()).unwrap();
    let first = trace.iter().position(|r| r.angle == 95.0).expect("95 deg reached the sim");
    assert!(first > 0, "the neutral angle is used until input arrives");
    assert!(trace[first..].iter().all(|r| r.angle == 95.0));
    // 95 deg on a 30..150 calibration commands 10.25 m
    assert!((trace[first].commanded_z - 10.25).abs() < 1e-12);
}

#[tokio::test(flavor = "multi_thread")]
async fn two_clients_receive_identical_frames() {
    let dir = tempfile::tempdir().unwrap();
    let (addr, state) = start(new_study(dir.path()), Pacing::RealTime).await;
    let mut a = connect(addr).await;
    let mut b = connect(addr).await;
    recv_type(&mut a, "welcome").await;
    recv_type(&mut b, "welcome").await;
    state.start_session(Some("s03".into()), None, InputMode::Pilot, None, Some(5)).unwrap();
    let mut fa = Vec::new();
    let mut fb = Vec::new();
    while fa.len() < 15 {
        fa.push(recv_type(&mut a, "telemetry").await);
    }
    while fb.len() < 15 {
        fb.push(recv_type(&mut b, "telemetry").await);
    }
    assert_eq!(fa, fb);
    assert!(fa.windows(2).all(|w| w[0]["t"].as_f64() < w[1]["t"].as_f64()));
    let f = &fa[0];
    assert_eq!(f["v"], 1);
    assert_eq!(f["session"]["group"], "haptic");
    assert_eq!(f["geometry"]["kind"], "rings");
    assert!(state.stop_session());
    state.join_session();
}

#[tokio::test(flavor = "multi_thread")]
async fn version_mismatch_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (addr, _) = start(new_study(dir.path()), Pacing::Headless).await;
    let mut ws = connect(addr).await;
    recv_type(&mut ws, "welcome").await;
    send(&mut ws, json!({"v": 2, "type": "hello"})).await;
    let rejected = recv_type(&mut ws, "rejected").await;
    assert_eq!(rejected["server_version"], 1);
    assert_eq!(rejected["client_version"], 2);
    let end = tokio::time::timeout(Duration::from_secs(5), async {
        loop {
            match ws.next().await {
                None | Some(Err(_)) | Some(Ok(Message::Close(_))) => break,
                _ => {}
            }
        }
    })
    .await;
    assert!(end.is_ok(), "socket closed after rejection");

    match connect_async(format!("ws://{addr}/ws?v=7")).await {
        Err(tokio_tungstenite::tungstenite::Error::Http(resp)) => {
            assert_eq!(resp.status().as_u16(), 426);
            let body: Value = serde_json::from_slice(resp.body().as_deref().unwrap()).unwrap();
            assert_eq!(body["server_version"], 1);
        }
        other => panic!("expected an HTTP rejection, got {other:?}"),
    }
    assert!(connect_async(format!("ws://{addr}/ws?v=1")).await.is_ok());
}

#[tokio::test(flavor = "multi_thread")]
async fn questionnaire_endpoint_validates() {
    let dir = tempfile::tempdir().unwrap();
    let store = new_study(dir.path());
    let cfg = StudyConfig::default();
    let plan = store.plan("s01").unwrap();
    let cal = store.calibration("s01").unwrap();
    for n in 1..=6 {
        let opts = RunOptions { completed: n - 1, ..Default::default() };
        let rec = run_session(&plan, n, &mut PerfectTracker, &cfg, cal, opts, LoopHooks::default()).unwrap();
        store.save_trial(&rec).unwrap();
    }
    let (addr, _) = start(store, Pacing::Headless).await;
    let answers = |v: i64, help: Option<i64>| {
        json!({"likert": {"control": v, "comfort": v, "performance": v}, "improved": true, "helpfulness": help})
    };

    let (code, _) =
        http(addr, "POST", "/api/questionnaire", Some(json!({"subject": "s01", "phase": "baseline", "answers": answers(7, None)}))).await;
    assert_eq!(code, 422);
    let (code, _) = http(
        addr,
        "POST",
        "/api/questionnaire",
        Some(json!({"subject": "s01", "phase": "baseline", "answers": answers(3, Some(2))})),
    )
    .await;
    assert_eq!(code, 422, "helpfulness is never asked of the FPV group");
    let (code, body) =
        http(addr, "POST", "/api/questionnaire", Some(json!({"subject": "s01", "phase": "baseline", "answers": answers(6, None)}))).await;
    assert_eq!(code, 201);
    let stored: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(stored["likert"]["control"], 6);
    let (code, _) =
        http(addr, "POST", "/api/questionnaire", Some(json!({"subject": "s01", "phase": "training", "answers": answers(3, None)}))).await;
    assert_eq!(code, 422, "training not finished yet");

    // the same validation over the socket
    let mut ws = connect(addr).await;
    send(&mut ws, json!({"type": "questionnaire", "subject": "s01", "phase": "baseline", "answers": answers(-1, None)})).await;
    assert!(recv_type(&mut ws, "error").await["message"].as_str().unwrap().contains("outside"));

    let (code, body) = http(addr, "GET", "/api/subjects/s01/sessions", None).await;
    assert_eq!(code, 200);
    assert_eq!(serde_json::from_slice::<Vec<Value>>(&body).unwrap().len(), 6);
    let (code, _) = http(addr, "GET", "/api/trials/s01/..%2Fmanifest.json", None).await;
    assert_eq!(code, 404);
}

#[tokio::test(flavor = "multi_thread")]
async fn runs_headless_without_clients() {
    let dir = tempfile::tempdir().unwrap();
    let (_, state) = start(new_study(dir.path()), Pacing::Headless).await;
    state.start_session(Some("s02".into()), None, InputMode::Pilot, None, None).unwrap();
    state.join_session();
    let status = state.status();
    assert_eq!(status.session, Some(1));
    assert_eq!(format!("{:?}", status.state), "Completed");
    assert!(state.start_session(Some("s02".into()), Some(5), InputMode::Pilot, None, None).is_err(), "out of order");
}
