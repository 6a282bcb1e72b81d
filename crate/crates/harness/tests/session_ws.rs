use std::fs;
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use instructmpc::config::{load_config, RunConfig};
use instructmpc::experiment::{read_instructions, run_one};
use instructmpc::session::{serve_on, ServerMsg, Tick};
use instructmpc::trace::read_trace;
use instructmpc_core::sims::{episode_rng, push_direction, Variant};
use tungstenite::{Message, WebSocket};

struct Server {
    port: u16,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl Server {
    fn start(cfg: &RunConfig) -> Server {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let port = listener.local_addr().unwrap().port();
        let stop = Arc::new(AtomicBool::new(false));
        let (cfg, flag) = (cfg.clone(), stop.clone());
        let handle = std::thread::spawn(move || serve_on(&cfg, listener, flag).unwrap());
        Server { port, stop, handle: Some(handle) }
    }

    fn connect(&self) -> Client {
        let stream = TcpStream::connect(("127.0.0.1", self.port)).unwrap();
        stream.set_read_timeout(Some(Duration::from_secs(20))).unwrap();
        let (ws, _) = tungstenite::client(format!("ws://127.0.0.1:{}/", self.port), stream).unwrap();
        Client { ws }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

struct Client {
    ws: WebSocket<TcpStream>,
}

impl Client {
    fn send(&mut self, json: &str) {
        self.ws.send(Message::Text(json.into())).unwrap();
    }

    fn recv(&mut self) -> ServerMsg {
        loop {
            match self.ws.read().unwrap() {
                Message::Text(text) => return serde_json::from_str(&text).unwrap(),
                Message::Close(_) => panic!("server closed the connection"),
                _ => {}
            }
        }
    }

    fn recv_within(&mut self, timeout: Duration) -> Option<ServerMsg> {
        self.ws.get_ref().set_read_timeout(Some(timeout)).unwrap();
        let msg = match self.ws.read() {
            Ok(Message::Text(text)) => Some(serde_json::from_str(&text).unwrap()),
            Ok(_) => None,
            Err(tungstenite::Error::Io(e))
                if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) =>
            {
                None
            }
            Err(e) => panic!("{e}"),
        };
        self.ws.get_ref().set_read_timeout(Some(Duration::from_secs(20))).unwrap();
        msg
    }

    fn next_tick(&mut self) -> Tick {
        loop {
            if let ServerMsg::Tick(t) = self.recv() {
                return t;
            }
        }
    }
}

fn config(dir: &Path, body: &str) -> (PathBuf, RunConfig) {
    let path = dir.join("session.toml");
    fs::write(&path, format!("out = \"{}\"\npace_hz = 50.0\n{body}", dir.join("out").display())).unwrap();
    let cfg = load_config(&path).unwrap();
    (path, cfg)
}

fn run_dir(cfg: &RunConfig) -> PathBuf {
    let stamp = fs::read_dir(cfg.out.join("sessions")).unwrap().next().unwrap().unwrap().path();
    stamp.join("conn0/run0")
}

#[test]
fn pause_resume_and_malformed_frames() {
    let dir = tempfile::tempdir().unwrap();
    let (_, cfg) = config(dir.path(), "preset = \"robot\"\nhorizon = 200\nk = 4\n");
    let server = Server::start(&cfg);
    let mut client = server.connect();
    assert!(matches!(client.recv(), ServerMsg::Status { t: 0, paused: false, horizon: 200, .. }));
    while client.next_tick().t < 2 {}

    client.send(r#"{"type":"pause"}"#);
    let mut last = 0;
    loop {
        match client.recv() {
            ServerMsg::Tick(t) => last = t.t,
            ServerMsg::Status { paused: true, t, .. } => {
                assert!(t >= last);
                last = t - 1;
                break;
            }
            other => panic!("unexpected {other:?}"),
        }
    }
    let quiet = Instant::now();
    while quiet.elapsed() < Duration::from_millis(300) {
        assert!(client.recv_within(Duration::from_millis(50)).is_none(), "tick while paused");
    }

    client.send("{not json");
    assert!(matches!(client.recv(), ServerMsg::Error { .. }));
    client.send(r#"{"type":"speed","hz":1000}"#);
    assert!(matches!(client.recv(), ServerMsg::Error { .. }));

    client.send(r#"{"type":"resume"}"#);
    assert!(matches!(client.recv(), ServerMsg::Status { paused: false, .. }));
    assert_eq!(client.next_tick().t, last + 1);
}

#[test]
fn operator_warning_lowers_the_gust_cost_and_the_log_replays_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let (path, cfg) = config(
        dir.path(),
        "preset = \"robot\"\nhorizon = 100\nk = 5\nvariants = [\"tuned\"]\n[robot]\nscripted_warnings = false\n",
    );
    let gust = 84;
    let data = cfg.robot.generate(&mut episode_rng(cfg.master_seed, 0)).unwrap();
    let toward = push_direction(data.winds[gust]);
    let script = [
        (gust - 2, format!("strong wind toward the {toward} expected in 2 steps")),
        (gust - 1, format!("strong wind toward the {toward} expected in 1 step")),
        (gust, format!("strong wind toward the {toward} expected now")),
    ];

    let server = Server::start(&cfg);
    let mut client = server.connect();
    assert!(matches!(client.recv(), ServerMsg::Status { seed: 0, .. }));
    let mut ticks = Vec::new();
    loop {
        match client.recv() {
            ServerMsg::Tick(t) => {
                if let Some((_, text)) = script.iter().find(|(s, _)| *s == t.t + 1) {
                    client.send(&serde_json::json!({"type": "instruction", "text": text}).to_string());
                }
                ticks.push(t);
            }
            ServerMsg::Done { t, .. } => {
                assert_eq!(t, 100);
                break;
            }
            other => panic!("unexpected {other:?}"),
        }
    }
    for (s, text) in &script {
        assert_eq!(&ticks[*s].context, text, "instruction for step {s} arrived late");
    }

    let run = run_dir(&cfg);
    let log = read_instructions(&run.join("instructions.jsonl")).unwrap();
    assert_eq!(log.len(), script.len());

    let baseline = run_one(&cfg, Variant::Tuned, 0, &Default::default()).unwrap();
    let hit = gust + 1;
    let (with, without) = (ticks[hit].stage_cost, baseline.records[hit].stage_cost);
    assert!(with < without, "stage cost after the gust: {with} with warning, {without} without");

    let replay = dir.path().join("replay");
    let out = Command::new(env!("CARGO_BIN_EXE_instructmpc"))
        .args(["run", "--seed", "0", "--config"])
        .arg(&path)
        .arg("--instructions")
        .arg(run.join("instructions.jsonl"))
        .arg("--out")
        .arg(&replay)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let session_trace = fs::read(run.join("trace.csv")).unwrap();
    let replay_trace = fs::read(replay.join("traces/tuned_seed0.csv")).unwrap();
    assert!(session_trace == replay_trace, "replayed trace differs from the live session");
    let table = read_trace(session_trace.as_slice()).unwrap();
    assert_eq!(table.values("stage_cost").unwrap()[hit], with);
}
