//! Live sessions: a transport-free engine that applies operator messages at
//! step boundaries, and a WebSocket server running one engine per connection.

use std::collections::BTreeMap;
use std::fs;
use std::io::{ErrorKind, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use anyhow::{Context, Result};
use instructmpc_core::sims::{EpisodeRunner, StepRecord, Variant};
use serde::{Deserialize, Serialize};
use tungstenite::{Message, WebSocket};

use crate::config::{RunConfig, MAX_PACE_HZ, MIN_PACE_HZ};
use crate::experiment::Instruction;
use crate::trace::trace_bytes;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ClientMsg {
    Instruction { text: String },
    Pause,
    Resume,
    Speed { hz: f64 },
    Reset {
        #[serde(default)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tick {
    pub t: usize,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub w: Vec<f64>,
    pub w_hat: Vec<Vec<f64>>,
    pub weights: BTreeMap<String, f64>,
    pub stage_cost: f64,
    pub cum_cost: f64,
    pub eta: Option<f64>,
    pub theta_norm: f64,
    pub context_id: String,
    pub context: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ServerMsg {
    Tick(Tick),
    Status { t: usize, horizon: usize, seed: u64, paused: bool, hz: f64 },
    Done { t: usize, cum_cost: f64 },
    Error { message: String },
}

impl ServerMsg {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("frame serializes")
    }
}

/// Metadata written next to each run's instruction log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub seed: u64,
    pub master_seed: u64,
    pub variant: Variant,
    pub config: String,
}

fn tick(r: &StepRecord, ids: &[String]) -> Tick {
    Tick {
        t: r.t,
        x: r.x.clone(),
        u: r.u.clone(),
        w: r.w.clone(),
        w_hat: r.what.clone(),
        weights: ids.iter().cloned().zip(r.weights.iter().copied()).collect(),
        stage_cost: r.stage_cost,
        cum_cost: r.cum_cost,
        eta: r.eta,
        theta_norm: r.theta_norm,
        context_id: r.context_id.clone(),
        context: r.context.clone(),
    }
}

/// One operator-driven episode at a time; messages take effect before the
/// next step.
pub struct Session {
    cfg: RunConfig,
    seed: u64,
    runner: Option<EpisodeRunner>,
    ids: Vec<String>,
    horizon: usize,
    t: usize,
    cum_cost: f64,
    pending: Option<String>,
    log: Vec<Instruction>,
    paused: bool,
    hz: f64,
    root: Option<PathBuf>,
    run_index: usize,
    trace: Option<Vec<u8>>,
}

impl Session {
    /// Starts a session; with `root`, each run writes its instruction log,
    /// metadata and final trace under `root/run{i}`.
    pub fn new(cfg: &RunConfig, seed: u64, root: Option<PathBuf>) -> Result<Self> {
        let mut s = Session {
            cfg: cfg.clone(),
            seed,
            runner: None,
            ids: Vec::new(),
            horizon: 0,
            t: 0,
            cum_cost: 0.0,
            pending: None,
            log: Vec::new(),
            paused: false,
            hz: cfg.pace_hz,
            root,
            run_index: 0,
            trace: None,
        };
        s.start(seed)?;
        Ok(s)
    }

    fn start(&mut self, seed: u64) -> Result<()> {
        let plant = self.cfg.plant(seed)?;
        let k = self.cfg.resolve_k(plant.as_ref())?;
        let runner = EpisodeRunner::new(plant, self.cfg.session_variant, &self.cfg.learner()?, k)?;
        self.ids = runner.library().ids();
        self.horizon = runner.horizon();
        self.runner = Some(runner);
        self.seed = seed;
        self.t = 0;
        self.cum_cost = 0.0;
        self.pending = None;
        self.log.clear();
        self.trace = None;
        if let Some(dir) = self.run_dir() {
            fs::create_dir_all(&dir)?;
            let meta = SessionMeta {
                seed,
                master_seed: self.cfg.master_seed,
                variant: self.cfg.session_variant,
                config: self.cfg.to_toml(),
            };
            fs::write(dir.join("session.json"), serde_json::to_string_pretty(&meta)? + "\n")?;
            fs::write(dir.join("instructions.jsonl"), "")?;
        }
        Ok(())
    }

    pub fn run_dir(&self) -> Option<PathBuf> {
        self.root.as_ref().map(|r| r.join(format!("run{}", self.run_index)))
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_paused(&self) -> bool {
        self.paused
    }

    pub fn is_done(&self) -> bool {
        self.runner.is_none()
    }

    pub fn hz(&self) -> f64 {
        self.hz
    }

    /// CSV trace of the finished run.
    pub fn trace(&self) -> Option<&[u8]> {
        self.trace.as_deref()
    }

    /// The instruction log in its JSON-lines file form.
    pub fn instruction_log(&self) -> String {
        self.log.iter().map(|e| serde_json::to_string(e).expect("entry serializes") + "\n").collect()
    }

    pub fn instructions(&self) -> &[Instruction] {
        &self.log
    }

    pub fn status(&self) -> ServerMsg {
        ServerMsg::Status { t: self.t, horizon: self.horizon, seed: self.seed, paused: self.paused, hz: self.hz }
    }

    /// Parses and applies one client frame; malformed frames produce an
    /// error frame and leave the session untouched.
    pub fn handle_text(&mut self, text: &str) -> Vec<ServerMsg> {
        match serde_json::from_str::<ClientMsg>(text) {
            Ok(msg) => self.apply(msg).unwrap_or_else(|e| vec![ServerMsg::Error { message: format!("{e:#}") }]),
            Err(e) => vec![ServerMsg::Error { message: format!("malformed message: {e}") }],
        }
    }

    pub fn apply(&mut self, msg: ClientMsg) -> Result<Vec<ServerMsg>> {
        match msg {
            ClientMsg::Instruction { text } => {
                if self.is_done() {
                    anyhow::bail!("episode finished; send reset to start another");
                }
                let entry = Instruction { t: self.t, text: text.clone() };
                if let Some(dir) = self.run_dir() {
                    let mut f = fs::OpenOptions::new().append(true).open(dir.join("instructions.jsonl"))?;
                    writeln!(f, "{}", serde_json::to_string(&entry)?)?;
                }
                self.log.push(entry);
                self.pending = Some(text);
                Ok(Vec::new())
            }
            ClientMsg::Pause => {
                self.paused = true;
                Ok(vec![self.status()])
            }
            ClientMsg::Resume => {
                self.paused = false;
                Ok(vec![self.status()])
            }
            ClientMsg::Speed { hz } => {
                if !(MIN_PACE_HZ..=MAX_PACE_HZ).contains(&hz) {
                    anyhow::bail!("speed must lie in [{MIN_PACE_HZ}, {MAX_PACE_HZ}] steps per second");
                }
                self.hz = hz;
                Ok(vec![self.status()])
            }
            ClientMsg::Reset { seed } => {
                self.run_index += 1;
                self.start(seed.unwrap_or(self.seed))?;
                Ok(vec![self.status()])
            }
        }
    }

    /// Runs one step and returns its tick, plus a done frame after the last.
    pub fn advance(&mut self) -> Result<Vec<ServerMsg>> {
        let Some(runner) = self.runner.as_mut() else { return Ok(Vec::new()) };
        let context = self.pending.take();
        let record = runner.step(context.as_deref())?;
        let mut out = vec![ServerMsg::Tick(tick(record, &self.ids))];
        self.t = record.t + 1;
        self.cum_cost = record.cum_cost;
        if runner.is_done() {
            let outcome = self.runner.take().expect("runner present").finish()?;
            let bytes = trace_bytes(&outcome);
            if let Some(dir) = self.run_dir() {
                fs::write(dir.join("trace.csv"), &bytes)?;
            }
            self.trace = Some(bytes);
            out.push(ServerMsg::Done { t: self.t, cum_cost: self.cum_cost });
        }
        Ok(out)
    }
}

/// Serves on `127.0.0.1:port` until the process ends.
pub fn serve(cfg: &RunConfig, port: u16) -> Result<()> {
    let listener = TcpListener::bind(("127.0.0.1", port)).with_context(|| format!("binding port {port}"))?;
    log::info!("serving sessions on ws://{}", listener.local_addr()?);
    serve_on(cfg, listener, Arc::new(AtomicBool::new(false)))
}

/// Accepts connections until `stop` is set; each gets its own thread.
pub fn serve_on(cfg: &RunConfig, listener: TcpListener, stop: Arc<AtomicBool>) -> Result<()> {
    listener.set_nonblocking(true)?;
    let stamp = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_millis());
    let root = cfg.out.join("sessions").join(stamp.to_string());
    let counter = AtomicUsize::new(0);
    while !stop.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, addr)) => {
                let id = counter.fetch_add(1, Ordering::Relaxed);
                let cfg = cfg.clone();
                let dir = root.join(format!("conn{id}"));
                let stop = stop.clone();
                thread::spawn(move || {
                    if let Err(e) = connection(&cfg, stream, &dir, &stop) {
                        log::warn!("session {id} from {addr} ended: {e:#}");
                    }
                });
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(10)),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}

fn send(ws: &mut WebSocket<TcpStream>, frames: Vec<ServerMsg>) -> Result<()> {
    for f in frames {
        ws.send(Message::Text(f.to_json()))?;
    }
    Ok(())
}

fn would_block(e: &tungstenite::Error) -> bool {
    matches!(e, tungstenite::Error::Io(io) if matches!(io.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut))
}

fn connection(cfg: &RunConfig, stream: TcpStream, dir: &Path, stop: &AtomicBool) -> Result<()> {
    stream.set_nonblocking(false)?;
    let mut ws = tungstenite::accept(stream).map_err(|e| anyhow::anyhow!("handshake failed: {e}"))?;
    ws.get_ref().set_read_timeout(Some(Duration::from_millis(2)))?;
    let mut session = Session::new(cfg, 0, Some(dir.to_path_buf()))?;
    send(&mut ws, vec![session.status()])?;
    let mut next_due = Instant::now();
    while !stop.load(Ordering::Relaxed) {
        loop {
            match ws.read() {
                Ok(Message::Text(text)) => {
                    let frames = session.handle_text(&text);
                    send(&mut ws, frames)?;
                }
                Ok(Message::Close(_)) => return Ok(()),
                Ok(_) => {}
                Err(e) if would_block(&e) => break,
                Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => return Ok(()),
                Err(e) => return Err(e.into()),
            }
        }
        let now = Instant::now();
        if !session.is_paused() && !session.is_done() && now >= next_due {
            let frames = session.advance()?;
            send(&mut ws, frames)?;
            next_due = now + Duration::from_secs_f64(1.0 / session.hz());
        }
    }
    Ok(())
}
