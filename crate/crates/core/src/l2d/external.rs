//! Newline-delimited JSON protocol for out-of-process predictors.
//!
//! ```text
//! → {"type":"hello","version":1,"scenarios":[ids],"horizon":k}   ← {"type":"ready","model":"..."}
//! → {"type":"predict","t":..,"context":"..","horizon":k}          ← {"type":"weights","t":..,"p":{id:real}}
//! → {"type":"feedback","items":[{"context","winner","loser"}]}    ← {"type":"ack"}
//! → {"type":"update"}                                             ← {"type":"updated","loss_before":..,"loss_after":..}
//! → {"type":"shutdown"}                                           (process exits 0)
//! ```

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Vector;

pub const PROTOCOL_VERSION: u32 = 1;
pub const SIMPLEX_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackItem {
    pub context: String,
    pub winner: String,
    pub loser: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Request {
    Hello { version: u32, scenarios: Vec<String>, horizon: usize },
    Predict { t: usize, context: String, horizon: usize },
    Feedback { items: Vec<FeedbackItem> },
    Update,
    Shutdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Response {
    Ready {
        model: String,
    },
    Weights {
        t: usize,
        p: BTreeMap<String, f64>,
    },
    Ack,
    Updated {
        loss_before: f64,
        loss_after: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        warning: Option<String>,
    },
    Error {
        message: String,
    },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdapterError {
    #[error("no response within {0:?}")]
    Timeout(Duration),
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("unknown scenario id `{0}`")]
    UnknownScenario(String),
    #[error("weights are not on the simplex (sum {sum}, min {min})")]
    NotSimplex { sum: f64, min: f64 },
    #[error("predictor reported an error: {0}")]
    Remote(String),
    #[error("unexpected response: {0}")]
    Unexpected(String),
    #[error("predictor stream closed")]
    Closed,
    #[error("handshake has not completed")]
    NoHandshake,
    #[error("i/o: {0}")]
    Io(String),
}

/// Checks a weights message against the library ids and the simplex; returns
/// weights in library order (missing ids get 0).
pub fn validate_weights(p: &BTreeMap<String, f64>, ids: &[String]) -> Result<Vector, AdapterError> {
    let mut out = Vector::zeros(ids.len());
    for (id, value) in p {
        let idx = ids
            .iter()
            .position(|s| s == id)
            .ok_or_else(|| AdapterError::UnknownScenario(id.clone()))?;
        out[idx] = *value;
    }
    let sum = out.sum();
    let min = out.min();
    if !sum.is_finite() || (sum - 1.0).abs() > SIMPLEX_TOL || min < 0.0 {
        return Err(AdapterError::NotSimplex { sum, min });
    }
    Ok(out)
}

/// One exchanged line pair, kept for transcript comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct Exchange {
    pub request: String,
    pub response: Option<String>,
}

/// Client for a predictor child process. Exactly one request is in flight at
/// a time; `&mut self` on every call enforces exclusive access.
pub struct ExternalPredictorClient {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
    timeout: Duration,
    scenarios: Vec<String>,
    model: Option<String>,
    transcript: Vec<Exchange>,
}

impl std::fmt::Debug for ExternalPredictorClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalPredictorClient")
            .field("pid", &self.child.id())
            .field("model", &self.model)
            .finish()
    }
}

impl ExternalPredictorClient {
    /// Spawns `command` through the shell.
    pub fn spawn(command: &str, timeout: Duration) -> Result<Self, AdapterError> {
        let mut cmd = if cfg!(windows) {
            let mut c = Command::new("cmd");
            c.args(["/C", command]);
            c
        } else {
            let mut c = Command::new("sh");
            c.args(["-c", command]);
            c
        };
        let mut child = cmd
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| AdapterError::Io(e.to_string()))?;
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().ok_or(AdapterError::Closed)?;
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        Ok(ExternalPredictorClient {
            child,
            stdin,
            lines: rx,
            timeout,
            scenarios: Vec::new(),
            model: None,
            transcript: Vec::new(),
        })
    }

    pub fn model_name(&self) -> Option<&str> {
        self.model.as_deref()
    }

    pub fn transcript(&self) -> &[Exchange] {
        &self.transcript
    }

    /// Sends one raw line and waits for one raw line back.
    pub fn exchange_raw(&mut self, line: &str) -> Result<String, AdapterError> {
        let stdin = self.stdin.as_mut().ok_or(AdapterError::Closed)?;
        writeln!(stdin, "{line}").map_err(|e| AdapterError::Io(e.to_string()))?;
        stdin.flush().map_err(|e| AdapterError::Io(e.to_string()))?;
        self.transcript.push(Exchange { request: line.to_string(), response: None });
        let reply = match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(reply)) => reply,
            Ok(Err(e)) => return Err(AdapterError::Io(e.to_string())),
            Err(RecvTimeoutError::Timeout) => return Err(AdapterError::Timeout(self.timeout)),
            Err(RecvTimeoutError::Disconnected) => return Err(AdapterError::Closed),
        };
        if let Some(last) = self.transcript.last_mut() {
            last.response = Some(reply.clone());
        }
        Ok(reply)
    }

    fn request(&mut self, req: &Request) -> Result<Response, AdapterError> {
        let line = serde_json::to_string(req).expect("requests serialize");
        let reply = self.exchange_raw(&line)?;
        let resp: Response =
            serde_json::from_str(&reply).map_err(|e| AdapterError::Malformed(format!("{e}: {reply}")))?;
        if let Response::Error { message } = resp {
            return Err(AdapterError::Remote(message));
        }
        Ok(resp)
    }

    pub fn handshake(&mut self, scenarios: &[String], horizon: usize) -> Result<String, AdapterError> {
        let req = Request::Hello { version: PROTOCOL_VERSION, scenarios: scenarios.to_vec(), horizon };
        match self.request(&req)? {
            Response::Ready { model } => {
                self.scenarios = scenarios.to_vec();
                self.model = Some(model.clone());
                Ok(model)
            }
            other => Err(AdapterError::Unexpected(format!("{other:?}"))),
        }
    }

    /// Scenario weights for context `c_t`, validated and in library order.
    pub fn predict(&mut self, t: usize, context: &str, horizon: usize) -> Result<Vector, AdapterError> {
        if self.model.is_none() {
            return Err(AdapterError::NoHandshake);
        }
        let req = Request::Predict { t, context: context.to_string(), horizon };
        match self.request(&req)? {
            Response::Weights { t: echoed, p } => {
                if echoed != t {
                    return Err(AdapterError::Unexpected(format!("weights for step {echoed}, asked {t}")));
                }
                validate_weights(&p, &self.scenarios)
            }
            other => Err(AdapterError::Unexpected(format!("{other:?}"))),
        }
    }

    pub fn feedback(&mut self, items: Vec<FeedbackItem>) -> Result<(), AdapterError> {
        match self.request(&Request::Feedback { items })? {
            Response::Ack => Ok(()),
            other => Err(AdapterError::Unexpected(format!("{other:?}"))),
        }
    }

    pub fn update(&mut self) -> Result<(f64, f64), AdapterError> {
        match self.request(&Request::Update)? {
            Response::Updated { loss_before, loss_after, .. } => Ok((loss_before, loss_after)),
            other => Err(AdapterError::Unexpected(format!("{other:?}"))),
        }
    }

    /// Sends `shutdown` and waits for the exit status.
    pub fn shutdown(mut self) -> Result<i32, AdapterError> {
        self.shutdown_inner()
    }

    fn shutdown_inner(&mut self) -> Result<i32, AdapterError> {
        if let Some(mut stdin) = self.stdin.take() {
            let line = serde_json::to_string(&Request::Shutdown).expect("requests serialize");
            let _ = writeln!(stdin, "{line}");
            let _ = stdin.flush();
            self.transcript.push(Exchange { request: line, response: None });
        }
        let deadline = std::time::Instant::now() + self.timeout;
        loop {
            match self.child.try_wait().map_err(|e| AdapterError::Io(e.to_string()))? {
                Some(status) => return Ok(status.code().unwrap_or(-1)),
                None if std::time::Instant::now() >= deadline => {
                    let _ = self.child.kill();
                    let status = self.child.wait().map_err(|e| AdapterError::Io(e.to_string()))?;
                    return Ok(status.code().unwrap_or(-1));
                }
                None => thread::sleep(Duration::from_millis(5)),
            }
        }
    }
}

impl Drop for ExternalPredictorClient {
    fn drop(&mut self) {
        if self.stdin.is_some() {
            let _ = self.shutdown_inner();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids() -> Vec<String> {
        vec!["calm".into(), "gust".into()]
    }

    #[test]
    fn non_simplex_rejected() {
        let p = BTreeMap::from([("calm".to_string(), 0.6), ("gust".to_string(), 0.6)]);
        assert!(matches!(validate_weights(&p, &ids()), Err(AdapterError::NotSimplex { .. })));
        let neg = BTreeMap::from([("calm".to_string(), 1.5), ("gust".to_string(), -0.5)]);
        assert!(matches!(validate_weights(&neg, &ids()), Err(AdapterError::NotSimplex { .. })));
    }

    #[test]
    fn unknown_id_rejected() {
        let p = BTreeMap::from([("storm".to_string(), 1.0)]);
        assert_eq!(validate_weights(&p, &ids()), Err(AdapterError::UnknownScenario("storm".into())));
    }

    #[test]
    fn valid_weights_in_library_order() {
        let p = BTreeMap::from([("gust".to_string(), 0.25), ("calm".to_string(), 0.75)]);
        let w = validate_weights(&p, &ids()).unwrap();
        assert_eq!(w.as_slice(), &[0.75, 0.25]);
    }

    #[test]
    fn wire_format() {
        let hello = Request::Hello { version: 1, scenarios: ids(), horizon: 5 };
        assert_eq!(
            serde_json::to_string(&hello).unwrap(),
            r#"{"type":"hello","version":1,"scenarios":["calm","gust"],"horizon":5}"#
        );
        assert_eq!(serde_json::to_string(&Request::Update).unwrap(), r#"{"type":"update"}"#);
        let resp: Response = serde_json::from_str(r#"{"type":"weights","t":3,"p":{"calm":0.5,"gust":0.5}}"#).unwrap();
        assert!(matches!(resp, Response::Weights { t: 3, .. }));
        let err: Response = serde_json::from_str(r#"{"type":"error","message":"unknown type"}"#).unwrap();
        assert_eq!(err, Response::Error { message: "unknown type".into() });
    }

    #[cfg(unix)]
    #[test]
    fn timeout_and_malformed() {
        // a predictor that never answers
        let mut silent = ExternalPredictorClient::spawn("sleep 5", Duration::from_millis(100)).unwrap();
        assert!(matches!(silent.handshake(&ids(), 3), Err(AdapterError::Timeout(_))));
        drop(silent);
        let mut garbage = ExternalPredictorClient::spawn("while read l; do echo 'not json'; done", Duration::from_secs(5)).unwrap();
        assert!(matches!(garbage.handshake(&ids(), 3), Err(AdapterError::Malformed(_))));
    }
}
