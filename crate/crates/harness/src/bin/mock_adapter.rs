//! Reference external predictor: a linear keyword scorer with softmax
//! weights, fine-tuned by DPO on feedback batches. Speaks the JSON-lines
//! predictor protocol on stdin/stdout.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::PathBuf;
use std::time::Duration;

use clap::Parser;
use instructmpc_core::l2d::external::{Request, Response, PROTOCOL_VERSION};
use instructmpc_core::l2d::{featurize, scenario_weights_softmax, ScenarioLibrary, Vocabulary};
use instructmpc_core::linalg::Mat;
use instructmpc_core::sims::{prior_scorer, LearnerConfig};
use instructmpc_core::tuner::{dpo_update, PreferencePair};

#[derive(Parser, Debug)]
#[command(about = "Keyword-scorer predictor for the JSON-lines protocol")]
struct Args {
    /// Scenario library JSON; its keywords form the vocabulary and the
    /// initial scorer matches the built-in softmax model.
    #[arg(long)]
    library: Option<PathBuf>,
    /// Keyword gain of the initial scorer (library mode).
    #[arg(long, default_value_t = LearnerConfig::default().softmax_gain)]
    gain: f64,
    #[arg(long, default_value_t = LearnerConfig::default().beta)]
    beta: f64,
    #[arg(long, default_value_t = LearnerConfig::default().dpo_step)]
    step: f64,
    /// Answer predictions with error frames after this many successes.
    #[arg(long)]
    fail_after: Option<usize>,
    /// Delay before every weights reply.
    #[arg(long, default_value_t = 0)]
    delay_ms: u64,
}

struct Model {
    ids: Vec<String>,
    vocab: Vocabulary,
    scorer: Mat,
    reference: Mat,
    buffer: Vec<PreferencePair>,
}

struct Adapter {
    args: Args,
    library: Option<ScenarioLibrary>,
    model: Option<Model>,
    predictions: usize,
}

impl Adapter {
    fn hello(&mut self, version: u32, scenarios: Vec<String>) -> Result<Response, String> {
        if version != PROTOCOL_VERSION {
            return Err(format!("unsupported protocol version {version}"));
        }
        let (vocab, scorer) = match &self.library {
            Some(lib) => {
                if lib.ids() != scenarios {
                    return Err(format!("scenario ids {scenarios:?} do not match the library {:?}", lib.ids()));
                }
                (lib.vocabulary(), prior_scorer(lib, self.args.gain))
            }
            None => {
                let vocab = Vocabulary::new(scenarios.iter().map(|s| s.to_lowercase()));
                let d = vocab.dim();
                (vocab, Mat::zeros(scenarios.len(), d))
            }
        };
        self.model = Some(Model { ids: scenarios, vocab, reference: scorer.clone(), scorer, buffer: Vec::new() });
        Ok(Response::Ready { model: "keyword-softmax".into() })
    }

    fn model(&mut self) -> Result<&mut Model, String> {
        self.model.as_mut().ok_or_else(|| "hello has not been received".to_string())
    }

    fn handle(&mut self, line: &str) -> Result<Option<Response>, String> {
        let req: Request = serde_json::from_str(line).map_err(|e| format!("malformed request: {e}"))?;
        match req {
            Request::Hello { version, scenarios, .. } => self.hello(version, scenarios).map(Some),
            Request::Predict { t, context, .. } => {
                if self.args.fail_after.is_some_and(|n| self.predictions >= n) {
                    return Err("prediction failure requested".into());
                }
                let m = self.model()?;
                let p = scenario_weights_softmax(&m.scorer, &featurize(&context, &m.vocab)).map_err(|e| e.to_string())?;
                let p: BTreeMap<String, f64> = m.ids.iter().cloned().zip(p.iter().copied()).collect();
                self.predictions += 1;
                Ok(Some(Response::Weights { t, p }))
            }
            Request::Feedback { items } => {
                let m = self.model()?;
                let index = |id: &str| m.ids.iter().position(|s| s == id).ok_or_else(|| format!("unknown scenario `{id}`"));
                let mut pairs = Vec::with_capacity(items.len());
                for item in &items {
                    let (winner, loser) = (index(&item.winner)?, index(&item.loser)?);
                    if winner == loser {
                        return Err(format!("winner and loser are both `{}`", item.winner));
                    }
                    pairs.push(PreferencePair { feats: featurize(&item.context, &m.vocab), winner, loser });
                }
                m.buffer.extend(pairs);
                Ok(Some(Response::Ack))
            }
            Request::Update => {
                let (beta, step) = (self.args.beta, self.args.step);
                let m = self.model()?;
                if m.buffer.is_empty() {
                    return Ok(Some(Response::Updated {
                        loss_before: 0.0,
                        loss_after: 0.0,
                        warning: Some("no feedback since the last update".into()),
                    }));
                }
                let out = dpo_update(&m.scorer, &m.reference, &m.buffer, beta, step).map_err(|e| e.to_string())?;
                m.scorer = out.scorer;
                m.buffer.clear();
                Ok(Some(Response::Updated { loss_before: out.loss_before, loss_after: out.loss_after, warning: None }))
            }
            Request::Shutdown => Ok(None),
        }
    }
}

fn main() {
    let args = Args::parse();
    let library = match &args.library {
        Some(path) => {
            let text = std::fs::read_to_string(path).unwrap_or_else(|e| {
                eprintln!("mock-adapter: cannot read {}: {e}", path.display());
                std::process::exit(2);
            });
            match ScenarioLibrary::from_json(&text, f64::MAX) {
                Ok(lib) => Some(lib),
                Err(e) => {
                    eprintln!("mock-adapter: bad library: {e}");
                    std::process::exit(2);
                }
            }
        }
        None => None,
    };
    let delay = Duration::from_millis(args.delay_ms);
    let mut adapter = Adapter { args, library, model: None, predictions: 0 };
    let stdin = std::io::stdin();
    let mut stdout = std::io::stdout().lock();
    for line in stdin.lock().lines() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        let reply = match adapter.handle(&line) {
            Ok(Some(r)) => r,
            Ok(None) => return,
            Err(message) => Response::Error { message },
        };
        if !delay.is_zero() && matches!(reply, Response::Weights { .. }) {
            std::thread::sleep(delay);
        }
        let text = serde_json::to_string(&reply).expect("responses serialize");
        if writeln!(stdout, "{text}").and_then(|_| stdout.flush()).is_err() {
            return;
        }
    }
}
