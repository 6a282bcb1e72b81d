use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::plant::Plant;
use crate::analysis::{estimate_g, AffineEpisode, PsiModel};
use crate::control::{cost_gap_psi, mpc_action, EpisodeTrace, RiccatiSolution};
use crate::error::{Error, Result};
use crate::l2d::external::{ExternalPredictorClient, FeedbackItem};
use crate::l2d::{
    featurize, predict_window, scenario_weights_affine, scenario_weights_softmax, window_end,
    AffineMixerParams, ContextFeatures, PredictionWindow, ScenarioLibrary, Vocabulary,
};
use crate::linalg::{Mat, Vector};
use crate::tuner::{
    build_preferences, dpo_update, LossWindow, PreferenceDataset, PreferencePair, TunerState, WindowBook,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Classic,
    Untuned,
    Tuned,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Classic, Variant::Untuned, Variant::Tuned];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Classic => "classic",
            Variant::Untuned => "untuned",
            Variant::Tuned => "tuned",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelChoice {
    Affine,
    Softmax,
    External {
        command: String,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
    },
}

fn default_timeout_ms() -> u64 {
    5000
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TunerChoice {
    TailoredOgd,
    Dpo,
    Frozen,
}

/// Free parameters of the learning loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    pub model: ModelChoice,
    pub tuner: TunerChoice,
    /// Diameter D of the parameter ball around the zero-shot prior.
    pub diameter: f64,
    /// Gradient bound G; estimated from the episode when absent.
    pub g: Option<f64>,
    pub projection: bool,
    /// Weight the zero-shot prior gives each matched keyword.
    pub prior_gain: f64,
    /// Score the softmax prior gives each matched keyword.
    pub softmax_gain: f64,
    pub beta: f64,
    pub dpo_step: f64,
    pub dpo_threshold: Option<usize>,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            model: ModelChoice::Affine,
            tuner: TunerChoice::TailoredOgd,
            diameter: 4.0,
            g: None,
            projection: true,
            prior_gain: 0.15,
            softmax_gain: 5.0,
            beta: 0.1,
            dpo_step: 5.0,
            dpo_threshold: None,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        match (&self.model, self.tuner) {
            (ModelChoice::Affine, TunerChoice::Dpo) => {
                return Err(Error::InvalidParameter("tuner `dpo` needs the softmax or external model".into()))
            }
            (ModelChoice::Softmax | ModelChoice::External { .. }, TunerChoice::TailoredOgd) => {
                return Err(Error::InvalidParameter("tuner `tailored-ogd` needs the affine model".into()))
            }
            _ => {}
        }
        if !(self.diameter > 0.0 && self.diameter.is_finite()) {
            return Err(Error::InvalidParameter(format!("learner.diameter must be positive (got {})", self.diameter)));
        }
        if let Some(g) = self.g {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::InvalidParameter(format!("learner.g must be positive (got {g})")));
            }
        }
        if !(self.beta > 0.0) || !(self.dpo_step > 0.0) {
            return Err(Error::InvalidParameter("learner.beta and learner.dpo_step must be positive".into()));
        }
        if self.dpo_threshold == Some(0) {
            return Err(Error::InvalidParameter("learner.dpo_threshold must be positive".into()));
        }
        Ok(())
    }
}

/// Zero-shot affine mixer: the default scenario through the bias, and
/// `gain` on each other scenario's own keywords.
pub fn prior_mixer(lib: &ScenarioLibrary, gain: f64, diameter: f64) -> Result<AffineMixerParams> {
    let vocab = lib.vocabulary();
    let mut theta = Mat::zeros(lib.len(), vocab.dim());
    let default = lib.default_index();
    for (s, scenario) in lib.scenarios().iter().enumerate() {
        if Some(s) == default {
            continue;
        }
        for kw in &scenario.keywords {
            if let Some(i) = vocab.index_of(&kw.to_lowercase()) {
                theta[(s, i)] = gain;
            }
        }
    }
    let bias = match default {
        Some(d) => Vector::from_fn(lib.len(), |s, _| if s == d { 1.0 } else { 0.0 }),
        None => Vector::from_element(lib.len(), 1.0 / lib.len() as f64),
    };
    AffineMixerParams::new(theta.clone(), bias, theta, diameter)
}

/// Zero-shot softmax scorer: `gain` on each scenario's keywords and a bias
/// score of `gain/2` for the default scenario.
pub fn prior_scorer(lib: &ScenarioLibrary, gain: f64) -> Mat {
    let vocab = lib.vocabulary();
    let mut scorer = Mat::zeros(lib.len(), vocab.dim());
    for (s, scenario) in lib.scenarios().iter().enumerate() {
        for kw in &scenario.keywords {
            if let Some(i) = vocab.index_of(&kw.to_lowercase()) {
                scorer[(s, i)] = gain;
            }
        }
    }
    if let Some(d) = lib.default_index() {
        scorer[(d, 0)] = gain / 2.0;
    }
    scorer
}

struct PreferenceLoop {
    book: WindowBook,
    dataset: PreferenceDataset,
}

enum Forecaster {
    Zero,
    Affine { params: AffineMixerParams, tuner: Option<TunerState> },
    Softmax { scorer: Mat, reference: Mat, prefs: Option<PreferenceLoop>, beta: f64, step: f64 },
    External { client: Box<ExternalPredictorClient>, prefs: Option<PreferenceLoop>, fallbacks: usize },
}

/// One row of the per-step log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub x: Vec<f64>,
    pub display: Vec<f64>,
    pub u: Vec<f64>,
    pub w: Vec<f64>,
    pub what: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub stage_cost: f64,
    pub cum_cost: f64,
    pub loss: Option<f64>,
    pub eta: Option<f64>,
    pub theta_norm: f64,
    pub context_id: String,
    pub context: String,
    pub exceeds_bound: bool,
    pub update_source: Option<usize>,
    pub dpo: Option<(f64, f64)>,
}

/// Everything a finished episode leaves behind.
#[derive(Debug, Clone)]
pub struct EpisodeOutcome {
    pub variant: Variant,
    pub trace: EpisodeTrace,
    pub records: Vec<StepRecord>,
    /// Affine parameter in force at each step.
    pub thetas: Vec<Vector>,
    pub feats: Vec<ContextFeatures>,
    pub contexts: Vec<String>,
    pub g: Option<f64>,
    pub mixer: Option<AffineMixerParams>,
    pub preferences: Option<PreferenceDataset>,
    pub adapter_fallbacks: usize,
    pub psi_norms: Vec<f64>,
}

impl EpisodeOutcome {
    pub fn total_cost(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.cum_cost)
    }
}

/// Drives one episode step by step; contexts may be overridden per step.
pub struct EpisodeRunner {
    plant: Box<dyn Plant>,
    forecaster: Forecaster,
    variant: Variant,
    k: usize,
    vocab: Vocabulary,
    t: usize,
    x: Vector,
    trace: EpisodeTrace,
    records: Vec<StepRecord>,
    thetas: Vec<Vector>,
    feats: Vec<ContextFeatures>,
    contexts: Vec<String>,
    cum_cost: f64,
    g: Option<f64>,
    template: Option<AffineMixerParams>,
}

fn threshold(cfg: &LearnerConfig, horizon: usize) -> usize {
    cfg.dpo_threshold.unwrap_or(if horizon > 1000 {
        PreferenceDataset::ENERGY_THRESHOLD
    } else {
        PreferenceDataset::ROBOT_THRESHOLD
    })
}

impl EpisodeRunner {
    pub fn new(plant: Box<dyn Plant>, variant: Variant, learner: &LearnerConfig, k: usize) -> Result<Self> {
        learner.validate()?;
        if k == 0 {
            return Err(Error::InvalidParameter("k must be at least 1".into()));
        }
        let lib = plant.library().clone();
        let vocab = lib.vocabulary();
        let horizon = plant.horizon();
        let learn = variant == Variant::Tuned && learner.tuner != TunerChoice::Frozen;
        let mut g_used = None;
        let mut template = None;
        let prefs = || -> Result<PreferenceLoop> {
            Ok(PreferenceLoop { book: WindowBook::default(), dataset: PreferenceDataset::new(threshold(learner, horizon))? })
        };
        let forecaster = match (&learner.model, variant) {
            (_, Variant::Classic) => Forecaster::Zero,
            (ModelChoice::Affine, _) => {
                let params = prior_mixer(&lib, learner.prior_gain, learner.diameter)?;
                template = Some(params.clone());
                let tuner = if learn {
                    let g = match learner.g {
                        Some(g) => g,
                        None => estimate_plant_g(plant.as_ref(), &params, &vocab, k)?,
                    };
                    g_used = Some(g);
                    Some(TunerState::new(params.clone(), lib.n(), k, g, learner.projection)?)
                } else {
                    None
                };
                Forecaster::Affine { params, tuner }
            }
            (ModelChoice::Softmax, _) => {
                let scorer = prior_scorer(&lib, learner.softmax_gain);
                Forecaster::Softmax {
                    reference: scorer.clone(),
                    scorer,
                    prefs: if learn { Some(prefs()?) } else { None },
                    beta: learner.beta,
                    step: learner.dpo_step,
                }
            }
            (ModelChoice::External { command, timeout_ms }, _) => {
                let mut client = ExternalPredictorClient::spawn(command, Duration::from_millis(*timeout_ms))?;
                client.handshake(&lib.ids(), k)?;
                Forecaster::External {
                    client: Box::new(client),
                    prefs: if learn { Some(prefs()?) } else { None },
                    fallbacks: 0,
                }
            }
        };
        let x = plant.x0();
        Ok(EpisodeRunner {
            trace: EpisodeTrace::new(k, x.clone()),
            plant,
            forecaster,
            variant,
            k,
            vocab,
            t: 0,
            x,
            records: Vec::with_capacity(horizon),
            thetas: Vec::with_capacity(horizon),
            feats: Vec::with_capacity(horizon),
            contexts: Vec::with_capacity(horizon),
            cum_cost: 0.0,
            g: g_used,
            template,
        })
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn horizon(&self) -> usize {
        self.plant.horizon()
    }

    pub fn is_done(&self) -> bool {
        self.t >= self.plant.horizon()
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn scripted_context(&self) -> Option<String> {
        (!self.is_done()).then(|| self.plant.context(self.t))
    }

    pub fn display_state(&self) -> Vector {
        self.plant.display_state(&self.x)
    }

    pub fn library(&self) -> &ScenarioLibrary {
        self.plant.library()
    }

    /// Advances one control step, using `context` instead of the scripted
    /// text when given.
    pub fn step(&mut self, context: Option<&str>) -> Result<&StepRecord> {
        if self.is_done() {
            return Err(Error::InvalidParameter("episode already finished".into()));
        }
        let t = self.t;
        let horizon = self.plant.horizon();
        let text = context.map_or_else(|| self.plant.context(t), str::to_string);
        let feats = featurize(&text, &self.vocab);
        let t_end = window_end(t, self.k, horizon);
        let sol = self.plant.solution().clone();
        let lib = self.plant.library().clone();
        let (weights, theta_norm) = self.weights(t, &text, &feats)?;
        let window = match &weights {
            None => PredictionWindow::zeros(t, self.k, horizon, sol.n()),
            Some(p) => predict_window(p, &lib, t, self.k, horizon)?,
        };
        if let Forecaster::Affine { tuner: Some(tuner), .. } = &mut self.forecaster {
            tuner.begin_step(t, t_end, feats.clone(), text.clone())?;
        }
        let u = mpc_action(&sol, &self.x, &window)?;
        let tr = self.plant.apply(t, &self.x, u)?;
        let display = self.plant.display_state(&self.x);
        self.trace.record(sol.model(), tr.u.clone(), tr.w.clone(), window.what.clone(), feats.context_id.clone(), tr.x_next.clone());
        let learned = self.learn(t, t_end, &text, &feats, &tr.w, &sol, &lib)?;
        self.cum_cost += tr.cost;
        let record = StepRecord {
            t,
            x: self.x.iter().copied().collect(),
            display: display.iter().copied().collect(),
            u: tr.u.iter().copied().collect(),
            w: tr.w.iter().copied().collect(),
            what: (0..window.len()).map(|j| window.what.row(j).iter().copied().collect()).collect(),
            weights: weights.map(|p| p.iter().copied().collect()).unwrap_or_default(),
            stage_cost: tr.cost,
            cum_cost: self.cum_cost,
            loss: learned.loss,
            eta: learned.eta,
            theta_norm,
            context_id: feats.context_id.clone(),
            context: text.clone(),
            exceeds_bound: window.exceeds_bound,
            update_source: learned.source,
            dpo: learned.dpo,
        };
        self.x = tr.x_next;
        self.feats.push(feats);
        self.contexts.push(text);
        self.records.push(record);
        self.t += 1;
        Ok(self.records.last().expect("just pushed"))
    }

    fn weights(&mut self, t: usize, text: &str, feats: &ContextFeatures) -> Result<(Option<Vector>, f64)> {
        let n_scen = self.plant.library().len();
        Ok(match &mut self.forecaster {
            Forecaster::Zero => (None, 0.0),
            Forecaster::Affine { params, tuner } => {
                let current = match tuner {
                    Some(tuner) => tuner.params.clone(),
                    None => params.clone(),
                };
                let theta = current.theta_vec();
                self.thetas.push(theta.clone());
                (Some(scenario_weights_affine(&current, feats)?), theta.norm())
            }
            Forecaster::Softmax { scorer, .. } => (Some(scenario_weights_softmax(scorer, feats)?), scorer.norm()),
            Forecaster::External { client, fallbacks, .. } => {
                let p = match client.predict(t, text, self.k) {
                    Ok(p) => p,
                    Err(e) => {
                        log::warn!("adapter prediction failed at step {t}: {e}; using uniform weights");
                        *fallbacks += 1;
                        Vector::from_element(n_scen, 1.0 / n_scen as f64)
                    }
                };
                (Some(p), 0.0)
            }
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn learn(
        &mut self,
        t: usize,
        t_end: usize,
        text: &str,
        feats: &ContextFeatures,
        w: &Vector,
        sol: &RiccatiSolution,
        lib: &ScenarioLibrary,
    ) -> Result<Learned> {
        let mut out = Learned::default();
        match &mut self.forecaster {
            Forecaster::Zero => {}
            Forecaster::Affine { tuner, .. } => {
                if let Some(tuner) = tuner {
                    if let Some(rec) = tuner.finish_step(t, w, sol, lib)? {
                        out.loss = Some(rec.loss);
                        out.eta = Some(rec.eta);
                        out.source = Some(rec.source);
                    }
                }
            }
            Forecaster::Softmax { scorer, reference, prefs, beta, step } => {
                if let Some(batch) = collect(prefs, t, t_end, text, feats, w, lib)? {
                    let pairs = batch
                        .iter()
                        .map(|item| resolve_pair(item, lib, &self.vocab))
                        .collect::<Result<Vec<_>>>()?;
                    let outcome = dpo_update(scorer, reference, &pairs, *beta, *step)?;
                    *scorer = outcome.scorer;
                    out.dpo = Some((outcome.loss_before, outcome.loss_after));
                    out.loss = Some(outcome.loss_after);
                }
            }
            Forecaster::External { client, prefs, fallbacks } => {
                if let Some(batch) = collect(prefs, t, t_end, text, feats, w, lib)? {
                    let items = batch
                        .into_iter()
                        .map(|i| FeedbackItem { context: i.context, winner: i.winner, loser: i.loser })
                        .collect();
                    match client.feedback(items).and_then(|_| client.update()) {
                        Ok((before, after)) => {
                            out.dpo = Some((before, after));
                            out.loss = Some(after);
                        }
                        Err(e) => {
                            log::warn!("adapter update failed at step {t}: {e}");
                            *fallbacks += 1;
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Completes the remaining steps with scripted contexts.
    pub fn run_to_end(&mut self) -> Result<()> {
        while !self.is_done() {
            self.step(None)?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<EpisodeOutcome> {
        self.run_to_end()?;
        let sol = self.plant.solution();
        let (psi, _) = cost_gap_psi(sol, &self.trace.windows, &self.trace.disturbances)?;
        let (preferences, adapter_fallbacks) = match self.forecaster {
            Forecaster::Softmax { prefs, .. } => (prefs.map(|p| p.dataset), 0),
            Forecaster::External { prefs, fallbacks, .. } => (prefs.map(|p| p.dataset), fallbacks),
            _ => (None, 0),
        };
        Ok(EpisodeOutcome {
            variant: self.variant,
            psi_norms: psi.iter().map(|p| p.norm()).collect(),
            trace: self.trace,
            records: self.records,
            thetas: self.thetas,
            feats: self.feats,
            contexts: self.contexts,
            g: self.g,
            mixer: self.template,
            preferences,
            adapter_fallbacks,
        })
    }
}

#[derive(Default)]
struct Learned {
    loss: Option<f64>,
    eta: Option<f64>,
    source: Option<usize>,
    dpo: Option<(f64, f64)>,
}

fn collect(
    prefs: &mut Option<PreferenceLoop>,
    t: usize,
    t_end: usize,
    text: &str,
    feats: &ContextFeatures,
    w: &Vector,
    lib: &ScenarioLibrary,
) -> Result<Option<Vec<crate::tuner::PreferenceItem>>> {
    let Some(p) = prefs else { return Ok(None) };
    p.book.open(LossWindow::new(t, t_end, feats.clone(), text.to_string(), lib.n()));
    for start in p.book.observe(t, w) {
        let window = p.book.take(start).expect("completed window present");
        p.dataset.extend(build_preferences(&window, lib)?);
    }
    Ok(p.dataset.batch_ready().then(|| p.dataset.take_batch()))
}

fn resolve_pair(item: &crate::tuner::PreferenceItem, lib: &ScenarioLibrary, vocab: &Vocabulary) -> Result<PreferencePair> {
    let index = |id: &str| lib.index_of(id).ok_or_else(|| Error::Library(format!("unknown scenario `{id}`")));
    Ok(PreferencePair { feats: featurize(&item.context, vocab), winner: index(&item.winner)?, loser: index(&item.loser)? })
}

/// Gradient bound from the scripted contexts and the plant's nominal
/// disturbances, before the run starts.
fn estimate_plant_g(plant: &dyn Plant, params: &AffineMixerParams, vocab: &Vocabulary, k: usize) -> Result<f64> {
    let horizon = plant.horizon();
    let ep = AffineEpisode {
        sol: plant.solution(),
        lib: plant.library(),
        params,
        x0: plant.x0(),
        disturbances: plant.nominal_disturbances(),
        feats: (0..horizon).map(|t| featurize(&plant.context(t), vocab)).collect(),
        k,
    };
    let g = estimate_g(&PsiModel::build(&ep)?);
    Ok(g.max(1e-9))
}

/// Runs a whole episode with scripted contexts.
pub fn run_episode(plant: Box<dyn Plant>, variant: Variant, learner: &LearnerConfig, k: usize) -> Result<EpisodeOutcome> {
    EpisodeRunner::new(plant, variant, learner, k)?.finish()
}
