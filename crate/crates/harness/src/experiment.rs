//! Variant × seed experiment runs, summaries, manifests and sweeps.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use instructmpc_core::analysis::{
    hindsight_theta, model_gradient_bound, regret_report, AffineEpisode, BoundConstants, PsiModel, RegretReport,
};
use instructmpc_core::sims::{
    EpisodeOutcome, EpisodeRunner, ModelChoice, Plant, TunerChoice, Variant,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ConfigError, PresetName, RunConfig};
use crate::trace::{trace_bytes, TRACE_VERSION};

/// Largest k listed in the corollary bound table of each regret report.
pub const BOUND_TABLE_K: usize = 10;

/// One operator instruction, applied as the context of step `t`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instruction {
    pub t: usize,
    pub text: String,
}

/// Reads a JSON-lines instruction log; a later entry for the same step wins.
pub fn read_instructions(path: &Path) -> Result<BTreeMap<usize, String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_instructions(&text)
}

pub fn parse_instructions(text: &str) -> Result<BTreeMap<usize, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let entry: Instruction = serde_json::from_str(line).with_context(|| format!("instruction log line {}", i + 1))?;
        out.insert(entry.t, entry.text);
    }
    Ok(out)
}

/// Runs one episode, replacing scripted contexts with `overrides`.
pub fn run_one(cfg: &RunConfig, variant: Variant, seed: u64, overrides: &BTreeMap<usize, String>) -> Result<EpisodeOutcome> {
    let plant = cfg.plant(seed)?;
    let k = cfg.resolve_k(plant.as_ref())?;
    let mut runner = EpisodeRunner::new(plant, variant, &cfg.learner()?, k)?;
    while !runner.is_done() {
        let t = runner.t();
        runner.step(overrides.get(&t).map(String::as_str))?;
    }
    Ok(runner.finish()?)
}

/// Whether the run fits the theory configuration that regret reports cover.
pub fn reports_regret(cfg: &RunConfig, variant: Variant) -> bool {
    variant == Variant::Tuned
        && cfg.preset != PresetName::Energy
        && cfg.learner.tuner == TunerChoice::TailoredOgd
        && matches!(cfg.learner().map(|l| l.model), Ok(ModelChoice::Affine))
}

/// Regret against the best fixed parameter in hindsight, with bound terms.
pub fn tuned_regret(plant: &dyn Plant, out: &EpisodeOutcome, k: usize) -> Result<RegretReport> {
    let params = out.mixer.as_ref().ok_or_else(|| anyhow!("episode has no affine mixer"))?;
    let g = out.g.ok_or_else(|| anyhow!("episode has no gradient bound"))?;
    let ep = AffineEpisode {
        sol: plant.solution(),
        lib: plant.library(),
        params,
        x0: out.trace.states[0].clone(),
        disturbances: out.trace.disturbances.clone(),
        feats: out.feats.clone(),
        k,
    };
    let model = PsiModel::build(&ep)?;
    let star = hindsight_theta(&model)?;
    let l = model_gradient_bound(plant.library(), plant.horizon()).max(f64::MIN_POSITIVE);
    let constants = BoundConstants::new(plant.solution(), 2.0 * params.radius(), g, l, plant.library().w_bound())?;
    Ok(regret_report(&ep, &model, &out.thetas, &star.theta_vec(), &constants, BOUND_TABLE_K)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub costs: Vec<f64>,
    pub mean: f64,
    /// Sample variance (n − 1 denominator); 0 for a single seed.
    pub variance: f64,
    pub display_min: f64,
    pub display_max: f64,
    pub adapter_fallbacks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretSummary {
    pub seed: u64,
    pub regret: f64,
    pub theorem1_rhs: f64,
    pub sum_ld: f64,
    pub j_alg: f64,
    pub j_hindsight: f64,
    pub j_star: f64,
    pub report: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub preset: PresetName,
    pub horizon: usize,
    pub k: usize,
    pub seeds: Vec<u64>,
    pub master_seed: u64,
    pub variants: BTreeMap<String, VariantSummary>,
    pub regret: Vec<RegretSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub variant: Variant,
    pub seed: u64,
    pub file: String,
    pub sha256: String,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub status: String,
    pub trace_version: u32,
    pub config: String,
    pub traces: Vec<TraceEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<String>,
}

pub fn mean_and_variance(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let variance = if xs.len() < 2 {
        0.0
    } else {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
    };
    (mean, variance)
}

/// The episode failures behind a nonzero exit; a partial manifest is on disk.
#[derive(Debug, thiserror::Error)]
#[error("{} episode(s) failed; partial manifest written to {manifest}", errors.len())]
pub struct ExperimentFailure {
    pub errors: Vec<String>,
    pub manifest: PathBuf,
}

pub fn seed_list(cfg: &RunConfig, only: Option<u64>) -> Vec<u64> {
    match only {
        Some(s) => vec![s],
        None => (0..cfg.seed_count() as u64).collect(),
    }
}

struct Finished {
    variant: Variant,
    seed: u64,
    outcome: EpisodeOutcome,
    regret: Option<RegretReport>,
}

fn run_cell(cfg: &RunConfig, variant: Variant, seed: u64, overrides: &BTreeMap<usize, String>) -> Result<Finished> {
    let outcome = run_one(cfg, variant, seed, overrides).with_context(|| format!("{} seed {seed}", variant.name()))?;
    let regret = if reports_regret(cfg, variant) {
        let plant = cfg.plant(seed)?;
        let k = cfg.resolve_k(plant.as_ref())?;
        Some(tuned_regret(plant.as_ref(), &outcome, k).with_context(|| format!("regret for seed {seed}"))?)
    } else {
        None
    };
    Ok(Finished { variant, seed, outcome, regret })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Runs every (variant × seed) episode and writes traces, regret reports,
/// `summary.json` and `manifest.json` under `out`.
pub fn run_experiment(cfg: &RunConfig, only_seed: Option<u64>, out: &Path) -> Result<Summary> {
    let overrides = match &cfg.instructions {
        Some(p) => read_instructions(p)?,
        None => BTreeMap::new(),
    };
    let seeds = seed_list(cfg, only_seed);
    let cells: Vec<(Variant, u64)> = cfg.variants.iter().flat_map(|v| seeds.iter().map(move |s| (*v, *s))).collect();
    let results = instructmpc_core::par::map(&cells, |(v, s)| run_cell(cfg, *v, *s, &overrides));

    fs::create_dir_all(out.join("traces"))?;
    let mut manifest = Manifest {
        status: "complete".into(),
        trace_version: TRACE_VERSION,
        config: cfg.to_toml(),
        traces: Vec::new(),
        errors: Vec::new(),
    };
    let mut finished = Vec::new();
    for r in results {
        match r {
            Ok(f) => {
                let file = format!("traces/{}_seed{}.csv", f.variant.name(), f.seed);
                let bytes = trace_bytes(&f.outcome);
                fs::write(out.join(&file), &bytes)?;
                manifest.traces.push(TraceEntry {
                    variant: f.variant,
                    seed: f.seed,
                    file,
                    sha256: hex(&Sha256::digest(&bytes)),
                    rows: f.outcome.records.len(),
                });
                finished.push(f);
            }
            Err(e) => manifest.errors.push(format!("{e:#}")),
        }
    }
    if !manifest.errors.is_empty() {
        manifest.status = "failed".into();
        let path = out.join("manifest.json");
        write_json(&path, &manifest)?;
        return Err(ExperimentFailure { errors: manifest.errors, manifest: path }.into());
    }

    let first = finished.first().ok_or_else(|| anyhow!("no episodes configured"))?;
    let horizon = first.outcome.records.len();
    let plant = cfg.plant(first.seed)?;
    let k = cfg.resolve_k(plant.as_ref())?;
    let mut variants = BTreeMap::new();
    for v in &cfg.variants {
        let runs: Vec<&Finished> = finished.iter().filter(|f| f.variant == *v).collect();
        let costs: Vec<f64> = runs.iter().map(|f| f.outcome.total_cost()).collect();
        let (mean, variance) = mean_and_variance(&costs);
        let display = runs.iter().flat_map(|f| f.outcome.records.iter().flat_map(|r| r.display.iter().copied()));
        let (display_min, display_max) = display.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| (lo.min(d), hi.max(d)));
        variants.insert(
            v.name().to_string(),
            VariantSummary {
                costs,
                mean,
                variance,
                display_min,
                display_max,
                adapter_fallbacks: runs.iter().map(|f| f.outcome.adapter_fallbacks).sum(),
            },
        );
    }
    let mut regret = Vec::new();
    if finished.iter().any(|f| f.regret.is_some()) {
        fs::create_dir_all(out.join("reports"))?;
    }
    for f in &finished {
        if let Some(r) = &f.regret {
            let report = format!("reports/{}_seed{}.json", f.variant.name(), f.seed);
            write_json(&out.join(&report), r)?;
            regret.push(RegretSummary {
                seed: f.seed,
                regret: r.regret,
                theorem1_rhs: r.theorem1_rhs,
                sum_ld: r.sum_ld,
                j_alg: r.j_alg,
                j_hindsight: r.j_hindsight,
                j_star: r.j_star,
                report,
            });
        }
    }
    let summary = Summary {
        preset: cfg.preset,
        horizon,
        k,
        seeds,
        master_seed: cfg.master_seed,
        variants,
        regret,
    };
    write_json(&out.join("summary.json"), &summary)?;
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(summary)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Expands `key=a..b` (inclusive integers) or `key=v1,v2,...`.
pub fn parse_sweep(spec: &str) -> Result<(String, Vec<toml::Value>), ConfigError> {
    let (key, values) = spec
        .split_once('=')
        .ok_or_else(|| ConfigError::new("--param", "expected KEY=VALUES"))?;
    let key = key.trim().to_string();
    let bad = |m: String| ConfigError::new("--param", m);
    let values = if let Some((a, b)) = values.split_once("..") {
        let a: i64 = a.trim().parse().map_err(|_| bad(format!("bad range start `{a}`")))?;
        let b: i64 = b.trim().parse().map_err(|_| bad(format!("bad range end `{b}`")))?;
        if b < a {
            return Err(bad(format!("empty range {a}..{b}")));
        }
        (a..=b).map(toml::Value::Integer).collect()
    } else {
        values
            .split(',')
            .map(|v| {
                let v = v.trim();
                v.parse::<i64>()
                    .map(toml::Value::Integer)
                    .or_else(|_| v.parse::<f64>().map(toml::Value::Float))
                    .or_else(|_| Ok::<_, ConfigError>(toml::Value::String(v.to_string())))
            })
            .collect::<Result<Vec<_>, _>>()?
    };
    if key.is_empty() || values.is_empty() {
        return Err(bad("expected KEY=VALUES".into()));
    }
    Ok((key, values))
}

/// Returns a copy of the config with the dotted `key` set to `value`,
/// re-parsed and validated.
pub fn with_param(cfg: &RunConfig, key: &str, value: &toml::Value) -> Result<RunConfig, ConfigError> {
    let mut doc: toml::Table = toml::from_str(&cfg.to_toml()).map_err(|e| ConfigError::new(key, e.to_string()))?;
    let parts: Vec<&str> = key.split('.').collect();
    let mut table = &mut doc;
    for p in &parts[..parts.len() - 1] {
        table = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| ConfigError::new(key, format!("`{p}` is not a section")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value.clone());
    if parts == ["horizon"] {
        if let Some(t) = doc.get_mut("robot").and_then(|r| r.as_table_mut()) {
            t.remove("horizon");
        }
        if let Some(t) = doc.get_mut("energy").and_then(|r| r.as_table_mut()) {
            t.remove("days");
        }
    }
    let next = crate::config::parse_config(&toml::to_string(&doc).expect("table serializes"))?;
    next.validate()?;
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: toml::Value,
    pub dir: String,
    pub means: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub param: String,
    pub points: Vec<SweepPoint>,
}

fn value_label(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Runs one experiment per parameter value under `out/{key}={value}/`.
pub fn sweep(cfg: &RunConfig, spec: &str, seeds: Option<usize>, out: &Path) -> Result<SweepSummary> {
    let (key, values) = parse_sweep(spec)?;
    let mut base = cfg.clone();
    if let Some(s) = seeds {
        if s == 0 {
            bail!(ConfigError::new("--seeds", "must be at least 1"));
        }
        base.seeds = Some(s);
    }
    let mut points = Vec::new();
    for value in values {
        let run = with_param(&base, &key, &value)?;
        let dir = format!("{key}={}", value_label(&value));
        let summary = run_experiment(&run, None, &out.join(&dir))?;
        let means = summary.variants.iter().map(|(k, v)| (k.clone(), v.mean)).collect();
        points.push(SweepPoint { value, dir, means });
    }
    let summary = SweepSummary { param: key, points };
    fs::create_dir_all(out)?;
    write_json(&out.join("sweep.json"), &summary)?;
    Ok(summary)
}
