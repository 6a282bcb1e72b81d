use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};
use crate::sims::astroid_target;

use super::Vocabulary;

/// On-disk description of a trajectory bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TrajectorySpec {
    Constant {
        value: Vec<f64>,
    },
    /// Row `t mod rows.len()` is the disturbance at step `t`.
    Table {
        rows: Vec<Vec<f64>>,
    },
    Procedural {
        generator: String,
        #[serde(default)]
        params: serde_json::Value,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub id: String,
    pub label: String,
    #[serde(default)]
    pub keywords: Vec<String>,
    pub trajectory: TrajectorySpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LibrarySpec {
    n: usize,
    scenarios: Vec<ScenarioSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    default: Option<String>,
}

/// Named procedural generators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    /// Target drift `[y_τ − y_{τ+1}; 0; 0]` of the astroid path.
    AstroidDrift { scale: f64, freq: f64 },
    /// Astroid drift plus a velocity impulse at the listed steps
    /// (optionally repeating with `period`).
    AstroidGust {
        scale: f64,
        freq: f64,
        gust_steps: Vec<usize>,
        #[serde(default)]
        period: Option<usize>,
        velocity: [f64; 2],
    },
}

impl Generator {
    fn parse(name: &str, params: &serde_json::Value) -> Result<Self> {
        let tagged = serde_json::json!({ name: params });
        serde_json::from_value(tagged)
            .map_err(|e| Error::Library(format!("procedural generator `{name}`: {e}")))
    }

    fn name_and_params(&self) -> (String, serde_json::Value) {
        let value = serde_json::to_value(self).expect("generator serializes");
        let (name, params) = value
            .as_object()
            .and_then(|o| o.iter().next())
            .map(|(k, v)| (k.clone(), v.clone()))
            .expect("externally tagged enum");
        (name, params)
    }

    fn dim(&self) -> usize {
        4
    }

    fn row(&self, tau: usize) -> Vector {
        match self {
            Generator::AstroidDrift { scale, freq } => drift(tau, *scale, *freq),
            Generator::AstroidGust { scale, freq, gust_steps, period, velocity } => {
                let mut row = drift(tau, *scale, *freq);
                let phase = period.map_or(tau, |p| tau % p);
                if gust_steps.contains(&phase) {
                    row[2] += velocity[0];
                    row[3] += velocity[1];
                }
                row
            }
        }
    }
}

fn drift(tau: usize, scale: f64, freq: f64) -> Vector {
    let y0 = astroid_target(tau as f64, scale, freq);
    let y1 = astroid_target(tau as f64 + 1.0, scale, freq);
    Vector::from_vec(vec![y0[0] - y1[0], y0[1] - y1[1], 0.0, 0.0])
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrajectoryBank {
    Constant(Vector),
    Table(Vec<Vector>),
    Procedural(Generator),
}

fn clip(mut row: Vector, bound: f64) -> Vector {
    let norm = row.norm();
    if norm > bound {
        row *= bound / norm;
    }
    row
}

impl TrajectoryBank {
    fn from_spec(spec: &TrajectorySpec, n: usize, bound: f64) -> Result<Self> {
        let check = |len: usize| {
            if len != n {
                Err(Error::Library(format!("trajectory row has {len} entries, expected {n}")))
            } else {
                Ok(())
            }
        };
        Ok(match spec {
            TrajectorySpec::Constant { value } => {
                check(value.len())?;
                TrajectoryBank::Constant(clip(Vector::from_vec(value.clone()), bound))
            }
            TrajectorySpec::Table { rows } => {
                if rows.is_empty() {
                    return Err(Error::Library("table trajectory has no rows".into()));
                }
                let mut out = Vec::with_capacity(rows.len());
                for row in rows {
                    check(row.len())?;
                    out.push(clip(Vector::from_vec(row.clone()), bound));
                }
                TrajectoryBank::Table(out)
            }
            TrajectorySpec::Procedural { generator, params } => {
                let g = Generator::parse(generator, params)?;
                check(g.dim())?;
                TrajectoryBank::Procedural(g)
            }
        })
    }

    fn to_spec(&self) -> TrajectorySpec {
        match self {
            TrajectoryBank::Constant(v) => TrajectorySpec::Constant { value: v.iter().cloned().collect() },
            TrajectoryBank::Table(rows) => TrajectorySpec::Table {
                rows: rows.iter().map(|r| r.iter().cloned().collect()).collect(),
            },
            TrajectoryBank::Procedural(g) => {
                let (generator, params) = g.name_and_params();
                TrajectorySpec::Procedural { generator, params }
            }
        }
    }

    fn row(&self, tau: usize, bound: f64) -> Vector {
        match self {
            TrajectoryBank::Constant(v) => v.clone(),
            TrajectoryBank::Table(rows) => rows[tau % rows.len()].clone(),
            TrajectoryBank::Procedural(g) => clip(g.row(tau), bound),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub id: String,
    pub label: String,
    pub keywords: Vec<String>,
    pub bank: TrajectoryBank,
}

/// Fixed scenario set with per-step trajectory banks, every row clipped to ‖·‖ ≤ W.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioLibrary {
    n: usize,
    w_bound: f64,
    scenarios: Vec<Scenario>,
    default: Option<String>,
}

impl ScenarioLibrary {
    pub fn new(n: usize, w_bound: f64, specs: Vec<ScenarioSpec>, default: Option<String>) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::Library("library needs at least one scenario".into()));
        }
        if !(w_bound > 0.0) {
            return Err(Error::Library("disturbance bound must be positive".into()));
        }
        let mut scenarios: Vec<Scenario> = Vec::with_capacity(specs.len());
        for spec in specs {
            if scenarios.iter().any(|s| s.id == spec.id) {
                return Err(Error::Library(format!("duplicate scenario id `{}`", spec.id)));
            }
            let bank = TrajectoryBank::from_spec(&spec.trajectory, n, w_bound)?;
            scenarios.push(Scenario { id: spec.id, label: spec.label, keywords: spec.keywords, bank });
        }
        if let Some(d) = &default {
            if !scenarios.iter().any(|s| &s.id == d) {
                return Err(Error::Library(format!("default scenario `{d}` is not in the library")));
            }
        }
        Ok(ScenarioLibrary { n, w_bound, scenarios, default })
    }

    pub fn from_json(text: &str, w_bound: f64) -> Result<Self> {
        let spec: LibrarySpec = serde_json::from_str(text)?;
        Self::new(spec.n, w_bound, spec.scenarios, spec.default)
    }

    pub fn to_json(&self) -> String {
        let spec = LibrarySpec {
            n: self.n,
            scenarios: self.specs(),
            default: self.default.clone(),
        };
        serde_json::to_string_pretty(&spec).expect("library serializes")
    }

    pub fn specs(&self) -> Vec<ScenarioSpec> {
        self.scenarios
            .iter()
            .map(|s| ScenarioSpec {
                id: s.id.clone(),
                label: s.label.clone(),
                keywords: s.keywords.clone(),
                trajectory: s.bank.to_spec(),
            })
            .collect()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn w_bound(&self) -> f64 {
        self.w_bound
    }

    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    pub fn scenarios(&self) -> &[Scenario] {
        &self.scenarios
    }

    pub fn ids(&self) -> Vec<String> {
        self.scenarios.iter().map(|s| s.id.clone()).collect()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.scenarios.iter().position(|s| s.id == id)
    }

    /// Scenario that carries the base weight when no keyword fires.
    pub fn default_index(&self) -> Option<usize> {
        self.default.as_deref().and_then(|d| self.index_of(d))
    }

    /// Bias slot followed by every scenario keyword, in library order.
    pub fn vocabulary(&self) -> Vocabulary {
        Vocabulary::new(self.scenarios.iter().flat_map(|s| s.keywords.iter()))
    }

    /// `w^s_{t : t+len−1}` as a `len × n` matrix.
    pub fn bank(&self, s: usize, t: usize, len: usize) -> Mat {
        let bank = &self.scenarios[s].bank;
        let mut out = Mat::zeros(len, self.n);
        for j in 0..len {
            out.set_row(j, &bank.row(t + j, self.w_bound).transpose());
        }
        out
    }

    pub fn banks(&self, t: usize, len: usize) -> Vec<Mat> {
        (0..self.len()).map(|s| self.bank(s, t, len)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DOC: &str = r#"{
        "n": 2,
        "default": "calm",
        "scenarios": [
            {"id": "calm", "label": "Calm", "keywords": ["calm"],
             "trajectory": {"kind": "constant", "value": [0.0, 0.0]}},
            {"id": "cycle", "label": "Cycle", "keywords": ["cycle"],
             "trajectory": {"kind": "table", "rows": [[1.0, 0.0], [0.0, 1.0], [30.0, 40.0]]}}
        ]
    }"#;

    #[test]
    fn table_indexed_modulo_period_and_clipped() {
        let lib = ScenarioLibrary::from_json(DOC, 10.0).unwrap();
        let bank = lib.bank(1, 1, 4);
        assert_eq!(bank.row(0).iter().cloned().collect::<Vec<_>>(), vec![0.0, 1.0]);
        // [30, 40] has norm 50 → clipped to 10
        assert!((bank.row(1).norm() - 10.0).abs() < 1e-12);
        assert_eq!(bank.row(2).iter().cloned().collect::<Vec<_>>(), vec![1.0, 0.0]);
        assert_eq!(lib.default_index(), Some(0));
    }

    #[test]
    fn rejects_duplicate_ids_and_bad_widths() {
        let dup = DOC.replace("\"cycle\", \"label\"", "\"calm\", \"label\"");
        assert!(ScenarioLibrary::from_json(&dup, 1.0).is_err());
        let bad = DOC.replace("[0.0, 0.0]", "[0.0]");
        assert!(ScenarioLibrary::from_json(&bad, 1.0).is_err());
    }

    #[test]
    fn procedural_round_trip() {
        let doc = r#"{"n": 4, "scenarios": [
            {"id": "g", "label": "Gust", "keywords": [],
             "trajectory": {"kind": "procedural", "generator": "astroid_gust",
                "params": {"scale": 2.0, "freq": 0.0261780104712042, "gust_steps": [3], "period": 10, "velocity": [1.0, -1.0]}}}
        ]}"#;
        let lib = ScenarioLibrary::from_json(doc, 100.0).unwrap();
        let again = ScenarioLibrary::from_json(&lib.to_json(), 100.0).unwrap();
        assert_eq!(lib, again);
        let bank = lib.bank(0, 0, 14);
        assert_eq!(bank[(3, 2)], 1.0);
        assert_eq!(bank[(13, 3)], -1.0);
        assert_eq!(bank[(4, 2)], 0.0);
    }

    #[test]
    fn unknown_generator_rejected() {
        let doc = r#"{"n": 4, "scenarios": [{"id": "g", "label": "", "trajectory": {"kind": "procedural", "generator": "nope", "params": {}}}]}"#;
        assert!(ScenarioLibrary::from_json(doc, 1.0).is_err());
    }
}
