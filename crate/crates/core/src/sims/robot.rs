use rand::Rng;
use serde::{Deserialize, Serialize};

use super::context::{ContextEvent, ContextStream};
use super::plant::LinearPlant;
use crate::control::{solve_dare_default, RiccatiSolution, SystemModel};
use crate::error::{Error, Result};
use crate::l2d::{Generator, ScenarioLibrary, ScenarioSpec, TrajectorySpec};
use crate::linalg::{from_rows, Mat, Vector};

pub const GUST_STEPS: [usize; 10] = [20, 25, 32, 35, 40, 84, 133, 145, 158, 215];
pub const CALM_TEXT: &str = "calm conditions with a light breeze";
const DIRECTIONS: [(&str, f64, f64); 4] =
    [("northeast", 1.0, 1.0), ("northwest", -1.0, 1.0), ("southeast", 1.0, -1.0), ("southwest", -1.0, -1.0)];

/// `(scale·sin³(freq·t), scale·cos³(freq·t))`.
pub fn astroid_target(t: f64, scale: f64, freq: f64) -> [f64; 2] {
    [scale * (freq * t).sin().powi(3), scale * (freq * t).cos().powi(3)]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotScenario {
    pub horizon: usize,
    pub gust_steps: Vec<usize>,
    /// The gust pattern repeats with this period on longer horizons.
    pub gust_period: usize,
    pub gust_range: f64,
    pub calm_range: f64,
    pub coupling: f64,
    pub scale: f64,
    pub freq: f64,
    pub lead: usize,
    /// When false the stream carries only calm text and warnings must come
    /// from an operator.
    pub scripted_warnings: bool,
}

impl Default for RobotScenario {
    fn default() -> Self {
        RobotScenario {
            horizon: 240,
            gust_steps: GUST_STEPS.to_vec(),
            gust_period: 240,
            gust_range: 45.0,
            calm_range: 2.0,
            coupling: 0.2,
            scale: 2.0,
            freq: 1.0 / 38.2,
            lead: 2,
            scripted_warnings: true,
        }
    }
}

/// `A = [[I, 0.2I], [0, I]]`, `B = [0; 0.2I]`, `Q = diag(1,1,0,0)`, `R = 10⁻²I`.
pub fn robot_matrices() -> (Mat, Mat, Mat, Mat) {
    let a = from_rows(&[
        vec![1.0, 0.0, 0.2, 0.0],
        vec![0.0, 1.0, 0.0, 0.2],
        vec![0.0, 0.0, 1.0, 0.0],
        vec![0.0, 0.0, 0.0, 1.0],
    ]);
    let b = from_rows(&[vec![0.0, 0.0], vec![0.0, 0.0], vec![0.2, 0.0], vec![0.0, 0.2]]);
    let q = Mat::from_diagonal(&Vector::from_vec(vec![1.0, 1.0, 0.0, 0.0]));
    let r = Mat::identity(2, 2) * 1e-2;
    (a, b, q, r)
}

fn embed(y: [f64; 2]) -> Vector {
    Vector::from_vec(vec![y[0], y[1], 0.0, 0.0])
}

impl RobotScenario {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("gust_range", self.gust_range),
            ("calm_range", self.calm_range),
            ("coupling", self.coupling),
            ("freq", self.freq),
        ];
        for (key, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("robot.{key} must be positive (got {v})")));
            }
        }
        if self.scale < 0.0 {
            return Err(Error::InvalidParameter("robot.scale must be nonnegative".into()));
        }
        if self.horizon == 0 || self.gust_period == 0 {
            return Err(Error::InvalidParameter("robot.horizon and robot.gust_period must be positive".into()));
        }
        if let Some(s) = self.gust_steps.iter().find(|s| **s >= self.gust_period) {
            return Err(Error::InvalidParameter(format!("robot.gust_steps entry {s} outside the gust period")));
        }
        Ok(())
    }

    pub fn target(&self, t: usize) -> [f64; 2] {
        astroid_target(t as f64, self.scale, self.freq)
    }

    pub fn is_gust(&self, t: usize) -> bool {
        self.gust_steps.contains(&(t % self.gust_period))
    }

    /// Gust steps below the horizon.
    pub fn gust_schedule(&self) -> Vec<usize> {
        (0..self.horizon).filter(|t| self.is_gust(*t)).collect()
    }

    fn max_drift(&self) -> f64 {
        let period = (2.0 * std::f64::consts::PI / self.freq).ceil() as usize + 1;
        (0..=self.horizon.max(period))
            .map(|t| {
                let (y0, y1) = (self.target(t), self.target(t + 1));
                ((y0[0] - y1[0]).powi(2) + (y0[1] - y1[1]).powi(2)).sqrt()
            })
            .fold(0.0, f64::max)
    }

    /// `W = √(max‖drift‖² + 2(coupling·gust_range)²)`: drift and wind act
    /// on disjoint coordinates.
    pub fn w_bound(&self) -> f64 {
        let wind = self.coupling * self.gust_range.max(self.calm_range);
        (self.max_drift().powi(2) + 2.0 * wind * wind).sqrt()
    }

    pub fn model(&self) -> Result<SystemModel> {
        let (a, b, q, r) = robot_matrices();
        SystemModel::new(a, b, q, r, self.w_bound())
    }

    /// Deviation state at the target with velocity matched to the target's
    /// first step.
    pub fn x0(&self) -> Vector {
        let (y0, y1) = (self.target(0), self.target(1));
        Vector::from_vec(vec![0.0, 0.0, (y1[0] - y0[0]) / 0.2, (y1[1] - y0[1]) / 0.2])
    }

    /// Average wind velocity magnitude per axis on gust steps.
    pub fn gust_velocity(&self) -> f64 {
        self.coupling * self.gust_range / 2.0
    }

    /// Calm drift scenario (the default) plus one gust scenario per diagonal
    /// direction.
    pub fn library(&self) -> Result<ScenarioLibrary> {
        let mut specs = vec![ScenarioSpec {
            id: "calm".into(),
            label: "Calm, target drift only".into(),
            keywords: vec!["calm".into(), "breeze".into()],
            trajectory: procedural(&Generator::AstroidDrift { scale: self.scale, freq: self.freq }),
        }];
        let v = self.gust_velocity();
        for (word, sx, sy) in DIRECTIONS {
            specs.push(ScenarioSpec {
                id: format!("gust_{}", abbreviation(word)),
                label: format!("Gust pushing {word}"),
                keywords: vec![word.into()],
                trajectory: procedural(&Generator::AstroidGust {
                    scale: self.scale,
                    freq: self.freq,
                    gust_steps: self.gust_steps.clone(),
                    period: Some(self.gust_period),
                    velocity: [sx * v, sy * v],
                }),
            });
        }
        ScenarioLibrary::new(4, self.w_bound(), specs, Some("calm".into()))
    }

    /// Warnings naming the push direction of each realized gust, shown `lead`
    /// steps ahead.
    pub fn contexts(&self, winds: &[[f64; 2]]) -> ContextStream {
        let schedule = if self.scripted_warnings { self.gust_schedule() } else { Vec::new() };
        let events = schedule
            .into_iter()
            .map(|t| ContextEvent {
                t_fire: t,
                lead: self.lead,
                text: format!("strong wind toward the {} expected {{when}}", push_direction(winds[t])),
                hint: Some(format!("gust_{}", abbreviation(push_direction(winds[t])))),
            })
            .collect();
        ContextStream::new(events, CALM_TEXT)
    }

    /// Realized disturbances, wind draws and contexts for one episode.
    pub fn generate<R: Rng>(&self, rng: &mut R) -> Result<RobotEpisodeData> {
        self.validate()?;
        let (a, ..) = robot_matrices();
        let mut disturbances = Vec::with_capacity(self.horizon);
        let mut winds = Vec::with_capacity(self.horizon);
        for t in 0..self.horizon {
            let (w, z) = robot_disturbance(&a, self.target(t), self.target(t + 1), self, t, rng);
            disturbances.push(w);
            winds.push(z);
        }
        let contexts = self.contexts(&winds).expand(self.horizon);
        Ok(RobotEpisodeData { disturbances, winds, contexts })
    }

    /// The robot episode as a linear plant.
    pub fn plant<R: Rng>(&self, rng: &mut R) -> Result<LinearPlant> {
        let data = self.generate(rng)?;
        let sol = make_robot_system(self)?.1;
        LinearPlant::new(sol, self.library()?, self.x0(), data.disturbances, data.contexts)
    }
}

fn procedural(g: &Generator) -> TrajectorySpec {
    let value = serde_json::to_value(g).expect("generator serializes");
    let (name, params) = value.as_object().and_then(|o| o.iter().next()).expect("tagged");
    TrajectorySpec::Procedural { generator: name.clone(), params: params.clone() }
}

fn abbreviation(word: &str) -> &'static str {
    match word {
        "northeast" => "ne",
        "northwest" => "nw",
        "southeast" => "se",
        _ => "sw",
    }
}

/// Direction the wind pushes the robot: the sign of `−coupling·Z`.
pub fn push_direction(z: [f64; 2]) -> &'static str {
    match (z[0] <= 0.0, z[1] <= 0.0) {
        (true, true) => "northeast",
        (false, true) => "northwest",
        (true, false) => "southeast",
        (false, false) => "southwest",
    }
}

pub struct RobotEpisodeData {
    pub disturbances: Vec<Vector>,
    pub winds: Vec<[f64; 2]>,
    pub contexts: Vec<String>,
}

pub fn make_robot_system(scenario: &RobotScenario) -> Result<(SystemModel, RiccatiSolution)> {
    let model = scenario.model()?;
    let sol = solve_dare_default(&model)?;
    Ok((model, sol))
}

/// `w_t = A[y_t; 0; 0] − [y_{t+1}; 0; 0] + (0, 0, −cZ⁽¹⁾, −cZ⁽²⁾)` with
/// `Z⁽ⁱ⁾ ~ U(−45, 45)` on gust steps and `U(−2, 2)` otherwise.
pub fn robot_disturbance<R: Rng>(
    a: &Mat,
    y_t: [f64; 2],
    y_next: [f64; 2],
    scenario: &RobotScenario,
    t: usize,
    rng: &mut R,
) -> (Vector, [f64; 2]) {
    let range = if scenario.is_gust(t) { scenario.gust_range } else { scenario.calm_range };
    let z = [rng.gen_range(-range..=range), rng.gen_range(-range..=range)];
    let mut w = a * embed(y_t) - embed(y_next);
    w[2] -= scenario.coupling * z[0];
    w[3] -= scenario.coupling * z[1];
    (w, z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn astroid_fixtures() {
        assert_eq!(astroid_target(0.0, 2.0, 1.0 / 38.2), [0.0, 2.0]);
        let q = astroid_target(38.2 * std::f64::consts::FRAC_PI_2, 2.0, 1.0 / 38.2);
        assert!((q[0] - 2.0).abs() < 1e-9 && q[1].abs() < 1e-9);
    }

    #[test]
    fn wind_ranges() {
        let s = RobotScenario::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = s.generate(&mut rng).unwrap();
        for (t, w) in data.disturbances.iter().enumerate() {
            let limit = if GUST_STEPS.contains(&t) { 9.0 } else { 0.4 };
            assert!(w[2].abs() <= limit + 1e-12 && w[3].abs() <= limit + 1e-12);
            assert!(w.norm() <= s.w_bound());
        }
    }

    #[test]
    fn constant_target_without_wind_is_zero() {
        let s = RobotScenario { scale: 0.0, calm_range: 1e-300, gust_range: 1e-300, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data = s.generate(&mut rng).unwrap();
        assert!(data.disturbances.iter().all(|w| w.norm() < 1e-290));
    }

    #[test]
    fn contexts_warn_ahead_of_gusts() {
        let s = RobotScenario::default();
        let data = s.generate(&mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert!(data.contexts[18].starts_with("strong wind toward the"));
        assert!(data.contexts[18].ends_with("expected in 2 steps"));
        assert_eq!(data.contexts[10], CALM_TEXT);
        let again = s.generate(&mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(data.contexts, again.contexts);
    }
}
