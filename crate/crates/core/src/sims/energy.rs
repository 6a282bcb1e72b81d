use rand::Rng;
use serde::{Deserialize, Serialize};

use super::context::{ContextEvent, ContextStream};
use super::plant::{Plant, Transition};
use crate::control::{solve_dare_default, RiccatiSolution, SystemModel};
use crate::error::{Error, Result};
use crate::l2d::{ScenarioLibrary, ScenarioSpec, TrajectorySpec};
use crate::linalg::{Mat, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Band {
    Valley,
    Shoulder,
    Peak,
}

/// `[start, end)` in hours; `end < start` wraps past midnight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TariffBand {
    pub start: f64,
    pub end: f64,
    pub band: Band,
}

impl TariffBand {
    fn contains(&self, hour: f64) -> bool {
        if self.start <= self.end {
            hour >= self.start && hour < self.end
        } else {
            hour >= self.start || hour < self.end
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tariff {
    pub valley: f64,
    pub shoulder: f64,
    pub peak: f64,
    pub bands: Vec<TariffBand>,
}

impl Default for Tariff {
    fn default() -> Self {
        let band = |start, end, band| TariffBand { start, end, band };
        Tariff {
            valley: 0.3,
            shoulder: 0.6,
            peak: 1.0,
            bands: vec![
                band(23.0, 7.0, Band::Valley),
                band(7.0, 17.0, Band::Shoulder),
                band(17.0, 21.0, Band::Peak),
                band(21.0, 23.0, Band::Shoulder),
            ],
        }
    }
}

impl Tariff {
    pub fn validate(&self) -> Result<()> {
        if !(self.valley > 0.0 && self.shoulder >= self.valley && self.peak >= self.shoulder) {
            return Err(Error::InvalidParameter(format!(
                "tariff rates must satisfy peak ≥ shoulder ≥ valley > 0 (got {}, {}, {})",
                self.peak, self.shoulder, self.valley
            )));
        }
        for half_hour in 0..48 {
            let hour = half_hour as f64 / 2.0;
            if !self.bands.iter().any(|b| b.contains(hour)) {
                return Err(Error::InvalidParameter(format!("tariff bands leave hour {hour} uncovered")));
            }
        }
        Ok(())
    }

    pub fn rate(&self, band: Band) -> f64 {
        match band {
            Band::Valley => self.valley,
            Band::Shoulder => self.shoulder,
            Band::Peak => self.peak,
        }
    }
}

/// Time-of-use rate at hour-of-day `hour`.
pub fn energy_price(hour: f64, tariff: &Tariff) -> Result<f64> {
    tariff
        .bands
        .iter()
        .find(|b| b.contains(hour.rem_euclid(24.0)))
        .map(|b| tariff.rate(b.band))
        .ok_or_else(|| Error::InvalidParameter(format!("no tariff band covers hour {hour}")))
}

/// `rate · grid_kwh`.
pub fn piecewise_cost(grid_kwh: f64, rate: f64) -> f64 {
    rate * grid_kwh
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatteryParams {
    pub e_cap: f64,
    pub p_max: f64,
    pub eta_c: f64,
}

impl BatteryParams {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [("e_cap", self.e_cap), ("p_max", self.p_max), ("eta_c", self.eta_c)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("energy.{key} must be positive (got {v})")));
            }
        }
        Ok(())
    }

    /// SoC gained per unit charge rate: `η_c P_max / E_cap`.
    pub fn charge_gain(&self) -> f64 {
        self.eta_c * self.p_max / self.e_cap
    }
}

/// One hour of battery operation. The battery covers the net load it can,
/// charging draws `P_max·u` and any PV surplus offsets purchases.
pub fn energy_step(x: f64, u: f64, load: f64, pv: f64, params: &BatteryParams) -> Result<(f64, f64)> {
    params.validate()?;
    let d = (x * params.e_cap).min((load - pv).max(0.0));
    let c = params.eta_c * params.p_max * u;
    let x_next = (x + (c - d) / params.e_cap).clamp(0.0, 1.0);
    let grid = (load + params.p_max * u - pv - d).max(0.0);
    Ok((x_next, grid))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weather {
    Sunny,
    Cloudy,
    Overcast,
}

impl Weather {
    const ALL: [Weather; 3] = [Weather::Sunny, Weather::Cloudy, Weather::Overcast];

    fn name(self) -> &'static str {
        match self {
            Weather::Sunny => "sunny",
            Weather::Cloudy => "cloudy",
            Weather::Overcast => "overcast",
        }
    }

    fn forecast(self) -> &'static str {
        match self {
            Weather::Sunny => "Weather forecast: sunny and clear tomorrow",
            Weather::Cloudy => "Weather forecast: cloudy tomorrow",
            Weather::Overcast => "Weather forecast: overcast with rain tomorrow",
        }
    }

    fn keywords(self) -> Vec<String> {
        match self {
            Weather::Sunny => vec!["sunny".into(), "clear".into()],
            Weather::Cloudy => vec!["cloudy".into()],
            Weather::Overcast => vec!["overcast".into(), "rain".into()],
        }
    }
}

/// An announced block of extra demand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurgeKind {
    pub id: String,
    pub start_hour: usize,
    pub end_hour: usize,
    pub extra_kw: f64,
    pub probability: f64,
    pub announce_hour: usize,
    pub text: String,
    pub keywords: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyScenario {
    pub steps_per_day: usize,
    pub days: usize,
    pub e_cap: f64,
    pub p_max: f64,
    pub eta_c: f64,
    pub tariff: Tariff,
    pub task_rate: f64,
    pub task_units: (f64, f64),
    pub unit_kwh: f64,
    pub pv_peak_kw: f64,
    pub sunrise: f64,
    pub sunset: f64,
    /// Probabilities of sunny, cloudy and overcast days.
    pub weather_odds: [f64; 3],
    /// Daily PV amplitude for sunny, cloudy and overcast days.
    pub weather_amplitude: [f64; 3],
    pub amplitude_noise: f64,
    pub forecast_hour: usize,
    pub surges: Vec<SurgeKind>,
    pub soc_ref: f64,
    pub soc0: f64,
    pub q: f64,
    pub r: f64,
}

impl Default for EnergyScenario {
    fn default() -> Self {
        EnergyScenario {
            steps_per_day: 24,
            days: 100,
            e_cap: 40.0,
            p_max: 10.0,
            eta_c: 0.95,
            tariff: Tariff::default(),
            task_rate: 1.0,
            task_units: (1.0, 5.0),
            unit_kwh: 0.5,
            pv_peak_kw: 6.0,
            sunrise: 6.0,
            sunset: 18.0,
            weather_odds: [0.5, 0.3, 0.2],
            weather_amplitude: [1.0, 0.5, 0.15],
            amplitude_noise: 0.1,
            forecast_hour: 20,
            surges: vec![
                SurgeKind {
                    id: "finetune_evening".into(),
                    start_hour: 17,
                    end_hour: 22,
                    extra_kw: 5.0,
                    probability: 0.4,
                    announce_hour: 9,
                    text: "I will be fine-tuning my model tonight from 5 PM to 10 PM".into(),
                    keywords: vec!["tuning".into(), "tonight".into()],
                },
                SurgeKind {
                    id: "deadline_afternoon".into(),
                    start_hour: 13,
                    end_hour: 17,
                    extra_kw: 4.0,
                    probability: 0.3,
                    announce_hour: 8,
                    text: "The CDC conference deadline is this afternoon, experiments run from 1 PM to 5 PM"
                        .into(),
                    keywords: vec!["deadline".into(), "afternoon".into()],
                },
            ],
            soc_ref: 0.5,
            soc0: 0.5,
            q: 1.0,
            r: 10.0,
        }
    }
}

/// Exogenous draws for one energy episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyEpisodeData {
    pub loads: Vec<f64>,
    pub pv: Vec<f64>,
    pub weather: Vec<Weather>,
    pub contexts: Vec<String>,
}

/// `E[max(0, L − c)]` for `L ~ U(lo, hi)`.
fn expected_excess(lo: f64, hi: f64, c: f64) -> f64 {
    if c <= lo {
        (lo + hi) / 2.0 - c
    } else if c >= hi {
        0.0
    } else {
        (hi - c).powi(2) / (2.0 * (hi - lo))
    }
}

impl EnergyScenario {
    pub fn horizon(&self) -> usize {
        self.steps_per_day * self.days
    }

    pub fn battery(&self) -> BatteryParams {
        BatteryParams { e_cap: self.e_cap, p_max: self.p_max, eta_c: self.eta_c }
    }

    pub fn validate(&self) -> Result<()> {
        self.battery().validate()?;
        self.tariff.validate()?;
        if self.steps_per_day == 0 || self.days == 0 {
            return Err(Error::InvalidParameter("energy.steps_per_day and energy.days must be positive".into()));
        }
        if !(self.task_units.0 > 0.0 && self.task_units.1 >= self.task_units.0 && self.unit_kwh > 0.0) {
            return Err(Error::InvalidParameter("energy.task_units must be an increasing positive range".into()));
        }
        if !(0.0..=1.0).contains(&self.soc_ref) || !(0.0..=1.0).contains(&self.soc0) {
            return Err(Error::InvalidParameter("energy.soc_ref and energy.soc0 must lie in [0, 1]".into()));
        }
        if self.weather_odds.iter().any(|p| *p < 0.0) || (self.weather_odds.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter("energy.weather_odds must be a probability vector".into()));
        }
        for s in &self.surges {
            if s.end_hour <= s.start_hour || s.end_hour > 24 || s.announce_hour > s.start_hour {
                return Err(Error::InvalidParameter(format!("energy surge `{}` has inconsistent hours", s.id)));
            }
        }
        Ok(())
    }

    pub fn hour(&self, t: usize) -> f64 {
        (t % self.steps_per_day) as f64 * 24.0 / self.steps_per_day as f64
    }

    fn step_hours(&self) -> f64 {
        24.0 / self.steps_per_day as f64
    }

    fn pv_shape(&self, hour: f64) -> f64 {
        if hour <= self.sunrise || hour >= self.sunset {
            return 0.0;
        }
        (std::f64::consts::PI * (hour - self.sunrise) / (self.sunset - self.sunrise)).sin()
    }

    pub fn model(&self) -> Result<SystemModel> {
        let b = self.battery().charge_gain();
        let one = |v: f64| Mat::from_element(1, 1, v);
        SystemModel::new(one(1.0), one(b), one(self.q), one(self.r), 1.0 + b)
    }

    pub fn solution(&self) -> Result<RiccatiSolution> {
        solve_dare_default(&self.model()?)
    }

    fn surge_load(&self, surge: &SurgeKind, hour: usize) -> f64 {
        if hour >= surge.start_hour && hour < surge.end_hour {
            surge.extra_kw * self.step_hours()
        } else {
            0.0
        }
    }

    /// Expected SoC change per step (as a disturbance) for a weather type,
    /// optionally only the increment a surge adds on top of it.
    fn expected_profile(&self, weather: Weather, surge: Option<&SurgeKind>) -> Vec<Vec<f64>> {
        let amp = self.weather_amplitude[weather as usize];
        let (lo, hi) = (
            self.task_units.0 * self.unit_kwh * self.task_rate * self.step_hours(),
            self.task_units.1 * self.unit_kwh * self.task_rate * self.step_hours(),
        );
        (0..self.steps_per_day)
            .map(|s| {
                let hour = self.hour(s);
                let pv = self.pv_peak_kw * amp * self.pv_shape(hour) * self.step_hours();
                let base = expected_excess(lo, hi, pv);
                let value = match surge {
                    None => base,
                    Some(sk) => expected_excess(lo, hi, pv - self.surge_load(sk, s * 24 / self.steps_per_day)) - base,
                };
                vec![-value / self.e_cap]
            })
            .collect()
    }

    /// One full-day scenario per weather type (sunny is the default) and one
    /// increment scenario per surge kind.
    pub fn library(&self) -> Result<ScenarioLibrary> {
        let mut specs: Vec<ScenarioSpec> = Weather::ALL
            .iter()
            .map(|w| ScenarioSpec {
                id: w.name().into(),
                label: format!("{} day", w.name()),
                keywords: w.keywords(),
                trajectory: TrajectorySpec::Table { rows: self.expected_profile(*w, None) },
            })
            .collect();
        for s in &self.surges {
            specs.push(ScenarioSpec {
                id: s.id.clone(),
                label: s.text.clone(),
                keywords: s.keywords.clone(),
                trajectory: TrajectorySpec::Table { rows: self.expected_profile(Weather::Cloudy, Some(s)) },
            });
        }
        ScenarioLibrary::new(1, self.model()?.w_bound, specs, Some("sunny".into()))
    }

    pub fn generate<R: Rng>(&self, rng: &mut R) -> Result<EnergyEpisodeData> {
        self.validate()?;
        let horizon = self.horizon();
        let mut loads = Vec::with_capacity(horizon);
        let mut pv = Vec::with_capacity(horizon);
        let mut weather = Vec::with_capacity(self.days);
        let mut events = Vec::new();
        let mut background = Vec::new();
        for day in 0..self.days {
            let roll: f64 = rng.gen();
            let today = if roll < self.weather_odds[0] {
                Weather::Sunny
            } else if roll < self.weather_odds[0] + self.weather_odds[1] {
                Weather::Cloudy
            } else {
                Weather::Overcast
            };
            weather.push(today);
            let start = day * self.steps_per_day;
            let announce = (start + self.forecast_hour * self.steps_per_day / 24).saturating_sub(self.steps_per_day);
            background.push((announce, today.forecast().to_string()));
            let noise = 1.0 + rng.gen_range(-self.amplitude_noise..=self.amplitude_noise);
            let amp = (self.weather_amplitude[today as usize] * noise).max(0.0);
            let active: Vec<&SurgeKind> = self.surges.iter().filter(|s| rng.gen::<f64>() < s.probability).collect();
            for s in &active {
                let to_step = |h: usize| start + h * self.steps_per_day / 24;
                let end = to_step(s.end_hour) - 1;
                events.push(ContextEvent {
                    t_fire: end,
                    lead: end - to_step(s.announce_hour),
                    text: s.text.clone(),
                    hint: Some(s.id.clone()),
                });
            }
            for step in 0..self.steps_per_day {
                let hour = self.hour(step);
                let tasks = self.task_rate * self.step_hours();
                let mut load = rng.gen_range(self.task_units.0..=self.task_units.1) * self.unit_kwh * tasks;
                for s in &active {
                    load += self.surge_load(s, step * 24 / self.steps_per_day);
                }
                loads.push(load);
                pv.push(self.pv_peak_kw * amp * self.pv_shape(hour) * self.step_hours());
            }
        }
        let contexts = ContextStream::new(events, "no special plans")
            .with_background(background)
            .expand(horizon);
        Ok(EnergyEpisodeData { loads, pv, weather, contexts })
    }

    pub fn plant<R: Rng>(&self, rng: &mut R) -> Result<EnergyPlant> {
        let data = self.generate(rng)?;
        EnergyPlant::new(self.clone(), data)
    }
}

/// Battery plant driven in deviation coordinates `e = SoC − SoC_ref` on the
/// linearization `e⁺ = e + (η_c P_max/E_cap)u + w`; inputs are clamped to
/// `[0, 1]` and the realized `w` absorbs the nonlinearity.
#[derive(Debug, Clone)]
pub struct EnergyPlant {
    scenario: EnergyScenario,
    sol: RiccatiSolution,
    lib: ScenarioLibrary,
    data: EnergyEpisodeData,
    grid: Vec<f64>,
}

impl EnergyPlant {
    pub fn new(scenario: EnergyScenario, data: EnergyEpisodeData) -> Result<Self> {
        let sol = scenario.solution()?;
        let lib = scenario.library()?;
        if data.loads.len() != scenario.horizon() || data.pv.len() != scenario.horizon() {
            return Err(Error::Dimension("energy episode data does not match the horizon".into()));
        }
        Ok(EnergyPlant { scenario, sol, lib, data, grid: Vec::new() })
    }

    pub fn data(&self) -> &EnergyEpisodeData {
        &self.data
    }

    /// Grid purchases so far.
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn soc(&self, e: &Vector) -> f64 {
        e[0] + self.scenario.soc_ref
    }
}

impl Plant for EnergyPlant {
    fn solution(&self) -> &RiccatiSolution {
        &self.sol
    }

    fn library(&self) -> &ScenarioLibrary {
        &self.lib
    }

    fn horizon(&self) -> usize {
        self.scenario.horizon()
    }

    fn x0(&self) -> Vector {
        Vector::from_element(1, self.scenario.soc0 - self.scenario.soc_ref)
    }

    fn context(&self, t: usize) -> String {
        self.data.contexts[t].clone()
    }

    fn apply(&mut self, t: usize, x: &Vector, u: Vector) -> Result<Transition> {
        let battery = self.scenario.battery();
        let soc = self.soc(x).clamp(0.0, 1.0);
        let rate = u[0].clamp(0.0, 1.0);
        let (soc_next, grid) = energy_step(soc, rate, self.data.loads[t], self.data.pv[t], &battery)?;
        let price = energy_price(self.scenario.hour(t), &self.scenario.tariff)?;
        self.grid.push(grid);
        let e_next = soc_next - self.scenario.soc_ref;
        let w = e_next - x[0] - battery.charge_gain() * rate;
        Ok(Transition {
            u: Vector::from_element(1, rate),
            x_next: Vector::from_element(1, e_next),
            w: Vector::from_element(1, w),
            cost: piecewise_cost(grid, price),
        })
    }

    fn nominal_disturbances(&self) -> Vec<Vector> {
        self.data
            .loads
            .iter()
            .zip(&self.data.pv)
            .map(|(l, p)| Vector::from_element(1, -(l - p).max(0.0) / self.scenario.e_cap))
            .collect()
    }

    fn display_state(&self, x: &Vector) -> Vector {
        Vector::from_element(1, self.soc(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(eta: f64, p: f64, e: f64) -> BatteryParams {
        BatteryParams { e_cap: e, p_max: p, eta_c: eta }
    }

    #[test]
    fn idle_step() {
        let (x, g) = energy_step(0.4, 0.0, 0.0, 0.0, &params(0.95, 10.0, 40.0)).unwrap();
        assert_eq!((x, g), (0.4, 0.0));
    }

    #[test]
    fn full_charge_step() {
        let (x, g) = energy_step(0.0, 1.0, 0.0, 0.0, &params(0.9, 10.0, 10.0)).unwrap();
        assert!((x - 0.9).abs() < 1e-15);
        assert_eq!(g, 10.0);
    }

    #[test]
    fn full_battery_huge_load() {
        let (x, g) = energy_step(1.0, 0.0, 100.0, 5.0, &params(0.95, 10.0, 40.0)).unwrap();
        assert_eq!(x, 0.0);
        assert!((g - (100.0 - 5.0 - 40.0)).abs() < 1e-12);
    }

    #[test]
    fn prices() {
        let t = Tariff::default();
        assert_eq!(piecewise_cost(0.0, 1.0), 0.0);
        let valley = energy_price(2.0, &t).unwrap();
        assert!((piecewise_cost(2.0, valley) - 0.6).abs() < 1e-15);
        assert_eq!(energy_price(18.0, &t).unwrap(), 1.0);
        let bad = Tariff { peak: 0.2, ..Tariff::default() };
        assert!(bad.validate().is_err());
        let gap = Tariff { bands: vec![TariffBand { start: 0.0, end: 12.0, band: Band::Peak }], ..Tariff::default() };
        assert!(gap.validate().is_err());
    }

    #[test]
    fn expected_excess_matches_quadrature() {
        for c in [-1.0, 0.5, 1.0, 1.7, 2.5, 3.0] {
            let n = 200_000;
            let q: f64 = (0..n)
                .map(|i| {
                    let l = 0.5 + 2.0 * (i as f64 + 0.5) / n as f64;
                    (l - c).max(0.0)
                })
                .sum::<f64>()
                / n as f64;
            assert!((q - expected_excess(0.5, 2.5, c)).abs() < 1e-6, "{c}");
        }
    }
}
