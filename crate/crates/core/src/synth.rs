//! Seeded synthetic farm-weather dataset with a known growth function.
//!
//! Each farm is observed once per ISO week of the grazing season in every
//! year. Temperature is a seasonal mean plus a persistent year-week anomaly
//! shared by all farms plus farm-level noise; rain and solar radiation add
//! their own noise and follow the temperature anomaly, so warm spells are
//! dry and bright. Growth follows [`GrowthOracle`]; cover tracks a running
//! average of past growth. Disruptions shift the test year's
//! weather in chosen week ranges.

use std::f64::consts::PI;

use chrono::{Datelike, NaiveDate, Weekday};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Case, CaseBase, SchemaConfig};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemperatureProcess {
    pub annual_mean: f64,
    pub amplitude: f64,
    pub peak_week: f64,
    pub farm_offset_sd: f64,
    /// Stationary sd of the year-week anomaly shared by all farms.
    pub common_sd: f64,
    /// AR(1) coefficient of the shared anomaly from one week to the next.
    pub persistence: f64,
    pub noise_sd: f64,
}

/// Lognormal weekly rain around a seasonal median.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RainProcess {
    pub median: f64,
    /// Relative seasonal swing of the median.
    pub seasonal_amplitude: f64,
    pub wettest_week: f64,
    pub common_log_sd: f64,
    pub log_sd: f64,
    /// Change in log rain per °C of temperature anomaly.
    pub temperature_coupling: f64,
}

/// Solar radiation affine in the seasonal temperature mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolarProcess {
    pub intercept: f64,
    pub slope: f64,
    pub common_sd: f64,
    pub noise_sd: f64,
    /// J/cm² per °C of temperature anomaly.
    pub temperature_coupling: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Disruption {
    /// Inclusive ISO week range.
    pub weeks: [u32; 2],
    pub temperature_shift: f64,
    pub rain_multiplier: f64,
    pub solar_multiplier: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoverProcess {
    pub base: f64,
    /// Cover gained per kg DM/ha/day of smoothed past growth.
    pub per_growth: f64,
    /// Weight of the running growth average carried into the next week;
    /// 0 uses the previous week's growth alone.
    pub memory: f64,
    pub noise_sd: f64,
}

/// Ground-truth growth in kg DM/ha/day.
///
/// For week `w`, temperature `T` and weekly rain `R`:
///
/// ```text
/// base(w) = base_floor + base_peak · exp(−(w − peak_week)² / (2 · peak_width²))
/// f_T(T)  = clamp((T − t_min) / (t_opt − t_min), 0, 1)          if T ≤ t_opt
///           clamp(1 − (T − t_opt) / (t_max − t_opt), 0, 1)      otherwise
/// f_M(R)  = R / (R + rain_half)
/// heat(T) = clamp((T − heat_onset) / heat_span, 0, 1)
/// mean    = base(w) · f_T(T) · f_M(R) · (1 − heat_collapse · heat(T) · (1 − f_M(R)))
/// growth  = max(0, mean + noise_sd · ε),  ε ~ N(0, 1)
/// ```
///
/// Heat on its own barely hurts; heat with little rain collapses growth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrowthOracle {
    pub base_floor: f64,
    pub base_peak: f64,
    pub peak_week: f64,
    pub peak_width: f64,
    pub t_min: f64,
    pub t_opt: f64,
    pub t_max: f64,
    pub rain_half: f64,
    pub heat_onset: f64,
    pub heat_span: f64,
    pub heat_collapse: f64,
    pub noise_sd: f64,
}

impl GrowthOracle {
    pub fn base(&self, week: f64) -> f64 {
        let d = week - self.peak_week;
        self.base_floor + self.base_peak * (-(d * d) / (2.0 * self.peak_width * self.peak_width)).exp()
    }

    pub fn temperature_response(&self, t: f64) -> f64 {
        let r = if t <= self.t_opt {
            (t - self.t_min) / (self.t_opt - self.t_min)
        } else {
            1.0 - (t - self.t_opt) / (self.t_max - self.t_opt)
        };
        r.clamp(0.0, 1.0)
    }

    pub fn moisture_response(&self, rain: f64) -> f64 {
        rain / (rain + self.rain_half)
    }

    /// Noise-free growth.
    pub fn mean(&self, week: u32, temperature: f64, rain: f64) -> f64 {
        let m = self.moisture_response(rain);
        let heat = ((temperature - self.heat_onset) / self.heat_span).clamp(0.0, 1.0);
        self.base(week as f64)
            * self.temperature_response(temperature)
            * m
            * (1.0 - self.heat_collapse * heat * (1.0 - m))
    }

    pub fn sample(&self, week: u32, temperature: f64, rain: f64, eps: f64) -> f64 {
        (self.mean(week, temperature, rain) + self.noise_sd * eps).max(0.0)
    }

    fn validate(&self) -> Result<()> {
        if !(self.t_min < self.t_opt && self.t_opt < self.t_max) {
            return Err(Error::Config("growth: need t_min < t_opt < t_max".into()));
        }
        if self.rain_half <= 0.0 || self.heat_span <= 0.0 || self.peak_width <= 0.0 {
            return Err(Error::Config("growth: rain_half, heat_span and peak_width must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.heat_collapse) {
            return Err(Error::Config("growth: heat_collapse must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub n_farms: usize,
    pub train_years: Vec<i32>,
    pub test_year: i32,
    /// Inclusive ISO week range observed each year.
    pub season_weeks: [u32; 2],
    pub temperature: TemperatureProcess,
    pub rain: RainProcess,
    pub solar: SolarProcess,
    pub cover: CoverProcess,
    pub growth: GrowthOracle,
    /// Applied to the test year only.
    pub disruptions: Vec<Disruption>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            seed: 42,
            n_farms: 60,
            train_years: (2013..=2017).collect(),
            test_year: 2018,
            season_weeks: [6, 43],
            temperature: TemperatureProcess {
                annual_mean: 10.5,
                amplitude: 5.0,
                peak_week: 30.0,
                farm_offset_sd: 0.5,
                common_sd: 0.7,
                persistence: 0.6,
                noise_sd: 1.5,
            },
            rain: RainProcess {
                median: 18.0,
                seasonal_amplitude: 0.3,
                wettest_week: 46.0,
                common_log_sd: 0.4,
                log_sd: 0.5,
                temperature_coupling: -0.5,
            },
            solar: SolarProcess {
                intercept: -400.0,
                slope: 140.0,
                common_sd: 50.0,
                noise_sd: 80.0,
                temperature_coupling: 100.0,
            },
            cover: CoverProcess {
                base: 400.0,
                per_growth: 12.0,
                memory: 0.5,
                noise_sd: 60.0,
            },
            growth: GrowthOracle {
                base_floor: 20.0,
                base_peak: 80.0,
                peak_week: 20.0,
                peak_width: 9.0,
                t_min: 3.0,
                t_opt: 20.0,
                t_max: 32.0,
                rain_half: 4.0,
                heat_onset: 16.0,
                heat_span: 3.0,
                heat_collapse: 0.8,
                noise_sd: 5.0,
            },
            disruptions: vec![
                Disruption {
                    weeks: [10, 12],
                    temperature_shift: -4.0,
                    rain_multiplier: 2.5,
                    solar_multiplier: 0.7,
                },
                Disruption {
                    weeks: [26, 32],
                    temperature_shift: 6.0,
                    rain_multiplier: 0.1,
                    solar_multiplier: 1.3,
                },
                Disruption {
                    weeks: [41, 43],
                    temperature_shift: -1.5,
                    rain_multiplier: 3.0,
                    solar_multiplier: 0.8,
                },
            ],
        }
    }
}

fn check_sd(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")))
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_farms == 0 {
            return Err(Error::Config("n_farms must be >= 1".into()));
        }
        if self.train_years.contains(&self.test_year) {
            return Err(Error::Config(format!("test year {} is also a train year", self.test_year)));
        }
        let valid_range = |[a, b]: [u32; 2]| 1 <= a && a <= b && b <= 52;
        if !valid_range(self.season_weeks) {
            return Err(Error::Config("season_weeks must satisfy 1 <= start <= end <= 52".into()));
        }
        for d in &self.disruptions {
            if !valid_range(d.weeks) {
                return Err(Error::Config("disruption weeks must satisfy 1 <= start <= end <= 52".into()));
            }
            if !(d.rain_multiplier >= 0.0 && d.solar_multiplier >= 0.0 && d.temperature_shift.is_finite()) {
                return Err(Error::Config("disruption multipliers must be >= 0".into()));
            }
        }
        for (name, v) in [
            ("temperature.farm_offset_sd", self.temperature.farm_offset_sd),
            ("temperature.common_sd", self.temperature.common_sd),
            ("temperature.noise_sd", self.temperature.noise_sd),
            ("rain.common_log_sd", self.rain.common_log_sd),
            ("rain.log_sd", self.rain.log_sd),
            ("solar.common_sd", self.solar.common_sd),
            ("solar.noise_sd", self.solar.noise_sd),
            ("cover.noise_sd", self.cover.noise_sd),
            ("growth.noise_sd", self.growth.noise_sd),
        ] {
            check_sd(name, v)?;
        }
        if !(0.0..1.0).contains(&self.cover.memory) {
            return Err(Error::Config("cover.memory must lie in [0, 1)".into()));
        }
        if self.temperature.persistence.is_nan() || self.temperature.persistence.abs() >= 1.0 {
            return Err(Error::Config("temperature.persistence must lie in (-1, 1)".into()));
        }
        if self.rain.median <= 0.0 || self.rain.seasonal_amplitude.abs() >= 1.0 {
            return Err(Error::Config("rain: median must be > 0 and |seasonal_amplitude| < 1".into()));
        }
        self.growth.validate()
    }

    pub fn years(&self) -> Vec<i32> {
        let mut years = self.train_years.clone();
        years.push(self.test_year);
        years.sort_unstable();
        years
    }

    fn disruption(&self, year: i32, week: u32) -> Option<&Disruption> {
        if year != self.test_year {
            return None;
        }
        self.disruptions.iter().find(|d| (d.weeks[0]..=d.weeks[1]).contains(&week))
    }

    fn seasonal_temperature(&self, week: f64) -> f64 {
        let t = &self.temperature;
        t.annual_mean + t.amplitude * (2.0 * PI * (week - t.peak_week) / 52.0).cos()
    }

    fn seasonal_rain(&self, week: f64) -> f64 {
        let r = &self.rain;
        r.median * (1.0 + r.seasonal_amplitude * (2.0 * PI * (week - r.wettest_week) / 52.0).cos())
    }

    fn seasonal_solar(&self, week: f64) -> f64 {
        self.solar.intercept + self.solar.slope * self.seasonal_temperature(week)
    }
}

fn round1(x: f64) -> f64 {
    let r = (x * 10.0).round() / 10.0;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// Generates the scenario's cases ordered by year, week and farm.
pub fn generate(cfg: &ScenarioConfig) -> Result<Vec<Case>> {
    cfg.validate()?;
    let mut rng = rng::stream(cfg.seed, "generator");
    let mut normal = move || -> f64 { rng.sample(StandardNormal) };

    let farm_offsets: Vec<f64> = (0..cfg.n_farms)
        .map(|_| cfg.temperature.farm_offset_sd * normal())
        .collect();
    let [first, last] = cfg.season_weeks;
    let mut cases = Vec::new();
    let mut common_t = 0.0;
    for year in cfg.years() {
        let mut prev_growth: Vec<f64> = {
            let w = first.saturating_sub(1).max(1);
            let g = cfg
                .growth
                .mean(w, cfg.seasonal_temperature(w as f64), cfg.seasonal_rain(w as f64));
            vec![g; cfg.n_farms]
        };
        for week in first..=last {
            let date = NaiveDate::from_isoywd_opt(year, week, Weekday::Thu)
                .ok_or_else(|| Error::Config(format!("year {year} has no ISO week {week}")))?;
            let wf = week as f64;
            let phi = cfg.temperature.persistence;
            common_t = if week == first {
                cfg.temperature.common_sd * normal()
            } else {
                phi * common_t + (1.0 - phi * phi).sqrt() * cfg.temperature.common_sd * normal()
            };
            let common_r = cfg.rain.common_log_sd * normal();
            let common_s = cfg.solar.common_sd * normal();
            let disruption = cfg.disruption(year, week);
            for (farm, prev) in prev_growth.iter_mut().enumerate() {
                let anomaly = common_t + cfg.temperature.noise_sd * normal();
                let mut t = cfg.seasonal_temperature(wf) + farm_offsets[farm] + anomaly;
                let log_r = common_r + cfg.rain.log_sd * normal() + cfg.rain.temperature_coupling * anomaly;
                let mut r = cfg.seasonal_rain(wf) * log_r.exp();
                let mut s = cfg.seasonal_solar(wf)
                    + common_s
                    + cfg.solar.noise_sd * normal()
                    + cfg.solar.temperature_coupling * anomaly;
                if let Some(d) = disruption {
                    t += d.temperature_shift;
                    r *= d.rain_multiplier;
                    s *= d.solar_multiplier;
                }
                let (t, r, s) = (round1(t), round1(r.max(0.0)), round1(s.max(0.0)));
                let cover = round1((cfg.cover.base + cfg.cover.per_growth * *prev + cfg.cover.noise_sd * normal()).max(0.0));
                let growth = round1(cfg.growth.sample(week, t, r, normal()));
                *prev = cfg.cover.memory * *prev + (1.0 - cfg.cover.memory) * growth;
                let farm_id = format!("F{:02}", farm + 1);
                cases.push(Case {
                    case_id: format!("{farm_id}-{year}-w{week:02}"),
                    farm_id,
                    date,
                    week,
                    month: date.month(),
                    year,
                    cover,
                    rain: r,
                    temperature: t,
                    solar_radiation: s,
                    growth,
                });
            }
        }
    }
    Ok(cases)
}

/// Generated cases as an unfrozen case base.
pub fn generate_case_base(cfg: &ScenarioConfig) -> Result<CaseBase> {
    CaseBase::from_cases(generate(cfg)?, SchemaConfig::default())
}

/// Splits cases into (train years, test year).
pub fn split_by_year(cases: Vec<Case>, test_year: i32) -> (Vec<Case>, Vec<Case>) {
    cases.into_iter().partition(|c| c.year != test_year)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet() -> ScenarioConfig {
        let mut cfg = ScenarioConfig {
            n_farms: 3,
            disruptions: vec![],
            ..ScenarioConfig::default()
        };
        cfg.temperature.farm_offset_sd = 0.0;
        cfg.temperature.common_sd = 0.0;
        cfg.temperature.noise_sd = 0.0;
        cfg.rain.common_log_sd = 0.0;
        cfg.rain.log_sd = 0.0;
        cfg.solar.common_sd = 0.0;
        cfg.solar.noise_sd = 0.0;
        cfg.cover.noise_sd = 0.0;
        cfg.growth.noise_sd = 0.0;
        cfg
    }

    #[test]
    fn noiseless_growth_depends_on_week_only() {
        let cases = generate(&quiet()).unwrap();
        let mut by_week = std::collections::BTreeMap::new();
        for c in &cases {
            let g = *by_week.entry(c.week).or_insert(c.growth);
            assert_eq!(g, c.growth, "week {}", c.week);
        }
        let f1: Vec<_> = cases.iter().filter(|c| c.farm_id == "F01").map(|c| (c.date, c.cover, c.temperature)).collect();
        let f3: Vec<_> = cases.iter().filter(|c| c.farm_id == "F03").map(|c| (c.date, c.cover, c.temperature)).collect();
        assert_eq!(f1, f3);
    }

    #[test]
    fn emits_one_case_per_farm_week_year() {
        let cfg = quiet();
        let cases = generate(&cfg).unwrap();
        assert_eq!(cases.len(), 3 * 38 * 6);
        assert!(cases.iter().all(|c| c.check().is_ok()));
        assert!(cases.iter().all(|c| (2..=10).contains(&c.month)));
    }

    #[test]
    fn same_seed_same_cases() {
        let cfg = ScenarioConfig {
            n_farms: 4,
            ..ScenarioConfig::default()
        };
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
        let other = ScenarioConfig { seed: 43, ..cfg.clone() };
        assert_ne!(generate(&cfg).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn summer_disruption_lowers_growth() {
        let cfg = ScenarioConfig {
            n_farms: 20,
            ..ScenarioConfig::default()
        };
        let cases = generate(&cfg).unwrap();
        let july_mean = |test: bool| {
            let g: Vec<f64> = cases
                .iter()
                .filter(|c| c.month == 7 && (c.year == cfg.test_year) == test)
                .map(|c| c.growth)
                .collect();
            g.iter().sum::<f64>() / g.len() as f64
        };
        assert!(july_mean(true) < july_mean(false));
    }

    #[test]
    fn heat_hurts_more_when_dry() {
        let g = ScenarioConfig::default().growth;
        let wet_drop = g.mean(28, 15.0, 20.0) - g.mean(28, 21.0, 20.0);
        let dry_drop = g.mean(28, 15.0, 2.0) - g.mean(28, 21.0, 2.0);
        assert!(dry_drop > wet_drop);
    }

    #[test]
    fn rejects_invalid_configs() {
        let mut cfg = ScenarioConfig::default();
        cfg.disruptions[0].rain_multiplier = -1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = ScenarioConfig::default();
        cfg.disruptions[0].weeks = [50, 53];
        assert!(cfg.validate().is_err());
        let mut cfg = ScenarioConfig::default();
        cfg.train_years.push(cfg.test_year);
        assert!(cfg.validate().is_err());
        let mut cfg = ScenarioConfig::default();
        cfg.temperature.noise_sd = -0.1;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_json_round_trips() {
        let cfg = ScenarioConfig::default();
        let json = serde_json::to_string_pretty(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<ScenarioConfig>(&json).unwrap(), cfg);
    }
}
