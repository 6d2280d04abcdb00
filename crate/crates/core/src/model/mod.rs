//! Case representation, feature schema, normalization and the case distance.
//!
//! A [`Case`] is one weekly farm observation. Every neighbour search in the
//! crate goes through [`FeatureSchema::distance`]: a weighted Euclidean
//! distance over z-score normalized distance features, with the week of the
//! year compared on a 52-week circle.

mod csv_io;

use std::collections::HashMap;
use std::fmt;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use csv_io::{
    ingest_csv, read_cases, write_cases, write_cases_csv, ColumnNames, DropReason, IngestReport,
    CASE_HEADER,
};

/// Number of weeks used for the circular week gap.
pub const WEEKS_PER_YEAR: f64 = 52.0;

/// One weekly farm observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Case {
    pub case_id: String,
    pub farm_id: String,
    pub date: NaiveDate,
    /// ISO week of `date`, 1..=53.
    pub week: u32,
    pub month: u32,
    pub year: i32,
    /// kg DM/ha
    pub cover: f64,
    /// mm
    pub rain: f64,
    /// °C
    pub temperature: f64,
    /// J/cm²
    pub solar_radiation: f64,
    /// kg DM/ha/day
    pub growth: f64,
}

impl Case {
    pub fn value(&self, feature: Feature) -> f64 {
        match feature {
            Feature::Week => self.week as f64,
            Feature::Cover => self.cover,
            Feature::Rain => self.rain,
            Feature::Temperature => self.temperature,
            Feature::SolarRadiation => self.solar_radiation,
        }
    }

    /// Sets a continuous feature. Week is a context field and cannot be set
    /// this way.
    pub fn set_value(&mut self, feature: Feature, value: f64) {
        match feature {
            Feature::Week => panic!("week is not a continuous feature"),
            Feature::Cover => self.cover = value,
            Feature::Rain => self.rain = value,
            Feature::Temperature => self.temperature = value,
            Feature::SolarRadiation => self.solar_radiation = value,
        }
    }

    /// Checks the field invariants: finite numerics, non-negative physical
    /// quantities, and week/month/year consistent with the date.
    pub fn check(&self) -> std::result::Result<(), DropReason> {
        let numerics = [
            self.cover,
            self.rain,
            self.temperature,
            self.solar_radiation,
            self.growth,
        ];
        if numerics.iter().any(|v| !v.is_finite()) {
            return Err(DropReason::NonFinite);
        }
        if self.cover < 0.0 || self.rain < 0.0 || self.solar_radiation < 0.0 {
            return Err(DropReason::Negative);
        }
        if self.date.iso_week().week() != self.week
            || self.date.month() != self.month
            || self.date.year() != self.year
        {
            return Err(DropReason::InconsistentDate);
        }
        Ok(())
    }
}

/// The continuous features a case exposes to distance and outlier logic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Week,
    Cover,
    Rain,
    Temperature,
    SolarRadiation,
}

impl Feature {
    pub const ALL: [Feature; 5] = [
        Feature::Week,
        Feature::Cover,
        Feature::Rain,
        Feature::Temperature,
        Feature::SolarRadiation,
    ];

    /// The outlier-eligible and difference-eligible features.
    pub const WEATHER: [Feature; 3] = [Feature::Rain, Feature::Temperature, Feature::SolarRadiation];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Feature::Week => "week",
            Feature::Cover => "cover",
            Feature::Rain => "rain",
            Feature::Temperature => "temperature",
            Feature::SolarRadiation => "solar_radiation",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            Feature::Week => "week",
            Feature::Cover => "kg DM/ha",
            Feature::Rain => "mm",
            Feature::Temperature => "°C",
            Feature::SolarRadiation => "J/cm²",
        }
    }

    /// Position among [`Feature::WEATHER`], if this is a weather feature.
    pub fn weather_index(self) -> Option<usize> {
        match self {
            Feature::Rain => Some(0),
            Feature::Temperature => Some(1),
            Feature::SolarRadiation => Some(2),
            _ => None,
        }
    }

    fn bit(self) -> u8 {
        1 << self.index()
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Feature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Feature::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown feature `{s}`")))
    }
}

/// A small set of features, ordered by [`Feature::ALL`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FeatureSet(u8);

impl FeatureSet {
    pub const EMPTY: FeatureSet = FeatureSet(0);

    pub fn weather() -> Self {
        Feature::WEATHER.into_iter().collect()
    }

    pub fn insert(&mut self, feature: Feature) {
        self.0 |= feature.bit();
    }

    pub fn contains(self, feature: Feature) -> bool {
        self.0 & feature.bit() != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Members of `universe` not in `self`.
    pub fn complement_in(self, universe: FeatureSet) -> FeatureSet {
        FeatureSet(universe.0 & !self.0)
    }

    pub fn is_disjoint(self, other: FeatureSet) -> bool {
        self.0 & other.0 == 0
    }

    pub fn union(self, other: FeatureSet) -> FeatureSet {
        FeatureSet(self.0 | other.0)
    }

    pub fn iter(self) -> impl Iterator<Item = Feature> {
        Feature::ALL.into_iter().filter(move |f| self.contains(*f))
    }
}

impl FromIterator<Feature> for FeatureSet {
    fn from_iter<I: IntoIterator<Item = Feature>>(iter: I) -> Self {
        let mut set = FeatureSet::EMPTY;
        for f in iter {
            set.insert(f);
        }
        set
    }
}

/// Pipe-delimited feature names, e.g. `rain|solar_radiation`.
impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for feature in self.iter() {
            if !first {
                f.write_str("|")?;
            }
            f.write_str(feature.name())?;
            first = false;
        }
        Ok(())
    }
}

impl FromStr for FeatureSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.is_empty() {
            return Ok(FeatureSet::EMPTY);
        }
        s.split('|').map(str::parse).collect()
    }
}

impl Serialize for FeatureSet {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_seq(self.iter())
    }
}

impl<'de> Deserialize<'de> for FeatureSet {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let features = Vec::<Feature>::deserialize(deserializer)?;
        Ok(features.into_iter().collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roles {
    pub distance: bool,
    pub outlier_eligible: bool,
    pub difference_eligible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDescriptor {
    pub feature: Feature,
    pub roles: Roles,
    pub unit: String,
}

fn standard_descriptors() -> Vec<FeatureDescriptor> {
    Feature::ALL
        .into_iter()
        .map(|feature| {
            let weather = feature.weather_index().is_some();
            FeatureDescriptor {
                feature,
                roles: Roles {
                    distance: true,
                    outlier_eligible: weather,
                    difference_eligible: weather,
                },
                unit: feature.unit().to_string(),
            }
        })
        .collect()
}

/// Per-feature distance weights, all 1.0 by default.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureWeights {
    pub week: f64,
    pub cover: f64,
    pub rain: f64,
    pub temperature: f64,
    pub solar_radiation: f64,
}

impl Default for FeatureWeights {
    fn default() -> Self {
        FeatureWeights {
            week: 1.0,
            cover: 1.0,
            rain: 1.0,
            temperature: 1.0,
            solar_radiation: 1.0,
        }
    }
}

impl FeatureWeights {
    fn to_array(self) -> [f64; 5] {
        [
            self.week,
            self.cover,
            self.rain,
            self.temperature,
            self.solar_radiation,
        ]
    }
}

/// Ingestion and metric configuration, loadable from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemaConfig {
    pub columns: ColumnNames,
    /// Plausible growth range in kg DM/ha/day; rows outside are dropped.
    pub growth_bounds: [f64; 2],
    pub weights: FeatureWeights,
    /// Added to the squared distance when farm ids differ. Zero keeps farm
    /// identity out of the metric.
    pub farm_mismatch_weight: f64,
}

impl Default for SchemaConfig {
    fn default() -> Self {
        SchemaConfig {
            columns: ColumnNames::default(),
            growth_bounds: [-20.0, 200.0],
            weights: FeatureWeights::default(),
            farm_mismatch_weight: 0.0,
        }
    }
}

impl SchemaConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.growth_bounds;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Config(format!("growth_bounds [{lo}, {hi}] is not a range")));
        }
        let weights = self.weights.to_array();
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config("feature weights must be finite and >= 0".into()));
        }
        if !self.farm_mismatch_weight.is_finite() || self.farm_mismatch_weight < 0.0 {
            return Err(Error::Config("farm_mismatch_weight must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureStat {
    pub mean: f64,
    pub sd: f64,
}

/// Per-feature population mean and standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    stats: [FeatureStat; 5],
}

impl Normalization {
    /// Fits population statistics over `cases`. Fails on an empty slice or
    /// a feature with zero variance.
    pub fn fit(cases: &[Case]) -> Result<Self> {
        if cases.is_empty() {
            return Err(Error::Empty("case base"));
        }
        let n = cases.len() as f64;
        let mut stats = [FeatureStat { mean: 0.0, sd: 0.0 }; 5];
        for feature in Feature::ALL {
            let mean = cases.iter().map(|c| c.value(feature)).sum::<f64>() / n;
            let var = cases
                .iter()
                .map(|c| {
                    let d = c.value(feature) - mean;
                    d * d
                })
                .sum::<f64>()
                / n;
            let sd = var.sqrt();
            if sd.is_nan() || sd <= 0.0 {
                return Err(Error::ZeroVariance(feature.name()));
            }
            stats[feature.index()] = FeatureStat { mean, sd };
        }
        Ok(Normalization { stats })
    }

    /// Statistics indexed like [`Feature::ALL`]. Every sd must be positive.
    pub fn from_stats(stats: [FeatureStat; 5]) -> Result<Self> {
        for feature in Feature::ALL {
            let s = stats[feature.index()];
            if !(s.sd > 0.0 && s.sd.is_finite() && s.mean.is_finite()) {
                return Err(Error::ZeroVariance(feature.name()));
            }
        }
        Ok(Normalization { stats })
    }

    pub fn get(&self, feature: Feature) -> FeatureStat {
        self.stats[feature.index()]
    }

    pub fn z(&self, feature: Feature, value: f64) -> f64 {
        let s = self.stats[feature.index()];
        (value - s.mean) / s.sd
    }
}

/// A case projected into normalized feature space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    week: f64,
    z: [f64; 5],
    farm: u64,
}

impl Point {
    pub fn z(&self, feature: Feature) -> f64 {
        self.z[feature.index()]
    }
}

/// Circular gap between two weeks on a 52-week year.
pub fn circular_week_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    d.min(WEEKS_PER_YEAR - d).max(0.0)
}

/// A fitted feature schema: roles, weights and normalization statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub features: Vec<FeatureDescriptor>,
    weights: [f64; 5],
    farm_mismatch_weight: f64,
    normalization: Normalization,
}

impl FeatureSchema {
    pub fn new(config: &SchemaConfig, normalization: Normalization) -> Result<Self> {
        config.validate()?;
        Ok(FeatureSchema {
            features: standard_descriptors(),
            weights: config.weights.to_array(),
            farm_mismatch_weight: config.farm_mismatch_weight,
            normalization,
        })
    }

    pub fn normalization(&self) -> &Normalization {
        &self.normalization
    }

    pub fn weight(&self, feature: Feature) -> f64 {
        self.weights[feature.index()]
    }

    pub fn distance_features(&self) -> impl Iterator<Item = Feature> + '_ {
        self.features
            .iter()
            .filter(|d| d.roles.distance)
            .map(|d| d.feature)
    }

    pub fn difference_features(&self) -> FeatureSet {
        self.features
            .iter()
            .filter(|d| d.roles.difference_eligible)
            .map(|d| d.feature)
            .collect()
    }

    pub fn point(&self, case: &Case) -> Point {
        let mut z = [0.0; 5];
        for feature in Feature::ALL {
            if feature != Feature::Week {
                z[feature.index()] = self.normalization.z(feature, case.value(feature));
            }
        }
        let mut hasher = DefaultHasher::new();
        case.farm_id.hash(&mut hasher);
        Point {
            week: case.week as f64,
            z,
            farm: hasher.finish(),
        }
    }

    pub fn point_distance(&self, a: &Point, b: &Point) -> f64 {
        let week = circular_week_gap(a.week, b.week) / self.normalization.stats[0].sd;
        let mut sum = self.weights[0] * week * week;
        for i in 1..5 {
            let d = a.z[i] - b.z[i];
            sum += self.weights[i] * d * d;
        }
        if self.farm_mismatch_weight > 0.0 && a.farm != b.farm {
            sum += self.farm_mismatch_weight;
        }
        sum.sqrt()
    }

    /// Weighted Euclidean distance over normalized distance features.
    pub fn distance(&self, a: &Case, b: &Case) -> f64 {
        self.point_distance(&self.point(a), &self.point(b))
    }
}

/// Convenience wrapper around [`FeatureSchema::distance`].
pub fn distance(a: &Case, b: &Case, schema: &FeatureSchema) -> f64 {
    schema.distance(a, b)
}

/// A collection of cases with unique ids. Once normalization is fitted the
/// case base is frozen and rejects insertion.
#[derive(Debug, Clone)]
pub struct CaseBase {
    cases: Vec<Case>,
    config: SchemaConfig,
    schema: Option<FeatureSchema>,
    ids: HashMap<String, usize>,
    ranks: Vec<u32>,
}

impl PartialEq for CaseBase {
    fn eq(&self, other: &Self) -> bool {
        self.cases == other.cases && self.schema == other.schema
    }
}

impl CaseBase {
    pub fn new(config: SchemaConfig) -> Self {
        CaseBase {
            cases: Vec::new(),
            config,
            schema: None,
            ids: HashMap::new(),
            ranks: Vec::new(),
        }
    }

    pub fn from_cases(cases: Vec<Case>, config: SchemaConfig) -> Result<Self> {
        let mut cb = CaseBase::new(config);
        cb.cases.reserve(cases.len());
        for case in cases {
            cb.insert(case)?;
        }
        Ok(cb)
    }

    /// Builds a case base frozen under an existing schema, e.g. a subset of
    /// a training set that must keep the training normalization.
    pub fn frozen_with(cases: Vec<Case>, schema: FeatureSchema) -> Result<Self> {
        let mut cb = CaseBase::from_cases(cases, SchemaConfig::default())?;
        cb.freeze(schema);
        Ok(cb)
    }

    pub fn insert(&mut self, case: Case) -> Result<()> {
        if self.is_frozen() {
            return Err(Error::Frozen);
        }
        if self.ids.contains_key(&case.case_id) {
            return Err(Error::DuplicateId(case.case_id));
        }
        self.ids.insert(case.case_id.clone(), self.cases.len());
        self.cases.push(case);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn cases(&self) -> &[Case] {
        &self.cases
    }

    pub fn into_cases(self) -> Vec<Case> {
        self.cases
    }

    pub fn get(&self, index: usize) -> &Case {
        &self.cases[index]
    }

    pub fn position(&self, case_id: &str) -> Option<usize> {
        self.ids.get(case_id).copied()
    }

    pub fn config(&self) -> &SchemaConfig {
        &self.config
    }

    pub fn is_frozen(&self) -> bool {
        self.schema.is_some()
    }

    pub fn schema(&self) -> Result<&FeatureSchema> {
        self.schema.as_ref().ok_or(Error::NotFrozen)
    }

    /// Fits normalization statistics over all cases and freezes the case
    /// base. Calling it again on a frozen case base returns the same schema.
    pub fn fit_normalization(&mut self) -> Result<FeatureSchema> {
        if let Some(schema) = &self.schema {
            return Ok(schema.clone());
        }
        let normalization = Normalization::fit(&self.cases)?;
        let schema = FeatureSchema::new(&self.config, normalization)?;
        self.freeze(schema.clone());
        Ok(schema)
    }

    fn freeze(&mut self, schema: FeatureSchema) {
        let mut order: Vec<usize> = (0..self.cases.len()).collect();
        order.sort_by(|&a, &b| self.cases[a].case_id.cmp(&self.cases[b].case_id));
        let mut ranks = vec![0u32; self.cases.len()];
        for (rank, &i) in order.iter().enumerate() {
            ranks[i] = rank as u32;
        }
        self.ranks = ranks;
        self.schema = Some(schema);
    }

    /// Position of each case in case-id order. Empty until frozen.
    pub fn id_ranks(&self) -> &[u32] {
        &self.ranks
    }

    /// A frozen case base holding the selected cases under this case base's
    /// schema.
    pub fn subset<F: FnMut(usize, &Case) -> bool>(&self, mut keep: F) -> Result<CaseBase> {
        let schema = self.schema()?.clone();
        let cases = self
            .cases
            .iter()
            .enumerate()
            .filter(|(i, c)| keep(*i, c))
            .map(|(_, c)| c.clone())
            .collect();
        CaseBase::frozen_with(cases, schema)
    }
}
