//! Climate outlier boundary.
//!
//! Weather statistics are aggregated per week of the year. A weather value
//! is a high outlier when it lies strictly above `μ + zσ` for its week and a
//! low outlier when strictly below `μ − zσ`; a case is a climate outlier
//! when any of its weather features is.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Case, CaseBase, Feature};

pub const DEFAULT_OUTLIER_Z: f64 = 2.0;

/// How cases are grouped when computing weekly statistics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatsGrouping {
    /// One group per week of the year, pooled over all years.
    #[default]
    AcrossYears,
    /// One group per (year, week).
    WithinYear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StatsKey {
    pub year: Option<i32>,
    pub week: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeekFeatureStats {
    pub mean: f64,
    /// Population standard deviation.
    pub sd: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeeklyStatsEntry {
    pub key: StatsKey,
    /// Indexed like [`Feature::WEATHER`].
    pub features: [WeekFeatureStats; 3],
}

/// Per-week mean and standard deviation of each weather feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeeklyStats {
    pub grouping: StatsGrouping,
    #[serde(with = "entries")]
    entries: BTreeMap<StatsKey, [WeekFeatureStats; 3]>,
}

mod entries {
    use super::*;

    pub fn serialize<S: serde::Serializer>(
        map: &BTreeMap<StatsKey, [WeekFeatureStats; 3]>,
        s: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(map.iter().map(|(key, features)| WeeklyStatsEntry {
            key: *key,
            features: *features,
        }))
    }

    pub fn deserialize<'de, D: serde::Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<BTreeMap<StatsKey, [WeekFeatureStats; 3]>, D::Error> {
        let list = Vec::<WeeklyStatsEntry>::deserialize(d)?;
        Ok(list.into_iter().map(|e| (e.key, e.features)).collect())
    }
}

impl WeeklyStats {
    pub fn from_entries(grouping: StatsGrouping, entries: impl IntoIterator<Item = WeeklyStatsEntry>) -> Self {
        WeeklyStats {
            grouping,
            entries: entries.into_iter().map(|e| (e.key, e.features)).collect(),
        }
    }

    fn key_for(&self, case: &Case) -> StatsKey {
        StatsKey {
            year: match self.grouping {
                StatsGrouping::AcrossYears => None,
                StatsGrouping::WithinYear => Some(case.year),
            },
            week: case.week,
        }
    }

    pub fn get(&self, key: StatsKey) -> Option<&[WeekFeatureStats; 3]> {
        self.entries.get(&key)
    }

    /// Stats for the group a case falls in.
    pub fn for_case(&self, case: &Case) -> Result<&[WeekFeatureStats; 3]> {
        let key = self.key_for(case);
        self.entries.get(&key).ok_or(Error::UnknownWeek {
            week: key.week,
            year: key.year,
        })
    }

    pub fn keys(&self) -> impl Iterator<Item = StatsKey> + '_ {
        self.entries.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Computes weekly weather statistics over every case in `cb`. Weeks with
/// no cases are absent.
pub fn compute_weekly_stats(cb: &CaseBase, grouping: StatsGrouping) -> Result<WeeklyStats> {
    compute_weekly_stats_from(cb.cases(), grouping)
}

/// Slice form of [`compute_weekly_stats`].
pub fn compute_weekly_stats_from(cases: &[Case], grouping: StatsGrouping) -> Result<WeeklyStats> {
    if cases.is_empty() {
        return Err(Error::Empty("case base"));
    }
    let mut stats = WeeklyStats {
        grouping,
        entries: BTreeMap::new(),
    };
    let mut groups: BTreeMap<StatsKey, Vec<&Case>> = BTreeMap::new();
    for case in cases {
        groups.entry(stats.key_for(case)).or_default().push(case);
    }
    for (key, members) in groups {
        let n = members.len() as f64;
        let features = Feature::WEATHER.map(|f| {
            let mean = members.iter().map(|c| c.value(f)).sum::<f64>() / n;
            let var = members
                .iter()
                .map(|c| {
                    let d = c.value(f) - mean;
                    d * d
                })
                .sum::<f64>()
                / n;
            WeekFeatureStats {
                mean,
                sd: var.sqrt(),
                count: members.len(),
            }
        });
        for (f, s) in Feature::WEATHER.iter().zip(&features) {
            if s.sd == 0.0 {
                log::warn!(
                    "week {}{}: {} has zero dispersion over {} case(s); no outliers possible",
                    key.week,
                    key.year.map(|y| format!(" of {y}")).unwrap_or_default(),
                    f,
                    s.count
                );
            }
        }
        stats.entries.insert(key, features);
    }
    Ok(stats)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    High,
    Low,
    Normal,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::High => "high",
            Label::Low => "low",
            Label::Normal => "normal",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutlierLabel {
    pub case_id: String,
    /// Indexed like [`Feature::WEATHER`].
    pub labels: [Label; 3],
    pub is_outlier: bool,
}

impl OutlierLabel {
    pub fn get(&self, feature: Feature) -> Option<Label> {
        feature.weather_index().map(|i| self.labels[i])
    }
}

/// Labels a single value against its week's statistics. Ties go Normal, and
/// a zero standard deviation never yields an outlier.
pub fn label_value(value: f64, stats: &WeekFeatureStats, outlier_z: f64) -> Label {
    if stats.sd == 0.0 {
        return Label::Normal;
    }
    if value > stats.mean + outlier_z * stats.sd {
        Label::High
    } else if value < stats.mean - outlier_z * stats.sd {
        Label::Low
    } else {
        Label::Normal
    }
}

/// Weekly statistics together with the z multiplier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Boundary {
    pub stats: WeeklyStats,
    pub outlier_z: f64,
}

impl Boundary {
    pub fn new(stats: WeeklyStats, outlier_z: f64) -> Result<Self> {
        if !outlier_z.is_finite() || outlier_z < 0.0 {
            return Err(Error::Config(format!("outlier_z must be finite and >= 0, got {outlier_z}")));
        }
        Ok(Boundary { stats, outlier_z })
    }

    pub fn fit(cb: &CaseBase, grouping: StatsGrouping, outlier_z: f64) -> Result<Self> {
        Boundary::new(compute_weekly_stats(cb, grouping)?, outlier_z)
    }

    pub fn classify(&self, case: &Case) -> Result<OutlierLabel> {
        let stats = self.stats.for_case(case)?;
        let labels = [0, 1, 2].map(|i| label_value(case.value(Feature::WEATHER[i]), &stats[i], self.outlier_z));
        Ok(OutlierLabel {
            case_id: case.case_id.clone(),
            labels,
            is_outlier: labels.iter().any(|l| *l != Label::Normal),
        })
    }

    pub fn is_outlier(&self, case: &Case) -> Result<bool> {
        let stats = self.stats.for_case(case)?;
        Ok((0..3).any(|i| label_value(case.value(Feature::WEATHER[i]), &stats[i], self.outlier_z) != Label::Normal))
    }

    /// Labels every case, in case-base order.
    pub fn label_all(&self, cases: &[Case]) -> Result<Vec<OutlierLabel>> {
        cases.par_iter().map(|c| self.classify(c)).collect()
    }

    pub fn outlier_flags(&self, cases: &[Case]) -> Result<Vec<bool>> {
        cases.par_iter().map(|c| self.is_outlier(c)).collect()
    }
}

/// Convenience wrapper around [`Boundary::classify`].
pub fn classify_case(case: &Case, stats: &WeeklyStats, outlier_z: f64) -> Result<OutlierLabel> {
    let stats_row = stats.for_case(case)?;
    let labels = [0, 1, 2].map(|i| label_value(case.value(Feature::WEATHER[i]), &stats_row[i], outlier_z));
    Ok(OutlierLabel {
        case_id: case.case_id.clone(),
        labels,
        is_outlier: labels.iter().any(|l| *l != Label::Normal),
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureOutlierCount {
    pub high: usize,
    pub low: usize,
    pub total: usize,
    /// Flagged cases as a percentage of all cases.
    pub pct_of_cases: f64,
    /// This feature's flags as a percentage of all feature flags.
    pub share_of_flags: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct YearOutlierCount {
    pub cases: usize,
    pub outliers: usize,
    pub pct: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PartitionSummary {
    pub total: usize,
    pub outliers: usize,
    pub non_outliers: usize,
    pub outlier_pct: f64,
    pub per_feature: BTreeMap<Feature, FeatureOutlierCount>,
    pub per_year: BTreeMap<i32, YearOutlierCount>,
}

impl PartitionSummary {
    pub fn from_labels(cases: &[Case], labels: &[OutlierLabel]) -> Self {
        let pct = |a: usize, b: usize| if b == 0 { 0.0 } else { 100.0 * a as f64 / b as f64 };
        let mut summary = PartitionSummary {
            total: cases.len(),
            ..Default::default()
        };
        for f in Feature::WEATHER {
            summary.per_feature.insert(f, FeatureOutlierCount::default());
        }
        for (case, label) in cases.iter().zip(labels) {
            let year = summary.per_year.entry(case.year).or_default();
            year.cases += 1;
            if label.is_outlier {
                summary.outliers += 1;
                year.outliers += 1;
            }
            for (f, l) in Feature::WEATHER.iter().zip(label.labels) {
                let entry = summary.per_feature.get_mut(f).expect("weather feature");
                match l {
                    Label::High => entry.high += 1,
                    Label::Low => entry.low += 1,
                    Label::Normal => continue,
                }
                entry.total += 1;
            }
        }
        summary.non_outliers = summary.total - summary.outliers;
        summary.outlier_pct = pct(summary.outliers, summary.total);
        let flags: usize = summary.per_feature.values().map(|c| c.total).sum();
        for count in summary.per_feature.values_mut() {
            count.pct_of_cases = pct(count.total, summary.total);
            count.share_of_flags = pct(count.total, flags);
        }
        for year in summary.per_year.values_mut() {
            year.pct = pct(year.outliers, year.cases);
        }
        summary
    }
}

#[derive(Debug, Clone)]
pub struct Partition {
    pub outliers: CaseBase,
    pub non_outliers: CaseBase,
    /// One label per input case, in input order.
    pub labels: Vec<OutlierLabel>,
    pub summary: PartitionSummary,
}

/// Splits a frozen case base into climate outliers and non-outliers.
pub fn partition(cb: &CaseBase, boundary: &Boundary) -> Result<Partition> {
    let labels = boundary.label_all(cb.cases())?;
    let outliers = cb.subset(|i, _| labels[i].is_outlier)?;
    let non_outliers = cb.subset(|i, _| !labels[i].is_outlier)?;
    let summary = PartitionSummary::from_labels(cb.cases(), &labels);
    Ok(Partition {
        outliers,
        non_outliers,
        labels,
        summary,
    })
}
