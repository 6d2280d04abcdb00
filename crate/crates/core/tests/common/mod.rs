//! Brute-force reference implementations shared by the integration tests.
//! They are written against plain case fields and avoid the library's
//! indexing, streaming and tie-breaking code paths.

#![allow(dead_code)]

use std::collections::BTreeMap;

use cfaug_core::synth::ScenarioConfig;
use cfaug_core::{Case, CaseBase, Feature, FeatureSchema, FeatureSet};

pub fn weather(c: &Case) -> [f64; 3] {
    [c.rain, c.temperature, c.solar_radiation]
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Outlier flag of every `probe` against week-of-year statistics of `train`.
pub fn brute_outlier_flags(train: &[Case], probes: &[Case], z: f64) -> Vec<bool> {
    let mut by_week: BTreeMap<u32, Vec<&Case>> = BTreeMap::new();
    for c in train {
        by_week.entry(c.week).or_default().push(c);
    }
    let stats: BTreeMap<u32, [(f64, f64); 3]> = by_week
        .into_iter()
        .map(|(w, cs)| {
            let cols = [0, 1, 2].map(|i| mean_sd(&cs.iter().map(|c| weather(c)[i]).collect::<Vec<_>>()));
            (w, cols)
        })
        .collect();
    probes
        .iter()
        .map(|p| {
            let s = stats[&p.week];
            weather(p)
                .iter()
                .zip(s)
                .any(|(v, (m, sd))| sd > 0.0 && (*v > m + z * sd || *v < m - z * sd))
        })
        .collect()
}

/// Independent population statistics of the five distance features.
pub fn feature_stats(cases: &[Case]) -> [(f64, f64); 5] {
    let col = |f: fn(&Case) -> f64| mean_sd(&cases.iter().map(f).collect::<Vec<_>>());
    [
        col(|c| c.week as f64),
        col(|c| c.cover),
        col(|c| c.rain),
        col(|c| c.temperature),
        col(|c| c.solar_radiation),
    ]
}

/// Unit-weight distance with a circular week gap.
pub fn brute_distance(a: &Case, b: &Case, stats: &[(f64, f64); 5]) -> f64 {
    let gap = (a.week as f64 - b.week as f64).abs();
    let week = gap.min(52.0 - gap) / stats[0].1;
    let z = |v: f64, i: usize| (v - stats[i].0) / stats[i].1;
    let pairs = [(a.cover, b.cover), (a.rain, b.rain), (a.temperature, b.temperature), (a.solar_radiation, b.solar_radiation)];
    let rest: f64 = pairs
        .iter()
        .enumerate()
        .map(|(i, (x, y))| {
            let d = z(*x, i + 1) - z(*y, i + 1);
            d * d
        })
        .sum();
    (week * week + rest).sqrt()
}

/// Prediction and neighbour ids of a full-sort linear scan.
pub fn brute_knn(train: &CaseBase, schema: &FeatureSchema, probe: &Case, k: usize) -> (f64, Vec<String>) {
    let mut all: Vec<(f64, &Case)> = train.cases().iter().map(|c| (schema.distance(probe, c), c)).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.case_id.cmp(&b.1.case_id)));
    let top = &all[..k.min(all.len())];
    let mean = top.iter().map(|(_, c)| c.growth).sum::<f64>() / top.len() as f64;
    (mean, top.iter().map(|(_, c)| c.case_id.clone()).collect())
}

/// One brute-force pair: (normal id, outlier id, difference features).
pub type BrutePair = (String, String, FeatureSet, f64);

/// Every (normal, outlier) pair differing on 1..=max_diff weather features
/// by more than `delta` standard units.
pub fn brute_pairs(cb: &CaseBase, flags: &[bool], delta: f64, max_diff: usize) -> Vec<BrutePair> {
    let schema = cb.schema().unwrap();
    let n = schema.normalization();
    let mut out = Vec::new();
    for (i, a) in cb.cases().iter().enumerate() {
        if flags[i] {
            continue;
        }
        for (j, b) in cb.cases().iter().enumerate() {
            if !flags[j] {
                continue;
            }
            let diff: FeatureSet = Feature::WEATHER
                .into_iter()
                .filter(|&f| (n.z(f, a.value(f)) - n.z(f, b.value(f))).abs() > delta)
                .collect();
            if !diff.is_empty() && diff.len() <= max_diff {
                out.push((a.case_id.clone(), b.case_id.clone(), diff, schema.distance(a, b)));
            }
        }
    }
    out.sort_by(|x, y| (&x.0, &x.1).cmp(&(&y.0, &y.1)));
    out
}

/// Minimum-distance pair per normal id, ties to the smaller outlier id.
pub fn brute_best(pairs: &[BrutePair]) -> BTreeMap<String, (String, f64)> {
    let mut best: BTreeMap<String, (String, f64)> = BTreeMap::new();
    for (n, o, _, d) in pairs {
        let replace = match best.get(n) {
            None => true,
            Some((bo, bd)) => *d < *bd || (*d == *bd && o < bo),
        };
        if replace {
            best.insert(n.clone(), (o.clone(), *d));
        }
    }
    best
}

/// A small scenario of about five hundred cases.
pub fn small_scenario(seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        seed,
        n_farms: 4,
        train_years: vec![2013, 2014],
        test_year: 2015,
        ..ScenarioConfig::default()
    }
}

/// A case dated on the Thursday of its ISO week.
pub fn mk_case(id: &str, farm: &str, year: i32, week: u32, w: [f64; 5]) -> Case {
    use chrono::Datelike;
    let date = chrono::NaiveDate::from_isoywd_opt(year, week, chrono::Weekday::Thu).unwrap();
    Case {
        case_id: id.to_string(),
        farm_id: farm.to_string(),
        date,
        week,
        month: date.month(),
        year,
        cover: w[0],
        rain: w[1],
        temperature: w[2],
        solar_radiation: w[3],
        growth: w[4],
    }
}

// Student's t with 1 and 2 degrees of freedom and F with 2 numerator
// degrees of freedom have closed-form tails.
pub fn t_sf_df1(t: f64) -> f64 {
    0.5 - t.atan() / std::f64::consts::PI
}

pub fn t_sf_df2(t: f64) -> f64 {
    0.5 - t / (2.0 * (2.0 + t * t).sqrt())
}

pub fn f_sf_d1_2(f: f64, d2: f64) -> f64 {
    (1.0 + 2.0 * f / d2).powf(-d2 / 2.0)
}
