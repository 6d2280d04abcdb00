//! The shipped reference dataset and the scenario behaviour it relies on.

mod common;

use std::path::PathBuf;

use cfaug_core::model::ingest_csv;
use cfaug_core::synth::{generate, split_by_year, GrowthOracle, ScenarioConfig};
use cfaug_core::{Boundary, CaseBase, SchemaConfig, StatsGrouping};

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

#[test]
fn reference_files_match_the_default_scenario() {
    let text = std::fs::read_to_string(data_dir().join("synth_ref.json")).unwrap();
    let scenario: ScenarioConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(scenario, ScenarioConfig::default());

    let (cb, report) = ingest_csv(data_dir().join("synth_ref.csv"), &SchemaConfig::default()).unwrap();
    assert_eq!(report.dropped_total(), 0);
    assert_eq!(cb.cases(), generate(&scenario).unwrap().as_slice());
    assert_eq!(cb.len(), 60 * 38 * 6);
}

#[test]
fn disrupted_weeks_are_mostly_outliers() {
    let scenario = ScenarioConfig::default();
    let (train, test) = split_by_year(generate(&scenario).unwrap(), scenario.test_year);
    let train = CaseBase::from_cases(train, SchemaConfig::default()).unwrap();
    let b = Boundary::fit(&train, StatsGrouping::AcrossYears, 2.0).unwrap();
    let rate = |cases: &[&cfaug_core::Case]| {
        let flags = b.outlier_flags(&cases.iter().map(|c| (*c).clone()).collect::<Vec<_>>()).unwrap();
        flags.iter().filter(|f| **f).count() as f64 / flags.len() as f64
    };
    for d in &scenario.disruptions {
        let in_weeks = |w: u32| (d.weeks[0]..=d.weeks[1]).contains(&w);
        let disrupted: Vec<_> = test.iter().filter(|c| in_weeks(c.week)).collect();
        let baseline: Vec<_> = train.cases().iter().filter(|c| in_weeks(c.week)).collect();
        let (r, base) = (rate(&disrupted), rate(&baseline));
        assert!(r >= 3.0 * base, "weeks {:?}: {r:.3} vs baseline {base:.3}", d.weeks);
    }
}

#[test]
fn hot_dry_july_week_grows_less() {
    let g: GrowthOracle = ScenarioConfig::default().growth;
    let typical = g.mean(28, 15.0, 15.0);
    let shifted = g.mean(28, 15.0 + 6.0, 15.0 * 0.1);
    assert!(shifted < typical, "{shifted} vs {typical}");
    assert!(g.sample(28, 21.0, 1.5, -100.0) >= 0.0);
}
