//! Invariants checked over generated inputs.

mod common;

use std::collections::HashSet;

use cfaug_core::augment::{AugmentationConfig, CfaBatch, Generator};
use cfaug_core::mining::{mine_pairs, mine_summary, PairIndex};
use cfaug_core::model::{read_cases, write_cases, FeatureStat, Normalization};
use cfaug_core::synth::generate_case_base;
use cfaug_core::{Boundary, Case, CaseBase, Feature, FeatureSchema, KnnRegressor, MiningConfig, SchemaConfig, StatsGrouping};
use common::*;
use proptest::prelude::*;

fn arb_case(i: usize) -> impl Strategy<Value = Case> {
    (
        1u32..=52,
        2013i32..=2018,
        0usize..4,
        0.0f64..1500.0,
        0.0f64..80.0,
        -5.0f64..30.0,
        0.0f64..2500.0,
        -20.0f64..150.0,
    )
        .prop_map(move |(week, year, farm, cover, rain, t, s, g)| {
            mk_case(&format!("c{i:03}"), &format!("F{farm}"), year, week, [cover, rain, t, s, g])
        })
}

fn arb_cases(max: usize) -> impl Strategy<Value = Vec<Case>> {
    (3..max).prop_flat_map(|n| (0..n).map(arb_case).collect::<Vec<_>>())
}

fn arb_schema() -> impl Strategy<Value = FeatureSchema> {
    prop::array::uniform5((-10.0f64..10.0, 0.1f64..50.0)).prop_map(|s| {
        let stats = s.map(|(mean, sd)| FeatureStat { mean, sd });
        FeatureSchema::new(&SchemaConfig::default(), Normalization::from_stats(stats).unwrap()).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn distance_is_a_metric(schema in arb_schema(), a in arb_case(0), b in arb_case(1), c in arb_case(2)) {
        let (ab, bc, ac) = (schema.distance(&a, &b), schema.distance(&b, &c), schema.distance(&a, &c));
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(schema.distance(&a, &a), 0.0);
        prop_assert_eq!(ab, schema.distance(&b, &a));
        prop_assert!(ac <= ab + bc + 1e-9 * (1.0 + ab + bc));
    }

    #[test]
    fn csv_round_trip(cases in arb_cases(20)) {
        let mut buf = Vec::new();
        write_cases(&mut buf, &cases).unwrap();
        let (cb, report) = read_cases(buf.as_slice(), &SchemaConfig::default()).unwrap();
        prop_assert_eq!(report.dropped_total(), 0);
        prop_assert_eq!(cb.cases(), cases.as_slice());
    }

    #[test]
    fn knn_ignores_training_order(
        (cases, shuffled) in arb_cases(40).prop_flat_map(|c| (Just(c.clone()), Just(c).prop_shuffle())),
        probe in arb_case(999),
        k in 1usize..10,
    ) {
        let mut a = CaseBase::from_cases(cases, SchemaConfig::default()).unwrap();
        let schema = match a.fit_normalization() {
            Ok(s) => s,
            Err(_) => return Ok(()),
        };
        let b = CaseBase::frozen_with(shuffled, schema).unwrap();
        let ra = KnnRegressor::new(&a).unwrap().predict(&probe, k).unwrap();
        let rb = KnnRegressor::new(&b).unwrap().predict(&probe, k).unwrap();
        prop_assert_eq!(&ra.neighbor_ids, &rb.neighbor_ids);
        let (ma, mb) = (ra.predicted_growth, rb.predicted_growth);
        prop_assert!((ma - mb).abs() <= 1e-9 * (1.0 + ma.abs()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn pair_sets_are_monotone(seed in 0u64..1000, d1 in 0.0f64..1.5, d2 in 0.0f64..1.5) {
        let mut cb = generate_case_base(&small_scenario(seed)).unwrap();
        cb.fit_normalization().unwrap();
        let b = Boundary::fit(&cb, StatsGrouping::AcrossYears, 2.0).unwrap();
        let key = |cfg: MiningConfig| -> HashSet<(usize, usize)> {
            mine_pairs(&cb, &b, &cfg).unwrap().pairs.iter().map(|p| (p.normal, p.outlier)).collect()
        };
        let subset = |a: &HashSet<(usize, usize)>, b: &HashSet<(usize, usize)>| a.is_subset(b);
        let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
        let all = |delta| MiningConfig { delta, max_diff: 3, ..Default::default() };
        prop_assert!(subset(&key(all(hi)), &key(all(lo))));
        let narrow = key(MiningConfig { delta: lo, max_diff: 1, ..Default::default() });
        let wide = key(MiningConfig { delta: lo, max_diff: 2, ..Default::default() });
        prop_assert!(subset(&narrow, &wide));
        prop_assert!(subset(&wide, &key(all(lo))));
    }

    #[test]
    fn cfa_invariants(seed in 0u64..1000) {
        let mut cb = generate_case_base(&small_scenario(seed)).unwrap();
        cb.fit_normalization().unwrap();
        let b = Boundary::fit(&cb, StatsGrouping::AcrossYears, 2.0).unwrap();
        let cfg = AugmentationConfig::default();
        let summary = mine_summary(&cb, &b, &cfg.mining).unwrap();
        if summary.best.is_empty() {
            return Ok(());
        }
        let index = PairIndex::from_summary(&summary, &cb).unwrap();
        let flags = b.outlier_flags(cb.cases()).unwrap();
        let probes: Vec<Case> = cb.cases().iter().zip(&flags).filter(|(_, o)| !**o).map(|(c, _)| c.clone()).collect();
        let batch = CfaBatch::run(&probes, &index, &b, &cfg).unwrap();
        prop_assert_eq!(batch.accepted.len() + batch.rejected.values().sum::<usize>(), probes.len());
        for s in &batch.accepted {
            let prov = &s.provenance;
            prop_assert_eq!(prov.generator, Generator::Cfa);
            prop_assert!(b.is_outlier(&s.case).unwrap());
            let probe_id = prov.source_probe_id.as_deref().unwrap();
            let prefix = format!("syn:cfa:{probe_id}:");
            prop_assert!(s.case.case_id.starts_with(&prefix));
            prop_assert_ne!(prov.source_normal_id.as_deref(), Some(probe_id));
            let p = &cb.cases()[cb.position(probe_id).unwrap()];
            let x_cf = &cb.cases()[cb.position(prov.source_outlier_id.as_deref().unwrap()).unwrap()];
            prop_assert!(!prov.diff_features.is_empty() && prov.diff_features.len() <= 2);
            for f in Feature::ALL {
                let want = if prov.diff_features.contains(f) { x_cf.value(f) } else { p.value(f) };
                prop_assert_eq!(s.case.value(f), want);
            }
            prop_assert_eq!(s.case.growth, x_cf.growth);
            prop_assert_eq!((&s.case.farm_id, s.case.date), (&p.farm_id, p.date));
        }
    }
}
