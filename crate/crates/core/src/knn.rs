//! Exact k-NN regression with neighbour provenance.
//!
//! Neighbours are the k training cases closest under
//! [`FeatureSchema::point_distance`], ties broken by the smaller case id.
//! The prediction is the arithmetic mean of their growth, summed in
//! neighbour order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boundary::Boundary;
use crate::error::{Error, Result};
use crate::model::{Case, CaseBase, FeatureSchema, Point};

pub const DEFAULT_K: usize = 30;

/// Offset keeping inverse-distance weights finite at distance 0.
const WEIGHT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    #[default]
    Uniform,
    InverseDistance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub test_case_id: String,
    pub month: u32,
    pub predicted_growth: f64,
    pub actual_growth: f64,
    pub absolute_error: f64,
    pub neighbor_ids: Vec<String>,
    pub neighbor_outlier_flags: Vec<bool>,
    pub neighbor_distances: Vec<f64>,
}

impl PredictionRecord {
    pub fn outlier_neighbors(&self) -> usize {
        self.neighbor_outlier_flags.iter().filter(|f| **f).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

pub struct KnnRegressor<'a> {
    train: &'a CaseBase,
    schema: FeatureSchema,
    points: Vec<Point>,
    flags: Vec<bool>,
    weighting: Weighting,
}

impl<'a> KnnRegressor<'a> {
    /// Regressor over `train` using its frozen schema.
    pub fn new(train: &'a CaseBase) -> Result<Self> {
        let schema = train.schema()?.clone();
        KnnRegressor::with_schema(train, schema)
    }

    pub fn with_schema(train: &'a CaseBase, schema: FeatureSchema) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Empty("training case base"));
        }
        if !train.is_frozen() {
            return Err(Error::NotFrozen);
        }
        let points = train.cases().par_iter().map(|c| schema.point(c)).collect();
        Ok(KnnRegressor {
            train,
            schema,
            points,
            flags: vec![false; train.len()],
            weighting: Weighting::Uniform,
        })
    }

    /// Marks each training case's outlier status for provenance.
    pub fn with_outlier_flags(mut self, flags: Vec<bool>) -> Result<Self> {
        if flags.len() != self.train.len() {
            return Err(Error::InvalidInput(format!(
                "{} outlier flags for {} training cases",
                flags.len(),
                self.train.len()
            )));
        }
        self.flags = flags;
        Ok(self)
    }

    pub fn with_boundary(self, boundary: &Boundary) -> Result<Self> {
        let flags = boundary.outlier_flags(self.train.cases())?;
        self.with_outlier_flags(flags)
    }

    pub fn with_weighting(mut self, weighting: Weighting) -> Self {
        self.weighting = weighting;
        self
    }

    pub fn train(&self) -> &CaseBase {
        self.train
    }

    /// The `k` nearest training cases in (distance, case id) order.
    pub fn neighbors(&self, probe: &Case, k: usize) -> Vec<Neighbor> {
        let q = self.schema.point(probe);
        let k = k.min(self.points.len());
        let ranks = self.train.id_ranks();
        let mut best: Vec<(f64, u32, usize)> = Vec::with_capacity(k + 1);
        for (i, p) in self.points.iter().enumerate() {
            let d = self.schema.point_distance(&q, p);
            let key = (d, ranks[i]);
            if best.len() == k {
                let worst = best[k - 1];
                if key >= (worst.0, worst.1) {
                    continue;
                }
                best.pop();
            }
            let at = best.partition_point(|b| (b.0, b.1) < key);
            best.insert(at, (d, ranks[i], i));
        }
        best.into_iter()
            .map(|(distance, _, index)| Neighbor { index, distance })
            .collect()
    }

    /// Builds a record from an ordered neighbour list.
    pub fn record(&self, probe: &Case, neighbors: &[Neighbor]) -> PredictionRecord {
        let predicted = match self.weighting {
            Weighting::Uniform => {
                neighbors.iter().map(|n| self.train.get(n.index).growth).sum::<f64>() / neighbors.len() as f64
            }
            Weighting::InverseDistance => {
                let (num, den) = neighbors.iter().fold((0.0, 0.0), |(num, den), n| {
                    let w = 1.0 / (n.distance + WEIGHT_EPS);
                    (num + w * self.train.get(n.index).growth, den + w)
                });
                num / den
            }
        };
        PredictionRecord {
            test_case_id: probe.case_id.clone(),
            month: probe.month,
            predicted_growth: predicted,
            actual_growth: probe.growth,
            absolute_error: (probe.growth - predicted).abs(),
            neighbor_ids: neighbors
                .iter()
                .map(|n| self.train.get(n.index).case_id.clone())
                .collect(),
            neighbor_outlier_flags: neighbors.iter().map(|n| self.flags[n.index]).collect(),
            neighbor_distances: neighbors.iter().map(|n| n.distance).collect(),
        }
    }

    pub fn predict(&self, probe: &Case, k: usize) -> Result<PredictionRecord> {
        if k == 0 {
            return Err(Error::Config("k must be >= 1".into()));
        }
        Ok(self.record(probe, &self.neighbors(probe, k)))
    }

    /// Predictions for every test case, in test order.
    pub fn predict_batch(&self, tests: &[Case], k: usize) -> Result<Vec<PredictionRecord>> {
        if k == 0 {
            return Err(Error::Config("k must be >= 1".into()));
        }
        Ok(tests
            .par_iter()
            .map(|t| self.record(t, &self.neighbors(t, k)))
            .collect())
    }

    /// Neighbour lists of length `k` for every test case.
    pub fn neighbor_table(&self, tests: &[Case], k: usize) -> Vec<Vec<Neighbor>> {
        tests.par_iter().map(|t| self.neighbors(t, k)).collect()
    }
}

/// One-shot prediction for a single case.
pub fn predict(probe: &Case, train: &CaseBase, schema: &FeatureSchema, k: usize) -> Result<PredictionRecord> {
    KnnRegressor::with_schema(train, schema.clone())?.predict(probe, k)
}

/// CSV of prediction records; neighbour lists are pipe-delimited.
pub fn write_predictions<W: std::io::Write>(writer: W, records: &[PredictionRecord]) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record([
        "test_case_id",
        "month",
        "predicted_growth",
        "actual_growth",
        "absolute_error",
        "neighbor_ids",
        "neighbor_outlier_flags",
        "neighbor_distances",
    ])?;
    let join = |items: Vec<String>| items.join("|");
    for r in records {
        wtr.write_record([
            r.test_case_id.clone(),
            r.month.to_string(),
            r.predicted_growth.to_string(),
            r.actual_growth.to_string(),
            r.absolute_error.to_string(),
            r.neighbor_ids.join("|"),
            join(r.neighbor_outlier_flags.iter().map(|f| u8::from(*f).to_string()).collect()),
            join(r.neighbor_distances.iter().map(|d| d.to_string()).collect()),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::case;
    use crate::model::SchemaConfig;

    fn train_of(temps: &[(f64, f64)]) -> CaseBase {
        let cases: Vec<Case> = temps
            .iter()
            .enumerate()
            .map(|(i, &(t, g))| {
                let mut c = case(&format!("t{i:02}"), 10 + (i as u32 % 5), t);
                c.growth = g;
                c.rain = 1.0 + i as f64;
                c.cover = 500.0 + 10.0 * i as f64;
                c.solar_radiation = 900.0 + i as f64;
                c
            })
            .collect();
        let mut cb = CaseBase::from_cases(cases, SchemaConfig::default()).unwrap();
        cb.fit_normalization().unwrap();
        cb
    }

    #[test]
    fn k_is_truncated_to_train_size() {
        let mut a = case("a", 10, 5.0);
        a.growth = 50.0;
        let schema = train_of(&[(1.0, 1.0), (2.0, 2.0), (3.0, 3.0)]).schema().unwrap().clone();
        let cb = CaseBase::frozen_with(vec![a], schema).unwrap();
        let knn = KnnRegressor::new(&cb).unwrap();
        let mut probe = case("p", 20, 9.0);
        probe.growth = 42.0;
        let r = knn.predict(&probe, 30).unwrap();
        assert_eq!(r.predicted_growth, 50.0);
        assert_eq!(r.absolute_error, 8.0);
        assert_eq!(r.neighbor_ids, vec!["a"]);
    }

    #[test]
    fn exact_match_at_k1_returns_its_growth() {
        let cb = train_of(&[(1.0, 10.0), (5.0, 20.0), (9.0, 30.0)]);
        let knn = KnnRegressor::new(&cb).unwrap();
        let probe = cb.get(1).clone();
        let r = knn.predict(&probe, 1).unwrap();
        assert_eq!(r.predicted_growth, 20.0);
        assert_eq!(r.neighbor_distances, vec![0.0]);
    }

    #[test]
    fn full_k_is_global_mean() {
        let data = [(1.0, 10.0), (5.0, 20.0), (9.0, 33.0), (2.0, 7.0)];
        let cb = train_of(&data);
        let knn = KnnRegressor::new(&cb).unwrap();
        let r = knn.predict(&case("p", 30, 3.0), data.len()).unwrap();
        assert_eq!(r.predicted_growth, (10.0 + 20.0 + 33.0 + 7.0) / 4.0);
        assert!(r.neighbor_distances.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn ties_break_on_case_id() {
        let schema = train_of(&[(1.0, 1.0), (2.0, 2.0), (3.0, 3.0)]).schema().unwrap().clone();
        let mut b = case("b", 10, 5.0);
        b.growth = 1.0;
        let mut a = case("a", 10, 5.0);
        a.growth = 2.0;
        let cb = CaseBase::frozen_with(vec![b, a], schema).unwrap();
        let knn = KnnRegressor::new(&cb).unwrap();
        let r = knn.predict(&case("p", 10, 5.0), 1).unwrap();
        assert_eq!(r.neighbor_ids, vec!["a"]);
    }

    #[test]
    fn batch_matches_single_predictions() {
        let cb = train_of(&[(1.0, 10.0), (5.0, 20.0), (9.0, 30.0), (4.0, 12.0), (6.0, 3.0)]);
        let knn = KnnRegressor::new(&cb).unwrap();
        let tests: Vec<Case> = (0..6).map(|i| case(&format!("p{i}"), 8 + i, i as f64 * 1.7)).collect();
        let batch = knn.predict_batch(&tests, 3).unwrap();
        for (t, r) in tests.iter().zip(&batch) {
            assert_eq!(&knn.predict(t, 3).unwrap(), r);
        }
        assert!(knn.predict_batch(&[], 3).unwrap().is_empty());
    }

    #[test]
    fn scaling_targets_scales_predictions() {
        let base = [(1.0, 10.0), (5.0, 20.0), (9.0, 30.0), (4.0, 12.0)];
        let scaled: Vec<_> = base.iter().map(|&(t, g)| (t, 4.0 * g)).collect();
        let (a, b) = (train_of(&base), train_of(&scaled));
        let (ka, kb) = (KnnRegressor::new(&a).unwrap(), KnnRegressor::new(&b).unwrap());
        let p = case("p", 11, 4.4);
        assert_eq!(
            4.0 * ka.predict(&p, 3).unwrap().predicted_growth,
            kb.predict(&p, 3).unwrap().predicted_growth
        );
    }

    #[test]
    fn inverse_distance_weighting_prefers_the_closest() {
        let cb = train_of(&[(1.0, 10.0), (5.0, 20.0), (9.0, 30.0)]);
        let knn = KnnRegressor::new(&cb).unwrap().with_weighting(Weighting::InverseDistance);
        let r = knn.predict(&cb.get(0).clone(), 3).unwrap();
        assert!((r.predicted_growth - 10.0).abs() < 1e-6);
    }

    #[test]
    fn zero_k_rejected() {
        let cb = train_of(&[(1.0, 10.0), (5.0, 20.0)]);
        let knn = KnnRegressor::new(&cb).unwrap();
        assert!(knn.predict(&case("p", 10, 1.0), 0).is_err());
    }

    #[test]
    fn predictions_csv_pipes_neighbours() {
        let cb = train_of(&[(1.0, 10.0), (5.0, 20.0)]);
        let knn = KnnRegressor::new(&cb)
            .unwrap()
            .with_outlier_flags(vec![true, false])
            .unwrap();
        let r = knn.predict(&cb.get(0).clone(), 2).unwrap();
        let mut buf = Vec::new();
        write_predictions(&mut buf, &[r]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let row = text.lines().nth(1).unwrap();
        assert!(row.starts_with("t00,"), "{row}");
        assert!(row.contains(",t00|t01,1|0,0|"), "{row}");
    }
}
