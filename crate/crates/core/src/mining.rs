//! Native counterfactual pair mining.
//!
//! A native counterfactual pair joins a non-outlier case `x` with an outlier
//! case `x′` from the same case base. Two cases differ on a weather feature
//! when their z-scores are more than `delta` apart; a pair is kept when it
//! differs on at least one and at most `max_diff` features.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boundary::Boundary;
use crate::error::{Error, Result};
use crate::model::{Case, CaseBase, Feature, FeatureSchema, FeatureSet, Point};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiningConfig {
    /// Difference threshold in normalized units.
    pub delta: f64,
    /// Per-feature thresholds that replace `delta`.
    pub delta_overrides: BTreeMap<Feature, f64>,
    pub max_diff: usize,
}

impl Default for MiningConfig {
    fn default() -> Self {
        MiningConfig {
            delta: 0.5,
            delta_overrides: BTreeMap::new(),
            max_diff: 2,
        }
    }
}

impl MiningConfig {
    pub fn delta_for(&self, feature: Feature) -> f64 {
        self.delta_overrides.get(&feature).copied().unwrap_or(self.delta)
    }

    pub fn validate(&self) -> Result<()> {
        let all = std::iter::once(self.delta).chain(self.delta_overrides.values().copied());
        for d in all {
            if !d.is_finite() || d < 0.0 {
                return Err(Error::Config(format!("delta must be finite and >= 0, got {d}")));
            }
        }
        if self.max_diff == 0 {
            return Err(Error::Config("max_diff must be >= 1".into()));
        }
        Ok(())
    }

    fn thresholds(&self) -> [f64; 5] {
        Feature::ALL.map(|f| self.delta_for(f))
    }
}

/// True when `x` and `x2` differ on `feature` by more than `delta` in
/// normalized units.
pub fn feature_differs(x: &Case, x2: &Case, feature: Feature, schema: &FeatureSchema, delta: f64) -> bool {
    let n = schema.normalization();
    (n.z(feature, x.value(feature)) - n.z(feature, x2.value(feature))).abs() > delta
}

fn diff_mask(a: &Point, b: &Point, universe: FeatureSet, thresholds: &[f64; 5]) -> FeatureSet {
    universe
        .iter()
        .filter(|f| (a.z(*f) - b.z(*f)).abs() > thresholds[f.index()])
        .collect()
}

/// A mined pair. `normal` and `outlier` index the case base it was mined
/// from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CfPair {
    pub normal: usize,
    pub outlier: usize,
    pub diff: FeatureSet,
    pub distance: f64,
}

impl CfPair {
    pub fn match_features(&self, universe: FeatureSet) -> FeatureSet {
        self.diff.complement_in(universe)
    }
}

/// All good pairs of a case base in (normal_id, outlier_id) order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairSet {
    pub pairs: Vec<CfPair>,
}

impl PairSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// CSV with columns `normal_id,outlier_id,diff_features,pair_distance`.
    pub fn write_csv<W: Write>(&self, cb: &CaseBase, writer: W) -> csv::Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["normal_id", "outlier_id", "diff_features", "pair_distance"])?;
        for p in &self.pairs {
            wtr.write_record([
                cb.get(p.normal).case_id.as_str(),
                cb.get(p.outlier).case_id.as_str(),
                &p.diff.to_string(),
                &p.distance.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_csv_file(&self, cb: &CaseBase, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(cb, std::io::BufWriter::new(file))
            .map_err(|e| Error::csv(path, e))
    }
}

struct Sides {
    normals: Vec<usize>,
    outliers: Vec<usize>,
    points: Vec<Point>,
}

fn sides(cb: &CaseBase, boundary: &Boundary, cfg: &MiningConfig) -> Result<Option<Sides>> {
    cfg.validate()?;
    let schema = cb.schema()?;
    let flags = boundary.outlier_flags(cb.cases())?;
    let (outliers, normals): (Vec<usize>, Vec<usize>) = (0..cb.len()).partition(|&i| flags[i]);
    if outliers.is_empty() || normals.is_empty() {
        log::warn!(
            "no counterfactual pairs possible: {} normal and {} outlier case(s)",
            normals.len(),
            outliers.len()
        );
        return Ok(None);
    }
    let points = cb.cases().par_iter().map(|c| schema.point(c)).collect();
    Ok(Some(Sides {
        normals,
        outliers,
        points,
    }))
}

/// Mines every good (normal, outlier) pair of a frozen case base.
pub fn mine_pairs(cb: &CaseBase, boundary: &Boundary, cfg: &MiningConfig) -> Result<PairSet> {
    let Some(sides) = sides(cb, boundary, cfg)? else {
        return Ok(PairSet::default());
    };
    let schema = cb.schema()?;
    let universe = schema.difference_features();
    let thresholds = cfg.thresholds();
    let Sides {
        normals,
        outliers,
        points,
    } = &sides;
    let mut pairs: Vec<CfPair> = normals
        .par_iter()
        .flat_map_iter(|&n| {
            outliers.iter().filter_map(move |&o| {
                let diff = diff_mask(&points[n], &points[o], universe, &thresholds);
                (!diff.is_empty() && diff.len() <= cfg.max_diff).then(|| CfPair {
                    normal: n,
                    outlier: o,
                    diff,
                    distance: schema.point_distance(&points[n], &points[o]),
                })
            })
        })
        .collect();
    let ranks = cb.id_ranks();
    pairs.sort_by_key(|p| (ranks[p.normal], ranks[p.outlier]));
    Ok(PairSet { pairs })
}

/// The reductions of a pair set that generation needs, mined without
/// materializing every pair.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MiningSummary {
    /// Best pair of each normal case that takes part in any pair, in
    /// normal_id order.
    pub best: Vec<CfPair>,
    /// Outlier cases taking part in any pair, in case_id order.
    pub outlier_members: Vec<usize>,
    pub pair_count: usize,
    /// Pair counts by number of difference features.
    pub diff_histogram: BTreeMap<usize, usize>,
    pub normals: usize,
    pub outliers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiningReport {
    pub normals: usize,
    pub outliers: usize,
    pub pair_count: usize,
    pub indexed_normals: usize,
    pub outlier_members: usize,
    pub diff_histogram: BTreeMap<usize, usize>,
    pub config: MiningConfig,
}

impl MiningSummary {
    pub fn report(&self, cfg: &MiningConfig) -> MiningReport {
        MiningReport {
            normals: self.normals,
            outliers: self.outliers,
            pair_count: self.pair_count,
            indexed_normals: self.best.len(),
            outlier_members: self.outlier_members.len(),
            diff_histogram: self.diff_histogram.clone(),
            config: cfg.clone(),
        }
    }
}

/// Smaller (distance, outlier case_id) wins.
fn better(candidate: &CfPair, current: &CfPair, ranks: &[u32]) -> bool {
    candidate
        .distance
        .total_cmp(&current.distance)
        .then(ranks[candidate.outlier].cmp(&ranks[current.outlier]))
        .is_lt()
}

/// Streaming form of [`mine_pairs`] followed by best-pair reduction.
pub fn mine_summary(cb: &CaseBase, boundary: &Boundary, cfg: &MiningConfig) -> Result<MiningSummary> {
    let Some(sides) = sides(cb, boundary, cfg)? else {
        return Ok(MiningSummary::default());
    };
    let schema = cb.schema()?;
    let universe = schema.difference_features();
    let thresholds = cfg.thresholds();
    let ranks = cb.id_ranks();
    let Sides {
        normals,
        outliers,
        points,
    } = &sides;

    struct Acc {
        best: Vec<CfPair>,
        members: Vec<bool>,
        count: usize,
        hist: BTreeMap<usize, usize>,
    }
    let fresh = || Acc {
        best: Vec::new(),
        members: vec![false; outliers.len()],
        count: 0,
        hist: BTreeMap::new(),
    };
    let acc = normals
        .par_iter()
        .fold(fresh, |mut acc, &n| {
            let mut best: Option<CfPair> = None;
            for (slot, &o) in outliers.iter().enumerate() {
                let diff = diff_mask(&points[n], &points[o], universe, &thresholds);
                if diff.is_empty() || diff.len() > cfg.max_diff {
                    continue;
                }
                let pair = CfPair {
                    normal: n,
                    outlier: o,
                    diff,
                    distance: schema.point_distance(&points[n], &points[o]),
                };
                acc.members[slot] = true;
                acc.count += 1;
                *acc.hist.entry(diff.len()).or_default() += 1;
                if best.as_ref().map_or(true, |b| better(&pair, b, ranks)) {
                    best = Some(pair);
                }
            }
            acc.best.extend(best);
            acc
        })
        .reduce(fresh, |mut a, b| {
            a.best.extend(b.best);
            for (m, other) in a.members.iter_mut().zip(b.members) {
                *m |= other;
            }
            a.count += b.count;
            for (k, v) in b.hist {
                *a.hist.entry(k).or_default() += v;
            }
            a
        });

    let mut best = acc.best;
    best.sort_by_key(|p| ranks[p.normal]);
    let mut outlier_members: Vec<usize> = outliers
        .iter()
        .zip(&acc.members)
        .filter_map(|(&o, &m)| m.then_some(o))
        .collect();
    outlier_members.sort_by_key(|&o| ranks[o]);
    Ok(MiningSummary {
        best,
        outlier_members,
        pair_count: acc.count,
        diff_histogram: acc.hist,
        normals: normals.len(),
        outliers: outliers.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub normal: Case,
    pub outlier: Case,
    pub diff: FeatureSet,
    pub distance: f64,
}

/// Nearest-neighbour index over the normal side of a pair set. Each indexed
/// normal case maps to its best pair.
#[derive(Debug, Clone)]
pub struct PairIndex {
    schema: FeatureSchema,
    entries: Vec<IndexEntry>,
    points: Vec<Point>,
}

impl PairIndex {
    /// Builds from best pairs already sorted by normal case id.
    fn from_best(best: &[CfPair], cb: &CaseBase) -> Result<Self> {
        if best.is_empty() {
            return Err(Error::Empty("counterfactual pair set"));
        }
        let schema = cb.schema()?.clone();
        let entries: Vec<IndexEntry> = best
            .iter()
            .map(|p| IndexEntry {
                normal: cb.get(p.normal).clone(),
                outlier: cb.get(p.outlier).clone(),
                diff: p.diff,
                distance: p.distance,
            })
            .collect();
        let points = entries.iter().map(|e| schema.point(&e.normal)).collect();
        Ok(PairIndex {
            schema,
            entries,
            points,
        })
    }

    pub fn from_pairs(pairs: &PairSet, cb: &CaseBase) -> Result<Self> {
        let ranks = cb.id_ranks();
        let mut best: BTreeMap<u32, CfPair> = BTreeMap::new();
        for p in &pairs.pairs {
            best.entry(ranks[p.normal])
                .and_modify(|b| {
                    if better(p, b, ranks) {
                        *b = *p;
                    }
                })
                .or_insert(*p);
        }
        let best: Vec<CfPair> = best.into_values().collect();
        PairIndex::from_best(&best, cb)
    }

    pub fn from_summary(summary: &MiningSummary, cb: &CaseBase) -> Result<Self> {
        PairIndex::from_best(&summary.best, cb)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    /// Nearest indexed normal case to `probe`, skipping any entry whose
    /// normal case has id `exclude`. Ties go to the smaller case id.
    pub fn nearest(&self, probe: &Case, exclude: Option<&str>) -> Option<(&IndexEntry, f64)> {
        let q = self.schema.point(probe);
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in self.points.iter().enumerate() {
            if exclude == Some(self.entries[i].normal.case_id.as_str()) {
                continue;
            }
            let d = self.schema.point_distance(&q, p);
            if best.map_or(true, |(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        best.map(|(i, d)| (&self.entries[i], d))
    }
}
