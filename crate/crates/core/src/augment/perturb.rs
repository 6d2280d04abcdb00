//! Perturbation baseline with proximity/diversity selection.
//!
//! For a non-outlier probe, Gaussian perturbations of each weather feature
//! are drawn (sd = scale × training sd), rain and solar radiation are
//! clamped at zero, and candidates that cross the outlier boundary are kept.
//! From those, a set of size m minimizing
//!
//! ```text
//! λ1 · mean d(c, p)  −  λ2 · mean d(c_i, c_j)
//! ```
//!
//! is selected. Growth targets are imputed from the nearest real outliers.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::{synthetic_id, Generator, PerturbConfig, Provenance, SyntheticCase, TargetPolicy};
use crate::boundary::Boundary;
use crate::error::{Error, Result};
use crate::model::{Case, CaseBase, Feature, FeatureSchema, FeatureSet, Point};
use crate::rng;

/// Subsets enumerated exhaustively up to this many; larger pools fall back
/// to greedy selection refined by single swaps.
pub const EXHAUSTIVE_LIMIT: u64 = 5_000;

/// Objective of a selected set. Lower is better.
pub fn selection_score(
    subset: &[usize],
    to_probe: &[f64],
    pairwise: &dyn Fn(usize, usize) -> f64,
    proximity_weight: f64,
    diversity_weight: f64,
) -> f64 {
    if subset.is_empty() {
        return 0.0;
    }
    let proximity = subset.iter().map(|&i| to_probe[i]).sum::<f64>() / subset.len() as f64;
    let mut spread = 0.0;
    let mut pairs = 0usize;
    for (a, &i) in subset.iter().enumerate() {
        for &j in &subset[a + 1..] {
            spread += pairwise(i, j);
            pairs += 1;
        }
    }
    let diversity = if pairs == 0 { 0.0 } else { spread / pairs as f64 };
    proximity_weight * proximity - diversity_weight * diversity
}

fn binomial(n: usize, k: usize) -> u64 {
    let k = k.min(n - k) as u64;
    let mut acc: u64 = 1;
    for i in 0..k {
        acc = acc.saturating_mul(n as u64 - i) / (i + 1);
        if acc > EXHAUSTIVE_LIMIT {
            return u64::MAX;
        }
    }
    acc
}

/// Picks `m` of the candidates minimizing [`selection_score`]; returns
/// their indices in ascending order. All candidates are returned when there
/// are no more than `m`.
pub fn select_diverse(
    to_probe: &[f64],
    pairwise: &dyn Fn(usize, usize) -> f64,
    m: usize,
    proximity_weight: f64,
    diversity_weight: f64,
) -> Vec<usize> {
    let n = to_probe.len();
    if n <= m {
        return (0..n).collect();
    }
    let score = |s: &[usize]| selection_score(s, to_probe, pairwise, proximity_weight, diversity_weight);

    if binomial(n, m) <= EXHAUSTIVE_LIMIT {
        let mut current: Vec<usize> = (0..m).collect();
        let mut best = current.clone();
        let mut best_score = score(&current);
        // next combination in lexicographic order
        while let Some(pos) = (0..m).rev().find(|&i| current[i] < n - m + i) {
            current[pos] += 1;
            for i in pos + 1..m {
                current[i] = current[i - 1] + 1;
            }
            let s = score(&current);
            if s < best_score {
                best_score = s;
                best.clone_from(&current);
            }
        }
        return best;
    }

    let mut chosen: Vec<usize> = Vec::with_capacity(m);
    for _ in 0..m {
        let mut pick: Option<(usize, f64)> = None;
        for c in 0..n {
            if chosen.contains(&c) {
                continue;
            }
            chosen.push(c);
            let s = score(&chosen);
            chosen.pop();
            if pick.map_or(true, |(_, ps)| s < ps) {
                pick = Some((c, s));
            }
        }
        chosen.push(pick.expect("n > m").0);
    }
    let mut current_score = score(&chosen);
    let mut improved = true;
    while improved {
        improved = false;
        for slot in 0..m {
            for c in 0..n {
                if chosen.contains(&c) {
                    continue;
                }
                let old = chosen[slot];
                chosen[slot] = c;
                let s = score(&chosen);
                if s < current_score {
                    current_score = s;
                    improved = true;
                } else {
                    chosen[slot] = old;
                }
            }
        }
    }
    chosen.sort_unstable();
    chosen
}

/// Perturbation generator bound to a training case base.
pub struct PerturbGenerator<'a> {
    schema: &'a FeatureSchema,
    boundary: &'a Boundary,
    cfg: &'a PerturbConfig,
    seed: u64,
    outliers: Vec<(Point, u32, f64)>,
}

impl<'a> PerturbGenerator<'a> {
    /// `train` supplies the perturbation scales (its normalization) and the
    /// real outlier cases used to impute growth.
    pub fn new(train: &'a CaseBase, boundary: &'a Boundary, cfg: &'a PerturbConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let schema = train.schema()?;
        let flags = boundary.outlier_flags(train.cases())?;
        let ranks = train.id_ranks();
        let outliers: Vec<_> = train
            .cases()
            .iter()
            .enumerate()
            .filter(|(i, _)| flags[*i])
            .map(|(i, c)| (schema.point(c), ranks[i], c.growth))
            .collect();
        if outliers.is_empty() {
            return Err(Error::Empty("outlier cases for growth imputation"));
        }
        Ok(PerturbGenerator {
            schema,
            boundary,
            cfg,
            seed,
            outliers,
        })
    }

    fn impute_growth(&self, candidate: &Case) -> f64 {
        let q = self.schema.point(candidate);
        let k = self.cfg.impute_neighbors.min(self.outliers.len());
        let mut nearest: Vec<(f64, u32, f64)> = Vec::with_capacity(k + 1);
        for (p, rank, growth) in &self.outliers {
            let d = self.schema.point_distance(&q, p);
            if nearest.len() == k {
                let worst = nearest[k - 1];
                if (d, *rank) >= (worst.0, worst.1) {
                    continue;
                }
                nearest.pop();
            }
            let at = nearest.partition_point(|n| (n.0, n.1) < (d, *rank));
            nearest.insert(at, (d, *rank, *growth));
        }
        nearest.iter().map(|n| n.2).sum::<f64>() / nearest.len() as f64
    }

    /// Boundary-crossing perturbations of `p`, before selection.
    pub fn candidates(&self, p: &Case) -> Result<Vec<Case>> {
        let mut rng = rng::stream(self.seed, &format!("perturbation/{}", p.case_id));
        let norm = self.schema.normalization();
        let mut kept = Vec::new();
        for _ in 0..self.cfg.samples {
            let mut c = p.clone();
            for f in Feature::WEATHER {
                let z: f64 = StandardNormal.sample(&mut rng);
                let sd = self.cfg.scale_for(f) * norm.get(f).sd;
                let mut v = p.value(f) + z * sd;
                if matches!(f, Feature::Rain | Feature::SolarRadiation) {
                    v = v.max(0.0);
                }
                c.set_value(f, v);
            }
            if self.boundary.is_outlier(&c)? {
                kept.push(c);
            }
        }
        Ok(kept)
    }

    pub fn generate(&self, p: &Case) -> Result<Vec<SyntheticCase>> {
        if self.boundary.is_outlier(p)? {
            return Err(Error::ProbeIsOutlier(p.case_id.clone()));
        }
        let candidates = self.candidates(p)?;
        if candidates.is_empty() {
            log::debug!("probe {}: no perturbation crossed the boundary", p.case_id);
            return Ok(Vec::new());
        }
        let points: Vec<Point> = candidates.iter().map(|c| self.schema.point(c)).collect();
        let probe = self.schema.point(p);
        let to_probe: Vec<f64> = points.iter().map(|c| self.schema.point_distance(c, &probe)).collect();
        let pairwise = |i: usize, j: usize| self.schema.point_distance(&points[i], &points[j]);
        let chosen = select_diverse(
            &to_probe,
            &pairwise,
            self.cfg.select,
            self.cfg.proximity_weight,
            self.cfg.diversity_weight,
        );
        let weather = FeatureSet::weather();
        Ok(chosen
            .into_iter()
            .enumerate()
            .map(|(n, i)| {
                let mut case = candidates[i].clone();
                case.case_id = synthetic_id(Generator::Perturb, &p.case_id, n);
                case.growth = self.impute_growth(&case);
                SyntheticCase {
                    case,
                    provenance: Provenance {
                        generator: Generator::Perturb,
                        source_probe_id: Some(p.case_id.clone()),
                        source_normal_id: None,
                        source_outlier_id: None,
                        diff_features: FeatureSet::EMPTY,
                        transferred: weather,
                        target_policy: Some(TargetPolicy::Impute),
                    },
                }
            })
            .collect())
    }

    /// Runs [`generate`](Self::generate) over all probes; output follows
    /// probe order. Also returns how many probes yielded nothing.
    pub fn generate_all(&self, probes: &[Case]) -> Result<(Vec<SyntheticCase>, usize)> {
        let per_probe: Vec<Vec<SyntheticCase>> = probes
            .par_iter()
            .map(|p| self.generate(p))
            .collect::<Result<_>>()?;
        let empty = per_probe.iter().filter(|v| v.is_empty()).count();
        if empty > 0 {
            log::warn!("{empty} of {} probe(s) produced no boundary-crossing perturbation", probes.len());
        }
        Ok((per_probe.into_iter().flatten().collect(), empty))
    }
}

/// One-shot form of [`PerturbGenerator::generate`].
pub fn perturb_generate(
    p: &Case,
    train: &CaseBase,
    boundary: &Boundary,
    cfg: &PerturbConfig,
    seed: u64,
) -> Result<Vec<SyntheticCase>> {
    PerturbGenerator::new(train, boundary, cfg, seed)?.generate(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::{StatsGrouping, StatsKey, WeekFeatureStats, WeeklyStats, WeeklyStatsEntry};
    use crate::model::tests::case;
    use crate::model::{FeatureStat, Normalization, SchemaConfig};
    use proptest::prelude::*;

    fn boundary() -> Boundary {
        let f = |mean, sd| WeekFeatureStats { mean, sd, count: 300 };
        let stats = WeeklyStats::from_entries(
            StatsGrouping::AcrossYears,
            [WeeklyStatsEntry {
                key: StatsKey { year: None, week: 31 },
                features: [f(5.0, 2.0), f(18.0, 1.5), f(1400.0, 150.0)],
            }],
        );
        Boundary::new(stats, 2.0).unwrap()
    }

    fn train() -> CaseBase {
        let s = |mean, sd| FeatureStat { mean, sd };
        let stats = [s(25.0, 10.0), s(800.0, 200.0), s(5.0, 4.0), s(14.0, 4.0), s(1100.0, 400.0)];
        let n = Normalization::from_stats(stats).unwrap();
        let schema = FeatureSchema::new(&SchemaConfig::default(), n).unwrap();
        let mut cases = Vec::new();
        for i in 0..8 {
            let mut c = case(&format!("o{i}"), 31, 22.0 + i as f64);
            c.growth = 10.0 + i as f64;
            cases.push(c);
        }
        let mut normal = case("n", 31, 18.0);
        normal.rain = 5.0;
        normal.solar_radiation = 1400.0;
        cases.push(normal);
        CaseBase::frozen_with(cases, schema).unwrap()
    }

    fn probe() -> Case {
        let mut p = case("p", 31, 18.0);
        p.rain = 5.0;
        p.solar_radiation = 1400.0;
        p
    }

    #[test]
    fn zero_scale_never_crosses() {
        let cb = train();
        let cfg = PerturbConfig {
            scale: 0.0,
            ..Default::default()
        };
        assert!(perturb_generate(&probe(), &cb, &boundary(), &cfg, 1).unwrap().is_empty());
    }

    #[test]
    fn single_pick_without_diversity_is_the_nearest_candidate() {
        let cb = train();
        let b = boundary();
        let cfg = PerturbConfig {
            select: 1,
            diversity_weight: 0.0,
            ..Default::default()
        };
        let gen = PerturbGenerator::new(&cb, &b, &cfg, 3).unwrap();
        let candidates = gen.candidates(&probe()).unwrap();
        assert!(!candidates.is_empty());
        let schema = cb.schema().unwrap();
        let nearest = candidates
            .iter()
            .min_by(|a, b| schema.distance(a, &probe()).total_cmp(&schema.distance(b, &probe())))
            .unwrap();
        let out = gen.generate(&probe()).unwrap();
        assert_eq!(out.len(), 1);
        for f in Feature::WEATHER {
            assert_eq!(out[0].case.value(f), nearest.value(f));
        }
    }

    #[test]
    fn outputs_are_valid_outliers_with_nonnegative_weather() {
        let cb = train();
        let b = boundary();
        let cfg = PerturbConfig {
            scale: 3.0,
            ..Default::default()
        };
        let out = perturb_generate(&probe(), &cb, &b, &cfg, 11).unwrap();
        assert_eq!(out.len(), cfg.select);
        for s in &out {
            assert!(b.is_outlier(&s.case).unwrap());
            assert!(s.case.rain >= 0.0 && s.case.solar_radiation >= 0.0);
            assert_eq!(s.case.week, 31);
            assert_eq!(s.provenance.target_policy, Some(TargetPolicy::Impute));
        }
        let again = perturb_generate(&probe(), &cb, &b, &cfg, 11).unwrap();
        assert_eq!(out, again);
    }

    #[test]
    fn imputed_growth_is_mean_of_nearest_outliers() {
        let cb = train();
        let b = boundary();
        let cfg = PerturbConfig {
            impute_neighbors: 2,
            ..Default::default()
        };
        let gen = PerturbGenerator::new(&cb, &b, &cfg, 0).unwrap();
        // o2 (24 °C) and o3 (25 °C) are tied nearest to 24.5 °C
        let mut c = case("c", 31, 24.5);
        c.growth = 0.0;
        assert_eq!(gen.impute_growth(&c), (12.0 + 13.0) / 2.0);
    }

    #[test]
    fn outlier_probe_is_an_error() {
        let cb = train();
        let p = cb.get(0).clone();
        assert!(matches!(
            perturb_generate(&p, &cb, &boundary(), &PerturbConfig::default(), 0),
            Err(Error::ProbeIsOutlier(_))
        ));
    }

    fn brute_force_best(to_probe: &[f64], pw: &[Vec<f64>], m: usize, l1: f64, l2: f64) -> f64 {
        fn rec(start: usize, picked: &mut Vec<usize>, m: usize, f: &mut dyn FnMut(&[usize]), n: usize) {
            if picked.len() == m {
                f(picked);
                return;
            }
            for i in start..n {
                picked.push(i);
                rec(i + 1, picked, m, f, n);
                picked.pop();
            }
        }
        let mut best = f64::INFINITY;
        let n = to_probe.len();
        rec(0, &mut Vec::new(), m.min(n), &mut |s: &[usize]| {
            let prox: f64 = s.iter().map(|&i| to_probe[i]).sum::<f64>() / s.len() as f64;
            let mut div = 0.0;
            let mut cnt = 0;
            for a in 0..s.len() {
                for b in a + 1..s.len() {
                    div += pw[s[a]][s[b]];
                    cnt += 1;
                }
            }
            let div = if cnt == 0 { 0.0 } else { div / cnt as f64 };
            best = best.min(l1 * prox - l2 * div);
        }, n);
        best
    }

    proptest! {
        #[test]
        fn selection_matches_exhaustive_search(
            coords in proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 1..=12),
            m in 1usize..=3,
            l1 in 0.0f64..2.0,
            l2 in 0.0f64..2.0,
        ) {
            let to_probe: Vec<f64> = coords.iter().map(|(x, y)| (x * x + y * y).sqrt()).collect();
            let pw: Vec<Vec<f64>> = coords
                .iter()
                .map(|a| coords.iter().map(|b| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()).collect())
                .collect();
            let pairwise = |i: usize, j: usize| pw[i][j];
            let chosen = select_diverse(&to_probe, &pairwise, m, l1, l2);
            let got = selection_score(&chosen, &to_probe, &pairwise, l1, l2);
            let want = brute_force_best(&to_probe, &pw, m, l1, l2);
            prop_assert!((got - want).abs() < 1e-12, "got {got}, want {want}");
        }

        #[test]
        fn greedy_path_returns_m_distinct(n in 30usize..60, seed in 0u64..100) {
            use rand::Rng;
            let mut rng = rng::stream(seed, "t");
            let to_probe: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let pairwise = |i: usize, j: usize| (to_probe[i] - to_probe[j]).abs();
            let chosen = select_diverse(&to_probe, &pairwise, 6, 1.0, 0.5);
            prop_assert_eq!(chosen.len(), 6);
            let mut dedup = chosen.clone();
            dedup.dedup();
            prop_assert_eq!(dedup.len(), 6);
        }
    }
}
