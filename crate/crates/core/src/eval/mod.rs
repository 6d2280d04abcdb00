//! Experiment runners: outlier inclusion versus exclusion, the k sweep,
//! the counterfactual dataset comparison and merged augmentation.

mod stats;
mod tables;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use stats::{one_way_anova, paired_t_test, welch_t_test, Anova, TTest};
pub use tables::{
    month_name, write_case_errors, write_fig3, write_month_table, write_table1, MonthTableRow,
};

use crate::augment::{Experiment2Datasets, Generator};
use crate::boundary::{compute_weekly_stats_from, Boundary, StatsGrouping};
use crate::error::{Error, Result};
use crate::knn::{KnnRegressor, Neighbor, PredictionRecord};
use crate::model::{Case, CaseBase, FeatureSchema};

/// Which cases the weekly boundary statistics are computed from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatsMode {
    #[default]
    TrainOnly,
    Full,
}

/// Fits the outlier boundary for an experiment.
pub fn fit_boundary(
    train: &CaseBase,
    test: &CaseBase,
    mode: StatsMode,
    grouping: StatsGrouping,
    outlier_z: f64,
) -> Result<Boundary> {
    let stats = match mode {
        StatsMode::TrainOnly => compute_weekly_stats_from(train.cases(), grouping)?,
        StatsMode::Full => {
            let all: Vec<Case> = train.cases().iter().chain(test.cases()).cloned().collect();
            compute_weekly_stats_from(&all, grouping)?
        }
    };
    Boundary::new(stats, outlier_z)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonthMae {
    pub n: usize,
    pub mae: f64,
}

/// Accuracy of one condition on a test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub k: usize,
    pub training_cases: usize,
    pub n: usize,
    pub mae: f64,
    pub per_month: BTreeMap<u32, MonthMae>,
    #[serde(skip)]
    pub records: Vec<PredictionRecord>,
}

impl EvalReport {
    pub fn from_records(
        label: impl Into<String>,
        k: usize,
        training_cases: usize,
        records: Vec<PredictionRecord>,
    ) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Empty("test set"));
        }
        let mut sums: BTreeMap<u32, (usize, f64)> = BTreeMap::new();
        for r in &records {
            let e = sums.entry(r.month).or_default();
            e.0 += 1;
            e.1 += r.absolute_error;
        }
        let per_month = sums
            .into_iter()
            .map(|(m, (n, s))| (m, MonthMae { n, mae: s / n as f64 }))
            .collect();
        Ok(EvalReport {
            label: label.into(),
            k,
            training_cases,
            n: records.len(),
            mae: mean_error(&records),
            per_month,
            records,
        })
    }

    pub fn absolute_errors(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.absolute_error).collect()
    }
}

fn mean_error(records: &[PredictionRecord]) -> f64 {
    records.iter().map(|r| r.absolute_error).sum::<f64>() / records.len() as f64
}

fn pct(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        100.0 * part as f64 / whole as f64
    }
}

/// Evaluates a frozen training case base on every test case.
pub fn evaluate(
    label: &str,
    train: &CaseBase,
    train_flags: Vec<bool>,
    test: &[Case],
    k: usize,
) -> Result<EvalReport> {
    let regressor = KnnRegressor::new(train)?.with_outlier_flags(train_flags)?;
    let records = regressor.predict_batch(test, k)?;
    EvalReport::from_records(label, k, train.len(), records)
}

/// When a test case counts as solved by training outliers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolvedBy {
    /// More than half of the neighbours are outliers.
    #[default]
    Majority,
    AtLeastOne,
    /// Outlier neighbours carry more than half the inverse-distance weight.
    WeightedMajority,
}

impl SolvedBy {
    pub fn holds(self, record: &PredictionRecord) -> bool {
        match self {
            SolvedBy::Majority => 2 * record.outlier_neighbors() > record.neighbor_ids.len(),
            SolvedBy::AtLeastOne => record.outlier_neighbors() > 0,
            SolvedBy::WeightedMajority => {
                let w = |d: f64| 1.0 / (d + 1e-9);
                let total: f64 = record.neighbor_distances.iter().map(|d| w(*d)).sum();
                let outl: f64 = record
                    .neighbor_distances
                    .iter()
                    .zip(&record.neighbor_outlier_flags)
                    .filter(|(_, f)| **f)
                    .map(|(d, _)| w(*d))
                    .sum();
                2.0 * outl > total
            }
        }
    }
}

impl std::str::FromStr for SolvedBy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "majority" => Ok(SolvedBy::Majority),
            "at_least_one" | "at-least-one" => Ok(SolvedBy::AtLeastOne),
            "weighted_majority" | "weighted-majority" => Ok(SolvedBy::WeightedMajority),
            _ => Err(Error::Config(format!("unknown solved-by rule `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ContingencyRow {
    pub n: usize,
    pub training_outliers: usize,
    pub training_non_outliers: usize,
    pub pct_training_outliers: f64,
    pub pct_training_non_outliers: f64,
}

impl ContingencyRow {
    fn push(&mut self, solved_by_outliers: bool) {
        self.n += 1;
        if solved_by_outliers {
            self.training_outliers += 1;
        } else {
            self.training_non_outliers += 1;
        }
        self.pct_training_outliers = pct(self.training_outliers, self.n);
        self.pct_training_non_outliers = pct(self.training_non_outliers, self.n);
    }
}

/// Test outliers and non-outliers against whether training outliers
/// solved them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub solved_by: SolvedBy,
    pub good_threshold: f64,
    pub test_outliers: ContingencyRow,
    pub test_non_outliers: ContingencyRow,
}

impl ContingencyTable {
    /// Builds the table from the records of the full-training condition.
    /// Non-outlier tests enter only with a good prediction (AE at or below
    /// `good_threshold`); outlier tests enter unconditionally unless
    /// `filter_outliers` is set.
    pub fn build(
        records: &[PredictionRecord],
        test_flags: &[bool],
        good_threshold: f64,
        solved_by: SolvedBy,
        filter_outliers: bool,
    ) -> Result<Self> {
        let mut table = ContingencyTable {
            solved_by,
            good_threshold,
            test_outliers: ContingencyRow::default(),
            test_non_outliers: ContingencyRow::default(),
        };
        for (r, &outlier) in records.iter().zip(test_flags) {
            let good = r.absolute_error <= good_threshold;
            if outlier && (good || !filter_outliers) {
                table.test_outliers.push(solved_by.holds(r));
            } else if !outlier && good {
                table.test_non_outliers.push(solved_by.holds(r));
            }
        }
        if table.test_outliers.n + table.test_non_outliers.n == 0 {
            return Err(Error::Empty("contingency test population"));
        }
        Ok(table)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMethod {
    Paired,
    Welch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Significance {
    pub method: TestMethod,
    #[serde(flatten)]
    pub test: TTest,
}

/// One-tailed test that `worse` has larger errors than `better`. Paired when
/// both reports cover the same test cases in the same order, Welch otherwise.
pub fn compare_errors(worse: &EvalReport, better: &EvalReport) -> Result<Significance> {
    let aligned = worse.records.len() == better.records.len()
        && worse
            .records
            .iter()
            .zip(&better.records)
            .all(|(a, b)| a.test_case_id == b.test_case_id);
    let (a, b) = (worse.absolute_errors(), better.absolute_errors());
    Ok(if aligned {
        Significance {
            method: TestMethod::Paired,
            test: paired_t_test(&a, &b)?,
        }
    } else {
        Significance {
            method: TestMethod::Welch,
            test: welch_t_test(&a, &b)?,
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Expt1aConfig {
    pub k: usize,
    pub solved_by: SolvedBy,
    /// Good-prediction threshold as a multiple of the year's MAE.
    pub good_factor: f64,
    pub filter_outliers: bool,
}

impl Default for Expt1aConfig {
    fn default() -> Self {
        Expt1aConfig {
            k: crate::knn::DEFAULT_K,
            solved_by: SolvedBy::Majority,
            good_factor: 1.0,
            filter_outliers: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expt1aResult {
    pub train_cases: usize,
    pub train_outliers: usize,
    pub test_cases: usize,
    pub test_outliers: usize,
    pub report_o: EvalReport,
    pub report_ex: EvalReport,
    pub contingency: ContingencyTable,
    pub significance: Significance,
}

fn check_disjoint_years(train: &CaseBase, test: &CaseBase) -> Result<()> {
    let years: BTreeSet<i32> = train.cases().iter().map(|c| c.year).collect();
    if let Some(c) = test.cases().iter().find(|c| years.contains(&c.year)) {
        return Err(Error::InvalidInput(format!(
            "test year {} also appears in the training set",
            c.year
        )));
    }
    Ok(())
}

/// Full training set versus the training set with outliers removed.
pub fn run_expt1a(
    train: &CaseBase,
    test: &CaseBase,
    boundary: &Boundary,
    cfg: &Expt1aConfig,
) -> Result<Expt1aResult> {
    check_disjoint_years(train, test)?;
    let train_flags = boundary.outlier_flags(train.cases())?;
    let test_flags = boundary.outlier_flags(test.cases())?;
    let report_o = evaluate("O", train, train_flags.clone(), test.cases(), cfg.k)?;
    let excluded = train.subset(|i, _| !train_flags[i])?;
    let n_ex = excluded.len();
    let report_ex = evaluate("EX", &excluded, vec![false; n_ex], test.cases(), cfg.k)?;
    let contingency = ContingencyTable::build(
        &report_o.records,
        &test_flags,
        report_o.mae * cfg.good_factor,
        cfg.solved_by,
        cfg.filter_outliers,
    )?;
    let significance = compare_errors(&report_ex, &report_o)?;
    Ok(Expt1aResult {
        train_cases: train.len(),
        train_outliers: train_flags.iter().filter(|f| **f).count(),
        test_cases: test.len(),
        test_outliers: test_flags.iter().filter(|f| **f).count(),
        report_o,
        report_ex,
        contingency,
        significance,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KSweepRow {
    pub k: usize,
    pub mae: f64,
    pub good_tests: usize,
    pub good_outlier_tests: usize,
    pub with_outlier_neighbor: usize,
    pub pct_with_outlier_neighbor: f64,
    pub majority_outlier: usize,
    pub pct_majority_outlier: f64,
    /// Good outlier tests at the largest k, held fixed across rows.
    pub frozen_population: usize,
    pub frozen_with_outlier_neighbor: usize,
    pub frozen_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expt1bResult {
    pub k_max: usize,
    pub test_outliers: usize,
    pub rows: Vec<KSweepRow>,
}

/// Outlier usage among good outlier predictions for k = 1..=k_max, computed
/// from one neighbour table of length k_max.
pub fn run_expt1b(train: &CaseBase, test: &CaseBase, boundary: &Boundary, k_max: usize) -> Result<Expt1bResult> {
    if k_max == 0 {
        return Err(Error::Config("k_max must be >= 1".into()));
    }
    check_disjoint_years(train, test)?;
    let regressor = KnnRegressor::new(train)?.with_boundary(boundary)?;
    let test_flags = boundary.outlier_flags(test.cases())?;
    let table: Vec<Vec<Neighbor>> = regressor.neighbor_table(test.cases(), k_max);
    let records_at = |k: usize| -> Vec<PredictionRecord> {
        test.cases()
            .iter()
            .zip(&table)
            .map(|(t, n)| regressor.record(t, &n[..k.min(n.len())]))
            .collect()
    };
    let good_outliers = |records: &[PredictionRecord]| -> Vec<bool> {
        let mae = mean_error(records);
        records
            .iter()
            .zip(&test_flags)
            .map(|(r, &o)| o && r.absolute_error <= mae)
            .collect()
    };
    let frozen = good_outliers(&records_at(k_max));
    let frozen_population = frozen.iter().filter(|f| **f).count();

    let mut rows = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        let records = records_at(k);
        let mae = mean_error(&records);
        let good = good_outliers(&records);
        let mut row = KSweepRow {
            k,
            mae,
            good_tests: records.iter().filter(|r| r.absolute_error <= mae).count(),
            good_outlier_tests: 0,
            with_outlier_neighbor: 0,
            pct_with_outlier_neighbor: 0.0,
            majority_outlier: 0,
            pct_majority_outlier: 0.0,
            frozen_population,
            frozen_with_outlier_neighbor: 0,
            frozen_pct: 0.0,
        };
        for ((r, &g), &f) in records.iter().zip(&good).zip(&frozen) {
            let any = r.outlier_neighbors() > 0;
            if g {
                row.good_outlier_tests += 1;
                row.with_outlier_neighbor += usize::from(any);
                row.majority_outlier += usize::from(SolvedBy::Majority.holds(r));
            }
            if f {
                row.frozen_with_outlier_neighbor += usize::from(any);
            }
        }
        row.pct_with_outlier_neighbor = pct(row.with_outlier_neighbor, row.good_outlier_tests);
        row.pct_majority_outlier = pct(row.majority_outlier, row.good_outlier_tests);
        row.frozen_pct = pct(row.frozen_with_outlier_neighbor, frozen_population);
        rows.push(row);
    }
    Ok(Expt1bResult {
        k_max,
        test_outliers: test_flags.iter().filter(|f| **f).count(),
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonthOutlierRate {
    pub n: usize,
    pub outliers: usize,
    pub rate: f64,
}

pub fn month_outlier_rates(cases: &[Case], flags: &[bool]) -> BTreeMap<u32, MonthOutlierRate> {
    let mut out: BTreeMap<u32, MonthOutlierRate> = BTreeMap::new();
    for (c, &f) in cases.iter().zip(flags) {
        let e = out.entry(c.month).or_insert(MonthOutlierRate {
            n: 0,
            outliers: 0,
            rate: 0.0,
        });
        e.n += 1;
        e.outliers += usize::from(f);
    }
    for e in out.values_mut() {
        e.rate = e.outliers as f64 / e.n as f64;
    }
    out
}

/// The month with the highest outlier rate; ties go to the earlier month.
pub fn most_disrupted_month(rates: &BTreeMap<u32, MonthOutlierRate>) -> Option<u32> {
    rates
        .iter()
        .fold(None, |best: Option<(u32, f64)>, (&m, r)| match best {
            Some((_, b)) if b >= r.rate => best,
            _ => Some((m, r.rate)),
        })
        .map(|(m, _)| m)
}

/// One condition of a dataset comparison: several training sets whose
/// results are averaged.
pub struct Condition {
    pub label: String,
    pub datasets: Vec<CaseBase>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionResult {
    pub label: String,
    pub selections: Vec<EvalReport>,
    /// Overall MAE averaged over selections.
    pub mae: f64,
    /// Per-month MAE averaged over selections.
    pub per_month: BTreeMap<u32, f64>,
    /// Per test case, AE averaged over selections.
    #[serde(skip)]
    pub mean_case_errors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthComparison {
    pub month: u32,
    pub n: usize,
    pub mae: BTreeMap<String, f64>,
    pub anova: Option<Anova>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonResult {
    pub k: usize,
    pub conditions: Vec<ConditionResult>,
    pub months: Vec<MonthComparison>,
    pub overall_anova: Option<Anova>,
    pub month_outlier_rate: BTreeMap<u32, MonthOutlierRate>,
    pub most_disrupted_month: Option<u32>,
}

impl ComparisonResult {
    pub fn condition(&self, label: &str) -> Option<&ConditionResult> {
        self.conditions.iter().find(|c| c.label == label)
    }

    pub fn month_table(&self) -> Vec<MonthTableRow> {
        self.conditions
            .iter()
            .map(|c| MonthTableRow {
                label: c.label.clone(),
                per_month: c.per_month.clone(),
                overall: c.mae,
            })
            .collect()
    }
}

fn mean(xs: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = xs.len() as f64;
    xs.sum::<f64>() / n
}

/// Evaluates each condition's datasets standalone on the test set and
/// compares conditions per month with a one-way ANOVA on per-case errors
/// averaged over selections.
pub fn compare_conditions(
    conditions: &[Condition],
    test: &[Case],
    test_flags: &[bool],
    k: usize,
) -> Result<ComparisonResult> {
    if test.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let mut results = Vec::with_capacity(conditions.len());
    for cond in conditions {
        if cond.datasets.is_empty() || cond.datasets.iter().any(|d| d.is_empty()) {
            return Err(Error::InvalidInput(format!("condition `{}` has an empty dataset", cond.label)));
        }
        let selections = cond
            .datasets
            .iter()
            .map(|d| evaluate(&cond.label, d, vec![false; d.len()], test, k))
            .collect::<Result<Vec<_>>>()?;
        let months: Vec<u32> = selections[0].per_month.keys().copied().collect();
        let per_month = months
            .iter()
            .map(|m| (*m, mean(selections.iter().map(|s| s.per_month[m].mae))))
            .collect();
        let mean_case_errors = (0..test.len())
            .map(|i| mean(selections.iter().map(|s| s.records[i].absolute_error)))
            .collect();
        results.push(ConditionResult {
            label: cond.label.clone(),
            mae: mean(selections.iter().map(|s| s.mae)),
            per_month,
            selections,
            mean_case_errors,
        });
    }

    let anova_over = |idx: &[usize]| -> Option<Anova> {
        let groups: Vec<Vec<f64>> = results
            .iter()
            .map(|r| idx.iter().map(|&i| r.mean_case_errors[i]).collect())
            .collect();
        let refs: Vec<&[f64]> = groups.iter().map(Vec::as_slice).collect();
        one_way_anova(&refs).ok()
    };
    let mut by_month: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, c) in test.iter().enumerate() {
        by_month.entry(c.month).or_default().push(i);
    }
    let months = by_month
        .iter()
        .map(|(&month, idx)| MonthComparison {
            month,
            n: idx.len(),
            mae: results.iter().map(|r| (r.label.clone(), r.per_month[&month])).collect(),
            anova: anova_over(idx),
        })
        .collect();
    let all: Vec<usize> = (0..test.len()).collect();
    let rates = month_outlier_rates(test, test_flags);
    Ok(ComparisonResult {
        k,
        overall_anova: anova_over(&all),
        most_disrupted_month: most_disrupted_month(&rates),
        month_outlier_rate: rates,
        conditions: results,
        months,
    })
}

/// Native, perturbation and CFA datasets each evaluated standalone under the
/// training normalization.
pub fn run_expt2(
    datasets: &Experiment2Datasets,
    train_schema: &FeatureSchema,
    test: &CaseBase,
    boundary: &Boundary,
    k: usize,
) -> Result<ComparisonResult> {
    let conditions = Generator::ALL
        .iter()
        .map(|&g| {
            let sets = datasets
                .by_generator(g)
                .iter()
                .map(|d| CaseBase::frozen_with(d.plain_cases(), train_schema.clone()))
                .collect::<Result<Vec<_>>>()?;
            Ok(Condition {
                label: g.label().to_string(),
                datasets: sets,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let flags = boundary.outlier_flags(test.cases())?;
    compare_conditions(&conditions, test.cases(), &flags, k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthDelta {
    pub month: u32,
    pub n: usize,
    pub test_outlier_rate: f64,
    pub mae_o: f64,
    pub mae_augmented: f64,
    /// `mae_o − mae_augmented`; positive is an improvement.
    pub improvement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedResult {
    pub added: usize,
    pub report_o: EvalReport,
    pub report_augmented: EvalReport,
    pub months: Vec<MonthDelta>,
    pub significance: Option<Significance>,
}

impl AugmentedResult {
    pub fn month_table(&self) -> Vec<MonthTableRow> {
        [&self.report_o, &self.report_augmented]
            .iter()
            .map(|r| MonthTableRow {
                label: r.label.clone(),
                per_month: r.per_month.iter().map(|(m, v)| (*m, v.mae)).collect(),
                overall: r.mae,
            })
            .collect()
    }
}

/// Full training set versus the training set merged with synthetic cases,
/// both under the training normalization.
pub fn run_augmented(
    train: &CaseBase,
    synthetic: &[Case],
    test: &CaseBase,
    boundary: &Boundary,
    k: usize,
) -> Result<AugmentedResult> {
    let schema = train.schema()?.clone();
    let train_flags = boundary.outlier_flags(train.cases())?;
    let report_o = evaluate("O", train, train_flags.clone(), test.cases(), k)?;
    let merged_cases: Vec<Case> = train.cases().iter().chain(synthetic).cloned().collect();
    let merged = CaseBase::frozen_with(merged_cases, schema)?;
    let mut merged_flags = train_flags;
    merged_flags.extend(boundary.outlier_flags(synthetic)?);
    let report_augmented = evaluate("O+CFA", &merged, merged_flags, test.cases(), k)?;

    let test_flags = boundary.outlier_flags(test.cases())?;
    let rates = month_outlier_rates(test.cases(), &test_flags);
    let months = report_o
        .per_month
        .iter()
        .map(|(&month, o)| {
            let a = report_augmented.per_month[&month];
            MonthDelta {
                month,
                n: o.n,
                test_outlier_rate: rates[&month].rate,
                mae_o: o.mae,
                mae_augmented: a.mae,
                improvement: o.mae - a.mae,
            }
        })
        .collect();
    Ok(AugmentedResult {
        added: synthetic.len(),
        significance: compare_errors(&report_o, &report_augmented).ok(),
        report_o,
        report_augmented,
        months,
    })
}
