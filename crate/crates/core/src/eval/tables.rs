//! Plot-ready CSV layouts.

use std::collections::BTreeMap;
use std::io::Write;

use super::{ContingencyTable, EvalReport, KSweepRow};

pub fn month_name(month: u32) -> &'static str {
    const NAMES: [&str; 12] = [
        "Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec",
    ];
    NAMES.get(month.wrapping_sub(1) as usize).copied().unwrap_or("?")
}

pub fn write_table1<W: Write>(writer: W, table: &ContingencyTable) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record([
        "test_population",
        "n",
        "training_outliers",
        "training_non_outliers",
        "pct_training_outliers",
        "pct_training_non_outliers",
    ])?;
    for (name, row) in [("outliers", &table.test_outliers), ("non_outliers", &table.test_non_outliers)] {
        wtr.write_record([
            name.to_string(),
            row.n.to_string(),
            row.training_outliers.to_string(),
            row.training_non_outliers.to_string(),
            row.pct_training_outliers.to_string(),
            row.pct_training_non_outliers.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_fig3<W: Write>(writer: W, rows: &[KSweepRow]) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record([
        "k",
        "mae",
        "good_tests",
        "good_outlier_tests",
        "with_outlier_neighbor",
        "pct_with_outlier_neighbor",
        "majority_outlier",
        "pct_majority_outlier",
        "frozen_population",
        "frozen_with_outlier_neighbor",
        "frozen_pct",
    ])?;
    for r in rows {
        wtr.write_record([
            r.k.to_string(),
            r.mae.to_string(),
            r.good_tests.to_string(),
            r.good_outlier_tests.to_string(),
            r.with_outlier_neighbor.to_string(),
            r.pct_with_outlier_neighbor.to_string(),
            r.majority_outlier.to_string(),
            r.pct_majority_outlier.to_string(),
            r.frozen_population.to_string(),
            r.frozen_with_outlier_neighbor.to_string(),
            r.frozen_pct.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// One row of a condition × month MAE table.
#[derive(Debug, Clone, PartialEq)]
pub struct MonthTableRow {
    pub label: String,
    pub per_month: BTreeMap<u32, f64>,
    pub overall: f64,
}

/// Conditions as rows, months as columns, then the overall MAE.
pub fn write_month_table<W: Write>(writer: W, rows: &[MonthTableRow]) -> csv::Result<()> {
    let months: Vec<u32> = rows
        .iter()
        .flat_map(|r| r.per_month.keys().copied())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["condition".to_string()];
    header.extend(months.iter().map(|m| month_name(*m).to_string()));
    header.push("overall".into());
    wtr.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.label.clone()];
        rec.extend(
            months
                .iter()
                .map(|m| r.per_month.get(m).map_or(String::new(), |v| v.to_string())),
        );
        rec.push(r.overall.to_string());
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Per-case absolute errors for each report, for re-checking aggregates.
pub fn write_case_errors<W: Write>(writer: W, reports: &[&EvalReport]) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["condition", "test_case_id", "month", "absolute_error"])?;
    for rep in reports {
        for r in &rep.records {
            wtr.write_record([
                rep.label.clone(),
                r.test_case_id.clone(),
                r.month.to_string(),
                r.absolute_error.to_string(),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}
