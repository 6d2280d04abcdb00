//! Case CSV reading and writing.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{Case, CaseBase, SchemaConfig};
use crate::error::{Error, Result};

pub const CASE_HEADER: [&str; 11] = [
    "case_id",
    "farm_id",
    "date",
    "week",
    "month",
    "year",
    "cover",
    "rain",
    "temperature",
    "solar_radiation",
    "growth",
];

/// Column names used when reading a case CSV. Defaults to [`CASE_HEADER`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnNames {
    pub case_id: String,
    pub farm_id: String,
    pub date: String,
    pub week: String,
    pub month: String,
    pub year: String,
    pub cover: String,
    pub rain: String,
    pub temperature: String,
    pub solar_radiation: String,
    pub growth: String,
}

impl Default for ColumnNames {
    fn default() -> Self {
        let [case_id, farm_id, date, week, month, year, cover, rain, temperature, solar_radiation, growth] =
            CASE_HEADER.map(String::from);
        ColumnNames {
            case_id,
            farm_id,
            date,
            week,
            month,
            year,
            cover,
            rain,
            temperature,
            solar_radiation,
            growth,
        }
    }
}

impl ColumnNames {
    fn in_order(&self) -> [&str; 11] {
        [
            &self.case_id,
            &self.farm_id,
            &self.date,
            &self.week,
            &self.month,
            &self.year,
            &self.cover,
            &self.rain,
            &self.temperature,
            &self.solar_radiation,
            &self.growth,
        ]
    }
}

/// Why an input row was dropped during ingestion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    MissingField,
    Unparseable,
    NonFinite,
    Negative,
    GrowthOutOfBounds,
    InconsistentDate,
    DuplicateId,
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DropReason::MissingField => "missing field",
            DropReason::Unparseable => "unparseable field",
            DropReason::NonFinite => "non-finite value",
            DropReason::Negative => "negative value",
            DropReason::GrowthOutOfBounds => "growth out of bounds",
            DropReason::InconsistentDate => "inconsistent date",
            DropReason::DuplicateId => "duplicate case id",
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows_read: usize,
    pub kept: usize,
    pub dropped: BTreeMap<DropReason, usize>,
}

impl IngestReport {
    pub fn dropped_total(&self) -> usize {
        self.dropped.values().sum()
    }
}

/// Reads and validates a case CSV. Rows failing a validity filter are
/// dropped and counted by reason; the rest form an unfrozen case base.
pub fn ingest_csv(path: impl AsRef<Path>, config: &SchemaConfig) -> Result<(CaseBase, IngestReport)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let (cb, report) = read_cases(file, config).map_err(|e| match e {
        Error::Csv { source, .. } => Error::csv(path, source),
        Error::NoValidRows(_) => Error::NoValidRows(path.to_path_buf()),
        other => other,
    })?;
    Ok((cb, report))
}

/// Reader-based form of [`ingest_csv`].
pub fn read_cases<R: Read>(reader: R, config: &SchemaConfig) -> Result<(CaseBase, IngestReport)> {
    config.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| Error::csv("<input>", e))?.clone();
    let mut positions = [0usize; 11];
    for (slot, name) in positions.iter_mut().zip(config.columns.in_order()) {
        *slot = header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MalformedHeader(format!("missing column `{name}`")))?;
    }

    let mut cb = CaseBase::new(config.clone());
    let mut report = IngestReport::default();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::csv("<input>", e))?;
        report.rows_read += 1;
        let outcome = parse_row(&record, &positions, config).and_then(|case| {
            if cb.position(&case.case_id).is_some() {
                Err(DropReason::DuplicateId)
            } else {
                Ok(case)
            }
        });
        match outcome {
            Ok(case) => {
                cb.insert(case)?;
                report.kept += 1;
            }
            Err(reason) => *report.dropped.entry(reason).or_default() += 1,
        }
    }
    if cb.is_empty() {
        return Err(Error::NoValidRows("<input>".into()));
    }
    for (reason, n) in &report.dropped {
        log::info!("dropped {n} row(s): {reason}");
    }
    Ok((cb, report))
}

fn parse_row(
    record: &csv::StringRecord,
    positions: &[usize; 11],
    config: &SchemaConfig,
) -> std::result::Result<Case, DropReason> {
    let mut fields = [""; 11];
    for (field, &pos) in fields.iter_mut().zip(positions) {
        *field = match record.get(pos) {
            Some(s) if !s.is_empty() => s,
            _ => return Err(DropReason::MissingField),
        };
    }
    let [case_id, farm_id, date, week, month, year, cover, rain, temperature, solar_radiation, growth] =
        fields;
    fn num<T: std::str::FromStr>(s: &str) -> std::result::Result<T, DropReason> {
        s.parse().map_err(|_| DropReason::Unparseable)
    }
    let case = Case {
        case_id: case_id.to_string(),
        farm_id: farm_id.to_string(),
        date: NaiveDate::parse_from_str(date, "%Y-%m-%d").map_err(|_| DropReason::Unparseable)?,
        week: num(week)?,
        month: num(month)?,
        year: num(year)?,
        cover: num(cover)?,
        rain: num(rain)?,
        temperature: num(temperature)?,
        solar_radiation: num(solar_radiation)?,
        growth: num(growth)?,
    };
    case.check()?;
    let [lo, hi] = config.growth_bounds;
    if case.growth < lo || case.growth > hi {
        return Err(DropReason::GrowthOutOfBounds);
    }
    Ok(case)
}

/// Writes cases in the standard case CSV layout. Floats use the shortest
/// representation that parses back to the same value.
pub fn write_cases<'a, W: Write, I: IntoIterator<Item = &'a Case>>(writer: W, cases: I) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(CASE_HEADER)?;
    for c in cases {
        wtr.write_record([
            c.case_id.clone(),
            c.farm_id.clone(),
            c.date.format("%Y-%m-%d").to_string(),
            c.week.to_string(),
            c.month.to_string(),
            c.year.to_string(),
            c.cover.to_string(),
            c.rain.to_string(),
            c.temperature.to_string(),
            c.solar_radiation.to_string(),
            c.growth.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_cases_csv<'a, I: IntoIterator<Item = &'a Case>>(path: impl AsRef<Path>, cases: I) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_cases(std::io::BufWriter::new(file), cases).map_err(|e| Error::csv(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const ROWS: &str = "\
case_id,farm_id,date,week,month,year,cover,rain,temperature,solar_radiation,growth
a,F1,2014-07-31,31,7,2014,650,14.1,13.9,417,9
b,F2,2017-08-03,31,8,2017,700,2.1,18.5,1400.5,62.5
";

    #[test]
    fn reads_valid_rows() {
        let (cb, report) = read_cases(ROWS.as_bytes(), &SchemaConfig::default()).unwrap();
        assert_eq!(cb.len(), 2);
        assert_eq!(report.kept, 2);
        assert_eq!(report.dropped_total(), 0);
        assert_eq!(cb.get(0).rain, 14.1);
    }

    #[test]
    fn drops_row_with_empty_temperature() {
        let input = format!("{ROWS}c,F3,2017-08-03,31,8,2017,700,2.1,,1400.5,62.5\n");
        let (cb, report) = read_cases(input.as_bytes(), &SchemaConfig::default()).unwrap();
        assert_eq!(cb.len(), 2);
        assert_eq!(report.dropped[&DropReason::MissingField], 1);
    }

    #[test]
    fn drops_each_invalid_kind() {
        let input = format!(
            "{ROWS}\
c,F3,2017-08-03,31,8,2017,700,2.1,NaN,1400.5,62.5
d,F3,2017-08-03,31,8,2017,700,-2.1,12,1400.5,62.5
e,F3,2017-08-03,31,8,2017,700,2.1,12,1400.5,250
f,F3,2017-08-03,30,8,2017,700,2.1,12,1400.5,50
g,F3,2017-08-03,31,8,2017,700,abc,12,1400.5,50
a,F3,2017-08-03,31,8,2017,700,2.1,12,1400.5,50
h,F3,2017-08-03,31,8
"
        );
        let (cb, report) = read_cases(input.as_bytes(), &SchemaConfig::default()).unwrap();
        assert_eq!(cb.len(), 2);
        let expected: BTreeMap<_, _> = [
            (DropReason::MissingField, 1),
            (DropReason::Unparseable, 1),
            (DropReason::NonFinite, 1),
            (DropReason::Negative, 1),
            (DropReason::GrowthOutOfBounds, 1),
            (DropReason::InconsistentDate, 1),
            (DropReason::DuplicateId, 1),
        ]
        .into_iter()
        .collect();
        assert_eq!(report.dropped, expected);
        assert_eq!(report.rows_read, 9);
    }

    #[test]
    fn header_must_contain_configured_columns() {
        let input = ROWS.replacen("growth", "gr", 1);
        assert!(matches!(
            read_cases(input.as_bytes(), &SchemaConfig::default()),
            Err(Error::MalformedHeader(_))
        ));
    }

    #[test]
    fn renamed_columns_are_honoured() {
        let input = ROWS.replacen("growth", "GrowthRateFarm", 1);
        let mut config = SchemaConfig::default();
        config.columns.growth = "GrowthRateFarm".into();
        let (cb, _) = read_cases(input.as_bytes(), &config).unwrap();
        assert_eq!(cb.get(1).growth, 62.5);
    }

    #[test]
    fn zero_valid_rows_is_an_error() {
        let input = "case_id,farm_id,date,week,month,year,cover,rain,temperature,solar_radiation,growth\n";
        assert!(matches!(
            read_cases(input.as_bytes(), &SchemaConfig::default()),
            Err(Error::NoValidRows(_))
        ));
    }

    #[test]
    fn write_then_read_round_trips() {
        let (cb, _) = read_cases(ROWS.as_bytes(), &SchemaConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_cases(&mut buf, cb.cases()).unwrap();
        let (back, _) = read_cases(buf.as_slice(), &SchemaConfig::default()).unwrap();
        assert_eq!(back, cb);
    }
}
