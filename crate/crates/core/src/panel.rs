//! Aggregate daily count series and their CSV representation.
//!
//! A panel holds the only real-world input of the engine: daily admissions,
//! discharges alive, in-hospital deaths and (optionally) positives and
//! out-of-hospital deaths. Day indices are zero-based offsets from
//! `start_date`.

use std::io::{Read, Write};
use std::path::Path;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{EstimationError, PanelError};

pub const CSV_HEADER: [&str; 6] = ["date", "n1", "n2", "n3", "n4", "n_out"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyPanel {
    start_date: NaiveDate,
    n1: Option<Vec<u64>>,
    n2: Vec<u64>,
    n3: Vec<u64>,
    n4: Vec<u64>,
    n_out: Option<Vec<u64>>,
    label: Option<String>,
}

impl DailyPanel {
    /// Builds a validated panel. `n2`, `n3`, `n4` (and the optional series)
    /// must share one length; cumulative exits may never exceed cumulative
    /// admissions.
    pub fn new(
        start_date: NaiveDate,
        n1: Option<Vec<u64>>,
        n2: Vec<u64>,
        n3: Vec<u64>,
        n4: Vec<u64>,
        n_out: Option<Vec<u64>>,
    ) -> Result<Self, PanelError> {
        let days = n2.len();
        if days == 0 {
            return Err(PanelError::NoRows);
        }
        let check = |column: &'static str, len: usize| {
            if len != days {
                Err(PanelError::LengthMismatch {
                    column,
                    expected: days,
                    found: len,
                })
            } else {
                Ok(())
            }
        };
        check("n3", n3.len())?;
        check("n4", n4.len())?;
        if let Some(s) = &n1 {
            check("n1", s.len())?;
        }
        if let Some(s) = &n_out {
            check("n_out", s.len())?;
        }
        let mut level: i128 = 0;
        for day in 0..days {
            level += n2[day] as i128 - n3[day] as i128 - n4[day] as i128;
            if level < 0 {
                return Err(PanelError::NegativeOccupancy { day });
            }
        }
        Ok(Self {
            start_date,
            n1,
            n2,
            n3,
            n4,
            n_out,
            label: None,
        })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn label(&self) -> Option<&str> {
        self.label.as_deref()
    }

    pub fn start_date(&self) -> NaiveDate {
        self.start_date
    }

    /// Number of observed days.
    pub fn days(&self) -> usize {
        self.n2.len()
    }

    pub fn date_of(&self, day: usize) -> NaiveDate {
        self.start_date + Duration::days(day as i64)
    }

    /// Day index of `date`, if it falls inside the observation window.
    pub fn day_of(&self, date: NaiveDate) -> Option<usize> {
        let offset = (date - self.start_date).num_days();
        (offset >= 0 && (offset as usize) < self.days()).then_some(offset as usize)
    }

    pub fn positives(&self) -> Option<&[u64]> {
        self.n1.as_deref()
    }

    pub fn admissions(&self) -> &[u64] {
        &self.n2
    }

    pub fn discharges(&self) -> &[u64] {
        &self.n3
    }

    pub fn deaths_in(&self) -> &[u64] {
        &self.n4
    }

    pub fn deaths_out(&self) -> Option<&[u64]> {
        self.n_out.as_deref()
    }

    /// All-cause exits `n3 + n4` per day.
    pub fn exits(&self) -> Vec<u64> {
        self.n3.iter().zip(&self.n4).map(|(a, b)| a + b).collect()
    }

    /// End-of-day occupancy: admitted up to and including `u` minus exited up
    /// to and including `u`.
    pub fn occupancy(&self) -> Vec<u64> {
        let mut level = 0u64;
        (0..self.days())
            .map(|u| {
                level = level + self.n2[u] - self.n3[u] - self.n4[u];
                level
            })
            .collect()
    }

    /// Persons at risk of exiting on day `u`: yesterday's occupancy plus
    /// today's admissions. Equals `occupancy[u] + exits[u]`.
    pub fn at_risk(&self) -> Vec<u64> {
        self.occupancy()
            .iter()
            .zip(self.exits())
            .map(|(y, e)| y + e)
            .collect()
    }

    /// Raw daily ratio `n_out / n4`, `None` on days without in-hospital deaths.
    pub fn raw_ratio(&self) -> Option<Vec<Option<f64>>> {
        let out = self.n_out.as_ref()?;
        Some(
            out.iter()
                .zip(&self.n4)
                .map(|(&o, &i)| (i > 0).then(|| o as f64 / i as f64))
                .collect(),
        )
    }

    /// Sub-panel covering days `[from, to)`. Only prefixes preserve the
    /// occupancy invariant in general, so the result is re-validated.
    pub fn window(&self, from: usize, to: usize) -> Result<Self, PanelError> {
        let to = to.min(self.days());
        if from >= to {
            return Err(PanelError::NoRows);
        }
        let cut = |s: &Vec<u64>| s[from..to].to_vec();
        let mut p = Self::new(
            self.date_of(from),
            self.n1.as_ref().map(cut),
            cut(&self.n2),
            cut(&self.n3),
            cut(&self.n4),
            self.n_out.as_ref().map(cut),
        )?;
        p.label = self.label.clone();
        Ok(p)
    }

    /// First `days` days of the panel.
    pub fn truncate(&self, days: usize) -> Result<Self, PanelError> {
        self.window(0, days)
    }

    pub fn ingest_csv_path(path: impl AsRef<Path>) -> Result<Self, PanelError> {
        let file = std::fs::File::open(path.as_ref()).map_err(|e| PanelError::Io(e.to_string()))?;
        Self::ingest_csv(file)
    }

    /// Parses a `date,n1,n2,n3,n4,n_out` CSV. Columns `n1` and `n_out` may be
    /// omitted from the header or left entirely blank.
    pub fn ingest_csv<R: Read>(reader: R) -> Result<Self, PanelError> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| PanelError::Io(e.to_string()))?
            .clone();
        if headers.iter().all(|h| h.is_empty()) {
            return Err(PanelError::NoRows);
        }
        let find = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
        let date_col = find("date").ok_or(PanelError::MissingColumn("date"))?;
        let n2_col = find("n2").ok_or(PanelError::MissingColumn("n2"))?;
        let n3_col = find("n3").ok_or(PanelError::MissingColumn("n3"))?;
        let n4_col = find("n4").ok_or(PanelError::MissingColumn("n4"))?;
        let n1_col = find("n1");
        let out_col = find("n_out");

        let mut dates: Vec<NaiveDate> = Vec::new();
        let mut n2 = Vec::new();
        let mut n3 = Vec::new();
        let mut n4 = Vec::new();
        let mut n1: Vec<Option<u64>> = Vec::new();
        let mut n_out: Vec<Option<u64>> = Vec::new();

        for (row, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| PanelError::Parse {
                row,
                message: e.to_string(),
            })?;
            let field = |col: usize| record.get(col).unwrap_or("");
            let date = NaiveDate::parse_from_str(field(date_col), "%Y-%m-%d").map_err(|e| {
                PanelError::Parse {
                    row,
                    message: format!("bad date `{}`: {e}", field(date_col)),
                }
            })?;
            if let Some(prev) = dates.last() {
                let expected = *prev + Duration::days(1);
                if date != expected {
                    return Err(PanelError::NonContiguous {
                        row,
                        expected: expected.to_string(),
                        found: date.to_string(),
                    });
                }
            }
            dates.push(date);
            n2.push(parse_count(field(n2_col), row, "n2")?.ok_or(PanelError::Parse {
                row,
                message: "blank n2".into(),
            })?);
            n3.push(parse_count(field(n3_col), row, "n3")?.ok_or(PanelError::Parse {
                row,
                message: "blank n3".into(),
            })?);
            n4.push(parse_count(field(n4_col), row, "n4")?.ok_or(PanelError::Parse {
                row,
                message: "blank n4".into(),
            })?);
            n1.push(match n1_col {
                Some(c) => parse_count(field(c), row, "n1")?,
                None => None,
            });
            n_out.push(match out_col {
                Some(c) => parse_count(field(c), row, "n_out")?,
                None => None,
            });
        }
        if dates.is_empty() {
            return Err(PanelError::NoRows);
        }
        let n1 = optional_column(n1, "n1")?;
        let n_out = optional_column(n_out, "n_out")?;
        Self::new(dates[0], n1, n2, n3, n4, n_out)
    }

    /// Writes the panel in the ingestion format; absent series become blank
    /// cells.
    pub fn emit_csv<W: Write>(&self, writer: W) -> Result<(), PanelError> {
        let mut w = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| PanelError::Io(e.to_string());
        w.write_record(CSV_HEADER).map_err(io)?;
        let opt = |s: &Option<Vec<u64>>, d: usize| s.as_ref().map(|v| v[d].to_string()).unwrap_or_default();
        for d in 0..self.days() {
            w.write_record([
                self.date_of(d).format("%Y-%m-%d").to_string(),
                opt(&self.n1, d),
                self.n2[d].to_string(),
                self.n3[d].to_string(),
                self.n4[d].to_string(),
                opt(&self.n_out, d),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| PanelError::Io(e.to_string()))
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.emit_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is utf-8")
    }
}

fn parse_count(cell: &str, row: usize, column: &'static str) -> Result<Option<u64>, PanelError> {
    if cell.is_empty() {
        return Ok(None);
    }
    let value: i64 = cell.parse().map_err(|_| PanelError::Parse {
        row,
        message: format!("column `{column}`: `{cell}` is not an integer"),
    })?;
    if value < 0 {
        return Err(PanelError::NegativeCount { row, column });
    }
    Ok(Some(value as u64))
}

fn optional_column(
    cells: Vec<Option<u64>>,
    column: &'static str,
) -> Result<Option<Vec<u64>>, PanelError> {
    if cells.iter().all(Option::is_none) {
        return Ok(None);
    }
    cells
        .into_iter()
        .enumerate()
        .map(|(row, c)| c.ok_or(PanelError::PartiallyBlank { row, column }))
        .collect::<Result<Vec<_>, _>>()
        .map(Some)
}

/// Discretisation of the duration axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeGridConvention {
    /// Largest tracked duration in days. Longer stays are pooled into the
    /// last duration cell.
    pub max_duration: usize,
    /// Exits on the admission day (duration 0) are allowed.
    pub same_day_exits: bool,
}

impl TimeGridConvention {
    pub const DEFAULT_MAX_DURATION: usize = 60;

    pub fn new(max_duration: usize, days: usize) -> Result<Self, EstimationError> {
        if max_duration < 1 || max_duration + 1 > days {
            return Err(EstimationError::InvalidGrid(format!(
                "max duration {max_duration} must lie in [1, {}]",
                days.saturating_sub(1)
            )));
        }
        Ok(Self {
            max_duration,
            same_day_exits: true,
        })
    }

    /// `min(60, T - 1)`.
    pub fn for_days(days: usize) -> Result<Self, EstimationError> {
        Self::new(Self::DEFAULT_MAX_DURATION.min(days.saturating_sub(1)), days)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn date(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    #[test]
    fn three_row_file() {
        let csv = "date,n1,n2,n3,n4,n_out\n\
                   2020-03-18,,5,0,0,0\n\
                   2020-03-19,,3,2,1,0\n\
                   2020-03-20,,0,1,1,1\n";
        let p = DailyPanel::ingest_csv(csv.as_bytes()).unwrap();
        assert_eq!(p.days(), 3);
        assert_eq!(p.occupancy(), vec![5, 5, 3]);
        assert!(p.positives().is_none());
        assert_eq!(p.deaths_out(), Some(&[0, 0, 1][..]));
        assert_eq!(p.at_risk(), vec![5, 8, 5]);
    }

    #[test]
    fn exit_before_entry_is_rejected() {
        let csv = "date,n1,n2,n3,n4,n_out\n2020-01-01,,0,1,0,\n";
        let err = DailyPanel::ingest_csv(csv.as_bytes()).unwrap_err();
        assert_eq!(err.to_string(), "occupancy negative at day 0");
        assert_eq!(err.row(), Some(0));
    }

    #[test]
    fn empty_input() {
        assert_eq!(DailyPanel::ingest_csv("".as_bytes()).unwrap_err().to_string(), "no rows");
        let header_only = "date,n1,n2,n3,n4,n_out\n";
        assert_eq!(
            DailyPanel::ingest_csv(header_only.as_bytes()).unwrap_err(),
            PanelError::NoRows
        );
    }

    #[test]
    fn gaps_and_negatives() {
        let gap = "date,n2,n3,n4\n2020-01-01,1,0,0\n2020-01-03,1,0,0\n";
        assert!(matches!(
            DailyPanel::ingest_csv(gap.as_bytes()),
            Err(PanelError::NonContiguous { row: 1, .. })
        ));
        let neg = "date,n2,n3,n4\n2020-01-01,1,0,0\n2020-01-02,-1,0,0\n";
        assert_eq!(
            DailyPanel::ingest_csv(neg.as_bytes()).unwrap_err(),
            PanelError::NegativeCount { row: 1, column: "n2" }
        );
        let partial = "date,n2,n3,n4,n_out\n2020-01-01,1,0,0,1\n2020-01-02,1,0,0,\n";
        assert_eq!(
            DailyPanel::ingest_csv(partial.as_bytes()).unwrap_err(),
            PanelError::PartiallyBlank { row: 1, column: "n_out" }
        );
    }

    #[test]
    fn occupancy_examples() {
        let d = date("2021-01-01");
        let p = DailyPanel::new(d, None, vec![10, 0], vec![0, 4], vec![0, 0], None).unwrap();
        assert_eq!(p.occupancy(), vec![10, 6]);
        let p = DailyPanel::new(d, None, vec![0; 4], vec![0; 4], vec![0; 4], None).unwrap();
        assert_eq!(p.occupancy(), vec![0; 4]);
        let p = DailyPanel::new(d, None, vec![2, 2, 2], vec![1, 0, 1], vec![0, 1, 0], None).unwrap();
        assert_eq!(p.occupancy(), vec![1, 2, 3]);
    }

    #[test]
    fn windows_and_dates() {
        let d = date("2021-01-01");
        let p = DailyPanel::new(d, None, vec![3, 1, 2], vec![0, 1, 1], vec![1, 0, 0], Some(vec![0, 1, 2]))
            .unwrap();
        let head = p.truncate(2).unwrap();
        assert_eq!(head.days(), 2);
        assert_eq!(head.deaths_out(), Some(&[0, 1][..]));
        assert_eq!(p.day_of(date("2021-01-03")), Some(2));
        assert_eq!(p.day_of(date("2021-01-04")), None);
        assert_eq!(p.raw_ratio().unwrap(), vec![Some(0.0), None, None]);
    }

    #[test]
    fn grid_convention_bounds() {
        assert_eq!(TimeGridConvention::for_days(100).unwrap().max_duration, 60);
        assert_eq!(TimeGridConvention::for_days(20).unwrap().max_duration, 19);
        assert!(TimeGridConvention::new(0, 10).is_err());
        assert!(TimeGridConvention::new(10, 10).is_err());
        assert!(TimeGridConvention::for_days(1).is_err());
    }
}
