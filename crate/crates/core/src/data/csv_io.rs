//! Hourly CSV ingest and the cleaned-data writer.
//!
//! Long format: one row per `(date, hour)` with `hour` in 1..=24.
//! Wide format: one row per date with `load_1 .. load_24` (and optionally
//! `temp_1 .. temp_24` or a single daily `temp`), selected automatically when
//! the hour column is absent.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::record::{DailyRecord, Unit, HOURS};
use super::{DataError, Result};

/// Logical column -> header name mapping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub date: String,
    pub hour: String,
    pub load: String,
    pub temp: String,
    pub humidity: String,
    pub rainfall: String,
    pub holiday: String,
    pub replaced: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            date: "date".into(),
            hour: "hour".into(),
            load: "load".into(),
            temp: "temp".into(),
            humidity: "humidity".into(),
            rainfall: "rainfall".into(),
            holiday: "holiday".into(),
            replaced: "replaced".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IngestIssue {
    /// 1-based line in the source file, when the issue is tied to a row.
    pub line: Option<u64>,
    pub message: String,
}

/// Itemized list of everything wrong with an input file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IngestReport {
    pub issues: Vec<IngestIssue>,
}

impl IngestReport {
    fn push(&mut self, line: Option<u64>, message: impl Into<String>) {
        self.issues.push(IngestIssue {
            line,
            message: message.into(),
        });
    }
}

impl fmt::Display for IngestReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for issue in &self.issues {
            match issue.line {
                Some(l) => writeln!(f, "  line {l}: {}", issue.message)?,
                None => writeln!(f, "  {}", issue.message)?,
            }
        }
        Ok(())
    }
}

/// Successfully ingested data.
#[derive(Clone, Debug, PartialEq)]
pub struct Ingested {
    /// Sorted by date.
    pub records: Vec<DailyRecord>,
    /// Calendar dates absent between the first and last record. Reported, never filled.
    pub gaps: Vec<NaiveDate>,
    pub unit: Unit,
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema, unit: Unit) -> Result<Ingested> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_csv(file, schema, unit)
}

#[derive(Default)]
struct DayBuilder {
    first_line: u64,
    loads: [Option<f64>; HOURS],
    temps: [Option<f64>; HOURS],
    humidity: Vec<f64>,
    rainfall: Vec<f64>,
    holiday: bool,
    replaced: [bool; HOURS],
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "y" => Some(true),
        "0" | "false" | "no" | "n" | "" => Some(false),
        _ => None,
    }
}

/// Daily value from hourly repeats; identical repeats are taken verbatim so
/// written files read back bit-exact.
fn daily_value(vals: &[f64]) -> Option<f64> {
    let first = *vals.first()?;
    if vals.iter().all(|v| v.to_bits() == first.to_bits()) {
        Some(first)
    } else {
        Some(vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema, unit: Unit) -> Result<Ingested> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let mut report = IngestReport::default();

    let date_col = col(&schema.date);
    if date_col.is_none() {
        report.push(Some(1), format!("missing required column `{}`", schema.date));
    }
    let hour_col = col(&schema.hour);
    let wide_loads: Vec<Option<usize>> = (1..=HOURS).map(|h| col(&format!("{}_{h}", schema.load))).collect();
    let wide = hour_col.is_none() && wide_loads.iter().all(Option::is_some);
    let load_col = col(&schema.load);
    if !wide && (hour_col.is_none() || load_col.is_none()) {
        report.push(
            Some(1),
            format!(
                "expected columns `{}` and `{}` (or wide `{}_1..{}_{HOURS}`)",
                schema.hour, schema.load, schema.load, schema.load
            ),
        );
    }
    if !report.issues.is_empty() {
        return Err(DataError::Ingest(report));
    }
    let date_col = date_col.expect("checked");
    let temp_col = col(&schema.temp);
    let wide_temps: Vec<Option<usize>> = (1..=HOURS).map(|h| col(&format!("{}_{h}", schema.temp))).collect();
    let humidity_col = col(&schema.humidity);
    let rainfall_col = col(&schema.rainfall);
    let holiday_col = col(&schema.holiday);
    let replaced_col = col(&schema.replaced);

    let mut days: BTreeMap<NaiveDate, DayBuilder> = BTreeMap::new();
    for row in rdr.records() {
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map(|p| p.line());
                report.push(line, e.to_string());
                continue;
            }
        };
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let field = |c: Option<usize>| c.and_then(|i| row.get(i)).unwrap_or("");
        let number = |c: Option<usize>, what: &str, report: &mut IngestReport| -> Option<f64> {
            let raw = field(c);
            if raw.is_empty() {
                return None;
            }
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Some(v),
                _ => {
                    report.push(Some(line), format!("unparseable {what} value `{raw}`"));
                    None
                }
            }
        };

        let date = match NaiveDate::parse_from_str(field(Some(date_col)), "%Y-%m-%d") {
            Ok(d) => d,
            Err(_) => {
                report.push(Some(line), format!("unparseable date `{}`", field(Some(date_col))));
                continue;
            }
        };
        let is_new = !days.contains_key(&date);
        if wide && !is_new {
            report.push(Some(line), format!("duplicate date {date}"));
            continue;
        }
        let mut day = days.remove(&date).unwrap_or_else(|| DayBuilder {
            first_line: line,
            ..Default::default()
        });
        let holiday = parse_bool(field(holiday_col));
        if holiday.is_none() {
            report.push(Some(line), format!("unparseable holiday flag `{}`", field(holiday_col)));
        }
        day.holiday |= holiday.unwrap_or(false);
        if let Some(h) = number(humidity_col, "humidity", &mut report) {
            day.humidity.push(h);
        }
        if let Some(r) = number(rainfall_col, "rainfall", &mut report) {
            day.rainfall.push(r);
        }

        let put_load = |slot: usize, v: Option<f64>, day: &mut DayBuilder, report: &mut IngestReport| match v {
            Some(v) if v < 0.0 => report.push(Some(line), format!("negative load {v} at hour {}", slot + 1)),
            Some(v) => day.loads[slot] = Some(v),
            None => report.push(Some(line), format!("missing load at hour {}", slot + 1)),
        };
        if wide {
            for slot in 0..HOURS {
                let v = number(wide_loads[slot], "load", &mut report);
                put_load(slot, v, &mut day, &mut report);
                let t = if wide_temps[slot].is_some() {
                    number(wide_temps[slot], "temp", &mut report)
                } else {
                    number(temp_col, "temp", &mut report)
                };
                day.temps[slot] = t;
            }
        } else {
            let raw_hour = field(hour_col);
            let slot = match raw_hour.parse::<usize>() {
                Ok(h) if (1..=HOURS).contains(&h) => h - 1,
                _ => {
                    report.push(Some(line), format!("hour `{raw_hour}` outside 1..=24"));
                    days.insert(date, day);
                    continue;
                }
            };
            if day.loads[slot].is_some() {
                report.push(Some(line), format!("duplicate row for {date} hour {}", slot + 1));
            } else {
                let v = number(load_col, "load", &mut report);
                put_load(slot, v, &mut day, &mut report);
                day.temps[slot] = number(temp_col, "temp", &mut report);
                match parse_bool(field(replaced_col)) {
                    Some(r) => day.replaced[slot] = r,
                    None => report.push(Some(line), format!("unparseable replaced flag `{}`", field(replaced_col))),
                }
            }
        }
        days.insert(date, day);
    }

    let mut records = Vec::with_capacity(days.len());
    for (date, day) in days {
        let missing: Vec<String> = (0..HOURS)
            .filter(|&h| day.loads[h].is_none())
            .map(|h| (h + 1).to_string())
            .collect();
        if !missing.is_empty() {
            report.push(
                Some(day.first_line),
                format!("{date}: missing hour(s) {}", missing.join(",")),
            );
            continue;
        }
        let mut loads = [0.0; HOURS];
        let mut temps = [0.0; HOURS];
        for h in 0..HOURS {
            loads[h] = day.loads[h].expect("checked");
            temps[h] = day.temps[h].unwrap_or(0.0);
        }
        records.push(DailyRecord {
            date,
            loads,
            temps,
            humidity: daily_value(&day.humidity),
            rainfall: daily_value(&day.rainfall),
            is_holiday: day.holiday,
            replaced: day.replaced,
        });
    }
    if !report.issues.is_empty() {
        return Err(DataError::Ingest(report));
    }
    if temp_col.is_none() && wide_temps.iter().all(Option::is_none) {
        log::warn!("no `{}` column: temperatures set to 0", schema.temp);
    }
    let gaps = records
        .windows(2)
        .flat_map(|w| w[0].date.iter_days().skip(1).take_while(move |d| *d < w[1].date))
        .collect();
    Ok(Ingested { records, gaps, unit })
}

/// Write records in the long schema plus the `replaced` column.
pub fn write_csv<W: Write>(records: &[DailyRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["date", "hour", "load", "temp", "humidity", "rainfall", "holiday", "replaced"])?;
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for r in records {
        let date = r.date.format("%Y-%m-%d").to_string();
        for h in 0..HOURS {
            w.write_record([
                date.clone(),
                (h + 1).to_string(),
                r.loads[h].to_string(),
                r.temps[h].to_string(),
                opt(r.humidity),
                opt(r.rainfall),
                u8::from(r.is_holiday).to_string(),
                u8::from(r.replaced[h]).to_string(),
            ])?;
        }
    }
    w.flush().map_err(|source| DataError::Io {
        path: "<writer>".into(),
        source,
    })?;
    Ok(())
}

pub fn write_csv_file(records: &[DailyRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    write_csv(records, std::io::BufWriter::new(file))
}
