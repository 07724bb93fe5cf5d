//! Sensor record ingestion, gap filling, hourly aggregation and min-max scaling.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, Duration, DurationRound, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pollutants monitored by the reference sensor network, with their units.
pub const STANDARD_POLLUTANTS: [(&str, &str); 6] = [
    ("NO2", "ppb"),
    ("O3", "ppb"),
    ("CO", "ppb"),
    ("SO2", "ppb"),
    ("PM2.5", "µg/m³"),
    ("PM10", "µg/m³"),
];

/// Unit for one of the standard pollutants, `None` for anything else.
pub fn standard_unit(pollutant: &str) -> Option<&'static str> {
    STANDARD_POLLUTANTS
        .iter()
        .find(|(name, _)| *name == pollutant)
        .map(|(_, unit)| *unit)
}

/// Which CSV columns to read.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub timestamp: String,
    /// `(column name, unit)` pairs.
    pub pollutants: Vec<(String, String)>,
}

impl ColumnSchema {
    /// `timestamp` plus all six standard pollutant columns.
    pub fn standard() -> Self {
        Self::for_pollutants(STANDARD_POLLUTANTS.iter().map(|(name, _)| *name))
    }

    /// `timestamp` plus the named pollutants. Unknown names get unit `unknown`.
    pub fn for_pollutants<'a>(names: impl IntoIterator<Item = &'a str>) -> Self {
        ColumnSchema {
            timestamp: "timestamp".to_string(),
            pollutants: names
                .into_iter()
                .map(|n| (n.to_string(), standard_unit(n).unwrap_or("unknown").to_string()))
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawRow {
    pub timestamp: DateTime<Utc>,
    pub values: BTreeMap<String, Option<f64>>,
}

/// Minute-level sensor rows, strictly increasing in time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawRecords {
    rows: Vec<RawRow>,
    units: BTreeMap<String, String>,
}

impl RawRecords {
    /// Sorts rows by timestamp and drops repeated timestamps (first one wins).
    /// Returns the records and the number of dropped duplicates.
    pub fn new(mut rows: Vec<RawRow>, units: BTreeMap<String, String>) -> Result<(Self, usize)> {
        for row in &rows {
            for name in row.values.keys() {
                if !units.contains_key(name) {
                    return Err(Error::InvalidParam(format!("pollutant `{name}` has no unit")));
                }
            }
        }
        rows.sort_by_key(|r| r.timestamp);
        let before = rows.len();
        rows.dedup_by_key(|r| r.timestamp);
        let dropped = before - rows.len();
        Ok((RawRecords { rows, units }, dropped))
    }

    pub fn rows(&self) -> &[RawRow] {
        &self.rows
    }

    pub fn units(&self) -> &BTreeMap<String, String> {
        &self.units
    }

    pub fn pollutants(&self) -> impl Iterator<Item = &str> {
        self.units.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Values of one pollutant column, in row order.
    pub fn column(&self, pollutant: &str) -> Result<Vec<Option<f64>>> {
        if !self.units.contains_key(pollutant) {
            return Err(Error::UnknownPollutant(pollutant.to_string()));
        }
        Ok(self
            .rows
            .iter()
            .map(|r| r.values.get(pollutant).copied().flatten())
            .collect())
    }

    pub fn missing_count(&self, pollutant: &str) -> usize {
        self.rows
            .iter()
            .filter(|r| r.values.get(pollutant).copied().flatten().is_none())
            .count()
    }
}

/// Summary of a CSV load.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub rows: usize,
    pub missing_per_column: BTreeMap<String, usize>,
    pub dropped_rows: usize,
}

/// Loads minute-level records from a CSV file.
pub fn load_csv(path: impl AsRef<Path>, schema: &ColumnSchema) -> Result<(RawRecords, LoadReport)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema)
}

/// Reads records from any CSV source. Blank or unparseable cells become
/// missing values; rows with an unparseable timestamp are dropped.
pub fn read_csv<R: Read>(reader: R, schema: &ColumnSchema) -> Result<(RawRecords, LoadReport)> {
    if schema.pollutants.is_empty() {
        return Err(Error::InvalidParam("schema names no pollutant column".into()));
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let ts_col = find(&schema.timestamp)?;
    let cols = schema
        .pollutants
        .iter()
        .map(|(name, _)| find(name).map(|i| (name.clone(), i)))
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    let mut dropped = 0;
    for record in rdr.records() {
        let record = record?;
        let Some(timestamp) = record.get(ts_col).and_then(parse_timestamp) else {
            dropped += 1;
            continue;
        };
        let values = cols
            .iter()
            .map(|(name, i)| {
                let v = record
                    .get(*i)
                    .and_then(|s| s.parse::<f64>().ok())
                    .filter(|v| v.is_finite());
                (name.clone(), v)
            })
            .collect();
        rows.push(RawRow { timestamp, values });
    }
    if rows.is_empty() {
        return Err(Error::NoParseableRows);
    }

    let units = schema.pollutants.iter().cloned().collect();
    let (records, duplicates) = RawRecords::new(rows, units)?;
    let report = LoadReport {
        rows: records.len(),
        missing_per_column: schema
            .pollutants
            .iter()
            .map(|(name, _)| (name.clone(), records.missing_count(name)))
            .collect(),
        dropped_rows: dropped + duplicates,
    };
    Ok((records, report))
}

fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s)
        .ok()
        .map(|t| t.with_timezone(&Utc))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImputationPolicy {
    #[default]
    #[serde(alias = "linear")]
    LinearInterpolation,
    #[serde(alias = "locf")]
    LastObservationCarriedForward,
}

/// Fills missing values column by column.
///
/// Interior gaps are filled according to `policy` (linear interpolation
/// is over row positions). Leading gaps take the first observed value,
/// trailing gaps the last one.
pub fn impute_missing(records: &RawRecords, policy: ImputationPolicy) -> Result<RawRecords> {
    let mut rows = records.rows.clone();
    for name in records.units.keys() {
        let column = records.column(name)?;
        let filled = fill_column(&column, policy).ok_or_else(|| Error::ColumnAllMissing(name.clone()))?;
        for (row, v) in rows.iter_mut().zip(filled) {
            row.values.insert(name.clone(), Some(v));
        }
    }
    Ok(RawRecords {
        rows,
        units: records.units.clone(),
    })
}

/// Returns `None` when every entry is missing.
pub fn fill_column(column: &[Option<f64>], policy: ImputationPolicy) -> Option<Vec<f64>> {
    let first = column.iter().position(Option::is_some)?;
    let mut out = Vec::with_capacity(column.len());
    let first_value = column[first].unwrap();
    out.resize(first, first_value);

    let mut last_idx = first;
    let mut last_value = first_value;
    for (i, v) in column.iter().enumerate().skip(first) {
        match v {
            Some(v) => {
                if policy == ImputationPolicy::LinearInterpolation && i > last_idx + 1 {
                    let span = (i - last_idx) as f64;
                    for (k, slot) in out[last_idx + 1..i].iter_mut().enumerate() {
                        let frac = (k + 1) as f64 / span;
                        *slot = last_value + (v - last_value) * frac;
                    }
                }
                out.push(*v);
                last_idx = i;
                last_value = *v;
            }
            // provisional carry-forward; overwritten if a later value allows interpolation
            None => out.push(last_value),
        }
    }
    Some(out)
}

/// Uniform hourly series of one pollutant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    start: DateTime<Utc>,
    values: Vec<f64>,
    pollutant: String,
    unit: String,
}

impl TimeSeries {
    pub fn new(
        start: DateTime<Utc>,
        values: Vec<f64>,
        pollutant: impl Into<String>,
        unit: impl Into<String>,
    ) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::SeriesTooShort { len: 0, min: 1 });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("series values"));
        }
        if start.duration_trunc(Duration::hours(1)).ok() != Some(start) {
            return Err(Error::UnalignedStart(start));
        }
        Ok(TimeSeries {
            start,
            values,
            pollutant: pollutant.into(),
            unit: unit.into(),
        })
    }

    /// Hourly series starting at the Unix epoch; handy for synthetic data.
    pub fn from_values(values: Vec<f64>, pollutant: impl Into<String>) -> Result<Self> {
        Self::new(DateTime::<Utc>::UNIX_EPOCH, values, pollutant, "unknown")
    }

    pub fn start(&self) -> DateTime<Utc> {
        self.start
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn pollutant(&self) -> &str {
        &self.pollutant
    }

    pub fn unit(&self) -> &str {
        &self.unit
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn timestamp(&self, index: usize) -> DateTime<Utc> {
        self.start + Duration::hours(index as i64)
    }

    /// Same start, pollutant and unit with new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.start, values, self.pollutant.clone(), self.unit.clone())
    }

    /// The first `len` observations.
    pub fn prefix(&self, len: usize) -> Result<Self> {
        let len = len.min(self.values.len());
        self.with_values(self.values[..len].to_vec())
    }

    /// Writes `timestamp,value` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["timestamp", &self.pollutant])?;
        for (i, v) in self.values.iter().enumerate() {
            let ts = self.timestamp(i).format("%Y-%m-%dT%H:%M:%SZ").to_string();
            w.write_record([ts, v.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<series csv>", e))?;
        Ok(())
    }

    /// Reads a file written by [`TimeSeries::write_csv`].
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        let pollutant = headers
            .get(1)
            .ok_or_else(|| Error::MissingColumn("value".into()))?
            .to_string();
        let mut start = None;
        let mut values = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let ts = record.get(0).and_then(parse_timestamp);
            let v = record.get(1).and_then(|s| s.parse::<f64>().ok());
            match (ts, v) {
                (Some(ts), Some(v)) => {
                    start.get_or_insert(ts);
                    values.push(v);
                }
                _ => return Err(Error::NoParseableRows),
            }
        }
        let start = start.ok_or(Error::NoParseableRows)?;
        let unit = standard_unit(&pollutant).unwrap_or("unknown");
        TimeSeries::new(start, values, pollutant, unit)
    }
}

/// Averages minute readings of one pollutant into left-closed clock hours.
pub fn hourly_average(records: &RawRecords, pollutant: &str) -> Result<TimeSeries> {
    let column = records.column(pollutant)?;
    let mut buckets: BTreeMap<DateTime<Utc>, (f64, usize)> = BTreeMap::new();
    for (row, v) in records.rows.iter().zip(&column) {
        let v = v.ok_or_else(|| Error::NotImputed(pollutant.to_string()))?;
        let hour = row
            .timestamp
            .duration_trunc(Duration::hours(1))
            .map_err(|_| Error::InvalidParam("timestamp out of range".into()))?;
        let slot = buckets.entry(hour).or_insert((0.0, 0));
        slot.0 += v;
        slot.1 += 1;
    }
    let (&start, _) = buckets.first_key_value().ok_or(Error::NoParseableRows)?;
    let (&end, _) = buckets.last_key_value().ok_or(Error::NoParseableRows)?;
    let hours = (end - start).num_hours() as usize + 1;
    let mut values = Vec::with_capacity(hours);
    for h in 0..hours {
        let hour = start + Duration::hours(h as i64);
        match buckets.get(&hour) {
            Some(&(sum, n)) => values.push(sum / n as f64),
            None => return Err(Error::EmptyHourBucket(hour)),
        }
    }
    let unit = records.units[pollutant].clone();
    TimeSeries::new(start, values, pollutant, unit)
}

/// Min-max scaling parameters fitted on a training window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub min: f64,
    pub max: f64,
    pub degenerate: bool,
}

impl NormParams {
    pub fn fit(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::SeriesTooShort { len: 0, min: 1 });
        }
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for &v in values {
            if !v.is_finite() {
                return Err(Error::NonFinite("normalization input"));
            }
            min = min.min(v);
            max = max.max(v);
        }
        Ok(NormParams {
            min,
            max,
            degenerate: max == min,
        })
    }

    // a constant training window gets unit span so that values outside it stay invertible
    fn span(&self) -> f64 {
        if self.degenerate {
            1.0
        } else {
            self.max - self.min
        }
    }

    /// Scales one value; values outside the training range map outside `[0, 1]`.
    pub fn scale(&self, y: f64) -> f64 {
        (y - self.min) / self.span()
    }

    /// Inverse of [`NormParams::scale`].
    pub fn unscale(&self, x: f64) -> f64 {
        x * self.span() + self.min
    }
}

pub fn minmax_normalize(series: &TimeSeries) -> Result<(TimeSeries, NormParams)> {
    let params = NormParams::fit(&series.values)?;
    let scaled = series.values.iter().map(|&y| params.scale(y)).collect();
    Ok((series.with_values(scaled)?, params))
}

/// Maps scaled values back to original units.
///
/// Degenerate parameters only admit all-zero input: anything else means the
/// series was scaled with a range it was not fitted on.
pub fn denormalize(series: &TimeSeries, params: &NormParams) -> Result<TimeSeries> {
    if params.degenerate && series.values.iter().any(|&x| x != 0.0) {
        return Err(Error::DegenerateScaleLeak);
    }
    let values = series.values.iter().map(|&x| params.unscale(x)).collect();
    series.with_values(values)
}
