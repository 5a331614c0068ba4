//! Long-format CSV ingestion: generic `id,time,value` rows or bike-station
//! status rows that are normalized into loading profiles. Files are streamed
//! record by record; only the parsed numeric series stay in memory.

use std::collections::BTreeMap;
use std::path::Path;

use funfem_core::{Curve, SampledCurveSet};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputFormat {
    /// Header `id,time,value`.
    Generic,
    /// Header `station_id,city,timestamp,bikes,docks`; the value becomes
    /// bikes/docks and timestamps become hours since the first observation.
    Bss,
}

impl std::str::FromStr for InputFormat {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s.to_ascii_lowercase().as_str() {
            "generic" => Ok(InputFormat::Generic),
            "bss" => Ok(InputFormat::Bss),
            other => Err(CliError::Config(format!(
                "unknown input format {other:?} (expected generic or bss)"
            ))),
        }
    }
}

/// Ingested curves plus the per-curve city when the input carries one.
#[derive(Debug)]
pub struct LoadedCurves {
    pub set: SampledCurveSet,
    pub cities: Option<Vec<String>>,
}

pub fn load_long_csv(path: &Path, format: InputFormat) -> Result<LoadedCurves, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| CliError::Config(format!("cannot open {}: {e}", path.display())))?;

    let headers = reader
        .headers()
        .map_err(|e| CliError::Config(format!("cannot read header: {e}")))?
        .clone();
    let header_fields: Vec<String> = headers.iter().map(|h| h.trim().to_string()).collect();

    match format {
        InputFormat::Generic => {
            expect_header(&header_fields, &["id", "time", "value"])?;
            load_generic(path, reader)
        }
        InputFormat::Bss => {
            expect_header(
                &header_fields,
                &["station_id", "city", "timestamp", "bikes", "docks"],
            )?;
            load_bss(path, reader)
        }
    }
}

fn expect_header(got: &[String], want: &[&str]) -> Result<(), CliError> {
    if got.len() != want.len() || got.iter().zip(want).any(|(g, w)| g != w) {
        return Err(CliError::Config(format!(
            "expected header {}, got {}",
            want.join(","),
            got.join(",")
        )));
    }
    Ok(())
}

fn parse_field<T: std::str::FromStr>(
    field: &str,
    name: &str,
    line: u64,
) -> Result<T, CliError> {
    field.trim().parse::<T>().map_err(|_| {
        CliError::Config(format!("line {line}: cannot parse {name} from {field:?}"))
    })
}

fn load_generic(
    path: &Path,
    mut reader: csv::Reader<std::fs::File>,
) -> Result<LoadedCurves, CliError> {
    let mut series: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    let mut record = csv::StringRecord::new();
    loop {
        let more = reader
            .read_record(&mut record)
            .map_err(|e| CliError::Config(format!("csv error: {e}")))?;
        if !more {
            break;
        }
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 3 {
            return Err(CliError::Config(format!(
                "line {line}: expected 3 fields, got {}",
                record.len()
            )));
        }
        let id = record[0].trim().to_string();
        let time: f64 = parse_field(&record[1], "time", line)?;
        let value: f64 = parse_field(&record[2], "value", line)?;
        if !time.is_finite() || !value.is_finite() {
            return Err(CliError::Config(format!("line {line}: non-finite number")));
        }
        series.entry(id).or_default().push((time, value));
    }
    finish(path, series, None)
}

fn load_bss(
    path: &Path,
    mut reader: csv::Reader<std::fs::File>,
) -> Result<LoadedCurves, CliError> {
    let mut series: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    let mut city_of: BTreeMap<String, String> = BTreeMap::new();
    let mut t_first = f64::INFINITY;
    let mut record = csv::StringRecord::new();
    loop {
        let more = reader
            .read_record(&mut record)
            .map_err(|e| CliError::Config(format!("csv error: {e}")))?;
        if !more {
            break;
        }
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 5 {
            return Err(CliError::Config(format!(
                "line {line}: expected 5 fields, got {}",
                record.len()
            )));
        }
        let id = record[0].trim().to_string();
        let city = record[1].trim().to_string();
        let timestamp: f64 = parse_field(&record[2], "timestamp", line)?;
        let bikes: u64 = parse_field(&record[3], "bikes", line)?;
        let docks: u64 = parse_field(&record[4], "docks", line)?;
        if docks == 0 {
            return Err(CliError::Config(format!(
                "line {line}: station {id} has zero docks"
            )));
        }
        if bikes > docks {
            return Err(CliError::Config(format!(
                "line {line}: station {id} reports {bikes} bikes for {docks} docks"
            )));
        }
        let loading = bikes as f64 / docks as f64;
        t_first = t_first.min(timestamp);
        city_of.entry(id.clone()).or_insert(city);
        series.entry(id).or_default().push((timestamp, loading));
    }
    // seconds since the first observation, in hours
    for points in series.values_mut() {
        for (t, _) in points.iter_mut() {
            *t = (*t - t_first) / 3600.0;
        }
    }
    let cities: Vec<String> = series.keys().map(|id| city_of[id].clone()).collect();
    finish(path, series, Some(cities))
}

fn finish(
    path: &Path,
    series: BTreeMap<String, Vec<(f64, f64)>>,
    cities: Option<Vec<String>>,
) -> Result<LoadedCurves, CliError> {
    if series.is_empty() {
        return Err(CliError::Config(format!(
            "{} contains no data rows",
            path.display()
        )));
    }
    let mut curves = Vec::with_capacity(series.len());
    let mut ids = Vec::with_capacity(series.len());
    for (id, mut points) in series {
        points.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for w in points.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(CliError::Config(format!(
                    "duplicate time {} for id {id}",
                    w[0].0
                )));
            }
        }
        let (times, values): (Vec<f64>, Vec<f64>) = points.into_iter().unzip();
        curves.push(
            Curve::new(times, values)
                .map_err(|e| CliError::Config(format!("id {id}: {e}")))?,
        );
        ids.push(id);
    }
    let set = SampledCurveSet::new(curves)
        .and_then(|s| s.with_ids(ids))
        .map_err(|e| CliError::Config(e.to_string()))?;
    Ok(LoadedCurves { set, cities })
}
