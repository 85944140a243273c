//! CSV interchange files.
//!
//! * samples: `location_id,sensor_kind,error_m,timestamp_ms`
//! * summary: `sensor_kind,count,mean_m,sample_std_m`
//! * overlay log: `timestamp_ms,source_seq,sensor_kind,target_east,target_north,hmd_east,hmd_north`
//!
//! Floats are written in shortest round-trip form, so identical runs give
//! byte-identical files.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{ErrorSample, EvalError, EvalReport};
use crate::sim::SensorKind;

pub const SAMPLES_CSV_HEADER: &str = "location_id,sensor_kind,error_m,timestamp_ms";
pub const SUMMARY_CSV_HEADER: &str = "sensor_kind,count,mean_m,sample_std_m";
pub const OVERLAY_CSV_HEADER: &str =
    "timestamp_ms,source_seq,sensor_kind,target_east,target_north,hmd_east,hmd_north";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlayLogRow {
    pub timestamp_ms: u64,
    pub source_seq: u64,
    pub sensor_kind: SensorKind,
    pub target_east: f64,
    pub target_north: f64,
    pub hmd_east: f64,
    pub hmd_north: f64,
}

#[derive(Serialize)]
struct SummaryRow {
    sensor_kind: SensorKind,
    count: usize,
    mean_m: f64,
    sample_std_m: f64,
}

fn to_string<T: Serialize>(rows: impl IntoIterator<Item = T>, header: &str) -> Result<String, EvalError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    let mut out = String::from(header);
    out.push('\n');
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| EvalError::Io(e.into_error()))?;
    out.push_str(&String::from_utf8(bytes).expect("csv output is utf-8"));
    Ok(out)
}

pub fn samples_to_csv(samples: &[ErrorSample]) -> Result<String, EvalError> {
    to_string(samples, SAMPLES_CSV_HEADER)
}

/// A single samples-CSV data row, without the line terminator.
pub fn samples_csv_row(sample: &ErrorSample) -> Result<String, EvalError> {
    let full = to_string([sample], "")?;
    Ok(full.trim_start_matches('\n').trim_end_matches('\n').to_owned())
}

pub fn summary_to_csv(report: &EvalReport) -> Result<String, EvalError> {
    to_string(
        report.stats.iter().map(|(k, s)| SummaryRow {
            sensor_kind: *k,
            count: s.count,
            mean_m: s.mean_m,
            sample_std_m: s.sample_std_m,
        }),
        SUMMARY_CSV_HEADER,
    )
}

pub fn write_overlay_csv<W: Write>(rows: &[OverlayLogRow], mut out: W) -> Result<(), EvalError> {
    out.write_all(to_string(rows, OVERLAY_CSV_HEADER)?.as_bytes())?;
    Ok(())
}

pub fn read_samples_csv<R: Read>(input: R) -> Result<Vec<ErrorSample>, EvalError> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header.join(",") != SAMPLES_CSV_HEADER {
        return Err(EvalError::Config(format!(
            "unexpected samples header {:?}, want {SAMPLES_CSV_HEADER:?}",
            header.join(",")
        )));
    }
    let mut out = Vec::new();
    for rec in r.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}
