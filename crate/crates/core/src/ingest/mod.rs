//! Input parsing: device pings, the facility registry and geocoding.

mod geocode;
mod registry;

pub use geocode::{Geocoder, GeocoderClient, StubGeocoder};
pub use registry::{
    load_facilities, resolve_footprints, write_facilities, Facility, FootprintReport, Registry,
    DEFAULT_FALLBACK_RADIUS_M,
};

use std::io::{Read, Write};

use chrono::{DateTime, NaiveDateTime};

use crate::geometry::LatLon;
use crate::{Error, Result};

/// One anonymized device location observation.
#[derive(Clone, Debug, PartialEq)]
pub struct PingRecord {
    pub device_id: String,
    pub latitude: f64,
    pub longitude: f64,
    /// UTC epoch seconds.
    pub timestamp: i64,
}

impl PingRecord {
    pub fn position(&self) -> LatLon {
        LatLon::new(self.latitude, self.longitude)
    }

    fn sort_key_cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.device_id
            .cmp(&other.device_id)
            .then(self.timestamp.cmp(&other.timestamp))
            .then(self.latitude.total_cmp(&other.latitude))
            .then(self.longitude.total_cmp(&other.longitude))
    }
}

/// Half-open interval `[start, end)` in UTC epoch seconds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StudyWindow {
    pub start: i64,
    pub end: i64,
}

impl StudyWindow {
    /// 2020-03-13T00:00:00Z
    pub const DEFAULT_START: i64 = 1_584_057_600;
    /// 2020-04-24T00:00:00Z, so that April 23 is covered in full.
    pub const DEFAULT_END: i64 = 1_587_686_400;

    pub fn new(start: i64, end: i64) -> Result<Self> {
        if start >= end {
            return Err(Error::Config(format!(
                "study window start {start} must precede end {end}"
            )));
        }
        Ok(Self { start, end })
    }

    pub fn contains(&self, timestamp: i64) -> bool {
        timestamp >= self.start && timestamp < self.end
    }

    pub fn filter(&self, pings: Vec<PingRecord>) -> Vec<PingRecord> {
        pings.into_iter().filter(|p| self.contains(p.timestamp)).collect()
    }
}

impl Default for StudyWindow {
    fn default() -> Self {
        Self {
            start: Self::DEFAULT_START,
            end: Self::DEFAULT_END,
        }
    }
}

/// Accepts epoch seconds or an ISO-8601 / RFC 3339 timestamp. Naive
/// timestamps are read as UTC.
pub fn parse_timestamp(text: &str) -> Option<i64> {
    let text = text.trim();
    if let Ok(secs) = text.parse::<i64>() {
        return Some(secs);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(text) {
        return Some(dt.timestamp());
    }
    ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S%.f"]
        .iter()
        .find_map(|fmt| NaiveDateTime::parse_from_str(text, fmt).ok())
        .map(|dt| dt.and_utc().timestamp())
}

#[derive(Clone, Debug, PartialEq)]
pub struct LineIssue {
    pub line: u64,
    pub reason: String,
}

/// Result of [`parse_pings`].
#[derive(Clone, Debug, Default)]
pub struct PingParse {
    /// Valid in-window records, deduplicated, sorted by device then time.
    pub records: Vec<PingRecord>,
    /// Malformed lines.
    pub skipped: usize,
    pub outside_window: usize,
    pub duplicates: usize,
    /// The first [`MAX_REPORTED_ISSUES`] malformed lines.
    pub issues: Vec<LineIssue>,
}

pub const MAX_REPORTED_ISSUES: usize = 100;

const PING_COLUMNS: [&str; 4] = ["device_id", "timestamp", "latitude", "longitude"];

/// Parses a delimited ping stream with a `device_id,timestamp,latitude,longitude`
/// header (any column order).
///
/// Malformed lines are counted and skipped; records outside `window` are
/// dropped. Exact duplicates of `(device_id, timestamp, lat, lon)` are
/// removed, and the output is sorted so it does not depend on input order.
pub fn parse_pings<R: Read>(source: R, window: &StudyWindow) -> Result<PingParse> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    let mut out = PingParse::default();
    if headers.is_empty() {
        return Ok(out);
    }
    let mut cols = [0usize; 4];
    for (slot, name) in cols.iter_mut().zip(PING_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Input(format!("ping header is missing column {name:?}")))?;
    }

    let mut record = csv::StringRecord::new();
    loop {
        match reader.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) if e.is_io_error() => return Err(e.into()),
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                out.note_issue(line, e.to_string());
                continue;
            }
        }
        let line = record.position().map_or(0, |p| p.line());
        match parse_ping_row(&record, &cols) {
            Ok(ping) if window.contains(ping.timestamp) => out.records.push(ping),
            Ok(_) => out.outside_window += 1,
            Err(reason) => out.note_issue(line, reason),
        }
    }

    out.records.sort_by(PingRecord::sort_key_cmp);
    let before = out.records.len();
    out.records.dedup();
    out.duplicates = before - out.records.len();
    if out.skipped > 0 {
        log::warn!("skipped {} malformed ping lines", out.skipped);
    }
    Ok(out)
}

impl PingParse {
    fn note_issue(&mut self, line: u64, reason: String) {
        self.skipped += 1;
        if self.issues.len() < MAX_REPORTED_ISSUES {
            self.issues.push(LineIssue { line, reason });
        }
    }
}

fn parse_ping_row(record: &csv::StringRecord, cols: &[usize; 4]) -> std::result::Result<PingRecord, String> {
    let field = |i: usize| {
        record
            .get(cols[i])
            .ok_or_else(|| format!("missing {}", PING_COLUMNS[i]))
    };
    let device_id = field(0)?;
    if device_id.is_empty() {
        return Err("empty device_id".into());
    }
    let ts_text = field(1)?;
    let timestamp = parse_timestamp(ts_text).ok_or_else(|| format!("bad timestamp {ts_text:?}"))?;
    let coord = |i: usize| -> std::result::Result<f64, String> {
        let text = field(i)?;
        text.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| format!("bad {} {text:?}", PING_COLUMNS[i]))
    };
    let latitude = coord(2)?;
    let longitude = coord(3)?;
    if !(-90.0..=90.0).contains(&latitude) {
        return Err(format!("latitude {latitude} out of range"));
    }
    if !(-180.0..=180.0).contains(&longitude) {
        return Err(format!("longitude {longitude} out of range"));
    }
    Ok(PingRecord {
        device_id: device_id.to_owned(),
        latitude,
        longitude,
        timestamp,
    })
}

/// Writes pings in the ping file format with epoch-second timestamps.
pub fn write_pings<W: Write>(sink: W, pings: &[PingRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(PING_COLUMNS)?;
    for p in pings {
        w.write_record([
            p.device_id.as_str(),
            &p.timestamp.to_string(),
            &p.latitude.to_string(),
            &p.longitude.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("ping output", e))?;
    Ok(())
}
