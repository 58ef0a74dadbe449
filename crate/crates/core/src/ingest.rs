//! Conversion of raw charging-session records into the two training corpora:
//! per-session battery charging curves (1-min resolution, zero-padded to
//! 12 h) and per-day station load profiles (5-min resolution).
//!
//! Rate signals are treated as piecewise-constant between samples and
//! resampled with time-weighted bin means, so energy is conserved through
//! every transformation.

use std::fmt;
use std::path::Path;

use chrono::{DateTime, Datelike, NaiveDate, TimeZone, Utc};
use ndarray::Array2;
use serde::Deserialize;
use thiserror::Error;

use crate::engine::ScenarioBatch;

/// Battery curves: 1-min bins, padded to 12 hours.
pub const CURVE_LEN: usize = 720;
/// Station profiles: 5-min bins over one day.
pub const PROFILE_LEN: usize = 288;

/// Nominal line-to-line voltage used to convert ampere signals to kW at
/// station level, matching common 208 V charging deployments.
pub const DEFAULT_VOLTAGE: f64 = 208.0;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}: zero valid rows")]
    NoValidRows(String),
    #[error("{0}: unsupported file extension (expected .csv, .json or .jsonl)")]
    UnknownFormat(String),
}

/// One parsed charging session.
#[derive(Debug, Clone)]
pub struct SessionRecord {
    pub session_id: String,
    pub station_id: String,
    pub connection_time: DateTime<Utc>,
    pub done_charging_time: DateTime<Utc>,
    pub kwh_delivered: f64,
    /// `(epoch_seconds, rate)` samples, sorted by time, within the session
    /// window. The rate holds until the next sample (or until done).
    pub rate_points: Vec<(f64, f64)>,
}

/// Unit of the raw rate signal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RateUnit {
    Amps { voltage: f64 },
    Kilowatts,
}

impl RateUnit {
    pub fn to_kw(&self, rate: f64) -> f64 {
        match self {
            RateUnit::Amps { voltage } => rate * voltage / 1000.0,
            RateUnit::Kilowatts => rate,
        }
    }
}

#[derive(Debug, Default, Clone)]
pub struct IngestReport {
    pub total_rows: usize,
    pub valid_rows: usize,
    pub skipped: Vec<(usize, String)>,
    pub truncated_curves: usize,
    pub dropped_short_curves: usize,
    pub dropped_empty_signal: usize,
    pub empty_days: usize,
}

impl fmt::Display for IngestReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "rows_total = {}", self.total_rows)?;
        writeln!(f, "rows_valid = {}", self.valid_rows)?;
        writeln!(f, "rows_skipped = {}", self.skipped.len())?;
        for (line, reason) in &self.skipped {
            writeln!(f, "skipped line {line}: {reason}")?;
        }
        writeln!(f, "curves_truncated_at_12h = {}", self.truncated_curves)?;
        writeln!(f, "curves_dropped_under_1min = {}", self.dropped_short_curves)?;
        writeln!(f, "sessions_without_rate_signal = {}", self.dropped_empty_signal)?;
        writeln!(f, "days_without_sessions = {}", self.empty_days)
    }
}

/// Fixed-length battery charging curve with the true (unpadded) duration.
#[derive(Debug, Clone)]
pub struct ChargingCurve {
    /// 720 one-minute mean rates; zero beyond `valid_len`.
    pub values: Vec<f64>,
    /// Minutes of genuine charging before the zero padding, 1..=720.
    pub valid_len: usize,
}

/// Daily aggregated station load.
#[derive(Debug, Clone)]
pub struct StationProfile {
    /// 288 five-minute mean powers in kW.
    pub values: Vec<f64>,
    pub date: NaiveDate,
    pub label: usize,
}

fn epoch_s(dt: &DateTime<Utc>) -> f64 {
    dt.timestamp() as f64 + f64::from(dt.timestamp_subsec_millis()) / 1000.0
}

fn parse_timestamp(raw: &str) -> Option<DateTime<Utc>> {
    let raw = raw.trim();
    if let Ok(secs) = raw.parse::<i64>() {
        return Utc.timestamp_opt(secs, 0).single();
    }
    DateTime::parse_from_rfc3339(raw).ok().map(|d| d.with_timezone(&Utc))
}

fn parse_rate_points(raw: &str) -> Result<Vec<(f64, f64)>, String> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Ok(Vec::new());
    }
    let mut points = Vec::new();
    for piece in raw.split(';') {
        let piece = piece.trim();
        if piece.is_empty() {
            continue;
        }
        let (ts, rate) = piece
            .split_once(':')
            .ok_or_else(|| format!("rate point '{piece}' is not 'epoch:rate'"))?;
        let ts: f64 = ts.trim().parse().map_err(|_| format!("bad epoch '{ts}'"))?;
        let rate: f64 = rate.trim().parse().map_err(|_| format!("bad rate '{rate}'"))?;
        points.push((ts, rate));
    }
    Ok(points)
}

#[derive(Deserialize)]
struct RawSession {
    session_id: String,
    station_id: String,
    connection_time: String,
    done_charging_time: String,
    kwh_delivered: f64,
    rate_points: String,
}

fn validate_session(raw: RawSession) -> Result<SessionRecord, String> {
    let connection_time =
        parse_timestamp(&raw.connection_time).ok_or_else(|| format!("bad connection_time '{}'", raw.connection_time))?;
    let done_charging_time = parse_timestamp(&raw.done_charging_time)
        .ok_or_else(|| format!("bad done_charging_time '{}'", raw.done_charging_time))?;
    if done_charging_time < connection_time {
        return Err("done_charging_time precedes connection_time".into());
    }
    if !(raw.kwh_delivered >= 0.0) {
        return Err(format!("kwh_delivered must be >= 0, got {}", raw.kwh_delivered));
    }
    let mut rate_points = parse_rate_points(&raw.rate_points)?;
    rate_points.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (start, end) = (epoch_s(&connection_time), epoch_s(&done_charging_time));
    for &(ts, rate) in &rate_points {
        if ts < start - 1e-6 || ts > end + 1e-6 {
            return Err(format!("rate point at epoch {ts} outside session window"));
        }
        if !rate.is_finite() || rate < 0.0 {
            return Err(format!("rate must be finite and >= 0, got {rate}"));
        }
    }
    Ok(SessionRecord {
        session_id: raw.session_id,
        station_id: raw.station_id,
        connection_time,
        done_charging_time,
        kwh_delivered: raw.kwh_delivered,
        rate_points,
    })
}

/// Reads session records from a CSV file (columns `session_id, station_id,
/// connection_time, done_charging_time, kwh_delivered, rate_points`) or a
/// JSON-lines file with the same fields. Malformed rows are skipped and
/// reported with their line numbers.
pub fn parse_sessions(path: &Path) -> Result<(Vec<SessionRecord>, IngestReport), IngestError> {
    let display = path.display().to_string();
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    let content = std::fs::read_to_string(path)
        .map_err(|source| IngestError::Unreadable { path: display.clone(), source })?;

    let mut report = IngestReport::default();
    let mut sessions = Vec::new();

    match ext.as_str() {
        "csv" => {
            let mut reader = csv::ReaderBuilder::new()
                .has_headers(true)
                .comment(Some(b'#'))
                .from_reader(content.as_bytes());
            let headers = reader.headers().map_err(|e| IngestError::Unreadable {
                path: display.clone(),
                source: std::io::Error::other(e),
            })?;
            let headers = headers.clone();
            for result in reader.records() {
                report.total_rows += 1;
                let line = report.total_rows + 1; // header occupies line 1
                let record = match result {
                    Ok(r) => r,
                    Err(e) => {
                        report.skipped.push((line, format!("unparsable row: {e}")));
                        continue;
                    }
                };
                let raw: Result<RawSession, _> = record.deserialize(Some(&headers));
                match raw.map_err(|e| e.to_string()).and_then(validate_session) {
                    Ok(s) => sessions.push(s),
                    Err(reason) => report.skipped.push((line, reason)),
                }
            }
        }
        "json" | "jsonl" => {
            for (idx, raw_line) in content.lines().enumerate() {
                let line = idx + 1;
                let trimmed = raw_line.trim();
                if trimmed.is_empty() || trimmed.starts_with('#') {
                    continue;
                }
                report.total_rows += 1;
                let parsed: Result<RawSession, _> = serde_json::from_str(trimmed);
                match parsed.map_err(|e| e.to_string()).and_then(validate_session) {
                    Ok(s) => sessions.push(s),
                    Err(reason) => report.skipped.push((line, reason)),
                }
            }
        }
        _ => return Err(IngestError::UnknownFormat(display)),
    }

    if sessions.is_empty() {
        return Err(IngestError::NoValidRows(display));
    }
    // Deterministic order regardless of input order.
    sessions.sort_by(|a, b| {
        (a.connection_time, &a.session_id).cmp(&(b.connection_time, &b.session_id))
    });
    report.valid_rows = sessions.len();
    Ok((sessions, report))
}

/// Integral of the piecewise-constant rate signal over `[a, b)`, in
/// rate-unit x seconds. `points` must be sorted; the last rate holds until
/// `signal_end`.
fn integrate_step(points: &[(f64, f64)], signal_end: f64, a: f64, b: f64) -> f64 {
    let mut total = 0.0;
    for (i, &(start, rate)) in points.iter().enumerate() {
        let end = points.get(i + 1).map_or(signal_end, |p| p.0);
        let lo = start.max(a);
        let hi = end.min(b);
        if hi > lo {
            total += rate * (hi - lo);
        }
    }
    total
}

/// Builds 1-min battery curves. Sessions longer than 12 h are truncated and
/// counted; sessions shorter than one minute or without a rate signal are
/// dropped and counted.
pub fn build_battery_curves(sessions: &[SessionRecord], report: &mut IngestReport) -> Vec<ChargingCurve> {
    let mut curves = Vec::new();
    for s in sessions {
        if s.rate_points.is_empty() {
            report.dropped_empty_signal += 1;
            continue;
        }
        let start = epoch_s(&s.connection_time);
        let end = epoch_s(&s.done_charging_time);
        let duration_min = (end - start) / 60.0;
        if duration_min < 1.0 {
            report.dropped_short_curves += 1;
            continue;
        }
        let mut valid_len = duration_min.ceil() as usize;
        if valid_len > CURVE_LEN {
            valid_len = CURVE_LEN;
            report.truncated_curves += 1;
        }
        let mut values = vec![0.0; CURVE_LEN];
        for (m, v) in values.iter_mut().enumerate().take(valid_len) {
            let bin_start = start + 60.0 * m as f64;
            *v = integrate_step(&s.rate_points, end, bin_start, bin_start + 60.0) / 60.0;
        }
        curves.push(ChargingCurve { values, valid_len });
    }
    curves
}

/// Aggregates all sessions of one station into daily 5-min load profiles in
/// kW. A session spanning midnight contributes to both days. Days inside the
/// covered date range with no sessions are omitted and counted.
pub fn build_station_profiles(
    sessions: &[SessionRecord],
    station_id: &str,
    label: usize,
    unit: RateUnit,
    report: &mut IngestReport,
) -> Vec<StationProfile> {
    let mine: Vec<&SessionRecord> = sessions.iter().filter(|s| s.station_id == station_id).collect();
    let mut by_date: std::collections::BTreeMap<NaiveDate, Vec<f64>> = std::collections::BTreeMap::new();

    for s in &mine {
        if s.rate_points.is_empty() {
            report.dropped_empty_signal += 1;
            continue;
        }
        let end = epoch_s(&s.done_charging_time);
        let kw_points: Vec<(f64, f64)> = s.rate_points.iter().map(|&(t, r)| (t, unit.to_kw(r))).collect();

        let mut date = s.connection_time.date_naive();
        let last_date = s.done_charging_time.date_naive();
        while date <= last_date {
            let day_start = Utc
                .with_ymd_and_hms(date.year(), date.month(), date.day(), 0, 0, 0)
                .single()
                .expect("valid date");
            let day_start = epoch_s(&day_start);
            let bins = by_date.entry(date).or_insert_with(|| vec![0.0; PROFILE_LEN]);
            for (b, acc) in bins.iter_mut().enumerate() {
                let lo = day_start + 300.0 * b as f64;
                *acc += integrate_step(&kw_points, end, lo, lo + 300.0) / 300.0;
            }
            date = date.succ_opt().expect("valid successor date");
        }
    }

    // Remove days that a spanning session touched without delivering energy,
    // and count gap days inside the covered range.
    by_date.retain(|_, bins| bins.iter().any(|v| *v > 0.0));
    if let (Some(first), Some(last)) = (by_date.keys().next().copied(), by_date.keys().last().copied()) {
        let mut d = first;
        while d <= last {
            if !by_date.contains_key(&d) {
                report.empty_days += 1;
            }
            d = d.succ_opt().expect("valid successor date");
        }
    }

    by_date
        .into_iter()
        .map(|(date, values)| StationProfile { values, date, label })
        .collect()
}

/// Packs curves into a scenario matrix (rows = curves).
pub fn curves_to_batch(curves: &[ChargingCurve]) -> ScenarioBatch {
    let values = Array2::from_shape_fn((curves.len(), CURVE_LEN), |(i, j)| curves[i].values[j]);
    ScenarioBatch { values, labels: None, normalization: None }
}

/// Packs labeled station profiles into a scenario matrix.
pub fn profiles_to_batch(profiles: &[StationProfile]) -> ScenarioBatch {
    let values = Array2::from_shape_fn((profiles.len(), PROFILE_LEN), |(i, j)| profiles[i].values[j]);
    let labels = profiles.iter().map(|p| p.label).collect();
    ScenarioBatch { values, labels: Some(labels), normalization: None }
}
