//! GTFS `stops.txt` parsing and mapped-vs-surveyed stop audits.
//!
//! Only the four columns the audit needs are read (`stop_id`, `stop_name`,
//! `stop_lat`, `stop_lon`). Columns are located by header name, so feeds with
//! extra or reordered columns parse the same way.

use crate::geo::{haversine_distance, normalize_heading, GeoPoint};
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use thiserror::Error;

/// Length of a standard 40 ft transit bus, rounded.
pub const DEFAULT_BUS_LENGTH_M: f64 = 12.0;

#[derive(Debug, Error)]
pub enum GtfsError {
    #[error("missing required column `{0}`")]
    MissingColumn(&'static str),
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("duplicate stop_id `{stop_id}` at line {line}")]
    DuplicateStopId { stop_id: String, line: u64 },
    #[error("no stop_id is shared between the feed and the ground truth")]
    EmptyJoin,
    #[error("audit thresholds must be positive and finite, got {0}")]
    BadThreshold(f64),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StopRecord {
    pub stop_id: String,
    pub stop_name: String,
    pub mapped: GeoPoint,
}

/// Stops keyed by `stop_id`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StopRegistry {
    records: BTreeMap<String, StopRecord>,
}

impl StopRegistry {
    pub fn get(&self, stop_id: &str) -> Option<&StopRecord> {
        self.records.get(stop_id)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records in `stop_id` order.
    pub fn iter(&self) -> impl Iterator<Item = &StopRecord> {
        self.records.values()
    }

    pub fn insert(&mut self, record: StopRecord) -> Result<(), GtfsError> {
        if record.stop_id.is_empty() {
            return Err(GtfsError::Row {
                line: 0,
                message: "empty stop_id".into(),
            });
        }
        if self.records.contains_key(&record.stop_id) {
            return Err(GtfsError::DuplicateStopId {
                stop_id: record.stop_id,
                line: 0,
            });
        }
        self.records.insert(record.stop_id.clone(), record);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroundTruthRecord {
    pub stop_id: String,
    pub surveyed: GeoPoint,
    pub travel_heading_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub per_stop_error_m: BTreeMap<String, f64>,
    pub mean_m: f64,
    pub sd_m: f64,
    pub max_m: f64,
    /// Threshold (meters) paired with the fraction of matched stops whose error
    /// is strictly greater than it, in the order the thresholds were given.
    pub fraction_exceeding: Vec<(f64, f64)>,
    /// Ground-truth ids with no stop in the feed.
    pub unmatched_truth_ids: Vec<String>,
    /// Feed stops with no ground-truth record.
    pub unmatched_feed_ids: Vec<String>,
}

impl AuditReport {
    pub fn matched(&self) -> usize {
        self.per_stop_error_m.len()
    }

    pub fn fraction_over(&self, threshold_m: f64) -> Option<f64> {
        self.fraction_exceeding
            .iter()
            .find(|(t, _)| *t == threshold_m)
            .map(|(_, f)| *f)
    }

    /// `stop_id,error_m` rows.
    pub fn write_errors_csv<W: Write>(&self, out: W) -> Result<(), GtfsError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["stop_id", "error_m"])?;
        for (id, e) in &self.per_stop_error_m {
            w.write_record([id.as_str(), &e.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary_json(&self) -> serde_json::Value {
        let fractions: Vec<_> = self
            .fraction_exceeding
            .iter()
            .map(|(t, f)| serde_json::json!({ "threshold_m": t, "fraction": f }))
            .collect();
        serde_json::json!({
            "matched": self.matched(),
            "mean_m": self.mean_m,
            "sd_m": self.sd_m,
            "max_m": self.max_m,
            "fraction_exceeding": fractions,
            "unmatched_truth_count": self.unmatched_truth_ids.len(),
            "unmatched_feed_count": self.unmatched_feed_ids.len(),
            "unmatched_truth_ids": self.unmatched_truth_ids,
            "unmatched_feed_ids": self.unmatched_feed_ids,
        })
    }
}

struct Columns {
    index: Vec<Option<usize>>,
}

impl Columns {
    fn locate(headers: &csv::StringRecord, names: &[&'static str]) -> Result<Self, GtfsError> {
        let mut index = Vec::with_capacity(names.len());
        for name in names {
            // A UTF-8 BOM sticks to the first header when present.
            let pos = headers
                .iter()
                .position(|h| h.trim_start_matches('\u{feff}').trim() == *name);
            index.push(pos);
        }
        Ok(Columns { index })
    }

    fn require(&self, names: &[&'static str], required: &[&'static str]) -> Result<(), GtfsError> {
        for (name, idx) in names.iter().zip(&self.index) {
            if idx.is_none() && required.contains(name) {
                return Err(GtfsError::MissingColumn(name));
            }
        }
        Ok(())
    }

    fn get<'r>(&self, rec: &'r csv::StringRecord, col: usize) -> &'r str {
        self.index[col].and_then(|i| rec.get(i)).unwrap_or("").trim()
    }
}

fn parse_coord(raw: &str, what: &str, line: u64) -> Result<f64, GtfsError> {
    if raw.is_empty() {
        return Err(GtfsError::Row {
            line,
            message: format!("blank {what}"),
        });
    }
    raw.parse::<f64>().map_err(|_| GtfsError::Row {
        line,
        message: format!("unparseable {what} `{raw}`"),
    })
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(input)
}

fn point(lat: f64, lon: f64, line: u64) -> Result<GeoPoint, GtfsError> {
    GeoPoint::new(lat, lon).map_err(|e| GtfsError::Row {
        line,
        message: e.to_string(),
    })
}

/// Parses the stops subset of a GTFS `stops.txt`.
pub fn parse_stops<R: Read>(input: R) -> Result<StopRegistry, GtfsError> {
    const NAMES: [&str; 4] = ["stop_id", "stop_name", "stop_lat", "stop_lon"];
    let mut rdr = reader(input);
    let cols = Columns::locate(rdr.headers()?, &NAMES)?;
    cols.require(&NAMES, &["stop_id", "stop_lat", "stop_lon"])?;

    let mut registry = StopRegistry::default();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let stop_id = cols.get(&rec, 0);
        if stop_id.is_empty() {
            return Err(GtfsError::Row {
                line,
                message: "empty stop_id".into(),
            });
        }
        let lat = parse_coord(cols.get(&rec, 2), "stop_lat", line)?;
        let lon = parse_coord(cols.get(&rec, 3), "stop_lon", line)?;
        let record = StopRecord {
            stop_id: stop_id.to_string(),
            stop_name: cols.get(&rec, 1).to_string(),
            mapped: point(lat, lon, line)?,
        };
        if registry.records.contains_key(stop_id) {
            return Err(GtfsError::DuplicateStopId {
                stop_id: stop_id.to_string(),
                line,
            });
        }
        registry.records.insert(record.stop_id.clone(), record);
    }
    Ok(registry)
}

/// Parses surveyed positions: header `stop_id,lat,lon,heading_deg`.
pub fn parse_ground_truth<R: Read>(input: R) -> Result<Vec<GroundTruthRecord>, GtfsError> {
    const NAMES: [&str; 4] = ["stop_id", "lat", "lon", "heading_deg"];
    let mut rdr = reader(input);
    let cols = Columns::locate(rdr.headers()?, &NAMES)?;
    cols.require(&NAMES, &NAMES)?;

    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let stop_id = cols.get(&rec, 0);
        if stop_id.is_empty() {
            return Err(GtfsError::Row {
                line,
                message: "empty stop_id".into(),
            });
        }
        if !seen.insert(stop_id.to_string()) {
            return Err(GtfsError::DuplicateStopId {
                stop_id: stop_id.to_string(),
                line,
            });
        }
        let lat = parse_coord(cols.get(&rec, 1), "lat", line)?;
        let lon = parse_coord(cols.get(&rec, 2), "lon", line)?;
        let heading = parse_coord(cols.get(&rec, 3), "heading_deg", line)?;
        if !heading.is_finite() {
            return Err(GtfsError::Row {
                line,
                message: format!("non-finite heading `{heading}`"),
            });
        }
        out.push(GroundTruthRecord {
            stop_id: stop_id.to_string(),
            surveyed: point(lat, lon, line)?,
            travel_heading_deg: normalize_heading(heading),
        });
    }
    Ok(out)
}

/// Compares feed coordinates with surveyed sign positions.
///
/// Only stops present on both sides contribute to the statistics; every id
/// present on one side only is listed in the report.
pub fn audit_mapping(
    registry: &StopRegistry,
    truth: &[GroundTruthRecord],
    thresholds_m: &[f64],
) -> Result<AuditReport, GtfsError> {
    if let Some(&bad) = thresholds_m.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
        return Err(GtfsError::BadThreshold(bad));
    }

    let mut per_stop_error_m = BTreeMap::new();
    let mut unmatched_truth_ids = Vec::new();
    for t in truth {
        match registry.get(&t.stop_id) {
            Some(stop) => {
                per_stop_error_m.insert(t.stop_id.clone(), haversine_distance(stop.mapped, t.surveyed));
            }
            None => unmatched_truth_ids.push(t.stop_id.clone()),
        }
    }
    if per_stop_error_m.is_empty() {
        return Err(GtfsError::EmptyJoin);
    }
    let unmatched_feed_ids = registry
        .iter()
        .filter(|s| !per_stop_error_m.contains_key(&s.stop_id))
        .map(|s| s.stop_id.clone())
        .collect();

    let errors: Vec<f64> = per_stop_error_m.values().copied().collect();
    let n = errors.len() as f64;
    let mean_m = errors.iter().sum::<f64>() / n;
    let sd_m = if errors.len() > 1 {
        (errors.iter().map(|e| (e - mean_m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let max_m = errors.iter().copied().fold(0.0, f64::max);
    let fraction_exceeding = thresholds_m
        .iter()
        .map(|&t| (t, errors.iter().filter(|&&e| e > t).count() as f64 / n))
        .collect();

    Ok(AuditReport {
        per_stop_error_m,
        mean_m,
        sd_m,
        max_m,
        fraction_exceeding,
        unmatched_truth_ids,
        unmatched_feed_ids,
    })
}
