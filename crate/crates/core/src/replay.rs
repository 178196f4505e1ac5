//! Frame logs in, guidance event timelines out.
//!
//! Log columns: `frame_index,t_s,agent_east_m,agent_north_m,heading_deg,
//! device_pitch_deg,cam_yaw_deg,bbox_cx,bbox_cy,bbox_w,bbox_h,confidence`.
//! Empty bbox fields mean the detector reported nothing on that frame.

use crate::guidance::{AudioEvent, DeviceAttitude, GuidanceConfig, GuidanceEngine, GuidanceError, GuidanceState};
use crate::perception::{estimate_distance, CameraIntrinsics, Detection, PerceptionError, SignSpec};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use thiserror::Error;

pub const LOG_HEADER: [&str; 12] = [
    "frame_index",
    "t_s",
    "agent_east_m",
    "agent_north_m",
    "heading_deg",
    "device_pitch_deg",
    "cam_yaw_deg",
    "bbox_cx",
    "bbox_cy",
    "bbox_w",
    "bbox_h",
    "confidence",
];

pub const TIMELINE_HEADER: [&str; 5] = ["frame_index", "state", "event_kind", "level", "est_distance_m"];

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("missing required column `{0}`")]
    MissingColumn(&'static str),
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },
    #[error(transparent)]
    Guidance(#[from] GuidanceError),
    #[error(transparent)]
    Perception(#[from] PerceptionError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Contents of a `--guidance-config` file. Every key is optional.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayConfig {
    #[serde(default)]
    pub guidance: GuidanceConfig,
    #[serde(default)]
    pub camera: CameraIntrinsics,
    #[serde(default)]
    pub sign: SignSpec,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogFrame {
    pub frame_index: u64,
    pub t_s: f64,
    pub agent_east_m: f64,
    pub agent_north_m: f64,
    pub heading_deg: f64,
    pub device_pitch_deg: f64,
    pub cam_yaw_deg: f64,
    pub detection: Option<Detection>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimelineEntry {
    pub frame_index: u64,
    pub state: GuidanceState,
    pub event: AudioEvent,
    pub est_distance_m: Option<f64>,
}

pub fn read_log<R: Read>(input: R) -> Result<Vec<LogFrame>, ReplayError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let headers = rdr.headers()?.clone();
    let mut idx = [0usize; 12];
    for (slot, name) in idx.iter_mut().zip(LOG_HEADER) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or(ReplayError::MissingColumn(name))?;
    }
    let mut frames = Vec::new();
    let mut prev: Option<u64> = None;
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let err = |message: String| ReplayError::Row { line, message };
        let raw = |c: usize| rec.get(idx[c]).unwrap_or("").trim();
        let num = |c: usize| -> Result<f64, ReplayError> {
            raw(c)
                .parse::<f64>()
                .map_err(|_| err(format!("bad {} `{}`", LOG_HEADER[c], raw(c))))
        };
        let frame_index: u64 = raw(0)
            .parse()
            .map_err(|_| err(format!("bad frame_index `{}`", raw(0))))?;
        if let Some(p) = prev {
            if frame_index <= p {
                return Err(err(format!("frame_index {frame_index} does not follow {p}")));
            }
        }
        prev = Some(frame_index);
        let bbox_blank = (7..12).map(raw).all(str::is_empty);
        let detection = if bbox_blank {
            None
        } else {
            Some(Detection {
                frame_index,
                bbox_center_x_px: num(7)?,
                bbox_center_y_px: num(8)?,
                bbox_width_px: num(9)?,
                bbox_height_px: num(10)?,
                confidence: num(11)?,
            })
        };
        frames.push(LogFrame {
            frame_index,
            t_s: num(1)?,
            agent_east_m: num(2)?,
            agent_north_m: num(3)?,
            heading_deg: num(4)?,
            device_pitch_deg: num(5)?,
            cam_yaw_deg: num(6)?,
            detection,
        });
    }
    Ok(frames)
}

pub fn write_log<W: Write>(frames: &[LogFrame], out: W) -> Result<(), ReplayError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(LOG_HEADER)?;
    for f in frames {
        let mut rec = vec![
            f.frame_index.to_string(),
            f.t_s.to_string(),
            f.agent_east_m.to_string(),
            f.agent_north_m.to_string(),
            f.heading_deg.to_string(),
            f.device_pitch_deg.to_string(),
            f.cam_yaw_deg.to_string(),
        ];
        match &f.detection {
            Some(d) => rec.extend(
                [
                    d.bbox_center_x_px,
                    d.bbox_center_y_px,
                    d.bbox_width_px,
                    d.bbox_height_px,
                    d.confidence,
                ]
                .map(|v| v.to_string()),
            ),
            None => rec.extend(std::iter::repeat_n(String::new(), 5)),
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Drives the guidance engine over a log, one step per frame.
pub fn replay(frames: &[LogFrame], cfg: &ReplayConfig) -> Result<Vec<TimelineEntry>, ReplayError> {
    let mut engine = GuidanceEngine::new(cfg.guidance)?;
    let mut out = Vec::with_capacity(frames.len());
    for f in frames {
        let ranged = f
            .detection
            .as_ref()
            .map(|d| estimate_distance(d, &cfg.camera, &cfg.sign))
            .transpose()?;
        let event = engine.step(DeviceAttitude::pitch(f.device_pitch_deg), ranged.as_ref());
        out.push(TimelineEntry {
            frame_index: f.frame_index,
            state: engine.state(),
            event,
            est_distance_m: ranged.map(|r| r.est_distance_m),
        });
    }
    Ok(out)
}

pub fn write_timeline<W: Write>(timeline: &[TimelineEntry], out: W) -> Result<(), ReplayError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TIMELINE_HEADER)?;
    for e in timeline {
        w.write_record([
            e.frame_index.to_string(),
            e.state.name().to_string(),
            e.event.kind().to_string(),
            e.event.level().map(|l| l.get().to_string()).unwrap_or_default(),
            e.est_distance_m.map(|d| d.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
