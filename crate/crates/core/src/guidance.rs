//! Audio guidance state machine.
//!
//! The engine is silent unless the phone is held upright. While upright, each
//! detection produces a short blip until `k_confirm` consecutive frames have
//! seen the sign; from then on the tone is continuous and its level tracks the
//! estimated range. The tone stops on the first frame without a detection.
//! A detection within `lost_grace_frames` of the loss re-locks immediately;
//! after that the engine falls back to scanning and must re-confirm.
//!
//! Suggested frequencies for an audio front end:
//!
//! | level | range (default) | tone    |
//! |-------|-----------------|---------|
//! | 4     | <= 2 m          | 1760 Hz |
//! | 3     | <= 6 m          | 1320 Hz |
//! | 2     | <= 15 m         | 880 Hz  |
//! | 1     | > 15 m          | 440 Hz  |

use crate::perception::RangedDetection;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Range of the top tone band. Fixed.
pub const NEAREST_BAND_M: f64 = 2.0;
pub const DEFAULT_THRESHOLDS_M: [f64; 3] = [NEAREST_BAND_M, 6.0, 15.0];
pub const DEFAULT_UPRIGHT_BAND_DEG: f64 = 25.0;
pub const DEFAULT_K_CONFIRM: u32 = 3;
pub const DEFAULT_LOST_GRACE_FRAMES: u32 = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GuidanceError {
    #[error("tone thresholds must be strictly ascending and start at {NEAREST_BAND_M} m, got {0:?}")]
    Thresholds([f64; 3]),
    #[error("upright band must be positive, got {0}")]
    Band(f64),
    #[error("k_confirm must be at least 1")]
    ZeroConfirm,
    #[error("smoothing factor must lie in (0, 1], got {0}")]
    Smoothing(f64),
    #[error("distance must be positive, got {0}")]
    Distance(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DeviceAttitude {
    /// 90 = screen vertical.
    pub pitch_deg: f64,
    pub roll_deg: f64,
}

impl DeviceAttitude {
    pub const UPRIGHT: DeviceAttitude = DeviceAttitude {
        pitch_deg: 90.0,
        roll_deg: 0.0,
    };

    pub fn pitch(pitch_deg: f64) -> Self {
        DeviceAttitude {
            pitch_deg,
            roll_deg: 0.0,
        }
    }
}

/// Proximity tone, 1 (farthest) to 4 (within 2 m).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct ToneLevel(u8);

impl ToneLevel {
    pub const FAR: ToneLevel = ToneLevel(1);
    pub const NEAREST: ToneLevel = ToneLevel(4);

    pub fn new(level: u8) -> Option<Self> {
        (1..=4).contains(&level).then_some(ToneLevel(level))
    }

    pub fn get(self) -> u8 {
        self.0
    }
}

impl TryFrom<u8> for ToneLevel {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, String> {
        ToneLevel::new(v).ok_or_else(|| format!("tone level {v} outside 1..=4"))
    }
}

impl From<ToneLevel> for u8 {
    fn from(t: ToneLevel) -> u8 {
        t.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuidanceConfig {
    #[serde(default = "default_band")]
    pub band_deg: f64,
    #[serde(default = "default_k")]
    pub k_confirm: u32,
    #[serde(default = "default_thresholds")]
    pub thresholds_m: [f64; 3],
    #[serde(default = "default_grace")]
    pub lost_grace_frames: u32,
    /// Exponential smoothing factor for the locked distance; `None` uses the
    /// raw per-frame estimate.
    #[serde(default)]
    pub smoothing: Option<f64>,
}

fn default_band() -> f64 {
    DEFAULT_UPRIGHT_BAND_DEG
}
fn default_k() -> u32 {
    DEFAULT_K_CONFIRM
}
fn default_thresholds() -> [f64; 3] {
    DEFAULT_THRESHOLDS_M
}
fn default_grace() -> u32 {
    DEFAULT_LOST_GRACE_FRAMES
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig {
            band_deg: DEFAULT_UPRIGHT_BAND_DEG,
            k_confirm: DEFAULT_K_CONFIRM,
            thresholds_m: DEFAULT_THRESHOLDS_M,
            lost_grace_frames: DEFAULT_LOST_GRACE_FRAMES,
            smoothing: None,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<(), GuidanceError> {
        validate_thresholds(&self.thresholds_m)?;
        if !(self.band_deg.is_finite() && self.band_deg > 0.0) {
            return Err(GuidanceError::Band(self.band_deg));
        }
        if self.k_confirm == 0 {
            return Err(GuidanceError::ZeroConfirm);
        }
        if let Some(a) = self.smoothing {
            if !(a > 0.0 && a <= 1.0) {
                return Err(GuidanceError::Smoothing(a));
            }
        }
        Ok(())
    }
}

fn validate_thresholds(t: &[f64; 3]) -> Result<(), GuidanceError> {
    let ascending = t[0] < t[1] && t[1] < t[2] && t.iter().all(|v| v.is_finite());
    if t[0] != NEAREST_BAND_M || !ascending {
        return Err(GuidanceError::Thresholds(*t));
    }
    Ok(())
}

pub fn upright_gate(att: DeviceAttitude, band_deg: f64) -> bool {
    (att.pitch_deg - 90.0).abs() <= band_deg
}

/// Tone band for a range estimate. Band edges belong to the nearer band.
pub fn tone_level(est_distance_m: f64, thresholds: &[f64; 3]) -> Result<ToneLevel, GuidanceError> {
    validate_thresholds(thresholds)?;
    if est_distance_m.is_nan() || est_distance_m <= 0.0 {
        return Err(GuidanceError::Distance(est_distance_m));
    }
    Ok(level_unchecked(est_distance_m, thresholds))
}

fn level_unchecked(d: f64, t: &[f64; 3]) -> ToneLevel {
    let level = if d <= t[0] {
        4
    } else if d <= t[1] {
        3
    } else if d <= t[2] {
        2
    } else {
        1
    };
    ToneLevel(level)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum GuidanceState {
    Inactive,
    Scanning { run_length: u32 },
    Locked { level: ToneLevel, last_distance_m: f64 },
    Lost { frames_since_loss: u32 },
}

impl GuidanceState {
    pub fn name(&self) -> &'static str {
        match self {
            GuidanceState::Inactive => "Inactive",
            GuidanceState::Scanning { .. } => "Scanning",
            GuidanceState::Locked { .. } => "Locked",
            GuidanceState::Lost { .. } => "Lost",
        }
    }

    pub fn is_locked(&self) -> bool {
        matches!(self, GuidanceState::Locked { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum AudioKind {
    Silence,
    Blip,
    Continuous,
}

impl fmt::Display for AudioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AudioKind::Silence => "SILENCE",
            AudioKind::Blip => "BLIP",
            AudioKind::Continuous => "CONTINUOUS",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AudioEvent {
    kind: AudioKind,
    level: Option<ToneLevel>,
}

impl AudioEvent {
    pub const SILENCE: AudioEvent = AudioEvent {
        kind: AudioKind::Silence,
        level: None,
    };

    pub fn blip(level: ToneLevel) -> Self {
        AudioEvent {
            kind: AudioKind::Blip,
            level: Some(level),
        }
    }

    pub fn continuous(level: ToneLevel) -> Self {
        AudioEvent {
            kind: AudioKind::Continuous,
            level: Some(level),
        }
    }

    pub fn kind(&self) -> AudioKind {
        self.kind
    }

    pub fn level(&self) -> Option<ToneLevel> {
        self.level
    }
}

/// One transition of the guidance machine.
///
/// `cfg` is assumed valid; see [`GuidanceConfig::validate`].
pub fn step(
    state: GuidanceState,
    att: DeviceAttitude,
    obs: Option<&RangedDetection>,
    cfg: &GuidanceConfig,
) -> (GuidanceState, AudioEvent) {
    use GuidanceState::*;

    if !upright_gate(att, cfg.band_deg) {
        return (Inactive, AudioEvent::SILENCE);
    }
    let thresholds = &cfg.thresholds_m;
    match (state, obs) {
        (Inactive | Scanning { .. }, None) => (Scanning { run_length: 0 }, AudioEvent::SILENCE),
        (Inactive | Scanning { .. }, Some(hit)) => {
            let run = match state {
                Scanning { run_length } => run_length.saturating_add(1),
                _ => 1,
            };
            let d = hit.est_distance_m;
            let level = level_unchecked(d, thresholds);
            if run >= cfg.k_confirm {
                (
                    Locked {
                        level,
                        last_distance_m: d,
                    },
                    AudioEvent::continuous(level),
                )
            } else {
                (Scanning { run_length: run }, AudioEvent::blip(level))
            }
        }
        (Locked { last_distance_m, .. }, Some(hit)) => {
            let d = match cfg.smoothing {
                Some(a) => a * hit.est_distance_m + (1.0 - a) * last_distance_m,
                None => hit.est_distance_m,
            };
            let level = level_unchecked(d, thresholds);
            (
                Locked {
                    level,
                    last_distance_m: d,
                },
                AudioEvent::continuous(level),
            )
        }
        (Locked { .. }, None) => (Lost { frames_since_loss: 1 }, AudioEvent::SILENCE),
        (Lost { .. }, Some(hit)) => {
            let d = hit.est_distance_m;
            let level = level_unchecked(d, thresholds);
            (
                Locked {
                    level,
                    last_distance_m: d,
                },
                AudioEvent::continuous(level),
            )
        }
        (Lost { frames_since_loss }, None) => {
            let n = frames_since_loss.saturating_add(1);
            if n > cfg.lost_grace_frames {
                (Scanning { run_length: 0 }, AudioEvent::SILENCE)
            } else {
                (Lost { frames_since_loss: n }, AudioEvent::SILENCE)
            }
        }
    }
}

/// Owns a [`GuidanceState`] and a validated config.
#[derive(Debug, Clone)]
pub struct GuidanceEngine {
    cfg: GuidanceConfig,
    state: GuidanceState,
}

impl GuidanceEngine {
    pub fn new(cfg: GuidanceConfig) -> Result<Self, GuidanceError> {
        cfg.validate()?;
        Ok(GuidanceEngine {
            cfg,
            state: GuidanceState::Inactive,
        })
    }

    pub fn state(&self) -> GuidanceState {
        self.state
    }

    pub fn config(&self) -> &GuidanceConfig {
        &self.cfg
    }

    pub fn step(&mut self, att: DeviceAttitude, obs: Option<&RangedDetection>) -> AudioEvent {
        let (next, ev) = step(self.state, att, obs, &self.cfg);
        self.state = next;
        ev
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perception::Detection;

    fn hit(d: f64) -> RangedDetection {
        RangedDetection {
            detection: Detection {
                frame_index: 0,
                bbox_center_x_px: 540.0,
                bbox_center_y_px: 960.0,
                bbox_width_px: 100.0,
                bbox_height_px: 100.0,
                confidence: 1.0,
            },
            est_distance_m: d,
            bearing_deg: 0.0,
        }
    }

    #[test]
    fn upright_examples() {
        assert!(upright_gate(DeviceAttitude::pitch(90.0), 25.0));
        assert!(!upright_gate(DeviceAttitude::pitch(0.0), 25.0));
        assert!(!upright_gate(DeviceAttitude::pitch(64.0), 25.0));
        assert!(upright_gate(DeviceAttitude::pitch(65.0), 25.0));
    }

    #[test]
    fn tone_examples() {
        let t = DEFAULT_THRESHOLDS_M;
        assert_eq!(tone_level(1.5, &t).unwrap().get(), 4);
        assert_eq!(tone_level(2.0, &t).unwrap().get(), 4);
        assert_eq!(tone_level(2.0001, &t).unwrap().get(), 3);
        assert_eq!(tone_level(6.0, &t).unwrap().get(), 3);
        assert_eq!(tone_level(10.0, &t).unwrap().get(), 2);
        assert_eq!(tone_level(30.0, &t).unwrap().get(), 1);
    }

    #[test]
    fn tone_rejects_bad_config() {
        assert!(tone_level(3.0, &[2.0, 2.0, 5.0]).is_err());
        assert!(tone_level(3.0, &[2.0, 9.0, 5.0]).is_err());
        assert!(tone_level(3.0, &[1.0, 6.0, 15.0]).is_err());
        assert!(tone_level(0.0, &DEFAULT_THRESHOLDS_M).is_err());
    }

    #[test]
    fn step_examples() {
        let cfg = GuidanceConfig::default();
        let up = DeviceAttitude::UPRIGHT;

        let (s, ev) = step(GuidanceState::Scanning { run_length: 2 }, up, Some(&hit(10.0)), &cfg);
        assert_eq!(
            s,
            GuidanceState::Locked {
                level: ToneLevel(2),
                last_distance_m: 10.0
            }
        );
        assert_eq!(ev, AudioEvent::continuous(ToneLevel(2)));

        let (s, ev) = step(s, up, None, &cfg);
        assert_eq!(s, GuidanceState::Lost { frames_since_loss: 1 });
        assert_eq!(ev, AudioEvent::SILENCE);

        for state in [s, GuidanceState::Inactive, GuidanceState::Scanning { run_length: 1 }] {
            let (s2, ev) = step(state, DeviceAttitude::pitch(0.0), Some(&hit(1.0)), &cfg);
            assert_eq!(s2, GuidanceState::Inactive);
            assert_eq!(ev, AudioEvent::SILENCE);
        }
    }

    #[test]
    fn blips_then_lock_then_grace() {
        let cfg = GuidanceConfig {
            lost_grace_frames: 2,
            ..GuidanceConfig::default()
        };
        let mut g = GuidanceEngine::new(cfg).unwrap();
        let up = DeviceAttitude::UPRIGHT;
        assert_eq!(g.step(up, Some(&hit(20.0))).kind(), AudioKind::Blip);
        assert_eq!(g.step(up, Some(&hit(20.0))).kind(), AudioKind::Blip);
        assert_eq!(g.step(up, Some(&hit(5.0))), AudioEvent::continuous(ToneLevel(3)));
        assert_eq!(g.step(up, None), AudioEvent::SILENCE);
        assert_eq!(g.step(up, None), AudioEvent::SILENCE);
        // Still inside grace: relocks without confirmation.
        assert_eq!(g.step(up, Some(&hit(1.0))), AudioEvent::continuous(ToneLevel::NEAREST));
        g.step(up, None);
        g.step(up, None);
        g.step(up, None);
        assert_eq!(g.state(), GuidanceState::Scanning { run_length: 0 });
        assert_eq!(g.step(up, Some(&hit(1.0))).kind(), AudioKind::Blip);
    }

    #[test]
    fn smoothing_blends_distance() {
        let cfg = GuidanceConfig {
            k_confirm: 1,
            smoothing: Some(0.5),
            ..GuidanceConfig::default()
        };
        let mut g = GuidanceEngine::new(cfg).unwrap();
        g.step(DeviceAttitude::UPRIGHT, Some(&hit(10.0)));
        g.step(DeviceAttitude::UPRIGHT, Some(&hit(2.0)));
        match g.state() {
            GuidanceState::Locked { last_distance_m, level } => {
                assert_eq!(last_distance_m, 6.0);
                assert_eq!(level.get(), 3);
            }
            s => panic!("{s:?}"),
        }
        assert!(GuidanceEngine::new(GuidanceConfig {
            smoothing: Some(0.0),
            ..GuidanceConfig::default()
        })
        .is_err());
    }

    #[test]
    fn config_json_defaults() {
        let cfg: GuidanceConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, GuidanceConfig::default());
        assert!(serde_json::from_str::<GuidanceConfig>(r#"{"bogus": 1}"#).is_err());
    }
}
