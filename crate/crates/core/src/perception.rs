//! Known-size ranging of sign detections, a synthetic detector for simulation,
//! and the consecutive-hit confirmation filter.
//!
//! A sign of physical width `W` seen at range `d` by a camera with focal
//! length `f` (pixels) spans `w = f * W / d` pixels, so `d = f * W / w`. Only
//! the box width is used for ranging; the height is reported but never used.
//!
//! The detector itself is a port: anything that yields a [`Detection`] per
//! frame (the synthetic projector below, a replay log, a model binding) can
//! feed [`estimate_distance`] and the guidance engine.

use crate::geo::{wrap_signed_deg, LocalVec, Pose2D};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// 12 in placard width.
pub const DEFAULT_SIGN_WIDTH_M: f64 = 0.3048;
pub const DEFAULT_SIGN_HEIGHT_M: f64 = 0.4572;
pub const DEFAULT_SIGN_MOUNT_HEIGHT_M: f64 = 2.1;
pub const DEFAULT_SLANT_CUTOFF_DEG: f64 = 60.0;
pub const DEFAULT_MAX_RANGE_M: f64 = 60.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PerceptionError {
    #[error("invalid detection: {0}")]
    InvalidDetection(String),
    #[error("invalid camera intrinsics: {0}")]
    InvalidCamera(String),
    #[error("invalid sign spec: {0}")]
    InvalidSign(String),
    #[error("frame index {got} does not follow {prev}")]
    NonMonotonicFrame { prev: u64, got: u64 },
    #[error("k_confirm must be at least 1")]
    ZeroConfirm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub focal_px: f64,
    pub image_width_px: f64,
    pub image_height_px: f64,
    /// Height of the lens above the ground; only the synthetic projector uses it.
    #[serde(default = "default_camera_height")]
    pub camera_height_m: f64,
}

fn default_camera_height() -> f64 {
    1.4
}

impl Default for CameraIntrinsics {
    /// A 1080x1920 portrait phone frame with roughly a 57 degree horizontal FOV.
    fn default() -> Self {
        CameraIntrinsics {
            focal_px: 1000.0,
            image_width_px: 1080.0,
            image_height_px: 1920.0,
            camera_height_m: default_camera_height(),
        }
    }
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<(), PerceptionError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !(ok(self.focal_px) && ok(self.image_width_px) && ok(self.image_height_px)) {
            return Err(PerceptionError::InvalidCamera(format!("{self:?}")));
        }
        if !self.camera_height_m.is_finite() {
            return Err(PerceptionError::InvalidCamera("non-finite camera height".into()));
        }
        Ok(())
    }

    pub fn horizontal_fov_deg(&self) -> f64 {
        2.0 * (self.image_width_px / (2.0 * self.focal_px)).atan().to_degrees()
    }

    pub fn half_hfov_deg(&self) -> f64 {
        self.horizontal_fov_deg() / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignSpec {
    pub physical_width_m: f64,
    #[serde(default = "default_sign_height")]
    pub physical_height_m: f64,
    pub mount_center_height_m: f64,
}

fn default_sign_height() -> f64 {
    DEFAULT_SIGN_HEIGHT_M
}

impl Default for SignSpec {
    fn default() -> Self {
        SignSpec {
            physical_width_m: DEFAULT_SIGN_WIDTH_M,
            physical_height_m: DEFAULT_SIGN_HEIGHT_M,
            mount_center_height_m: DEFAULT_SIGN_MOUNT_HEIGHT_M,
        }
    }
}

impl SignSpec {
    pub fn validate(&self) -> Result<(), PerceptionError> {
        if !(self.physical_width_m.is_finite() && self.physical_width_m > 0.0) {
            return Err(PerceptionError::InvalidSign(format!(
                "physical width {} must be positive",
                self.physical_width_m
            )));
        }
        if !(self.physical_height_m.is_finite() && self.physical_height_m > 0.0) {
            return Err(PerceptionError::InvalidSign(format!(
                "physical height {} must be positive",
                self.physical_height_m
            )));
        }
        Ok(())
    }
}

/// One bounding box from the detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub frame_index: u64,
    pub bbox_center_x_px: f64,
    pub bbox_center_y_px: f64,
    pub bbox_width_px: f64,
    pub bbox_height_px: f64,
    pub confidence: f64,
}

impl Detection {
    pub fn validate(&self, cam: &CameraIntrinsics) -> Result<(), PerceptionError> {
        let bad = |m: String| Err(PerceptionError::InvalidDetection(m));
        if !(self.bbox_width_px.is_finite() && self.bbox_width_px > 0.0) {
            return bad(format!("bbox width {} must be positive", self.bbox_width_px));
        }
        if !(self.bbox_height_px.is_finite() && self.bbox_height_px >= 0.0) {
            return bad(format!("bbox height {} must be non-negative", self.bbox_height_px));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return bad(format!("confidence {} outside [0, 1]", self.confidence));
        }
        let (hw, hh) = (self.bbox_width_px / 2.0, self.bbox_height_px / 2.0);
        let fits_x = self.bbox_center_x_px - hw >= 0.0 && self.bbox_center_x_px + hw <= cam.image_width_px;
        let fits_y = self.bbox_center_y_px - hh >= 0.0 && self.bbox_center_y_px + hh <= cam.image_height_px;
        if !(fits_x && fits_y) {
            return bad(format!(
                "bbox centred at ({}, {}) size {}x{} leaves the {}x{} image",
                self.bbox_center_x_px,
                self.bbox_center_y_px,
                self.bbox_width_px,
                self.bbox_height_px,
                cam.image_width_px,
                cam.image_height_px
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RangedDetection {
    pub detection: Detection,
    pub est_distance_m: f64,
    /// Angle off the optical axis, positive to the right.
    pub bearing_deg: f64,
}

/// Pinhole range and bearing for one detection.
pub fn estimate_distance(
    d: &Detection,
    cam: &CameraIntrinsics,
    sign: &SignSpec,
) -> Result<RangedDetection, PerceptionError> {
    cam.validate()?;
    sign.validate()?;
    d.validate(cam)?;
    let est_distance_m = cam.focal_px * sign.physical_width_m / d.bbox_width_px;
    let bearing_deg = ((d.bbox_center_x_px - cam.image_width_px / 2.0) / cam.focal_px)
        .atan()
        .to_degrees();
    Ok(RangedDetection {
        detection: *d,
        est_distance_m,
        bearing_deg,
    })
}

/// Error and failure parameters of the synthetic detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerceptionNoise {
    /// Per-frame probability that a visible sign is not reported.
    pub miss_prob: f64,
    /// Signs viewed more obliquely than this (degrees off the face normal) are
    /// never detected.
    pub slant_cutoff_deg: f64,
    /// Standard deviation of additive width/height jitter, pixels.
    pub px_jitter_sd: f64,
    pub max_range_m: f64,
    /// Ratio of the true sign width to the nominal [`SignSpec`] width. Values
    /// other than 1 bias every range estimate by the inverse ratio.
    #[serde(default = "one")]
    pub width_scale: f64,
    /// Per-frame probability of a spurious box when no sign is reported.
    #[serde(default)]
    pub false_positive_rate: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for PerceptionNoise {
    fn default() -> Self {
        PerceptionNoise {
            miss_prob: 0.0,
            slant_cutoff_deg: DEFAULT_SLANT_CUTOFF_DEG,
            px_jitter_sd: 0.0,
            max_range_m: DEFAULT_MAX_RANGE_M,
            width_scale: 1.0,
            false_positive_rate: 0.0,
        }
    }
}

/// Incidence of the line of sight on a two-sided sign plate, in `[0, 90]`
/// degrees (0 = face-on).
pub fn incidence_deg(sign_pos: LocalVec, sign_facing_deg: f64, viewer: LocalVec) -> f64 {
    let to_viewer = viewer - sign_pos;
    let n = to_viewer.norm();
    if n == 0.0 {
        return 0.0;
    }
    let cos = (to_viewer * (1.0 / n)).dot(LocalVec::from_heading(sign_facing_deg));
    cos.abs().min(1.0).acos().to_degrees()
}

/// Renders the sign as the detector would see it from `agent`, or `None` when
/// the sign is not detected this frame.
///
/// Random draws, in order and always consumed: one uniform for the miss test,
/// two standard normals for width/height jitter, one uniform for the
/// false-positive test, three uniforms for a false-positive box.
#[allow(clippy::too_many_arguments)]
pub fn synth_project<R: Rng + ?Sized>(
    agent: &Pose2D,
    camera_yaw_deg: f64,
    frame_index: u64,
    sign_pos: LocalVec,
    sign_facing_deg: f64,
    cam: &CameraIntrinsics,
    sign: &SignSpec,
    noise: &PerceptionNoise,
    rng: &mut R,
) -> Option<Detection> {
    let miss_u: f64 = rng.random();
    let jitter_w: f64 = StandardNormal.sample(rng);
    let jitter_h: f64 = StandardNormal.sample(rng);
    let fp_u: f64 = rng.random();
    let fp_box: [f64; 3] = [rng.random(), rng.random(), rng.random()];

    let spurious = || {
        (fp_u < noise.false_positive_rate).then(|| {
            let w = 20.0 + fp_box[2] * 180.0;
            Detection {
                frame_index,
                bbox_center_x_px: w / 2.0 + fp_box[0] * (cam.image_width_px - w).max(0.0),
                bbox_center_y_px: w / 2.0 + fp_box[1] * (cam.image_height_px - w).max(0.0),
                bbox_width_px: w,
                bbox_height_px: w,
                confidence: 0.5,
            }
        })
    };

    let rel = sign_pos - agent.position;
    let distance = rel.norm();
    if distance <= 0.0 || distance > noise.max_range_m {
        return spurious();
    }
    let optical_axis = agent.heading_deg() + camera_yaw_deg;
    let bearing = wrap_signed_deg(rel.heading_deg() - optical_axis);
    if bearing.abs() >= cam.half_hfov_deg() {
        return spurious();
    }
    let incidence = incidence_deg(sign_pos, sign_facing_deg, agent.position);
    if incidence > noise.slant_cutoff_deg {
        return spurious();
    }
    if miss_u < noise.miss_prob {
        return spurious();
    }

    let width = cam.focal_px * sign.physical_width_m * noise.width_scale * incidence.to_radians().cos() / distance
        + noise.px_jitter_sd * jitter_w;
    let height = cam.focal_px * sign.physical_height_m * noise.width_scale / distance + noise.px_jitter_sd * jitter_h;
    if width <= 0.0 || height <= 0.0 {
        return spurious();
    }
    let cx = cam.image_width_px / 2.0 + cam.focal_px * bearing.to_radians().tan();
    let rise = sign.mount_center_height_m - cam.camera_height_m;
    let cy = cam.image_height_px / 2.0 - cam.focal_px * rise / distance;
    let det = Detection {
        frame_index,
        bbox_center_x_px: cx,
        bbox_center_y_px: cy,
        bbox_width_px: width,
        bbox_height_px: height,
        confidence: (0.6 + 0.4 * incidence.to_radians().cos()).min(1.0),
    };
    // A box clipped by the frame edge is not reported.
    if det.validate(cam).is_err() {
        return spurious();
    }
    Some(det)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfirmEvent {
    Confirmed { frame_index: u64 },
    Lost { frame_index: u64 },
}

/// Run-length confirmation: a detection counts as a true sign once it has
/// been seen in `k_confirm` consecutive frames.
#[derive(Debug, Clone)]
pub struct Confirmer {
    k_confirm: u32,
    run: u32,
    confirmed: bool,
    last_frame: Option<u64>,
}

impl Confirmer {
    pub fn new(k_confirm: u32) -> Result<Self, PerceptionError> {
        if k_confirm == 0 {
            return Err(PerceptionError::ZeroConfirm);
        }
        Ok(Confirmer {
            k_confirm,
            run: 0,
            confirmed: false,
            last_frame: None,
        })
    }

    pub fn push(&mut self, frame_index: u64, hit: bool) -> Result<Option<ConfirmEvent>, PerceptionError> {
        if let Some(prev) = self.last_frame {
            if frame_index <= prev {
                return Err(PerceptionError::NonMonotonicFrame { prev, got: frame_index });
            }
        }
        self.last_frame = Some(frame_index);
        if !hit {
            self.run = 0;
            if std::mem::take(&mut self.confirmed) {
                return Ok(Some(ConfirmEvent::Lost { frame_index }));
            }
            return Ok(None);
        }
        self.run = self.run.saturating_add(1);
        if !self.confirmed && self.run >= self.k_confirm {
            self.confirmed = true;
            return Ok(Some(ConfirmEvent::Confirmed { frame_index }));
        }
        Ok(None)
    }
}

/// Confirmation events for a whole frame stream.
pub fn confirm_stream<I>(frames: I, k_confirm: u32) -> Result<Vec<ConfirmEvent>, PerceptionError>
where
    I: IntoIterator<Item = (u64, Option<Detection>)>,
{
    let mut c = Confirmer::new(k_confirm)?;
    let mut events = Vec::new();
    for (idx, det) in frames {
        if let Some(ev) = c.push(idx, det.is_some())? {
            events.push(ev);
        }
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn det(w: f64, cx: f64) -> Detection {
        Detection {
            frame_index: 0,
            bbox_center_x_px: cx,
            bbox_center_y_px: 960.0,
            bbox_width_px: w,
            bbox_height_px: w,
            confidence: 0.9,
        }
    }

    fn sign30() -> SignSpec {
        SignSpec {
            physical_width_m: 0.30,
            ..SignSpec::default()
        }
    }

    #[test]
    fn pinhole_identity() {
        let cam = CameraIntrinsics::default();
        let r = estimate_distance(&det(100.0, 540.0), &cam, &sign30()).unwrap();
        assert!((r.est_distance_m - 3.0).abs() < 1e-12);
        assert_eq!(r.bearing_deg, 0.0);
        let r2 = estimate_distance(&det(200.0, 540.0), &cam, &sign30()).unwrap();
        assert!((r2.est_distance_m - 1.5).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_boxes() {
        let cam = CameraIntrinsics::default();
        for w in [0.0, -5.0, f64::NAN] {
            assert!(matches!(
                estimate_distance(&det(w, 540.0), &cam, &sign30()),
                Err(PerceptionError::InvalidDetection(_))
            ));
        }
        // Runs off the right edge.
        assert!(estimate_distance(&det(100.0, 1070.0), &cam, &sign30()).is_err());
    }

    #[test]
    fn fov_of_default_camera() {
        let cam = CameraIntrinsics::default();
        let expected = 2.0 * (0.54f64).atan().to_degrees();
        assert!((cam.horizontal_fov_deg() - expected).abs() < 1e-12);
    }

    fn zero_noise() -> PerceptionNoise {
        PerceptionNoise::default()
    }

    #[test]
    fn synth_dead_ahead() {
        let cam = CameraIntrinsics::default();
        let agent = Pose2D::new(LocalVec::ZERO, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = synth_project(
            &agent,
            0.0,
            0,
            LocalVec::new(0.0, 3.0),
            180.0,
            &cam,
            &sign30(),
            &zero_noise(),
            &mut rng,
        )
        .unwrap();
        assert!((d.bbox_width_px - 100.0).abs() < 1e-9);
        assert!((d.bbox_center_x_px - 540.0).abs() < 1e-9);
    }

    #[test]
    fn synth_misses() {
        let cam = CameraIntrinsics::default();
        let agent = Pose2D::new(LocalVec::ZERO, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = sign30();
        // Behind.
        assert!(synth_project(
            &agent,
            0.0,
            0,
            LocalVec::new(0.0, -5.0),
            0.0,
            &cam,
            &s,
            &zero_noise(),
            &mut rng
        )
        .is_none());
        // Sign plate rotated 80 degrees away from the line of sight.
        assert!(synth_project(
            &agent,
            0.0,
            0,
            LocalVec::new(0.0, 5.0),
            100.0,
            &cam,
            &s,
            &zero_noise(),
            &mut rng
        )
        .is_none());
        // Out of range.
        assert!(synth_project(
            &agent,
            0.0,
            0,
            LocalVec::new(0.0, 61.0),
            180.0,
            &cam,
            &s,
            &zero_noise(),
            &mut rng
        )
        .is_none());
        // Certain miss.
        let always = PerceptionNoise {
            miss_prob: 1.0,
            ..zero_noise()
        };
        assert!(synth_project(
            &agent,
            0.0,
            0,
            LocalVec::new(0.0, 5.0),
            180.0,
            &cam,
            &s,
            &always,
            &mut rng
        )
        .is_none());
        // Camera turned away.
        assert!(synth_project(
            &agent,
            90.0,
            0,
            LocalVec::new(0.0, 5.0),
            180.0,
            &cam,
            &s,
            &zero_noise(),
            &mut rng
        )
        .is_none());
    }

    #[test]
    fn incidence_is_two_sided() {
        let s = LocalVec::ZERO;
        assert!(incidence_deg(s, 0.0, LocalVec::new(0.0, 5.0)).abs() < 1e-9);
        assert!(incidence_deg(s, 0.0, LocalVec::new(0.0, -5.0)).abs() < 1e-9);
        assert!((incidence_deg(s, 0.0, LocalVec::new(5.0, 0.0)) - 90.0).abs() < 1e-9);
    }

    #[test]
    fn confirmation_examples() {
        let hit = |i| (i, Some(det(50.0, 540.0)));
        let miss = |i| (i, None);
        assert_eq!(
            confirm_stream([hit(1), hit(2), hit(3)], 3).unwrap(),
            vec![ConfirmEvent::Confirmed { frame_index: 3 }]
        );
        assert_eq!(
            confirm_stream([hit(1), miss(2), hit(3), hit(4), hit(5)], 3).unwrap(),
            vec![ConfirmEvent::Confirmed { frame_index: 5 }]
        );
        assert!(confirm_stream(Vec::new(), 3).unwrap().is_empty());
        assert_eq!(
            confirm_stream([hit(1), hit(2), miss(3), miss(4)], 2).unwrap(),
            vec![
                ConfirmEvent::Confirmed { frame_index: 2 },
                ConfirmEvent::Lost { frame_index: 3 }
            ]
        );
        assert!(matches!(
            confirm_stream([hit(2), hit(2)], 1),
            Err(PerceptionError::NonMonotonicFrame { prev: 2, got: 2 })
        ));
        assert!(matches!(confirm_stream([hit(1)], 0), Err(PerceptionError::ZeroConfirm)));
    }

    /// Brute force: is there a run of >= k trues ending at or before `end`?
    fn has_run(hits: &[bool], end: usize, k: usize) -> bool {
        (0..=end).any(|j| j + 1 >= k && hits[j + 1 - k..=j].iter().all(|&h| h))
    }

    proptest! {
        #[test]
        fn estimate_strictly_decreasing(w1 in 1.0f64..500.0, dw in 0.001f64..500.0) {
            let cam = CameraIntrinsics::default();
            let a = estimate_distance(&det(w1, 540.0), &cam, &sign30()).unwrap();
            let b = estimate_distance(&det(w1 + dw, 540.0), &cam, &sign30()).unwrap();
            prop_assert!(b.est_distance_m < a.est_distance_m);
        }

        #[test]
        fn confirmed_only_after_k_consecutive(hits in proptest::collection::vec(any::<bool>(), 0..40), k in 1u32..6) {
            let frames: Vec<_> = hits.iter().enumerate()
                .map(|(i, &h)| (i as u64, h.then(|| det(50.0, 540.0))))
                .collect();
            let events = confirm_stream(frames, k).unwrap();
            let mut first_possible = None;
            for i in 0..hits.len() {
                if has_run(&hits, i, k as usize) { first_possible = Some(i); break; }
            }
            let first_confirm = events.iter().find_map(|e| match e {
                ConfirmEvent::Confirmed { frame_index } => Some(*frame_index as usize),
                _ => None,
            });
            prop_assert_eq!(first_confirm, first_possible);
            for e in &events {
                if let ConfirmEvent::Confirmed { frame_index } = e {
                    let i = *frame_index as usize;
                    prop_assert!(hits[i + 1 - k as usize..=i].iter().all(|&h| h));
                }
            }
        }
    }
}
