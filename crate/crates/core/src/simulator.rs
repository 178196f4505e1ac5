//! Seeded field-trial simulation: vision-guided versus GPS-follow approaches
//! to a bus-stop sign.
//!
//! Each trial places an agent 30 to 50 m before the sign along the direction
//! of travel and draws one set of site errors (GPS bias, stop mapping offset,
//! reroute, sign slant, sign size). Both policies are then run against that
//! same draw, so every trial yields a paired outcome.
//!
//! Randomness is bound to the trial, never to the schedule. The trial seed is
//! [`trial_seed`]`(master_seed, trial_id)`; site errors come from ChaCha8
//! stream 0 of that seed, the vision policy from stream 1 and the GPS policy
//! from stream 2. Trials can therefore run in any order or in parallel and
//! still produce the same table.

use crate::geo::{signed_gap, LocalVec, Pose2D};
use crate::guidance::{
    AudioEvent, DeviceAttitude, GuidanceConfig, GuidanceEngine, GuidanceError, GuidanceState, ToneLevel,
};
use crate::perception::{
    estimate_distance, synth_project, CameraIntrinsics, PerceptionError, PerceptionNoise, SignSpec,
    DEFAULT_MAX_RANGE_M, DEFAULT_SLANT_CUTOFF_DEG,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;
use thiserror::Error;

/// 100 ft.
pub const MAP_FAILURE_M: f64 = 30.48;
pub const FRAME_RATE_HZ: f64 = 10.0;
pub const MAX_TRIAL_S: f64 = 600.0;
pub const START_DISTANCE_RANGE_M: (f64, f64) = (30.0, 50.0);

const STREAM_SITE: u64 = 0;
const STREAM_VISION: u64 = 1;
const STREAM_GPS: u64 = 2;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Guidance(#[from] GuidanceError),
    #[error(transparent)]
    Perception(#[from] PerceptionError),
    #[error("trial table line {line}: {message}")]
    Table { line: u64, message: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

fn config_err<T>(msg: impl Into<String>) -> Result<T, SimError> {
    Err(SimError::Config(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Site {
    City,
    Suburb,
}

impl Site {
    pub const ALL: [Site; 2] = [Site::City, Site::Suburb];

    pub fn as_str(self) -> &'static str {
        match self {
            Site::City => "City",
            Site::Suburb => "Suburb",
        }
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Site {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "City" => Ok(Site::City),
            "Suburb" => Ok(Site::Suburb),
            _ => Err(format!("unknown site `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum VisionClass {
    #[serde(rename = "residual_vision")]
    Residual,
    #[serde(rename = "no_residual_vision")]
    NoResidual,
}

impl VisionClass {
    pub const ALL: [VisionClass; 2] = [VisionClass::Residual, VisionClass::NoResidual];

    pub fn as_str(self) -> &'static str {
        match self {
            VisionClass::Residual => "residual_vision",
            VisionClass::NoResidual => "no_residual_vision",
        }
    }
}

impl fmt::Display for VisionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VisionClass {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "residual_vision" => Ok(VisionClass::Residual),
            "no_residual_vision" => Ok(VisionClass::NoResidual),
            _ => Err(format!("unknown vision class `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Policy {
    VisionGuided,
    GpsFollow,
}

impl Policy {
    pub const ALL: [Policy; 2] = [Policy::GpsFollow, Policy::VisionGuided];

    pub fn as_str(self) -> &'static str {
        match self {
            Policy::VisionGuided => "VisionGuided",
            Policy::GpsFollow => "GpsFollow",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Policy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "VisionGuided" => Ok(Policy::VisionGuided),
            "GpsFollow" => Ok(Policy::GpsFollow),
            _ => Err(format!("unknown policy `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FailureReason {
    #[serde(rename = "NONE")]
    None,
    #[serde(rename = "MAP_OVER_100FT")]
    MapOver100Ft,
    #[serde(rename = "REROUTE")]
    Reroute,
    #[serde(rename = "NEVER_CONFIRMED")]
    NeverConfirmed,
    #[serde(rename = "LOST_AFTER_RETRACE")]
    LostAfterRetrace,
    #[serde(rename = "TIMEOUT")]
    Timeout,
}

impl FailureReason {
    pub fn as_str(self) -> &'static str {
        match self {
            FailureReason::None => "NONE",
            FailureReason::MapOver100Ft => "MAP_OVER_100FT",
            FailureReason::Reroute => "REROUTE",
            FailureReason::NeverConfirmed => "NEVER_CONFIRMED",
            FailureReason::LostAfterRetrace => "LOST_AFTER_RETRACE",
            FailureReason::Timeout => "TIMEOUT",
        }
    }
}

impl fmt::Display for FailureReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FailureReason {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "NONE" => FailureReason::None,
            "MAP_OVER_100FT" => FailureReason::MapOver100Ft,
            "REROUTE" => FailureReason::Reroute,
            "NEVER_CONFIRMED" => FailureReason::NeverConfirmed,
            "LOST_AFTER_RETRACE" => FailureReason::LostAfterRetrace,
            "TIMEOUT" => FailureReason::Timeout,
            _ => return Err(format!("unknown failure reason `{s}`")),
        })
    }
}

/// Result of one policy on one trial. A gap is present exactly when the
/// trial succeeded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrialOutcome {
    policy: Policy,
    gap_m: Option<f64>,
    failure_reason: FailureReason,
}

impl TrialOutcome {
    pub fn success(policy: Policy, gap_m: f64) -> Self {
        TrialOutcome {
            policy,
            gap_m: Some(gap_m),
            failure_reason: FailureReason::None,
        }
    }

    /// # Panics
    /// If `reason` is [`FailureReason::None`].
    pub fn failure(policy: Policy, reason: FailureReason) -> Self {
        assert_ne!(reason, FailureReason::None, "a failure needs a reason");
        TrialOutcome {
            policy,
            gap_m: None,
            failure_reason: reason,
        }
    }

    pub fn policy(&self) -> Policy {
        self.policy
    }

    pub fn is_success(&self) -> bool {
        self.gap_m.is_some()
    }

    pub fn gap_m(&self) -> Option<f64> {
        self.gap_m
    }

    pub fn failure_reason(&self) -> FailureReason {
        self.failure_reason
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MappingErrorDist {
    /// Probability of a gross mapping error.
    pub p_tail: f64,
    /// Per-axis standard deviation of ordinary mapping error.
    pub body_sd_m: f64,
    pub tail_min_m: f64,
    pub tail_max_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteModel {
    pub label: Site,
    /// Per-axis sd of the GPS offset, redrawn each trial.
    pub gps_bias_sd_m: f64,
    /// Per-axis sd of fix-to-fix jitter.
    pub gps_noise_sd_m: f64,
    pub reroute_prob: f64,
    pub mapping_error_dist: MappingErrorDist,
    pub sign_slant_prob: f64,
    /// Per-frame detector miss probability from shadows and occlusion.
    pub occlusion_miss_prob: f64,
    /// Log-sd of the true sign width relative to the nominal sign spec
    /// (older sign variants, box fit).
    #[serde(default)]
    pub sign_size_log_sd: f64,
}

impl SiteModel {
    /// A site with no error of any kind.
    pub fn ideal(label: Site) -> Self {
        SiteModel {
            label,
            gps_bias_sd_m: 0.0,
            gps_noise_sd_m: 0.0,
            reroute_prob: 0.0,
            mapping_error_dist: MappingErrorDist {
                p_tail: 0.0,
                body_sd_m: 0.0,
                tail_min_m: 0.0,
                tail_max_m: 0.0,
            },
            sign_slant_prob: 0.0,
            occlusion_miss_prob: 0.0,
            sign_size_log_sd: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        let sd = |s: f64| s.is_finite() && s >= 0.0;
        let m = &self.mapping_error_dist;
        if !(prob(self.reroute_prob) && prob(m.p_tail) && prob(self.sign_slant_prob) && prob(self.occlusion_miss_prob))
        {
            return config_err(format!("{} site: probabilities must lie in [0, 1]", self.label));
        }
        if !(sd(self.gps_bias_sd_m) && sd(self.gps_noise_sd_m) && sd(m.body_sd_m) && sd(self.sign_size_log_sd)) {
            return config_err(format!("{} site: standard deviations must be non-negative", self.label));
        }
        if !(sd(m.tail_min_m) && m.tail_max_m.is_finite() && m.tail_min_m <= m.tail_max_m) {
            return config_err(format!("{} site: need 0 <= tail_min_m <= tail_max_m", self.label));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentProfile {
    pub walk_speed_mps: f64,
    pub scan_half_angle_deg: f64,
    pub scan_period_s: f64,
    pub residual_vision: bool,
    pub residual_vision_range_m: f64,
    pub retrace_allowed: bool,
    /// Pointing error (sd) when holding the camera on a locked sign.
    #[serde(default = "default_aim_sd")]
    pub aim_sd_deg: f64,
}

fn default_aim_sd() -> f64 {
    8.0
}

impl AgentProfile {
    /// Wide scanning and a 3 m close-range assist from residual vision.
    pub fn residual_vision() -> Self {
        AgentProfile {
            walk_speed_mps: 1.0,
            scan_half_angle_deg: 45.0,
            scan_period_s: 3.0,
            residual_vision: true,
            residual_vision_range_m: 3.0,
            retrace_allowed: true,
            aim_sd_deg: 6.0,
        }
    }

    /// Narrow scanning, no visual assist.
    pub fn no_residual_vision() -> Self {
        AgentProfile {
            walk_speed_mps: 1.0,
            scan_half_angle_deg: 15.0,
            scan_period_s: 3.0,
            residual_vision: false,
            residual_vision_range_m: 0.0,
            retrace_allowed: true,
            aim_sd_deg: 10.0,
        }
    }

    pub fn vision_class(&self) -> VisionClass {
        if self.residual_vision {
            VisionClass::Residual
        } else {
            VisionClass::NoResidual
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.walk_speed_mps.is_finite() && self.walk_speed_mps > 0.0) {
            return config_err("walk_speed_mps must be positive");
        }
        if !(0.0..=90.0).contains(&self.scan_half_angle_deg) {
            return config_err("scan_half_angle_deg must lie in [0, 90]");
        }
        if !(self.scan_period_s.is_finite() && self.scan_period_s > 0.0) {
            return config_err("scan_period_s must be positive");
        }
        if !(self.residual_vision_range_m.is_finite() && self.residual_vision_range_m >= 0.0) {
            return config_err("residual_vision_range_m must be non-negative");
        }
        if !(self.aim_sd_deg.is_finite() && self.aim_sd_deg >= 0.0) {
            return config_err("aim_sd_deg must be non-negative");
        }
        Ok(())
    }
}

/// Knobs shared by both navigation policies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyParams {
    /// GPS-follow announces arrival inside this perceived range.
    pub gps_arrival_threshold_m: f64,
    /// GPS fix rate.
    pub gps_fix_hz: f64,
    /// How far past the sign a vision-guided walker goes before giving up.
    pub overshoot_budget_m: f64,
    /// Length of the single backtrack after losing the sign.
    pub retrace_distance_m: f64,
    pub px_jitter_sd: f64,
    pub slant_cutoff_deg: f64,
    pub max_range_m: f64,
    /// Plate rotation, away from facing the approach, of a slanted sign.
    pub slant_angle_range_deg: (f64, f64),
}

impl Default for PolicyParams {
    fn default() -> Self {
        PolicyParams {
            gps_arrival_threshold_m: 5.0,
            gps_fix_hz: 1.0,
            overshoot_budget_m: 10.0,
            retrace_distance_m: 10.0,
            px_jitter_sd: 2.0,
            slant_cutoff_deg: DEFAULT_SLANT_CUTOFF_DEG,
            max_range_m: DEFAULT_MAX_RANGE_M,
            slant_angle_range_deg: (70.0, 90.0),
        }
    }
}

impl PolicyParams {
    pub fn validate(&self) -> Result<(), SimError> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !(pos(self.gps_arrival_threshold_m) && pos(self.gps_fix_hz) && pos(self.max_range_m)) {
            return config_err("policy: arrival threshold, fix rate and max range must be positive");
        }
        if !(self.overshoot_budget_m >= 0.0 && self.retrace_distance_m >= 0.0 && self.px_jitter_sd >= 0.0) {
            return config_err("policy: budgets and jitter must be non-negative");
        }
        let (lo, hi) = self.slant_angle_range_deg;
        if !(0.0..=90.0).contains(&lo) || !(lo..=90.0).contains(&hi) {
            return config_err("policy: slant_angle_range_deg must be an ordered pair in [0, 90]");
        }
        Ok(())
    }
}

/// Everything needed to run one stop approach.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub stop_id: String,
    pub sign_pos: LocalVec,
    /// Normal of the sign plate when not slanted.
    pub sign_facing_deg: f64,
    pub travel_heading_deg: f64,
    pub start_distance_m: f64,
    /// Distance from the sign to the walking line, positive to the right of travel.
    pub lateral_offset_m: f64,
    pub site: SiteModel,
    pub agent: AgentProfile,
    pub cam: CameraIntrinsics,
    pub sign: SignSpec,
    pub guidance: GuidanceConfig,
    pub params: PolicyParams,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), SimError> {
        let (lo, hi) = START_DISTANCE_RANGE_M;
        if !(lo..=hi).contains(&self.start_distance_m) {
            return config_err(format!(
                "stop {}: start distance {} outside [{lo}, {hi}] m",
                self.stop_id, self.start_distance_m
            ));
        }
        if !(self.sign_pos.is_finite()
            && self.lateral_offset_m.is_finite()
            && self.sign_facing_deg.is_finite()
            && self.travel_heading_deg.is_finite())
        {
            return config_err(format!("stop {}: non-finite geometry", self.stop_id));
        }
        self.site.validate()?;
        self.agent.validate()?;
        self.cam.validate()?;
        self.sign.validate()?;
        self.guidance.validate()?;
        self.params.validate()
    }

    fn travel_unit(&self) -> LocalVec {
        LocalVec::from_heading(self.travel_heading_deg)
    }

    /// Where the walk begins: `start_distance_m` back along the travel
    /// direction, on the walking line.
    pub fn start_position(&self) -> LocalVec {
        let right = LocalVec::from_heading(self.travel_heading_deg + 90.0);
        self.sign_pos - self.travel_unit() * self.start_distance_m - right * self.lateral_offset_m
    }
}

/// One trial's draw of site-level errors, shared by both policies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SiteErrors {
    pub gps_bias: LocalVec,
    pub mapping_offset: LocalVec,
    pub reroute: bool,
    /// Extra rotation of the sign plate, 0 when the sign is not slanted.
    pub slant_deg: f64,
    /// True sign width over nominal.
    pub width_scale: f64,
}

/// Draws a trial's site errors.
///
/// Draw order, all consumed on every call: bias east, bias north (normal);
/// tail selector (uniform); body east, body north (normal); tail magnitude,
/// tail direction (uniform); reroute (uniform); slant selector, slant angle,
/// slant side (uniform); sign size (normal).
pub fn sample_site_errors<R: Rng + ?Sized>(site: &SiteModel, params: &PolicyParams, rng: &mut R) -> SiteErrors {
    let n = |rng: &mut R| -> f64 { StandardNormal.sample(rng) };
    let bias_e = n(rng);
    let bias_n = n(rng);
    let tail_u: f64 = rng.random();
    let body_e = n(rng);
    let body_n = n(rng);
    let tail_mag_u: f64 = rng.random();
    let tail_dir_u: f64 = rng.random();
    let reroute_u: f64 = rng.random();
    let slant_u: f64 = rng.random();
    let slant_angle_u: f64 = rng.random();
    let slant_side_u: f64 = rng.random();
    let size_z = n(rng);

    let gps_bias = LocalVec::new(bias_e, bias_n) * site.gps_bias_sd_m;
    let m = &site.mapping_error_dist;
    let mapping_offset = if tail_u < m.p_tail {
        let mag = m.tail_min_m + tail_mag_u * (m.tail_max_m - m.tail_min_m);
        LocalVec::from_heading(360.0 * tail_dir_u) * mag
    } else {
        LocalVec::new(body_e, body_n) * m.body_sd_m
    };
    let slant_deg = if slant_u < site.sign_slant_prob {
        let (lo, hi) = params.slant_angle_range_deg;
        let a = lo + slant_angle_u * (hi - lo);
        if slant_side_u < 0.5 {
            -a
        } else {
            a
        }
    } else {
        0.0
    };
    SiteErrors {
        gps_bias,
        mapping_offset,
        reroute: reroute_u < site.reroute_prob,
        slant_deg,
        width_scale: (site.sign_size_log_sd * size_z).exp(),
    }
}

/// SplitMix64 finaliser.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-trial seed: `mix64(master_seed ^ mix64(trial_id))`.
pub fn trial_seed(master_seed: u64, trial_id: u64) -> u64 {
    mix64(master_seed ^ mix64(trial_id))
}

fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Runs one policy with errors drawn from `seed`.
pub fn run_trial(scn: &Scenario, policy: Policy, seed: u64) -> Result<TrialOutcome, SimError> {
    scn.validate()?;
    let errors = sample_site_errors(&scn.site, &scn.params, &mut stream(seed, STREAM_SITE));
    Ok(run_policy(scn, policy, &errors, seed))
}

/// Runs both policies against one shared error draw.
pub fn run_paired_trial(scn: &Scenario, seed: u64) -> Result<(SiteErrors, TrialOutcome, TrialOutcome), SimError> {
    scn.validate()?;
    let errors = sample_site_errors(&scn.site, &scn.params, &mut stream(seed, STREAM_SITE));
    let vision = run_policy(scn, Policy::VisionGuided, &errors, seed);
    let gps = run_policy(scn, Policy::GpsFollow, &errors, seed);
    Ok((errors, vision, gps))
}

/// Runs a policy against an explicit error draw. `scn` must be valid.
pub fn run_policy(scn: &Scenario, policy: Policy, errors: &SiteErrors, seed: u64) -> TrialOutcome {
    run_policy_traced(scn, policy, errors, seed, &mut |_| {})
}

/// What a policy saw on one simulated frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameTrace {
    pub frame: u64,
    pub position: LocalVec,
    /// Vision: the range estimate of this frame's detection. GPS: distance to
    /// the mapped stop as the receiver sees it.
    pub est_distance_m: Option<f64>,
    /// Vision only.
    pub guidance: Option<(GuidanceState, AudioEvent)>,
}

/// [`run_policy`] with a per-frame observer.
pub fn run_policy_traced(
    scn: &Scenario,
    policy: Policy,
    errors: &SiteErrors,
    seed: u64,
    trace: &mut dyn FnMut(&FrameTrace),
) -> TrialOutcome {
    match policy {
        Policy::GpsFollow => run_gps_follow(scn, errors, &mut stream(seed, STREAM_GPS), trace),
        Policy::VisionGuided => run_vision_guided(scn, errors, &mut stream(seed, STREAM_VISION), trace),
    }
}

fn max_frames() -> u64 {
    (MAX_TRIAL_S * FRAME_RATE_HZ).round() as u64
}

fn run_gps_follow(
    scn: &Scenario,
    errors: &SiteErrors,
    rng: &mut ChaCha8Rng,
    trace: &mut dyn FnMut(&FrameTrace),
) -> TrialOutcome {
    let policy = Policy::GpsFollow;
    if errors.mapping_offset.norm() > MAP_FAILURE_M {
        return TrialOutcome::failure(policy, FailureReason::MapOver100Ft);
    }
    if errors.reroute {
        return TrialOutcome::failure(policy, FailureReason::Reroute);
    }
    let dt = 1.0 / FRAME_RATE_HZ;
    let frames_per_fix = ((FRAME_RATE_HZ / scn.params.gps_fix_hz).round() as u64).max(1);
    let target = scn.sign_pos + errors.mapping_offset;
    let step_len = scn.agent.walk_speed_mps * dt;
    let mut pos = scn.start_position();
    let mut fix_error = LocalVec::ZERO;

    for frame in 0..max_frames() {
        if frame % frames_per_fix == 0 {
            let e: f64 = StandardNormal.sample(rng);
            let n: f64 = StandardNormal.sample(rng);
            fix_error = errors.gps_bias + LocalVec::new(e, n) * scn.site.gps_noise_sd_m;
        }
        let to_target = target - (pos + fix_error);
        let perceived = to_target.norm();
        trace(&FrameTrace {
            frame,
            position: pos,
            est_distance_m: Some(perceived),
            guidance: None,
        });
        if perceived < scn.params.gps_arrival_threshold_m {
            return TrialOutcome::success(policy, signed_gap(scn.sign_pos, pos, scn.travel_heading_deg));
        }
        pos = pos + to_target * (step_len.min(perceived) / perceived);
    }
    TrialOutcome::failure(policy, FailureReason::Timeout)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Leg {
    Forward,
    Retrace { remaining_m: f64 },
}

fn run_vision_guided(
    scn: &Scenario,
    errors: &SiteErrors,
    rng: &mut ChaCha8Rng,
    trace: &mut dyn FnMut(&FrameTrace),
) -> TrialOutcome {
    let policy = Policy::VisionGuided;
    let dt = 1.0 / FRAME_RATE_HZ;
    let agent = &scn.agent;
    let step_len = agent.walk_speed_mps * dt;
    let travel = scn.travel_heading_deg;
    let sign_facing = scn.sign_facing_deg + errors.slant_deg;
    let noise = PerceptionNoise {
        miss_prob: scn.site.occlusion_miss_prob,
        slant_cutoff_deg: scn.params.slant_cutoff_deg,
        px_jitter_sd: scn.params.px_jitter_sd,
        max_range_m: scn.params.max_range_m,
        width_scale: errors.width_scale,
        false_positive_rate: 0.0,
    };
    // Validated with the scenario.
    let mut engine = GuidanceEngine::new(scn.guidance).expect("validated guidance config");

    let mut pos = scn.start_position();
    let mut leg = Leg::Forward;
    let mut retrace_used = false;
    let mut ever_confirmed = false;
    // World heading toward the sign, from the last locked detection.
    let mut aim: Option<f64> = None;

    for frame in 0..max_frames() {
        let t = frame as f64 * dt;
        let aim_noise: f64 = StandardNormal.sample(rng);
        let holding_on_sign = matches!(
            engine.state(),
            GuidanceState::Locked { .. } | GuidanceState::Lost { .. }
        );
        let walk_heading = match leg {
            Leg::Forward => travel,
            Leg::Retrace { .. } => travel + 180.0,
        };
        let camera_heading = match (holding_on_sign, aim) {
            (true, Some(a)) => a + agent.aim_sd_deg * aim_noise,
            _ => {
                let phase = 2.0 * std::f64::consts::PI * t / agent.scan_period_s;
                walk_heading + agent.scan_half_angle_deg * phase.sin()
            }
        };
        let camera = Pose2D::new(pos, camera_heading);
        let det = synth_project(
            &camera,
            0.0,
            frame,
            scn.sign_pos,
            sign_facing,
            &scn.cam,
            &scn.sign,
            &noise,
            rng,
        );
        let ranged = det.and_then(|d| estimate_distance(&d, &scn.cam, &scn.sign).ok());

        let before = engine.state();
        let event = engine.step(DeviceAttitude::UPRIGHT, ranged.as_ref());
        let after = engine.state();
        trace(&FrameTrace {
            frame,
            position: pos,
            est_distance_m: ranged.as_ref().map(|r| r.est_distance_m),
            guidance: Some((after, event)),
        });

        if let (GuidanceState::Locked { .. }, Some(r)) = (after, ranged.as_ref()) {
            ever_confirmed = true;
            aim = Some(camera_heading + r.bearing_deg);
            if event.level() == Some(ToneLevel::NEAREST) {
                let true_distance = (scn.sign_pos - pos).norm();
                let gap = if agent.residual_vision && true_distance <= agent.residual_vision_range_m {
                    0.0
                } else {
                    signed_gap(scn.sign_pos, pos, travel)
                };
                return TrialOutcome::success(policy, gap);
            }
        }

        // Lost past the grace window.
        if matches!(before, GuidanceState::Lost { .. }) && matches!(after, GuidanceState::Scanning { .. }) {
            if agent.retrace_allowed && !retrace_used {
                retrace_used = true;
                leg = Leg::Retrace {
                    remaining_m: scn.params.retrace_distance_m,
                };
                aim = None;
            } else {
                return TrialOutcome::failure(policy, FailureReason::LostAfterRetrace);
            }
        }

        let heading = match (engine.state(), aim) {
            (GuidanceState::Locked { .. } | GuidanceState::Lost { .. }, Some(a)) => a,
            _ => match leg {
                Leg::Forward => travel,
                Leg::Retrace { .. } => travel + 180.0,
            },
        };
        pos = pos + LocalVec::from_heading(heading) * step_len;
        if let Leg::Retrace { remaining_m } = leg {
            let left = remaining_m - step_len;
            leg = if left <= 0.0 {
                Leg::Forward
            } else {
                Leg::Retrace { remaining_m: left }
            };
        }

        if matches!(leg, Leg::Forward)
            && !engine.state().is_locked()
            && signed_gap(scn.sign_pos, pos, travel) < -scn.params.overshoot_budget_m
        {
            let reason = if ever_confirmed {
                FailureReason::LostAfterRetrace
            } else {
                FailureReason::NeverConfirmed
            };
            return TrialOutcome::failure(policy, reason);
        }
    }
    TrialOutcome::failure(policy, FailureReason::Timeout)
}

// ---------------------------------------------------------------------------
// Experiment configuration and runner.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub stop_id: String,
    /// Key into `site_models`.
    pub site: String,
    pub start_distance_m: f64,
    #[serde(default)]
    pub lateral_offset_m: f64,
    #[serde(default)]
    pub travel_heading_deg: f64,
    /// Defaults to facing the approaching traveler.
    #[serde(default)]
    pub sign_facing_deg: Option<f64>,
    #[serde(default)]
    pub sign_pos: LocalVec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub agent_id: String,
    pub profile: AgentProfile,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkipSpec {
    pub agent_id: String,
    pub stop_id: String,
}

/// JSON experiment description. See the README for the key reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    #[serde(default = "one_rep")]
    pub repetitions: u32,
    pub site_models: BTreeMap<String, SiteModel>,
    pub scenarios: Vec<ScenarioSpec>,
    pub agents: Vec<AgentSpec>,
    /// (agent, stop) pairs without data, as when a sign was missing on the day.
    #[serde(default)]
    pub skip: Vec<SkipSpec>,
    #[serde(default)]
    pub camera: CameraIntrinsics,
    #[serde(default)]
    pub sign: SignSpec,
    #[serde(default)]
    pub guidance: GuidanceConfig,
    #[serde(default)]
    pub policy: PolicyParams,
}

fn one_rep() -> u32 {
    1
}

/// A scheduled trial: which stop, which agent, which seed.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialPlan {
    pub trial_id: u64,
    pub seed: u64,
    pub scenario: Scenario,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json_pretty(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    /// Trials in execution order: repetition, then scenario, then agent.
    pub fn plan(&self) -> Result<Vec<TrialPlan>, SimError> {
        if self.scenarios.is_empty() {
            return config_err("no scenarios");
        }
        if self.agents.is_empty() {
            return config_err("no agents");
        }
        let mut ids = BTreeSet::new();
        for s in &self.scenarios {
            if !ids.insert(&s.stop_id) {
                return config_err(format!("duplicate scenario stop_id `{}`", s.stop_id));
            }
        }
        let mut agent_ids = BTreeSet::new();
        for a in &self.agents {
            if !agent_ids.insert(&a.agent_id) {
                return config_err(format!("duplicate agent_id `{}`", a.agent_id));
            }
        }
        for (key, site) in &self.site_models {
            site.validate()?;
            if site.label.as_str() != key {
                return config_err(format!("site model `{key}` carries label {}", site.label));
            }
        }
        let skip: BTreeSet<_> = self.skip.iter().map(|s| (&s.agent_id, &s.stop_id)).collect();

        let mut plans = Vec::new();
        let mut trial_id = 0u64;
        for _rep in 0..self.repetitions {
            for spec in &self.scenarios {
                let site = *self
                    .site_models
                    .get(&spec.site)
                    .ok_or_else(|| SimError::Config(format!("stop {}: unknown site `{}`", spec.stop_id, spec.site)))?;
                for agent in &self.agents {
                    if skip.contains(&(&agent.agent_id, &spec.stop_id)) {
                        continue;
                    }
                    let scenario = Scenario {
                        stop_id: spec.stop_id.clone(),
                        sign_pos: spec.sign_pos,
                        sign_facing_deg: spec.sign_facing_deg.unwrap_or(spec.travel_heading_deg + 180.0),
                        travel_heading_deg: spec.travel_heading_deg,
                        start_distance_m: spec.start_distance_m,
                        lateral_offset_m: spec.lateral_offset_m,
                        site,
                        agent: agent.profile,
                        cam: self.camera,
                        sign: self.sign,
                        guidance: self.guidance,
                        params: self.policy,
                    };
                    scenario.validate()?;
                    plans.push(TrialPlan {
                        trial_id,
                        seed: trial_seed(self.master_seed, trial_id),
                        scenario,
                    });
                    trial_id += 1;
                }
            }
        }
        Ok(plans)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRow {
    pub trial_id: u64,
    pub stop_id: String,
    pub site: Site,
    pub vision_class: VisionClass,
    pub seed: u64,
    pub vision: TrialOutcome,
    pub gps: TrialOutcome,
}

impl TrialRow {
    pub fn outcome(&self, policy: Policy) -> &TrialOutcome {
        match policy {
            Policy::VisionGuided => &self.vision,
            Policy::GpsFollow => &self.gps,
        }
    }
}

/// Paired outcomes, ordered by `trial_id`.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct TrialTable {
    pub rows: Vec<TrialRow>,
}

pub const TRIAL_CSV_HEADER: [&str; 9] = [
    "trial_id",
    "stop_id",
    "site",
    "vision_class",
    "seed",
    "policy",
    "success",
    "gap_m",
    "failure_reason",
];

impl TrialTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Two lines per trial, GPS-follow first. Gaps use the shortest
    /// representation that parses back to the same `f64`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), SimError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(TRIAL_CSV_HEADER)?;
        for row in &self.rows {
            for outcome in [&row.gps, &row.vision] {
                let gap = outcome.gap_m.map(|g| g.to_string()).unwrap_or_default();
                w.write_record([
                    row.trial_id.to_string().as_str(),
                    &row.stop_id,
                    row.site.as_str(),
                    row.vision_class.as_str(),
                    &row.seed.to_string(),
                    outcome.policy.as_str(),
                    if outcome.is_success() { "true" } else { "false" },
                    &gap,
                    outcome.failure_reason.as_str(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a table written by [`TrialTable::write_csv`]. Each trial must
    /// carry exactly one line per policy.
    pub fn read_csv<R: Read>(input: R) -> Result<Self, SimError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
        let headers = rdr.headers()?.clone();
        if headers.iter().ne(TRIAL_CSV_HEADER.iter().copied()) {
            return Err(SimError::Table {
                line: 1,
                message: format!("expected header `{}`", TRIAL_CSV_HEADER.join(",")),
            });
        }
        struct Partial {
            stop_id: String,
            site: Site,
            vision_class: VisionClass,
            seed: u64,
            vision: Option<TrialOutcome>,
            gps: Option<TrialOutcome>,
            line: u64,
        }
        let mut partial: BTreeMap<u64, Partial> = BTreeMap::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let err = |message: String| SimError::Table { line, message };
            let field = |i: usize| rec.get(i).unwrap_or("");
            let trial_id: u64 = field(0)
                .parse()
                .map_err(|_| err(format!("bad trial_id `{}`", field(0))))?;
            let site: Site = field(2).parse().map_err(err)?;
            let vision_class: VisionClass = field(3).parse().map_err(err)?;
            let seed: u64 = field(4).parse().map_err(|_| err(format!("bad seed `{}`", field(4))))?;
            let policy: Policy = field(5).parse().map_err(err)?;
            let success = match field(6) {
                "true" => true,
                "false" => false,
                other => return Err(err(format!("bad success flag `{other}`"))),
            };
            let reason: FailureReason = field(8).parse().map_err(err)?;
            let outcome = if success {
                let gap: f64 = field(7).parse().map_err(|_| err(format!("bad gap_m `{}`", field(7))))?;
                if reason != FailureReason::None || !gap.is_finite() {
                    return Err(err("successful row needs a finite gap and reason NONE".into()));
                }
                TrialOutcome::success(policy, gap)
            } else {
                if reason == FailureReason::None || !field(7).is_empty() {
                    return Err(err("failed row needs an empty gap and a failure reason".into()));
                }
                TrialOutcome::failure(policy, reason)
            };
            let entry = partial.entry(trial_id).or_insert_with(|| Partial {
                stop_id: field(1).to_string(),
                site,
                vision_class,
                seed,
                vision: None,
                gps: None,
                line,
            });
            if entry.stop_id != field(1)
                || entry.site != site
                || entry.vision_class != vision_class
                || entry.seed != seed
            {
                return Err(err(format!("trial {trial_id} lines disagree on stop/site/class/seed")));
            }
            let slot = match policy {
                Policy::VisionGuided => &mut entry.vision,
                Policy::GpsFollow => &mut entry.gps,
            };
            if slot.replace(outcome).is_some() {
                return Err(err(format!("trial {trial_id} has two {policy} lines")));
            }
        }
        let mut rows = Vec::with_capacity(partial.len());
        for (trial_id, p) in partial {
            let (Some(vision), Some(gps)) = (p.vision, p.gps) else {
                return Err(SimError::Table {
                    line: p.line,
                    message: format!("trial {trial_id} is not paired: both policies are required"),
                });
            };
            rows.push(TrialRow {
                trial_id,
                stop_id: p.stop_id,
                site: p.site,
                vision_class: p.vision_class,
                seed: p.seed,
                vision,
                gps,
            });
        }
        Ok(TrialTable { rows })
    }
}

fn run_plan(plan: &TrialPlan) -> Result<TrialRow, SimError> {
    let (_, vision, gps) = run_paired_trial(&plan.scenario, plan.seed)?;
    Ok(TrialRow {
        trial_id: plan.trial_id,
        stop_id: plan.scenario.stop_id.clone(),
        site: plan.scenario.site.label,
        vision_class: plan.scenario.agent.vision_class(),
        seed: plan.seed,
        vision,
        gps,
    })
}

/// Runs every planned trial, in parallel, and returns rows in trial order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<TrialTable, SimError> {
    let plans = cfg.plan()?;
    let rows = plans.par_iter().map(run_plan).collect::<Result<Vec<_>, _>>()?;
    Ok(TrialTable { rows })
}

/// Single-threaded equivalent of [`run_experiment`].
pub fn run_experiment_serial(cfg: &ExperimentConfig) -> Result<TrialTable, SimError> {
    let plans = cfg.plan()?;
    let rows = plans.iter().map(run_plan).collect::<Result<Vec<_>, _>>()?;
    Ok(TrialTable { rows })
}
