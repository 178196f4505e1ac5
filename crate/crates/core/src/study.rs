//! The shipped default experiment: 20 stops (10 City, 10 Suburb), a roster
//! of 24 travelers of whom 11 have residual vision, and 48 skipped
//! traveler/stop pairs, leaving 229 City and 203 Suburb paired trials.
//!
//! Site error parameters are fitted, not measured. `examples/calibrate.rs`
//! searches them against target per-site outcome aggregates; the
//! values below are its frozen output. `configs/default.json` is this
//! config serialized and is checked against it in tests.

use crate::geo::LocalVec;
use crate::guidance::GuidanceConfig;
use crate::perception::{CameraIntrinsics, SignSpec};
use crate::simulator::{
    AgentProfile, AgentSpec, ExperimentConfig, MappingErrorDist, PolicyParams, ScenarioSpec, Site, SiteModel, SkipSpec,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

pub const DEFAULT_MASTER_SEED: u64 = 20_240_501;
pub const STOPS_PER_SITE: usize = 10;
pub const ROSTER_SIZE: usize = 24;
pub const RESIDUAL_VISION_COUNT: usize = 11;
pub const SKIPPED_CITY: usize = 11;
pub const SKIPPED_SUBURB: usize = 37;

/// Layout seed for stop geometry and the skip list; independent of the
/// master seed so that reseeding trials keeps the same stops.
const LAYOUT_SEED: u64 = 0xB05_5709;

pub fn city_site() -> SiteModel {
    SiteModel {
        label: Site::City,
        gps_bias_sd_m: 6.0,
        gps_noise_sd_m: 0.5,
        reroute_prob: 0.45,
        mapping_error_dist: MappingErrorDist {
            p_tail: 0.12,
            body_sd_m: 1.0,
            tail_min_m: 31.0,
            tail_max_m: 60.0,
        },
        sign_slant_prob: 0.04,
        occlusion_miss_prob: 0.0,
        sign_size_log_sd: 0.4,
    }
}

pub fn suburb_site() -> SiteModel {
    SiteModel {
        label: Site::Suburb,
        gps_bias_sd_m: 6.0,
        gps_noise_sd_m: 0.5,
        reroute_prob: 0.12,
        mapping_error_dist: MappingErrorDist {
            p_tail: 0.35,
            body_sd_m: 5.0,
            tail_min_m: 31.0,
            tail_max_m: 60.0,
        },
        sign_slant_prob: 0.06,
        occlusion_miss_prob: 0.0,
        sign_size_log_sd: 0.45,
    }
}

fn scenarios(rng: &mut ChaCha8Rng) -> Vec<ScenarioSpec> {
    let mut out = Vec::new();
    for (site, prefix) in [(Site::City, "C"), (Site::Suburb, "S")] {
        for i in 1..=STOPS_PER_SITE {
            let start: f64 = rng.random_range(30.0..=50.0);
            let lateral: f64 = rng.random_range(0.8..=3.0);
            let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let heading = 90.0 * f64::from(rng.random_range(0u8..4));
            out.push(ScenarioSpec {
                stop_id: format!("{prefix}{i:02}"),
                site: site.as_str().to_string(),
                start_distance_m: round_tenth(start),
                lateral_offset_m: side * round_tenth(lateral),
                travel_heading_deg: heading,
                sign_facing_deg: None,
                sign_pos: LocalVec::ZERO,
            });
        }
    }
    out
}

fn round_tenth(v: f64) -> f64 {
    (v * 10.0).round() / 10.0
}

fn agents() -> Vec<AgentSpec> {
    (1..=ROSTER_SIZE)
        .map(|i| AgentSpec {
            agent_id: format!("P{i:02}"),
            profile: if i <= RESIDUAL_VISION_COUNT {
                AgentProfile::residual_vision()
            } else {
                AgentProfile::no_residual_vision()
            },
        })
        .collect()
}

fn skips(rng: &mut ChaCha8Rng, scenarios: &[ScenarioSpec], agents: &[AgentSpec]) -> Vec<SkipSpec> {
    let mut out = Vec::new();
    for (prefix, count) in [("C", SKIPPED_CITY), ("S", SKIPPED_SUBURB)] {
        let mut pairs: Vec<SkipSpec> = scenarios
            .iter()
            .filter(|s| s.stop_id.starts_with(prefix))
            .flat_map(|s| {
                agents.iter().map(|a| SkipSpec {
                    agent_id: a.agent_id.clone(),
                    stop_id: s.stop_id.clone(),
                })
            })
            .collect();
        pairs.shuffle(rng);
        pairs.truncate(count);
        pairs.sort();
        out.extend(pairs);
    }
    out
}

/// The calibrated default experiment.
pub fn default_config() -> ExperimentConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(LAYOUT_SEED);
    let scenarios = scenarios(&mut rng);
    let agents = agents();
    let skip = skips(&mut rng, &scenarios, &agents);
    let mut site_models = BTreeMap::new();
    for s in [city_site(), suburb_site()] {
        site_models.insert(s.label.as_str().to_string(), s);
    }
    ExperimentConfig {
        master_seed: DEFAULT_MASTER_SEED,
        repetitions: 1,
        site_models,
        scenarios,
        agents,
        skip,
        camera: CameraIntrinsics::default(),
        sign: SignSpec::default(),
        guidance: GuidanceConfig::default(),
        policy: PolicyParams::default(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_trial_counts() {
        let plans = default_config().plan().unwrap();
        assert_eq!(plans.len(), 432);
        let city = plans.iter().filter(|p| p.scenario.site.label == Site::City).count();
        assert_eq!((city, plans.len() - city), (229, 203));
    }

    #[test]
    fn shipped_json_matches_code() {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/default.json");
        let text = std::fs::read_to_string(path).expect("configs/default.json");
        let shipped = ExperimentConfig::from_json(&text).unwrap();
        assert!(
            shipped == default_config(),
            "configs/default.json is stale; run `stopfinder default-config`"
        );
    }
}
