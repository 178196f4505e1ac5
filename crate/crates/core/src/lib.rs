//! Bus-stop micro-navigation toolkit.
//!
//! - [`geo`]: great-circle distance, a local east/north frame, signed along-track gaps.
//! - [`gtfs`]: `stops.txt` parsing and mapped-vs-surveyed stop audits.
//! - [`perception`]: known-size pinhole ranging, a synthetic detector, hit confirmation.
//! - [`guidance`]: the upright-gated, four-level proximity tone state machine.
//! - [`replay`]: frame logs through the guidance engine.
//! - [`simulator`]: seeded paired trials of vision-guided and GPS-follow navigation.
//! - [`stats`]: success rates, gap summaries, joint tables, reports.
//! - [`study`]: the calibrated default experiment.
//! - [`cli`]: the `stopfinder` command.
//!
//! ```
//! use stopfinder::guidance::{tone_level, DEFAULT_THRESHOLDS_M};
//! use stopfinder::perception::{estimate_distance, CameraIntrinsics, Detection, SignSpec};
//!
//! let cam = CameraIntrinsics::default();
//! let sign = SignSpec::default();
//! let det = Detection {
//!     frame_index: 0,
//!     bbox_center_x_px: 540.0,
//!     bbox_center_y_px: 900.0,
//!     bbox_width_px: 200.0,
//!     bbox_height_px: 300.0,
//!     confidence: 0.9,
//! };
//! let r = estimate_distance(&det, &cam, &sign).unwrap();
//! assert!((r.est_distance_m - 1.524).abs() < 1e-9);
//! assert_eq!(tone_level(r.est_distance_m, &DEFAULT_THRESHOLDS_M).unwrap().get(), 4);
//! ```

pub mod cli;
pub mod geo;
pub mod gtfs;
pub mod guidance;
pub mod perception;
pub mod replay;
pub mod simulator;
pub mod stats;
pub mod study;

pub use geo::{GeoPoint, LocalVec, Pose2D};
pub use simulator::{ExperimentConfig, Policy, TrialTable};

// The guide's code blocks run as doctests, one module per chapter.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/geo.md")]
    mod geo {}
    #[doc = include_str!("../../../book/src/ranging.md")]
    mod ranging {}
    #[doc = include_str!("../../../book/src/guidance.md")]
    mod guidance {}
    #[doc = include_str!("../../../book/src/audit.md")]
    mod audit {}
    #[doc = include_str!("../../../book/src/simulator.md")]
    mod simulator {}
    #[doc = include_str!("../../../book/src/statistics.md")]
    mod statistics {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
