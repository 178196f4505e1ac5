//! Geodetic distance, a local east/north working frame, and the signed
//! along-track gap used to score where a traveler stopped.
//!
//! The Earth is treated as a sphere of radius [`EARTH_RADIUS_M`]. Every
//! scenario in this crate spans a city block, so the ellipsoidal correction is
//! far below the centimetre level that matters here.

use serde::{Deserialize, Serialize};
use std::ops::{Add, Mul, Neg, Sub};
use thiserror::Error;

/// Mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Largest separation accepted by [`to_local_frame`] / [`from_local_frame`].
pub const LOCAL_FRAME_MAX_M: f64 = 5_000.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("latitude {0} outside [-90, 90]")]
    Latitude(f64),
    #[error("longitude {0} outside [-180, 180]")]
    Longitude(f64),
    #[error("point is {distance_m:.1} m from the frame origin, beyond the {LOCAL_FRAME_MAX_M} m local-frame limit")]
    OutOfRange { distance_m: f64 },
    #[error("non-finite local coordinate")]
    NonFinite,
}

/// A latitude/longitude pair in decimal degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGeoPoint", into = "RawGeoPoint")]
pub struct GeoPoint {
    lat_deg: f64,
    lon_deg: f64,
}

#[derive(Serialize, Deserialize)]
struct RawGeoPoint {
    lat_deg: f64,
    lon_deg: f64,
}

impl TryFrom<RawGeoPoint> for GeoPoint {
    type Error = GeoError;
    fn try_from(raw: RawGeoPoint) -> Result<Self, GeoError> {
        GeoPoint::new(raw.lat_deg, raw.lon_deg)
    }
}

impl From<GeoPoint> for RawGeoPoint {
    fn from(p: GeoPoint) -> Self {
        RawGeoPoint {
            lat_deg: p.lat_deg,
            lon_deg: p.lon_deg,
        }
    }
}

impl GeoPoint {
    pub fn new(lat_deg: f64, lon_deg: f64) -> Result<Self, GeoError> {
        // NaN fails both range checks.
        if !(-90.0..=90.0).contains(&lat_deg) {
            return Err(GeoError::Latitude(lat_deg));
        }
        if !(-180.0..=180.0).contains(&lon_deg) {
            return Err(GeoError::Longitude(lon_deg));
        }
        Ok(GeoPoint { lat_deg, lon_deg })
    }

    pub fn lat_deg(&self) -> f64 {
        self.lat_deg
    }

    pub fn lon_deg(&self) -> f64 {
        self.lon_deg
    }
}

/// A displacement in a local tangent plane, meters east and north.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LocalVec {
    pub east_m: f64,
    pub north_m: f64,
}

impl LocalVec {
    pub const ZERO: LocalVec = LocalVec {
        east_m: 0.0,
        north_m: 0.0,
    };

    pub const fn new(east_m: f64, north_m: f64) -> Self {
        LocalVec { east_m, north_m }
    }

    /// Unit vector pointing along a compass heading (0 = north, clockwise).
    pub fn from_heading(heading_deg: f64) -> Self {
        let h = heading_deg.to_radians();
        LocalVec::new(h.sin(), h.cos())
    }

    pub fn dot(self, other: LocalVec) -> f64 {
        self.east_m * other.east_m + self.north_m * other.north_m
    }

    pub fn norm(self) -> f64 {
        self.east_m.hypot(self.north_m)
    }

    /// Compass heading of this vector in `[0, 360)`. The zero vector maps to 0.
    pub fn heading_deg(self) -> f64 {
        normalize_heading(self.east_m.atan2(self.north_m).to_degrees())
    }

    pub fn is_finite(self) -> bool {
        self.east_m.is_finite() && self.north_m.is_finite()
    }

    /// Rotates the vector clockwise by `deg` (the same sense as compass headings).
    pub fn rotated_cw(self, deg: f64) -> Self {
        let (s, c) = deg.to_radians().sin_cos();
        LocalVec::new(self.east_m * c + self.north_m * s, -self.east_m * s + self.north_m * c)
    }
}

impl Add for LocalVec {
    type Output = LocalVec;
    fn add(self, rhs: LocalVec) -> LocalVec {
        LocalVec::new(self.east_m + rhs.east_m, self.north_m + rhs.north_m)
    }
}

impl Sub for LocalVec {
    type Output = LocalVec;
    fn sub(self, rhs: LocalVec) -> LocalVec {
        LocalVec::new(self.east_m - rhs.east_m, self.north_m - rhs.north_m)
    }
}

impl Mul<f64> for LocalVec {
    type Output = LocalVec;
    fn mul(self, k: f64) -> LocalVec {
        LocalVec::new(self.east_m * k, self.north_m * k)
    }
}

impl Neg for LocalVec {
    type Output = LocalVec;
    fn neg(self) -> LocalVec {
        LocalVec::new(-self.east_m, -self.north_m)
    }
}

/// Position plus direction of travel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub position: LocalVec,
    heading_deg: f64,
}

impl Pose2D {
    /// Any finite heading is accepted and wrapped into `[0, 360)`.
    pub fn new(position: LocalVec, heading_deg: f64) -> Self {
        Pose2D {
            position,
            heading_deg: normalize_heading(heading_deg),
        }
    }

    pub fn heading_deg(&self) -> f64 {
        self.heading_deg
    }

    pub fn set_heading_deg(&mut self, heading_deg: f64) {
        self.heading_deg = normalize_heading(heading_deg);
    }
}

/// Wraps an angle into `[0, 360)`.
pub fn normalize_heading(deg: f64) -> f64 {
    let h = deg.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360.0 for tiny negative inputs.
    if h >= 360.0 {
        0.0
    } else {
        h
    }
}

/// Wraps an angle difference into `(-180, 180]`.
pub fn wrap_signed_deg(deg: f64) -> f64 {
    let h = normalize_heading(deg);
    if h > 180.0 {
        h - 360.0
    } else {
        h
    }
}

/// Great-circle distance in meters on the mean-radius sphere.
pub fn haversine_distance(a: GeoPoint, b: GeoPoint) -> f64 {
    let phi1 = a.lat_deg.to_radians();
    let phi2 = b.lat_deg.to_radians();
    let dphi = phi2 - phi1;
    let dlambda = (b.lon_deg - a.lon_deg).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Equirectangular projection of `p` into the tangent plane at `origin`.
pub fn to_local_frame(origin: GeoPoint, p: GeoPoint) -> Result<LocalVec, GeoError> {
    let distance_m = haversine_distance(origin, p);
    if distance_m > LOCAL_FRAME_MAX_M {
        return Err(GeoError::OutOfRange { distance_m });
    }
    let dlat = (p.lat_deg - origin.lat_deg).to_radians();
    // Shortest way round the antimeridian.
    let dlon = wrap_signed_deg(p.lon_deg - origin.lon_deg).to_radians();
    Ok(LocalVec::new(
        EARTH_RADIUS_M * origin.lat_deg.to_radians().cos() * dlon,
        EARTH_RADIUS_M * dlat,
    ))
}

/// Inverse of [`to_local_frame`].
pub fn from_local_frame(origin: GeoPoint, v: LocalVec) -> Result<GeoPoint, GeoError> {
    if !v.is_finite() {
        return Err(GeoError::NonFinite);
    }
    if v.norm() > LOCAL_FRAME_MAX_M {
        return Err(GeoError::OutOfRange { distance_m: v.norm() });
    }
    let lat = origin.lat_deg + (v.north_m / EARTH_RADIUS_M).to_degrees();
    let cos_lat0 = origin.lat_deg.to_radians().cos();
    if cos_lat0.abs() < 1e-12 {
        return Err(GeoError::OutOfRange { distance_m: v.norm() });
    }
    let lon = origin.lon_deg + (v.east_m / (EARTH_RADIUS_M * cos_lat0)).to_degrees();
    let lon = if lon > 180.0 {
        lon - 360.0
    } else if lon < -180.0 {
        lon + 360.0
    } else {
        lon
    };
    GeoPoint::new(lat, lon)
}

/// Along-track gap between the sign and where the traveler stopped.
///
/// Positive while the sign is still ahead along `travel_heading_deg`, negative
/// once the traveler has passed it.
pub fn signed_gap(sign_pos: LocalVec, agent_pos: LocalVec, travel_heading_deg: f64) -> f64 {
    (sign_pos - agent_pos).dot(LocalVec::from_heading(travel_heading_deg))
}
