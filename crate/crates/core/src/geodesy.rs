//! Spherical-Earth geodesy used by the overlay pipeline.
//!
//! All distances use the haversine formula on a sphere of radius
//! [`EARTH_RADIUS_M`]. Local offsets are expressed East-North-Up (ENU):
//! `east_m` is the first component, `north_m` the second and `up_m` the
//! third. A head-mounted display frame uses the same axis order, with its
//! "north" axis rotated by the frame heading (see
//! [`LocalPoint::into_heading_frame`]).

use std::fmt;
use std::ops::{Add, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Largest offset [`geo_to_local`] accepts. Beyond this the planar
/// approximation stops being useful for overlay placement.
pub const MAX_LOCAL_OFFSET_M: f64 = 50_000.0;

/// Coincidence threshold (degrees on both axes) below which no bearing exists.
pub const COINCIDENT_EPS_DEG: f64 = 1e-12;

/// Longitude span allowed when averaging survey fixes.
pub const MAX_MEAN_SPAN_DEG: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate bearing: points coincide")]
    DegenerateBearing,
    #[error("out of range: {0}")]
    OutOfRange(String),
}

/// A WGS84 geodetic position in decimal degrees.
///
/// Latitude is in `[-90, 90]`, longitude is normalized to `[-180, 180)` and
/// every component is finite. Construct through [`GeoPoint::new`] or
/// [`GeoPoint::with_altitude`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGeoPoint", into = "RawGeoPoint")]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
    alt: f64,
}

#[derive(Serialize, Deserialize)]
struct RawGeoPoint {
    lat: f64,
    lon: f64,
    #[serde(default)]
    alt: f64,
}

impl TryFrom<RawGeoPoint> for GeoPoint {
    type Error = GeoError;

    fn try_from(raw: RawGeoPoint) -> Result<Self, Self::Error> {
        GeoPoint::with_altitude(raw.lat, raw.lon, raw.alt)
    }
}

impl From<GeoPoint> for RawGeoPoint {
    fn from(p: GeoPoint) -> Self {
        RawGeoPoint {
            lat: p.lat,
            lon: p.lon,
            alt: p.alt,
        }
    }
}

impl GeoPoint {
    pub fn new(latitude_deg: f64, longitude_deg: f64) -> Result<Self, GeoError> {
        Self::with_altitude(latitude_deg, longitude_deg, 0.0)
    }

    pub fn with_altitude(
        latitude_deg: f64,
        longitude_deg: f64,
        altitude_m: f64,
    ) -> Result<Self, GeoError> {
        if !(latitude_deg.is_finite() && longitude_deg.is_finite() && altitude_m.is_finite()) {
            return Err(GeoError::InvalidArgument(format!(
                "non-finite coordinate ({latitude_deg}, {longitude_deg}, {altitude_m})"
            )));
        }
        if !(-90.0..=90.0).contains(&latitude_deg) {
            return Err(GeoError::InvalidArgument(format!(
                "latitude {latitude_deg} outside [-90, 90]"
            )));
        }
        Ok(GeoPoint {
            lat: latitude_deg,
            lon: normalize_longitude(longitude_deg),
            alt: altitude_m,
        })
    }

    pub fn latitude_deg(&self) -> f64 {
        self.lat
    }

    pub fn longitude_deg(&self) -> f64 {
        self.lon
    }

    pub fn altitude_m(&self) -> f64 {
        self.alt
    }
}

impl fmt::Display for GeoPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {} m)", self.lat, self.lon, self.alt)
    }
}

/// Wraps a longitude into `[-180, 180)`. Values already in range are returned
/// bit-for-bit unchanged.
pub fn normalize_longitude(lon: f64) -> f64 {
    if (-180.0..180.0).contains(&lon) {
        return lon;
    }
    let wrapped = (lon + 180.0).rem_euclid(360.0) - 180.0;
    // rem_euclid can round up to exactly 360.0 for tiny negative inputs
    if wrapped >= 180.0 {
        wrapped - 360.0
    } else {
        wrapped
    }
}

/// A position in a local metric frame (ENU, or an HMD frame with the same
/// axis order).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LocalPoint {
    pub east_m: f64,
    pub north_m: f64,
    pub up_m: f64,
}

impl LocalPoint {
    pub const ORIGIN: LocalPoint = LocalPoint {
        east_m: 0.0,
        north_m: 0.0,
        up_m: 0.0,
    };

    pub const fn new(east_m: f64, north_m: f64, up_m: f64) -> Self {
        LocalPoint {
            east_m,
            north_m,
            up_m,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.east_m.is_finite() && self.north_m.is_finite() && self.up_m.is_finite()
    }

    /// Euclidean distance in the east/north plane; up components are ignored.
    pub fn horizontal_distance(&self, other: &LocalPoint) -> f64 {
        (self.east_m - other.east_m).hypot(self.north_m - other.north_m)
    }

    pub fn horizontal_norm(&self) -> f64 {
        self.east_m.hypot(self.north_m)
    }

    pub fn scaled(&self, k: f64) -> LocalPoint {
        LocalPoint::new(self.east_m * k, self.north_m * k, self.up_m * k)
    }

    /// Re-expresses a true-north ENU vector in a frame whose "north" axis
    /// points at compass heading `heading_deg` (clockwise from true north).
    ///
    /// With a heading of 90 degrees, true north maps onto the frame's
    /// negative east axis.
    pub fn into_heading_frame(&self, heading_deg: f64) -> LocalPoint {
        let (s, c) = heading_deg.to_radians().sin_cos();
        LocalPoint::new(
            self.east_m * c - self.north_m * s,
            self.east_m * s + self.north_m * c,
            self.up_m,
        )
    }

    /// Inverse of [`LocalPoint::into_heading_frame`].
    pub fn from_heading_frame(&self, heading_deg: f64) -> LocalPoint {
        self.into_heading_frame(-heading_deg)
    }
}

impl Add for LocalPoint {
    type Output = LocalPoint;

    fn add(self, rhs: LocalPoint) -> LocalPoint {
        LocalPoint::new(
            self.east_m + rhs.east_m,
            self.north_m + rhs.north_m,
            self.up_m + rhs.up_m,
        )
    }
}

impl Sub for LocalPoint {
    type Output = LocalPoint;

    fn sub(self, rhs: LocalPoint) -> LocalPoint {
        LocalPoint::new(
            self.east_m - rhs.east_m,
            self.north_m - rhs.north_m,
            self.up_m - rhs.up_m,
        )
    }
}

impl Neg for LocalPoint {
    type Output = LocalPoint;

    fn neg(self) -> LocalPoint {
        LocalPoint::new(-self.east_m, -self.north_m, -self.up_m)
    }
}

/// Degrees clockwise from true north, normalized to `[0, 360)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct BearingAngle(f64);

impl BearingAngle {
    pub fn from_degrees(deg: f64) -> Self {
        BearingAngle(normalize_degrees(deg))
    }

    pub fn degrees(self) -> f64 {
        self.0
    }

    pub fn radians(self) -> f64 {
        self.0.to_radians()
    }
}

/// Wraps an angle into `[0, 360)`.
pub fn normalize_degrees(deg: f64) -> f64 {
    let d = deg.rem_euclid(360.0);
    if d >= 360.0 {
        0.0
    } else {
        d
    }
}

/// Wraps an angle into `(-180, 180]`.
pub fn signed_degrees(deg: f64) -> f64 {
    let d = normalize_degrees(deg);
    if d > 180.0 {
        d - 360.0
    } else {
        d
    }
}

/// Non-negative, finite distance in meters.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct DistanceMeters(f64);

impl DistanceMeters {
    pub fn new(meters: f64) -> Result<Self, GeoError> {
        if !meters.is_finite() || meters < 0.0 {
            return Err(GeoError::InvalidArgument(format!(
                "distance {meters} must be finite and non-negative"
            )));
        }
        Ok(DistanceMeters(meters))
    }

    pub fn meters(self) -> f64 {
        self.0
    }
}

/// Great-circle distance between two points.
///
/// Non-finite coordinates are rejected when the [`GeoPoint`]s are built, so
/// this cannot fail.
pub fn haversine_distance(a: &GeoPoint, b: &GeoPoint) -> DistanceMeters {
    let lat1 = a.lat.to_radians();
    let lat2 = b.lat.to_radians();
    let dlat = (b.lat - a.lat).to_radians();
    let dlon = (b.lon - a.lon).to_radians();

    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    let c = 2.0 * h.sqrt().min(1.0).asin();
    DistanceMeters(EARTH_RADIUS_M * c)
}

fn coincident(a: &GeoPoint, b: &GeoPoint) -> bool {
    (a.lat - b.lat).abs() <= COINCIDENT_EPS_DEG
        && signed_degrees(a.lon - b.lon).abs() <= COINCIDENT_EPS_DEG
}

/// Forward azimuth at `from` towards `to`.
pub fn initial_bearing(from: &GeoPoint, to: &GeoPoint) -> Result<BearingAngle, GeoError> {
    if coincident(from, to) {
        return Err(GeoError::DegenerateBearing);
    }
    let lat1 = from.lat.to_radians();
    let lat2 = to.lat.to_radians();
    let dlon = (to.lon - from.lon).to_radians();

    let y = dlon.sin() * lat2.cos();
    let x = lat1.cos() * lat2.sin() - lat1.sin() * lat2.cos() * dlon.cos();
    Ok(BearingAngle::from_degrees(y.atan2(x).to_degrees()))
}

/// Planar offset of `target` relative to `reference`: the great-circle
/// distance laid along the initial bearing, `(δ·sin β, δ·cos β, 0)` in ENU.
pub fn geo_to_local(reference: &GeoPoint, target: &GeoPoint) -> Result<LocalPoint, GeoError> {
    if coincident(reference, target) {
        return Ok(LocalPoint::ORIGIN);
    }
    let delta = haversine_distance(reference, target).meters();
    if delta > MAX_LOCAL_OFFSET_M {
        return Err(GeoError::OutOfRange(format!(
            "offset {delta:.1} m exceeds {MAX_LOCAL_OFFSET_M} m planar bound"
        )));
    }
    let beta = initial_bearing(reference, target)?.radians();
    Ok(LocalPoint::new(delta * beta.sin(), delta * beta.cos(), 0.0))
}

/// Point reached by travelling `distance_m` from `from` along the great
/// circle that leaves at `bearing_deg`. Altitude is carried over.
pub fn destination(from: &GeoPoint, bearing_deg: f64, distance_m: f64) -> GeoPoint {
    let lat1 = from.lat.to_radians();
    let lon1 = from.lon.to_radians();
    let theta = bearing_deg.to_radians();
    let ang = distance_m / EARTH_RADIUS_M;

    let lat2 = (lat1.sin() * ang.cos() + lat1.cos() * ang.sin() * theta.cos())
        .clamp(-1.0, 1.0)
        .asin();
    let lon2 = lon1
        + (theta.sin() * ang.sin() * lat1.cos()).atan2(ang.cos() - lat1.sin() * lat2.sin());

    GeoPoint {
        lat: lat2.to_degrees().clamp(-90.0, 90.0),
        lon: normalize_longitude(lon2.to_degrees()),
        alt: from.alt,
    }
}

/// Applies an ENU displacement to a geodetic point through [`destination`].
pub fn offset_by(from: &GeoPoint, offset: &LocalPoint) -> GeoPoint {
    let dist = offset.horizontal_norm();
    if dist == 0.0 {
        return *from;
    }
    let bearing = offset.east_m.atan2(offset.north_m).to_degrees();
    destination(from, bearing, dist)
}

/// Point at fraction `f` along the great circle from `a` to `b`.
pub fn intermediate_point(a: &GeoPoint, b: &GeoPoint, f: f64) -> GeoPoint {
    if f <= 0.0 || coincident(a, b) {
        return *a;
    }
    if f >= 1.0 {
        return *b;
    }
    let d = haversine_distance(a, b).meters() / EARTH_RADIUS_M;
    let (lat1, lon1) = (a.lat.to_radians(), a.lon.to_radians());
    let (lat2, lon2) = (b.lat.to_radians(), b.lon.to_radians());
    let wa = ((1.0 - f) * d).sin() / d.sin();
    let wb = (f * d).sin() / d.sin();
    let x = wa * lat1.cos() * lon1.cos() + wb * lat2.cos() * lon2.cos();
    let y = wa * lat1.cos() * lon1.sin() + wb * lat2.cos() * lon2.sin();
    let z = wa * lat1.sin() + wb * lat2.sin();
    GeoPoint {
        lat: z.atan2(x.hypot(y)).to_degrees(),
        lon: normalize_longitude(y.atan2(x).to_degrees()),
        alt: a.alt + (b.alt - a.alt) * f,
    }
}

/// Exact tangent-plane (ENU) offset of `target` from `reference` on the
/// sphere, computed through Earth-centred Cartesian coordinates.
///
/// This is the straight-line displacement a local metric tracker would
/// observe. It differs from [`geo_to_local`] only by the arc/chord
/// difference, which is below a micrometre within a few hundred meters.
/// East and north are taken on the sphere; altitudes only enter the up
/// component.
pub fn tangent_plane_offset(reference: &GeoPoint, target: &GeoPoint) -> LocalPoint {
    let to_ecef = |p: &GeoPoint| {
        let (lat, lon) = (p.lat.to_radians(), p.lon.to_radians());
        let r = EARTH_RADIUS_M;
        [
            r * lat.cos() * lon.cos(),
            r * lat.cos() * lon.sin(),
            r * lat.sin(),
        ]
    };
    let r0 = to_ecef(reference);
    let r1 = to_ecef(target);
    let d = [r1[0] - r0[0], r1[1] - r0[1], r1[2] - r0[2]];
    let (slat, clat) = reference.lat.to_radians().sin_cos();
    let (slon, clon) = reference.lon.to_radians().sin_cos();
    LocalPoint::new(
        -slon * d[0] + clon * d[1],
        -slat * clon * d[0] - slat * slon * d[1] + clat * d[2],
        clat * clon * d[0] + clat * slon * d[1] + slat * d[2] + (target.alt - reference.alt),
    )
}

/// Overlay position in the display frame: reference position plus offset.
pub fn overlay_position(p_ref_local: &LocalPoint, delta: &LocalPoint) -> LocalPoint {
    *p_ref_local + *delta
}

/// Componentwise mean of co-located fixes.
///
/// Averaging is done on deltas from the first fix, so identical fixes return
/// that fix exactly and a cluster straddling the antimeridian averages
/// correctly. Fixes spanning more than [`MAX_MEAN_SPAN_DEG`] of longitude are
/// rejected.
pub fn mean_position(fixes: &[GeoPoint]) -> Result<GeoPoint, GeoError> {
    let first = fixes
        .first()
        .ok_or_else(|| GeoError::InvalidArgument("cannot average zero fixes".into()))?;
    let n = fixes.len() as f64;
    let (mut dlat, mut dlon, mut dalt) = (0.0, 0.0, 0.0);
    let (mut lo, mut hi) = (0.0f64, 0.0f64);
    for p in fixes {
        let dl = signed_degrees(p.lon - first.lon);
        lo = lo.min(dl);
        hi = hi.max(dl);
        dlat += p.lat - first.lat;
        dlon += dl;
        dalt += p.alt - first.alt;
    }
    if hi - lo > MAX_MEAN_SPAN_DEG {
        return Err(GeoError::OutOfRange(format!(
            "fixes span {:.3} deg of longitude (max {MAX_MEAN_SPAN_DEG})",
            hi - lo
        )));
    }
    GeoPoint::with_altitude(
        first.lat + dlat / n,
        first.lon + dlon / n,
        first.alt + dalt / n,
    )
}
