//! Planar polygon geometry on (lat, lon) coordinates.
//!
//! Footprints are small (tens of meters), so containment is evaluated in the
//! plane with longitude as x and latitude as y. Rings that straddle the
//! antimeridian are not supported.

use std::fmt::Write as _;

use crate::{Error, Result};

/// Mean Earth radius in meters (IUGG).
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Vertex count of the circular fallback footprint.
pub const FALLBACK_VERTICES: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    pub const fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }

    pub fn is_valid(&self) -> bool {
        self.lat.is_finite()
            && self.lon.is_finite()
            && (-90.0..=90.0).contains(&self.lat)
            && (-180.0..=180.0).contains(&self.lon)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundingBox {
    pub min_lat: f64,
    pub min_lon: f64,
    pub max_lat: f64,
    pub max_lon: f64,
}

impl BoundingBox {
    fn of(points: &[LatLon]) -> Self {
        let mut bb = BoundingBox {
            min_lat: f64::INFINITY,
            min_lon: f64::INFINITY,
            max_lat: f64::NEG_INFINITY,
            max_lon: f64::NEG_INFINITY,
        };
        for p in points {
            bb.min_lat = bb.min_lat.min(p.lat);
            bb.max_lat = bb.max_lat.max(p.lat);
            bb.min_lon = bb.min_lon.min(p.lon);
            bb.max_lon = bb.max_lon.max(p.lon);
        }
        bb
    }

    pub fn contains(&self, p: LatLon) -> bool {
        p.lat >= self.min_lat && p.lat <= self.max_lat && p.lon >= self.min_lon && p.lon <= self.max_lon
    }
}

/// A validated simple polygon. The ring is stored open: the closing vertex is
/// implied.
#[derive(Clone, Debug, PartialEq)]
pub struct Polygon {
    ring: Vec<LatLon>,
    bbox: BoundingBox,
}

impl Polygon {
    /// Validates and builds a polygon. A repeated closing vertex is accepted
    /// and stripped.
    pub fn new(mut ring: Vec<LatLon>) -> Result<Self> {
        if ring.len() > 1 && ring.first() == ring.last() {
            ring.pop();
        }
        if let Some(p) = ring.iter().find(|p| !p.is_valid()) {
            return Err(Error::Polygon(format!("vertex ({}, {}) out of range", p.lat, p.lon)));
        }
        check_distinct(&ring)?;
        if let Some((a, b)) = first_self_intersection(&ring) {
            return Err(Error::Polygon(format!(
                "ring is not simple: edges {a} and {b} intersect"
            )));
        }
        let bbox = BoundingBox::of(&ring);
        Ok(Self { ring, bbox })
    }

    pub fn vertices(&self) -> &[LatLon] {
        &self.ring
    }

    pub fn bbox(&self) -> BoundingBox {
        self.bbox
    }

    /// Even-odd containment; points on the boundary are inside.
    pub fn contains(&self, p: LatLon) -> bool {
        self.bbox.contains(p) && ring_contains(&self.ring, p)
    }

    /// Parses a well-known-text `POLYGON((lon lat, ...))`. Only the exterior
    /// ring is accepted.
    pub fn from_wkt(text: &str) -> Result<Self> {
        let bad = |why: &str| Error::Polygon(format!("{why} in WKT {text:?}"));
        let body = text.trim();
        let rest = body
            .get(..7)
            .filter(|p| p.eq_ignore_ascii_case("POLYGON"))
            .map(|_| body[7..].trim())
            .ok_or_else(|| bad("expected POLYGON"))?;
        let inner = rest
            .strip_prefix('(')
            .and_then(|r| r.strip_suffix(')'))
            .map(str::trim)
            .ok_or_else(|| bad("unbalanced parentheses"))?;
        let ring_text = inner
            .strip_prefix('(')
            .and_then(|r| r.strip_suffix(')'))
            .ok_or_else(|| bad("unbalanced parentheses"))?;
        if ring_text.contains('(') || ring_text.contains(')') {
            return Err(bad("interior rings are not supported"));
        }
        let mut ring = Vec::new();
        for pair in ring_text.split(',') {
            let mut it = pair.split_whitespace();
            let (Some(x), Some(y), None) = (it.next(), it.next(), it.next()) else {
                return Err(bad("expected `lon lat` pairs"));
            };
            let lon: f64 = x.parse().map_err(|_| bad("bad coordinate"))?;
            let lat: f64 = y.parse().map_err(|_| bad("bad coordinate"))?;
            ring.push(LatLon::new(lat, lon));
        }
        Polygon::new(ring)
    }

    /// Closed-ring WKT with `lon lat` coordinate order.
    pub fn to_wkt(&self) -> String {
        let mut out = String::from("POLYGON((");
        for p in self.ring.iter().chain(self.ring.first()) {
            if !out.ends_with('(') {
                out.push_str(", ");
            }
            let _ = write!(out, "{} {}", p.lon, p.lat);
        }
        out.push_str("))");
        out
    }
}

/// Even-odd ray casting with boundary points counted as inside.
///
/// Fails on rings with fewer than three distinct vertices.
pub fn point_in_polygon(p: LatLon, ring: &[LatLon]) -> Result<bool> {
    check_distinct(ring)?;
    Ok(ring_contains(ring, p))
}

fn check_distinct(ring: &[LatLon]) -> Result<()> {
    let mut distinct: Vec<LatLon> = Vec::with_capacity(3);
    for p in ring {
        if !distinct.contains(p) {
            distinct.push(*p);
            if distinct.len() == 3 {
                return Ok(());
            }
        }
    }
    Err(Error::Polygon(format!(
        "degenerate ring with {} distinct vertices",
        distinct.len()
    )))
}

fn ring_contains(ring: &[LatLon], p: LatLon) -> bool {
    let (px, py) = (p.lon, p.lat);
    let mut inside = false;
    let n = ring.len();
    for i in 0..n {
        let a = ring[i];
        let b = ring[(i + 1) % n];
        let (ax, ay, bx, by) = (a.lon, a.lat, b.lon, b.lat);
        if on_segment(px, py, ax, ay, bx, by) {
            return true;
        }
        if (ay > py) != (by > py) {
            let x_cross = ax + (py - ay) * (bx - ax) / (by - ay);
            if px < x_cross {
                inside = !inside;
            }
        }
    }
    inside
}

fn on_segment(px: f64, py: f64, ax: f64, ay: f64, bx: f64, by: f64) -> bool {
    let cross = (bx - ax) * (py - ay) - (by - ay) * (px - ax);
    cross == 0.0 && px >= ax.min(bx) && px <= ax.max(bx) && py >= ay.min(by) && py <= ay.max(by)
}

fn orient(a: LatLon, b: LatLon, c: LatLon) -> f64 {
    (b.lon - a.lon) * (c.lat - a.lat) - (b.lat - a.lat) * (c.lon - a.lon)
}

fn segments_intersect(a: LatLon, b: LatLon, c: LatLon, d: LatLon) -> bool {
    let (o1, o2, o3, o4) = (orient(a, b, c), orient(a, b, d), orient(c, d, a), orient(c, d, b));
    if o1 * o2 < 0.0 && o3 * o4 < 0.0 {
        return true;
    }
    let touches =
        |o: f64, p: LatLon, s: LatLon, e: LatLon| o == 0.0 && on_segment(p.lon, p.lat, s.lon, s.lat, e.lon, e.lat);
    touches(o1, c, a, b) || touches(o2, d, a, b) || touches(o3, a, c, d) || touches(o4, b, c, d)
}

/// Returns the first pair of non-adjacent edges that touch, if any.
fn first_self_intersection(ring: &[LatLon]) -> Option<(usize, usize)> {
    let n = ring.len();
    if n < 4 {
        return None;
    }
    for i in 0..n {
        let (a, b) = (ring[i], ring[(i + 1) % n]);
        for j in (i + 2)..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            let (c, d) = (ring[j], ring[(j + 1) % n]);
            if segments_intersect(a, b, c, d) {
                return Some((i, j));
            }
        }
    }
    None
}

/// Regular 16-gon approximating a geodesic circle of `radius_m` meters.
pub fn polygon_from_point(center: LatLon, radius_m: f64) -> Result<Polygon> {
    if !(radius_m > 0.0 && radius_m.is_finite()) {
        return Err(Error::Polygon(format!(
            "fallback radius must be positive, got {radius_m}"
        )));
    }
    if !center.is_valid() {
        return Err(Error::Polygon(format!(
            "center ({}, {}) out of range",
            center.lat, center.lon
        )));
    }
    let ring = (0..FALLBACK_VERTICES)
        .map(|k| {
            let bearing = std::f64::consts::TAU * k as f64 / FALLBACK_VERTICES as f64;
            destination(center, bearing, radius_m)
        })
        .collect();
    Polygon::new(ring)
}

/// Great-circle destination from `start` along `bearing` (radians clockwise
/// from north).
pub fn destination(start: LatLon, bearing: f64, distance_m: f64) -> LatLon {
    let delta = distance_m / EARTH_RADIUS_M;
    let (phi1, lambda1) = (start.lat.to_radians(), start.lon.to_radians());
    let phi2 = (phi1.sin() * delta.cos() + phi1.cos() * delta.sin() * bearing.cos()).asin();
    let lambda2 = lambda1 + (bearing.sin() * delta.sin() * phi1.cos()).atan2(delta.cos() - phi1.sin() * phi2.sin());
    LatLon::new(phi2.to_degrees(), lambda2.to_degrees())
}

pub fn haversine_m(a: LatLon, b: LatLon) -> f64 {
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().asin()
}

/// Distance in the local tangent plane at `a` (equirectangular projection).
pub fn tangent_plane_m(a: LatLon, b: LatLon) -> f64 {
    let mid = ((a.lat + b.lat) / 2.0).to_radians();
    let dx = (b.lon - a.lon).to_radians() * mid.cos();
    let dy = (b.lat - a.lat).to_radians();
    EARTH_RADIUS_M * dx.hypot(dy)
}
