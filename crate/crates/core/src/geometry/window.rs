//! Spherical coordinates and the two window partitions used by attention.

use std::f64::consts::PI;

use super::cloud::Point3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SphericalCoord {
    pub r: f64,
    /// Azimuth in `[−π, π)`.
    pub alpha: f64,
    /// Polar angle from +z in `[0, π]`.
    pub beta: f64,
}

/// `r = ‖p‖`, `α = atan2(y, x)`, `β = acos(z / r)`; the origin maps to zeros.
///
/// β is evaluated as `atan2(√(x²+y²), z)`, which equals `acos(z/r)` but
/// keeps full precision near the poles.
pub fn to_spherical(p: &Point3) -> SphericalCoord {
    let [x, y, z] = *p;
    let rho = x.hypot(y);
    let r = rho.hypot(z);
    if r == 0.0 {
        return SphericalCoord {
            r: 0.0,
            alpha: 0.0,
            beta: 0.0,
        };
    }
    let mut alpha = y.atan2(x);
    if alpha >= PI {
        alpha = -PI;
    }
    SphericalCoord {
        r,
        alpha,
        beta: rho.atan2(z),
    }
}

pub fn from_spherical(s: &SphericalCoord) -> Point3 {
    let (sb, cb) = s.beta.sin_cos();
    let (sa, ca) = s.alpha.sin_cos();
    [s.r * sb * ca, s.r * sb * sa, s.r * cb]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum WindowIndex {
    /// `(⌊α/Δα⌋, ⌊β/Δβ⌋)`; the radius plays no part.
    Radial(i64, i64),
    /// `(⌊x/Δ⌋, ⌊y/Δ⌋, ⌊z/Δ⌋)`.
    Cubic(i64, i64, i64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum WindowKind {
    Radial,
    Cubic,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WindowSizes {
    pub dalpha: f64,
    pub dbeta: f64,
    pub cubic: f64,
}

impl Default for WindowSizes {
    fn default() -> Self {
        Self {
            dalpha: PI / 60.0,
            dbeta: PI / 60.0,
            cubic: 0.4,
        }
    }
}

impl WindowSizes {
    pub fn index(&self, kind: WindowKind, p: &Point3) -> WindowIndex {
        match kind {
            WindowKind::Radial => radial_window_index(p, self.dalpha, self.dbeta),
            WindowKind::Cubic => cubic_window_index(p, self.cubic),
        }
    }
}

pub fn radial_window_index(p: &Point3, dalpha: f64, dbeta: f64) -> WindowIndex {
    debug_assert!(dalpha > 0.0 && dbeta > 0.0);
    let s = to_spherical(p);
    WindowIndex::Radial((s.alpha / dalpha).floor() as i64, (s.beta / dbeta).floor() as i64)
}

pub fn cubic_window_index(p: &Point3, delta: f64) -> WindowIndex {
    debug_assert!(delta > 0.0);
    WindowIndex::Cubic(
        (p[0] / delta).floor() as i64,
        (p[1] / delta).floor() as i64,
        (p[2] / delta).floor() as i64,
    )
}
