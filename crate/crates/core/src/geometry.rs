//! Unit-area surface models.
//!
//! Every surface is normalized to total area one: the flat torus is the unit
//! square with opposite sides identified, the disc has radius `1/√π` and the
//! round sphere has radius `1/(2√π)`. Points of the two flat surfaces live in a
//! planar chart (`z = 0`); sphere points are ambient 3-vectors on the sphere.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, Mul, Sub};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Radius of the unit-area disc.
pub const DISC_RADIUS: f64 = 0.564_189_583_547_756_3; // 1/√π
/// Radius of the unit-area round sphere.
pub const SPHERE_RADIUS: f64 = 0.282_094_791_773_878_14; // 1/(2√π)

const CHART_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Surface {
    #[serde(rename = "torus")]
    FlatTorus,
    #[serde(rename = "disc")]
    UnitAreaDisc,
    #[serde(rename = "sphere")]
    RoundSphere,
}

impl Surface {
    pub const ALL: [Surface; 3] = [Surface::FlatTorus, Surface::UnitAreaDisc, Surface::RoundSphere];

    pub fn name(self) -> &'static str {
        match self {
            Surface::FlatTorus => "torus",
            Surface::UnitAreaDisc => "disc",
            Surface::RoundSphere => "sphere",
        }
    }

    pub fn area(self) -> f64 {
        1.0
    }

    /// Largest distance between two points of the surface.
    pub fn diameter(self) -> f64 {
        match self {
            Surface::FlatTorus => 0.5 * 2f64.sqrt(),
            Surface::UnitAreaDisc => 2.0 * DISC_RADIUS,
            Surface::RoundSphere => PI * SPHERE_RADIUS,
        }
    }

    pub fn is_planar(self) -> bool {
        !matches!(self, Surface::RoundSphere)
    }

    /// Builds a point from chart coordinates, wrapping on the torus.
    ///
    /// Sphere points need three coordinates, see [`Surface::sphere_point`].
    pub fn chart_point(self, u: f64, v: f64) -> Result<SurfacePoint> {
        let p = SurfacePoint::new(u, v, 0.0);
        match self {
            Surface::FlatTorus => Ok(wrap_torus(p)),
            Surface::UnitAreaDisc => {
                if self.contains(p) {
                    Ok(p)
                } else {
                    Err(self.outside(p))
                }
            }
            Surface::RoundSphere => Err(Error::Invalid(
                "sphere points need three ambient coordinates".into(),
            )),
        }
    }

    /// Projects a nonzero direction onto the sphere.
    pub fn sphere_point(x: f64, y: f64, z: f64) -> Result<SurfacePoint> {
        let n = (x * x + y * y + z * z).sqrt();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::Invalid("sphere direction must be nonzero".into()));
        }
        let s = SPHERE_RADIUS / n;
        Ok(SurfacePoint::new(x * s, y * s, z * s))
    }

    pub fn contains(self, p: SurfacePoint) -> bool {
        match self {
            Surface::FlatTorus => {
                p.z == 0.0 && (0.0..1.0).contains(&p.x) && (0.0..1.0).contains(&p.y)
            }
            Surface::UnitAreaDisc => {
                p.z == 0.0 && p.x.hypot(p.y) <= DISC_RADIUS + CHART_TOL
            }
            Surface::RoundSphere => (p.norm() - SPHERE_RADIUS).abs() <= CHART_TOL,
        }
    }

    fn outside(self, p: SurfacePoint) -> Error {
        Error::OutsideChart {
            surface: self.name(),
            x: p.x,
            y: p.y,
            z: p.z,
        }
    }

    /// Brings a point back into the chart domain (torus wrap, sphere projection).
    pub fn normalize(self, p: SurfacePoint) -> SurfacePoint {
        match self {
            Surface::FlatTorus => wrap_torus(p),
            Surface::UnitAreaDisc => p,
            Surface::RoundSphere => {
                let n = p.norm();
                if n > 0.0 {
                    p * (SPHERE_RADIUS / n)
                } else {
                    p
                }
            }
        }
    }

    /// Riemannian distance between two points.
    pub fn dist(self, p: SurfacePoint, q: SurfacePoint) -> f64 {
        match self {
            Surface::FlatTorus => {
                let mut best = f64::INFINITY;
                for a in -1..=1 {
                    for b in -1..=1 {
                        let dx = q.x + a as f64 - p.x;
                        let dy = q.y + b as f64 - p.y;
                        best = best.min(dx.hypot(dy));
                    }
                }
                best
            }
            Surface::UnitAreaDisc => (q.x - p.x).hypot(q.y - p.y),
            Surface::RoundSphere => {
                // atan2 form stays accurate for nearly equal and nearly antipodal points.
                let cross = p.cross(q).norm();
                let dot = p.dot(q);
                SPHERE_RADIUS * cross.atan2(dot)
            }
        }
    }

    /// Chart displacement from `p` to `q`: the minimal lattice image on the torus,
    /// the plain difference on the disc, the ambient chord on the sphere.
    pub fn displacement(self, p: SurfacePoint, q: SurfacePoint) -> SurfacePoint {
        match self {
            Surface::FlatTorus => {
                let dx = q.x - p.x;
                let dy = q.y - p.y;
                SurfacePoint::new(dx - dx.round(), dy - dy.round(), 0.0)
            }
            _ => q - p,
        }
    }

    /// Geodesic midpoint of two points.
    pub fn midpoint(self, p: SurfacePoint, q: SurfacePoint) -> SurfacePoint {
        match self {
            Surface::FlatTorus => wrap_torus(p + self.displacement(p, q) * 0.5),
            Surface::UnitAreaDisc => (p + q) * 0.5,
            Surface::RoundSphere => self.normalize((p + q) * 0.5),
        }
    }

    /// Norm of a tangent vector at `p`. Both flat metrics and the round metric are
    /// induced from the ambient Euclidean space, so this is the Euclidean norm.
    pub fn tangent_norm(self, _p: SurfacePoint, v: TangentVector) -> f64 {
        (v.x * v.x + v.y * v.y + v.z * v.z).sqrt()
    }

    /// Draws a point uniformly with respect to area.
    pub fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> SurfacePoint {
        match self {
            Surface::FlatTorus => SurfacePoint::new(rng.random::<f64>(), rng.random::<f64>(), 0.0),
            Surface::UnitAreaDisc => {
                let r = DISC_RADIUS * rng.random::<f64>().sqrt();
                let theta = 2.0 * PI * rng.random::<f64>();
                SurfacePoint::new(r * theta.cos(), r * theta.sin(), 0.0)
            }
            Surface::RoundSphere => {
                let z = 2.0 * rng.random::<f64>() - 1.0;
                let phi = 2.0 * PI * rng.random::<f64>();
                let s = (1.0 - z * z).max(0.0).sqrt();
                SurfacePoint::new(s * phi.cos(), s * phi.sin(), z) * SPHERE_RADIUS
            }
        }
    }

    /// Total area by deterministic integration in the chart (composite Simpson
    /// in polar coordinates for the disc, in latitude for the sphere).
    pub fn chart_area(self, resolution: usize) -> f64 {
        let m = (resolution.max(2) + 1) & !1;
        match self {
            Surface::FlatTorus => 1.0,
            Surface::UnitAreaDisc => 2.0 * PI * simpson(|r| r, 0.0, DISC_RADIUS, m),
            Surface::RoundSphere => {
                let r2 = SPHERE_RADIUS * SPHERE_RADIUS;
                2.0 * PI * r2 * simpson(f64::sin, 0.0, PI, m)
            }
        }
    }
}

impl fmt::Display for Surface {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Surface {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "torus" => Ok(Surface::FlatTorus),
            "disc" => Ok(Surface::UnitAreaDisc),
            "sphere" => Ok(Surface::RoundSphere),
            other => Err(Error::UnknownSurface(other.to_string())),
        }
    }
}

fn wrap_torus(p: SurfacePoint) -> SurfacePoint {
    let w = |c: f64| {
        let r = c.rem_euclid(1.0);
        // rem_euclid can return exactly 1.0 for tiny negative inputs
        if r >= 1.0 {
            0.0
        } else {
            r
        }
    };
    SurfacePoint::new(w(p.x), w(p.y), 0.0)
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, m: usize) -> f64 {
    let h = (b - a) / m as f64;
    let mut acc = f(a) + f(b);
    for k in 1..m {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + k as f64 * h);
    }
    acc * h / 3.0
}

/// A point of a surface in chart (planar) or ambient (sphere) coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SurfacePoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// Tangent vectors share the coordinate layout of points.
pub type TangentVector = SurfacePoint;

impl SurfacePoint {
    pub const ZERO: SurfacePoint = SurfacePoint { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub const fn planar(x: f64, y: f64) -> Self {
        Self { x, y, z: 0.0 }
    }

    pub fn dot(self, o: Self) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Planar norm, ignoring `z`.
    pub fn norm2d(self) -> f64 {
        self.x.hypot(self.y)
    }
}

impl Add for SurfacePoint {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for SurfacePoint {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for SurfacePoint {
    type Output = Self;
    fn mul(self, s: f64) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }
}
