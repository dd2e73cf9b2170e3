//! Area-preserving isotopies generated by stream functions.
//!
//! A [`Flow`] is a list of timed segments on `[0, 1]`; each active segment
//! contributes the rotated gradient `J∇ψ = (-∂ψ/∂y, ∂ψ/∂x)` of its stream
//! function `ψ`, so every velocity field is divergence-free by construction.
//! All gradients are evaluated in closed form. Trajectories are integrated with
//! classical RK4 on a uniform grid inside each interval where the set of active
//! segments is constant.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Surface, SurfacePoint, TangentVector, DISC_RADIUS};
use crate::parallel::{self, Execution};

/// Default RK4 steps per unit time.
pub const DEFAULT_RK4_STEPS: usize = 1000;
/// Width of the disc collar that compactly supported segments must avoid.
pub const COLLAR_MARGIN: f64 = 0.05 * DISC_RADIUS;
/// Polyline vertices closer than this are merged.
pub const MERGE_TOL: f64 = 1e-9;
/// Tolerated radial overshoot of an advected disc point.
pub const STEP_OUT_TOL: f64 = 1e-9;

/// Closed-form stream functions. Serialized as `{"kind": ..., "params": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum StreamFunction {
    Zero,
    /// Rotation of the disc about its center by `angle` over the segment.
    /// Rigid for `r <= R - collar`, smoothly cut to zero at `r = R`.
    /// With `collar = 0` the rotation is rigid on the whole disc.
    Rotation { angle: f64, collar: f64 },
    /// Translates a disc of radius `radius / 2` rigidly from `from` to `to`.
    /// The stream function is `ψ = (rel × u) χ(|rel| / radius)` with `rel = q - c(t)`,
    /// `u` the center velocity and `χ` a plateau cutoff (1 on `[0, ½]`, 0 past 1).
    Translation {
        from: [f64; 2],
        to: [f64; 2],
        radius: f64,
    },
    /// Compactly supported vortex `ψ = -(s/2) r0² b(|rel| / r0)` with the bump
    /// `b(u) = exp(1 - 1/(1-u²))`; angular velocity at the center is `strength`.
    Vortex {
        center: [f64; 2],
        strength: f64,
        radius: f64,
    },
    /// Torus shear mode `ψ = A / (2π|k|) sin(2π k·q + φ)`; speed at most `amplitude`.
    Shear {
        amplitude: f64,
        wavenumber: [i32; 2],
        phase: f64,
    },
}

/// A stream function active on `[t_start, t_end]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    #[serde(flatten)]
    pub stream: StreamFunction,
    pub t_start: f64,
    pub t_end: f64,
}

/// Orientation-preserving reparametrization `t ↦ t^exponent` of a whole flow.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Reparam {
    #[default]
    Identity,
    Power { exponent: f64 },
}

impl Reparam {
    fn is_identity(&self) -> bool {
        matches!(self, Reparam::Identity)
    }

    fn apply(self, t: f64) -> f64 {
        match self {
            Reparam::Identity => t,
            Reparam::Power { exponent } => t.powf(exponent),
        }
    }

    fn derivative(self, t: f64) -> f64 {
        match self {
            Reparam::Identity => 1.0,
            Reparam::Power { exponent } => exponent * t.powf(exponent - 1.0),
        }
    }

    fn inverse(self, s: f64) -> f64 {
        match self {
            Reparam::Identity => s,
            Reparam::Power { exponent } => s.powf(1.0 / exponent),
        }
    }
}

/// Serialized form of a [`Flow`]: `{surface, segments, rk4_steps}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowDescriptor {
    pub surface: Surface,
    pub segments: Vec<Segment>,
    pub rk4_steps: usize,
    #[serde(default, skip_serializing_if = "Reparam::is_identity")]
    pub reparam: Reparam,
}

#[derive(Debug, Clone)]
struct Piece {
    start: f64,
    end: f64,
    active: Vec<usize>,
}

/// Finite-difference step for velocity gradients.
pub const GRADIENT_STEP: f64 = 1e-7;

/// Row-major 2×2 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat2(pub [[f64; 2]; 2]);

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2([[1.0, 0.0], [0.0, 1.0]]);

    pub fn mul(&self, o: &Mat2) -> Mat2 {
        let (a, b) = (self.0, o.0);
        Mat2([
            [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
            [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
        ])
    }

    pub fn add(&self, o: &Mat2) -> Mat2 {
        let (a, b) = (self.0, o.0);
        Mat2([
            [a[0][0] + b[0][0], a[0][1] + b[0][1]],
            [a[1][0] + b[1][0], a[1][1] + b[1][1]],
        ])
    }

    pub fn scale(&self, c: f64) -> Mat2 {
        let a = self.0;
        Mat2([[a[0][0] * c, a[0][1] * c], [a[1][0] * c, a[1][1] * c]])
    }

    pub fn det(&self) -> f64 {
        self.0[0][0] * self.0[1][1] - self.0[0][1] * self.0[1][0]
    }

    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1]
    }
}

/// Endpoint of an advected point with the Jacobian of the flow map there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tangent {
    pub point: SurfacePoint,
    pub jacobian: Mat2,
    /// `ln det` of the Jacobian, accumulated step by step. Accurate even when
    /// the Jacobian itself is too stretched for its determinant to be formed.
    pub log_det: f64,
}

/// A validated time-dependent area-preserving isotopy of the disc or the torus.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(into = "FlowDescriptor", try_from = "FlowDescriptor")]
pub struct Flow {
    desc: FlowDescriptor,
    pieces: Vec<Piece>,
}

impl From<Flow> for FlowDescriptor {
    fn from(f: Flow) -> Self {
        f.desc
    }
}

impl TryFrom<FlowDescriptor> for Flow {
    type Error = Error;
    fn try_from(d: FlowDescriptor) -> Result<Self> {
        Flow::new(d)
    }
}

impl Flow {
    pub fn new(desc: FlowDescriptor) -> Result<Self> {
        validate(&desc)?;
        let pieces = build_pieces(&desc.segments);
        Ok(Self { desc, pieces })
    }

    pub fn zero(surface: Surface) -> Result<Self> {
        Self::new(FlowDescriptor {
            surface,
            segments: Vec::new(),
            rk4_steps: DEFAULT_RK4_STEPS,
            reparam: Reparam::Identity,
        })
    }

    pub fn surface(&self) -> Surface {
        self.desc.surface
    }

    pub fn segments(&self) -> &[Segment] {
        &self.desc.segments
    }

    pub fn rk4_steps(&self) -> usize {
        self.desc.rk4_steps
    }

    pub fn descriptor(&self) -> &FlowDescriptor {
        &self.desc
    }

    pub fn with_rk4_steps(&self, steps: usize) -> Result<Self> {
        let mut d = self.desc.clone();
        d.rk4_steps = steps;
        Self::new(d)
    }

    pub fn with_reparam(&self, reparam: Reparam) -> Result<Self> {
        let mut d = self.desc.clone();
        d.reparam = reparam;
        Self::new(d)
    }

    /// Segment boundaries in flow time, including 0 and 1.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut b = vec![0.0];
        for p in &self.pieces {
            b.push(self.desc.reparam.inverse(p.end));
        }
        if *b.last().unwrap() < 1.0 {
            b.push(1.0);
        }
        b.dedup();
        b
    }

    /// Velocity `ḟ_t` at chart position `p`.
    pub fn velocity(&self, t: f64, p: SurfacePoint) -> TangentVector {
        let r = self.desc.reparam;
        let s = r.apply(t.clamp(0.0, 1.0));
        let scale = r.derivative(t.clamp(0.0, 1.0));
        if scale == 0.0 {
            return SurfacePoint::ZERO;
        }
        match self.piece_at(s) {
            Some(piece) => self.base_velocity(&piece.active, s, p) * scale,
            None => SurfacePoint::ZERO,
        }
    }

    fn piece_at(&self, s: f64) -> Option<&Piece> {
        if self.pieces.is_empty() {
            return None;
        }
        let i = self.pieces.partition_point(|p| p.end <= s);
        Some(&self.pieces[i.min(self.pieces.len() - 1)])
    }

    fn base_velocity(&self, active: &[usize], s: f64, p: SurfacePoint) -> TangentVector {
        let mut v = SurfacePoint::ZERO;
        for &k in active {
            let seg = &self.desc.segments[k];
            v = v + segment_velocity(self.desc.surface, seg, s, p);
        }
        v
    }

    /// Flows `p` from time `t0` to `t1`. Torus results are wrapped into the chart.
    pub fn advect(&self, p: SurfacePoint, t0: f64, t1: f64) -> Result<SurfacePoint> {
        let q = self.advect_lifted(p, t0, t1)?;
        Ok(self.desc.surface.normalize(q))
    }

    /// Like [`Flow::advect`] but without wrapping: on the torus this returns
    /// the endpoint of the lifted trajectory in the universal cover.
    pub fn advect_lifted(&self, p: SurfacePoint, t0: f64, t1: f64) -> Result<SurfacePoint> {
        if !(0.0..=1.0).contains(&t0) || !(0.0..=1.0).contains(&t1) || t1 < t0 {
            return Err(Error::Invalid(format!(
                "advection interval [{t0}, {t1}] must satisfy 0 <= t0 <= t1 <= 1"
            )));
        }
        let r = self.desc.reparam;
        self.advect_base(p, r.apply(t0), r.apply(t1))
    }

    fn advect_base(&self, mut p: SurfacePoint, s0: f64, s1: f64) -> Result<SurfacePoint> {
        if s1 <= s0 || self.pieces.is_empty() {
            return Ok(p);
        }
        let n = self.desc.rk4_steps as f64;
        let first = self.pieces.partition_point(|pc| pc.end <= s0);
        for piece in &self.pieces[first..] {
            if piece.start >= s1 {
                break;
            }
            let a = piece.start.max(s0);
            let b = piece.end.min(s1);
            if b <= a || piece.active.is_empty() {
                continue;
            }
            let steps = ((b - a) * n).ceil().max(1.0) as usize;
            let h = (b - a) / steps as f64;
            for k in 0..steps {
                let t = a + k as f64 * h;
                p = self.rk4_step(&piece.active, t, h, p);
                if self.desc.surface == Surface::UnitAreaDisc {
                    let r = p.norm2d();
                    if r > DISC_RADIUS + STEP_OUT_TOL || !r.is_finite() {
                        return Err(Error::StepOut { radius: r, time: t + h });
                    }
                }
            }
        }
        Ok(p)
    }

    /// Advects `p` together with the spatial Jacobian of the discrete flow map,
    /// differentiating every RK4 stage. Velocity gradients are central
    /// differences with step [`GRADIENT_STEP`].
    pub fn advect_tangent(&self, p: SurfacePoint, t0: f64, t1: f64) -> Result<Tangent> {
        if !(0.0..=1.0).contains(&t0) || !(0.0..=1.0).contains(&t1) || t1 < t0 {
            return Err(Error::Invalid(format!(
                "advection interval [{t0}, {t1}] must satisfy 0 <= t0 <= t1 <= 1"
            )));
        }
        let r = self.desc.reparam;
        let (s0, s1) = (r.apply(t0), r.apply(t1));
        let mut p = p;
        let mut jac = Mat2::IDENTITY;
        let mut log_det = parallel::CompensatedSum::default();
        if s1 <= s0 || self.pieces.is_empty() {
            return Ok(Tangent { point: p, jacobian: jac, log_det: 0.0 });
        }
        let n = self.desc.rk4_steps as f64;
        let first = self.pieces.partition_point(|pc| pc.end <= s0);
        for piece in &self.pieces[first..] {
            if piece.start >= s1 {
                break;
            }
            let a = piece.start.max(s0);
            let b = piece.end.min(s1);
            if b <= a || piece.active.is_empty() {
                continue;
            }
            let steps = ((b - a) * n).ceil().max(1.0) as usize;
            let h = (b - a) / steps as f64;
            for k in 0..steps {
                let t = a + k as f64 * h;
                let act = &piece.active;
                let (k1, g1) = (self.base_velocity(act, t, p), self.gradient(act, t, p));
                let p2 = p + k1 * (0.5 * h);
                let (k2, g2) = (self.base_velocity(act, t + 0.5 * h, p2), self.gradient(act, t + 0.5 * h, p2));
                let p3 = p + k2 * (0.5 * h);
                let (k3, g3) = (self.base_velocity(act, t + 0.5 * h, p3), self.gradient(act, t + 0.5 * h, p3));
                let p4 = p + k3 * h;
                let (k4, g4) = (self.base_velocity(act, t + h, p4), self.gradient(act, t + h, p4));
                // Jacobian of this step alone; it stays close to the identity.
                let d1 = g1;
                let d2 = g2.mul(&Mat2::IDENTITY.add(&d1.scale(0.5 * h)));
                let d3 = g3.mul(&Mat2::IDENTITY.add(&d2.scale(0.5 * h)));
                let d4 = g4.mul(&Mat2::IDENTITY.add(&d3.scale(h)));
                let step = d1.add(&d2.scale(2.0)).add(&d3.scale(2.0)).add(&d4).scale(h / 6.0);
                // det(I + A) - 1 = tr A + det A, without cancellation
                log_det.add((step.trace() + step.det()).ln_1p());
                jac = Mat2::IDENTITY.add(&step).mul(&jac);
                p = p + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            }
        }
        Ok(Tangent {
            point: p,
            jacobian: jac,
            log_det: log_det.value(),
        })
    }

    fn gradient(&self, active: &[usize], t: f64, p: SurfacePoint) -> Mat2 {
        let e = GRADIENT_STEP;
        let dx = (self.base_velocity(active, t, p + SurfacePoint::planar(e, 0.0))
            - self.base_velocity(active, t, p - SurfacePoint::planar(e, 0.0)))
            * (0.5 / e);
        let dy = (self.base_velocity(active, t, p + SurfacePoint::planar(0.0, e))
            - self.base_velocity(active, t, p - SurfacePoint::planar(0.0, e)))
            * (0.5 / e);
        Mat2([[dx.x, dy.x], [dx.y, dy.y]])
    }

    fn rk4_step(&self, active: &[usize], t: f64, h: f64, p: SurfacePoint) -> SurfacePoint {
        let k1 = self.base_velocity(active, t, p);
        let k2 = self.base_velocity(active, t + 0.5 * h, p + k1 * (0.5 * h));
        let k3 = self.base_velocity(active, t + 0.5 * h, p + k2 * (0.5 * h));
        let k4 = self.base_velocity(active, t + h, p + k3 * h);
        p + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
    }

    /// Runs `other` after `self`, compressing `self` into `[0, split]` and
    /// `other` into `[split, 1]`. Step density per unit of original time is kept.
    pub fn concat(&self, other: &Flow, split: f64) -> Result<Flow> {
        if self.surface() != other.surface() {
            return Err(Error::Invalid("cannot concatenate flows on different surfaces".into()));
        }
        if !(split > 0.0 && split < 1.0) {
            return Err(Error::Invalid(format!("split {split} must lie in (0, 1)")));
        }
        if !self.desc.reparam.is_identity() || !other.desc.reparam.is_identity() {
            return Err(Error::Invalid("concatenation of reparametrized flows".into()));
        }
        let mut segments = Vec::new();
        for s in &self.desc.segments {
            segments.push(Segment {
                stream: s.stream.clone(),
                t_start: s.t_start * split,
                t_end: s.t_end * split,
            });
        }
        for s in &other.desc.segments {
            segments.push(Segment {
                stream: s.stream.clone(),
                t_start: split + s.t_start * (1.0 - split),
                t_end: split + s.t_end * (1.0 - split),
            });
        }
        let steps = ((self.rk4_steps() as f64 / split)
            .max(other.rk4_steps() as f64 / (1.0 - split)))
        .ceil() as usize;
        Flow::new(FlowDescriptor {
            surface: self.surface(),
            segments,
            rk4_steps: steps,
            reparam: Reparam::Identity,
        })
    }

    /// The time-reversed isotopy `t ↦ f_{1-t} ∘ f_1^{-1}`: velocity `-v(1-t, ·)`.
    pub fn reversed(&self) -> Result<Flow> {
        if !self.desc.reparam.is_identity() {
            return Err(Error::Invalid("reversal of a reparametrized flow".into()));
        }
        let segments = self
            .desc
            .segments
            .iter()
            .rev()
            .map(|s| Segment {
                stream: s.stream.reversed(),
                t_start: 1.0 - s.t_end,
                t_end: 1.0 - s.t_start,
            })
            .collect();
        Flow::new(FlowDescriptor {
            segments,
            ..self.desc.clone()
        })
    }
}

impl StreamFunction {
    fn reversed(&self) -> StreamFunction {
        match *self {
            StreamFunction::Zero => StreamFunction::Zero,
            StreamFunction::Rotation { angle, collar } => StreamFunction::Rotation {
                angle: -angle,
                collar,
            },
            StreamFunction::Translation { from, to, radius } => StreamFunction::Translation {
                from: to,
                to: from,
                radius,
            },
            StreamFunction::Vortex {
                center,
                strength,
                radius,
            } => StreamFunction::Vortex {
                center,
                strength: -strength,
                radius,
            },
            StreamFunction::Shear {
                amplitude,
                wavenumber,
                phase,
            } => StreamFunction::Shear {
                amplitude: -amplitude,
                wavenumber,
                phase,
            },
        }
    }
}

fn validate(d: &FlowDescriptor) -> Result<()> {
    let bad = |msg: String| Err(Error::Invalid(msg));
    if d.surface == Surface::RoundSphere {
        return bad("flows are only supported on the disc and the torus".into());
    }
    if d.rk4_steps == 0 {
        return bad("rk4_steps must be positive".into());
    }
    if let Reparam::Power { exponent } = d.reparam {
        if !(exponent > 0.0 && exponent.is_finite()) {
            return bad(format!("reparametrization exponent {exponent} must be positive"));
        }
    }
    let disc = d.surface == Surface::UnitAreaDisc;
    let inner = DISC_RADIUS - COLLAR_MARGIN;
    for (i, s) in d.segments.iter().enumerate() {
        if !(0.0 <= s.t_start && s.t_start < s.t_end && s.t_end <= 1.0) {
            return bad(format!(
                "segment {i}: time window [{}, {}] not inside [0, 1]",
                s.t_start, s.t_end
            ));
        }
        match s.stream {
            StreamFunction::Zero => {}
            StreamFunction::Rotation { angle, collar } => {
                if !disc {
                    return bad(format!("segment {i}: rotation is defined on the disc only"));
                }
                if !angle.is_finite() || !(0.0..DISC_RADIUS).contains(&collar) {
                    return bad(format!("segment {i}: bad rotation parameters"));
                }
            }
            StreamFunction::Translation { from, to, radius } => {
                if !(radius > 0.0) || from.iter().chain(&to).any(|c| !c.is_finite()) {
                    return bad(format!("segment {i}: bad translation parameters"));
                }
                if disc {
                    let reach = from[0].hypot(from[1]).max(to[0].hypot(to[1])) + radius;
                    if reach > inner {
                        return bad(format!(
                            "segment {i}: translation support reaches radius {reach}, beyond the collar"
                        ));
                    }
                } else if radius >= 0.5 {
                    return bad(format!("segment {i}: translation radius must be < 1/2 on the torus"));
                }
            }
            StreamFunction::Vortex {
                center,
                strength,
                radius,
            } => {
                if !(radius > 0.0) || !strength.is_finite() {
                    return bad(format!("segment {i}: bad vortex parameters"));
                }
                if disc {
                    if center[0].hypot(center[1]) + radius > inner {
                        return bad(format!("segment {i}: vortex support crosses the collar"));
                    }
                } else if radius >= 0.5 {
                    return bad(format!("segment {i}: vortex radius must be < 1/2 on the torus"));
                }
            }
            StreamFunction::Shear {
                amplitude,
                wavenumber,
                phase,
            } => {
                if disc {
                    return bad(format!("segment {i}: shear modes are defined on the torus only"));
                }
                if wavenumber == [0, 0] || !amplitude.is_finite() || !phase.is_finite() {
                    return bad(format!("segment {i}: bad shear parameters"));
                }
            }
        }
    }
    Ok(())
}

fn build_pieces(segments: &[Segment]) -> Vec<Piece> {
    if segments.is_empty() {
        return Vec::new();
    }
    let mut cuts: Vec<f64> = vec![0.0, 1.0];
    for s in segments {
        cuts.push(s.t_start);
        cuts.push(s.t_end);
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    cuts.windows(2)
        .map(|w| {
            let (a, b) = (w[0], w[1]);
            let active = segments
                .iter()
                .enumerate()
                .filter(|(_, s)| s.t_start <= a && s.t_end >= b)
                .map(|(k, _)| k)
                .collect();
            Piece {
                start: a,
                end: b,
                active,
            }
        })
        .collect()
}

/// Smooth step: 0 for `x <= 0`, 1 for `x >= 1`, C^∞ in between.
fn smooth_step(x: f64) -> (f64, f64) {
    if x <= 0.0 {
        return (0.0, 0.0);
    }
    if x >= 1.0 {
        return (1.0, 0.0);
    }
    let f = |x: f64| (-1.0 / x).exp();
    let (fa, fb) = (f(x), f(1.0 - x));
    let (da, db) = (fa / (x * x), fb / ((1.0 - x) * (1.0 - x)));
    let den = fa + fb;
    (fa / den, (da * fb + fa * db) / (den * den))
}

/// Plateau cutoff: `χ = 1` on `[0, ½]`, `χ = 0` on `[1, ∞)`. Returns `(χ, χ')`.
pub fn plateau_cutoff(u: f64) -> (f64, f64) {
    let (s, ds) = smooth_step(2.0 - 2.0 * u);
    (s, -2.0 * ds)
}

/// The bump `exp(1 - 1/(1-u²))` on `[0, 1)`, zero beyond.
pub fn bump(u: f64) -> f64 {
    if u >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - u * u)).exp()
    }
}

/// Easing `σ(τ) = τ - sin(2πτ)/2π`: center position along a translation segment.
fn ease(tau: f64) -> (f64, f64) {
    let w = 2.0 * PI * tau;
    (tau - w.sin() / (2.0 * PI), 1.0 - w.cos())
}

fn segment_velocity(surface: Surface, seg: &Segment, s: f64, q: SurfacePoint) -> TangentVector {
    let dur = seg.t_end - seg.t_start;
    let tau = ((s - seg.t_start) / dur).clamp(0.0, 1.0);
    match seg.stream {
        StreamFunction::Zero => SurfacePoint::ZERO,
        StreamFunction::Rotation { angle, collar } => {
            let omega = angle / dur;
            let factor = if collar > 0.0 {
                let r = q.norm2d();
                smooth_step((DISC_RADIUS - r) / collar).0
            } else {
                1.0
            };
            SurfacePoint::planar(-q.y, q.x) * (omega * factor)
        }
        StreamFunction::Translation { from, to, radius } => {
            let (sig, dsig) = ease(tau);
            let c = SurfacePoint::planar(
                from[0] + sig * (to[0] - from[0]),
                from[1] + sig * (to[1] - from[1]),
            );
            let rel = surface.displacement(c, q);
            let dist = rel.norm2d();
            if dist >= radius {
                return SurfacePoint::ZERO;
            }
            let u = SurfacePoint::planar((to[0] - from[0]) * dsig / dur, (to[1] - from[1]) * dsig / dur);
            let (chi, dchi) = plateau_cutoff(dist / radius);
            let mut v = u * chi;
            if dchi != 0.0 {
                let psi0 = rel.x * u.y - rel.y * u.x;
                v = v + SurfacePoint::planar(-rel.y, rel.x) * (psi0 * dchi / (radius * dist));
            }
            v
        }
        StreamFunction::Vortex {
            center,
            strength,
            radius,
        } => {
            let rel = surface.displacement(SurfacePoint::planar(center[0], center[1]), q);
            let u = rel.norm2d() / radius;
            if u >= 1.0 {
                return SurfacePoint::ZERO;
            }
            let g = 1.0 - u * u;
            SurfacePoint::planar(-rel.y, rel.x) * (strength * bump(u) / (g * g))
        }
        StreamFunction::Shear {
            amplitude,
            wavenumber,
            phase,
        } => {
            let (kx, ky) = (wavenumber[0] as f64, wavenumber[1] as f64);
            let kn = kx.hypot(ky);
            let c = (2.0 * PI * (kx * q.x + ky * q.y) + phase).cos();
            SurfacePoint::planar(-ky, kx) * (amplitude * c / kn)
        }
    }
}

/// Rigid rotation of the unit-area disc by `angle` over `[0, 1]`.
pub fn rotation_flow(angle: f64) -> Result<Flow> {
    rotation_flow_with_collar(angle, 0.0)
}

/// Rotation that is rigid inside `R - collar` and smoothly stops at the boundary.
pub fn rotation_flow_with_collar(angle: f64, collar: f64) -> Result<Flow> {
    Flow::new(FlowDescriptor {
        surface: Surface::UnitAreaDisc,
        segments: vec![Segment {
            stream: StreamFunction::Rotation { angle, collar },
            t_start: 0.0,
            t_end: 1.0,
        }],
        rk4_steps: DEFAULT_RK4_STEPS,
        reparam: Reparam::Identity,
    })
}

/// An ordered list of chart points. On the torus the coordinates are a lift, so
/// a closed loop may end at a lattice translate of its start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Polyline {
    pub points: Vec<[f64; 2]>,
    #[serde(default)]
    pub closed: bool,
}

impl Polyline {
    /// Validates the polyline on `surface`, merging near-duplicate vertices.
    pub fn new(surface: Surface, points: Vec<[f64; 2]>, closed: bool) -> Result<Self> {
        let mut merged: Vec<[f64; 2]> = Vec::with_capacity(points.len());
        for p in points {
            if p.iter().any(|c| !c.is_finite()) {
                return Err(Error::Invalid("polyline vertex is not finite".into()));
            }
            match merged.last() {
                Some(q) if (p[0] - q[0]).hypot(p[1] - q[1]) < MERGE_TOL => {}
                _ => merged.push(p),
            }
        }
        if merged.len() < 2 {
            return Err(Error::Invalid("polyline needs two distinct vertices".into()));
        }
        if closed {
            let (a, b) = (merged[0], merged[merged.len() - 1]);
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            let gap = match surface {
                Surface::FlatTorus => (dx - dx.round()).hypot(dy - dy.round()),
                _ => dx.hypot(dy),
            };
            if gap > MERGE_TOL {
                return Err(Error::Invalid(format!(
                    "closed polyline must end where it starts (gap {gap:e})"
                )));
            }
            if surface != Surface::FlatTorus && merged.len() > 2 {
                // last vertex duplicates the first
                let last = merged.len() - 1;
                merged[last] = merged[0];
            }
        }
        if surface == Surface::UnitAreaDisc {
            if let Some(p) = merged.iter().find(|p| p[0].hypot(p[1]) > DISC_RADIUS) {
                return Err(Error::OutsideChart {
                    surface: "disc",
                    x: p[0],
                    y: p[1],
                    z: 0.0,
                });
            }
        }
        Ok(Self {
            points: merged,
            closed,
        })
    }

    pub fn segment_lengths(&self) -> Vec<f64> {
        self.points
            .windows(2)
            .map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]))
            .collect()
    }

    pub fn length(&self) -> f64 {
        self.segment_lengths().iter().sum()
    }

    pub fn start(&self) -> SurfacePoint {
        SurfacePoint::planar(self.points[0][0], self.points[0][1])
    }

    /// Closed loop circling `center` `turns` times (negative: clockwise),
    /// starting and ending at `start`, with `per_turn` vertices per turn.
    pub fn encircling(
        surface: Surface,
        start: SurfacePoint,
        center: SurfacePoint,
        turns: i32,
        per_turn: usize,
    ) -> Result<Self> {
        let rel = surface.displacement(center, start);
        let r = rel.norm2d();
        if turns == 0 || per_turn < 3 || r <= 0.0 {
            return Err(Error::Invalid(
                "encircling loop needs nonzero turns, >= 3 vertices per turn and a start away from the center".into(),
            ));
        }
        let base = rel.y.atan2(rel.x);
        let total = turns.unsigned_abs() as usize * per_turn;
        let sign = turns.signum() as f64;
        let c = start - rel;
        let points = (0..=total)
            .map(|k| {
                let a = base + sign * 2.0 * PI * k as f64 / per_turn as f64;
                [c.x + r * a.cos(), c.y + r * a.sin()]
            })
            .collect();
        Self::new(surface, points, true)
    }
}

impl Polyline {
    /// Lasso loop: straight from `start` toward `center` until `loop_radius`
    /// away from it, `turns` circles of that radius around `center`, and back.
    pub fn lasso(
        surface: Surface,
        start: SurfacePoint,
        center: SurfacePoint,
        loop_radius: f64,
        turns: i32,
        per_turn: usize,
    ) -> Result<Self> {
        let rel = surface.displacement(center, start);
        let r = rel.norm2d();
        if !(loop_radius > 0.0 && loop_radius < r) {
            return Err(Error::Invalid(format!(
                "lasso radius {loop_radius} must lie in (0, {r})"
            )));
        }
        let c = start - rel;
        let entry = c + rel * (loop_radius / r);
        let ring = Self::encircling(surface, entry, c, turns, per_turn)?;
        let mut points = vec![[start.x, start.y]];
        points.extend(ring.points.iter().copied());
        points.push([start.x, start.y]);
        Self::new(surface, points, true)
    }
}

fn point_segment_distance(p: SurfacePoint, a: [f64; 2], b: [f64; 2], surface: Surface) -> f64 {
    let (ax, ay) = (a[0], a[1]);
    let (dx, dy) = (b[0] - ax, b[1] - ay);
    let len2 = dx * dx + dy * dy;
    let closest = |px: f64, py: f64| {
        let t = if len2 > 0.0 {
            (((px - ax) * dx + (py - ay) * dy) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        (px - ax - t * dx).hypot(py - ay - t * dy)
    };
    match surface {
        Surface::FlatTorus => {
            let mut best = f64::INFINITY;
            for i in -2..=2 {
                for j in -2..=2 {
                    best = best.min(closest(p.x + i as f64, p.y + j as f64));
                }
            }
            best
        }
        _ => closest(p.x, p.y),
    }
}

/// A point that a finger push must leave untouched, with the radius of the
/// disc around it that must stay outside the tube.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeepClear {
    pub point: SurfacePoint,
    pub radius: f64,
}

/// Finger-push isotopy dragging the disc of radius `tube_radius / 2` around
/// `gamma`'s start along `gamma`. See [`point_push_avoiding`].
pub fn point_push(surface: Surface, gamma: &Polyline, tube_radius: f64) -> Result<Flow> {
    point_push_avoiding(surface, gamma, tube_radius, &[])
}

/// Builds the finger push as a time concatenation of translation bumps, one per
/// polyline segment, with durations proportional to segment length.
///
/// Points within `tube_radius / 2` of the start are translated rigidly along
/// `gamma` and return to their start at `t = 1`. Every `keep_clear` disc must
/// stay at least `tube_radius` away from `gamma`, and on the disc the tube must
/// stay inside the collar, otherwise `TubeTooWide` is returned.
pub fn point_push_avoiding(
    surface: Surface,
    gamma: &Polyline,
    tube_radius: f64,
    keep_clear: &[KeepClear],
) -> Result<Flow> {
    let too_wide = |reason: String| Error::TubeTooWide {
        tube_radius,
        reason,
    };
    if !gamma.closed {
        return Err(Error::Invalid("finger push needs a closed polyline".into()));
    }
    if !(tube_radius > 0.0) {
        return Err(Error::Invalid("tube radius must be positive".into()));
    }
    match surface {
        Surface::RoundSphere => {
            return Err(Error::Invalid("finger pushes are not supported on the sphere".into()))
        }
        Surface::FlatTorus if tube_radius >= 0.25 => {
            return Err(too_wide("must be below a quarter of the torus side".into()))
        }
        Surface::UnitAreaDisc => {
            let inner = DISC_RADIUS - COLLAR_MARGIN;
            for p in &gamma.points {
                let reach = p[0].hypot(p[1]) + tube_radius;
                if reach > inner {
                    return Err(too_wide(format!(
                        "tube around ({}, {}) reaches radius {reach:.4}, collar starts at {inner:.4}",
                        p[0], p[1]
                    )));
                }
            }
        }
        _ => {}
    }
    for (k, kc) in keep_clear.iter().enumerate() {
        for w in gamma.points.windows(2) {
            let d = point_segment_distance(kc.point, w[0], w[1], surface);
            if d < tube_radius + kc.radius {
                return Err(too_wide(format!(
                    "protected point {k} lies {d:.4} from the loop, needs {:.4}",
                    tube_radius + kc.radius
                )));
            }
        }
    }
    let lengths = gamma.segment_lengths();
    let total: f64 = lengths.iter().sum();
    let mut t = 0.0;
    let mut segments = Vec::with_capacity(lengths.len());
    for (w, len) in gamma.points.windows(2).zip(&lengths) {
        let t_end = if segments.len() + 1 == lengths.len() {
            1.0
        } else {
            t + len / total
        };
        segments.push(Segment {
            stream: StreamFunction::Translation {
                from: w[0],
                to: w[1],
                radius: tube_radius,
            },
            t_start: t,
            t_end,
        });
        t = t_end;
    }
    // center speed peaks at 2·total; keep each step below tube_radius / 80
    let steps = DEFAULT_RK4_STEPS
        .max((160.0 * total / tube_radius).ceil() as usize)
        .max(16 * segments.len());
    Flow::new(FlowDescriptor {
        surface,
        segments,
        rk4_steps: steps,
        reparam: Reparam::Identity,
    })
}

/// A random smooth flow built from a few overlapping compactly supported
/// vortices (disc) or from vortices and shear modes (torus).
pub fn random_flow<R: Rng + ?Sized>(surface: Surface, rng: &mut R) -> Result<Flow> {
    let count = rng.random_range(2..=4);
    let mut segments = Vec::with_capacity(count);
    for _ in 0..count {
        let a = rng.random_range(0.0..0.6);
        let b = rng.random_range(a + 0.2..=1.0);
        let stream = match surface {
            Surface::UnitAreaDisc => {
                let radius = rng.random_range(0.1..0.3);
                let reach = DISC_RADIUS - COLLAR_MARGIN - radius;
                let r = reach * rng.random::<f64>().sqrt();
                let phi = rng.random_range(0.0..2.0 * PI);
                StreamFunction::Vortex {
                    center: [r * phi.cos(), r * phi.sin()],
                    strength: rng.random_range(-3.0..3.0),
                    radius,
                }
            }
            _ if rng.random::<bool>() => StreamFunction::Shear {
                amplitude: rng.random_range(-1.0..1.0),
                wavenumber: [rng.random_range(-2..=2), rng.random_range(1..=2)],
                phase: rng.random_range(0.0..2.0 * PI),
            },
            _ => StreamFunction::Vortex {
                center: [rng.random(), rng.random()],
                strength: rng.random_range(-3.0..3.0),
                radius: rng.random_range(0.1..0.3),
            },
        };
        segments.push(Segment {
            stream,
            t_start: a,
            t_end: b,
        });
    }
    Flow::new(FlowDescriptor {
        surface,
        segments,
        rk4_steps: DEFAULT_RK4_STEPS,
        reparam: Reparam::Identity,
    })
}

/// Largest relative area change `|det Df − 1|` of the integrated flow map at
/// `n_samples` uniformly drawn points: the limit of advected triangles as their
/// size goes to zero. Finite triangles would also record the curvature of
/// strongly stretching maps, which is not an integration error.
pub fn area_distortion(fl: &Flow, n_samples: usize, seed: u64, exec: Execution) -> Result<f64> {
    if n_samples < 1000 {
        return Err(Error::Invalid("area_distortion needs at least 1000 samples".into()));
    }
    let surface = fl.surface();
    let chunks = n_samples.div_ceil(parallel::CHUNK_SIZE);
    let parts = parallel::map_indexed(exec, chunks, |k| -> Result<f64> {
        let mut rng = parallel::stream_rng(seed, k as u64);
        let count = parallel::CHUNK_SIZE.min(n_samples - k * parallel::CHUNK_SIZE);
        let mut worst = 0.0f64;
        for _ in 0..count {
            let c = loop {
                let c = surface.sample(&mut rng);
                if surface != Surface::UnitAreaDisc || c.norm2d() < DISC_RADIUS - 2.0 * GRADIENT_STEP {
                    break c;
                }
            };
            let tan = fl.advect_tangent(c, 0.0, 1.0)?;
            worst = worst.max(tan.log_det.exp_m1().abs());
        }
        Ok(worst)
    });
    parts.into_iter().try_fold(0.0f64, |acc, r| Ok(acc.max(r?)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vortex_flow() -> Flow {
        Flow::new(FlowDescriptor {
            surface: Surface::UnitAreaDisc,
            segments: vec![
                Segment {
                    stream: StreamFunction::Vortex {
                        center: [0.1, 0.0],
                        strength: 6.0,
                        radius: 0.3,
                    },
                    t_start: 0.0,
                    t_end: 0.7,
                },
                Segment {
                    stream: StreamFunction::Vortex {
                        center: [-0.1, 0.1],
                        strength: -4.0,
                        radius: 0.25,
                    },
                    t_start: 0.3,
                    t_end: 1.0,
                },
            ],
            rk4_steps: 1000,
            reparam: Reparam::Identity,
        })
        .unwrap()
    }

    #[test]
    fn rotation_velocity_is_rigid() {
        let fl = rotation_flow(2.0 * PI).unwrap();
        let v = fl.velocity(0.3, SurfacePoint::planar(0.4, 0.0));
        assert_relative_eq!(v.x, 0.0, epsilon = 1e-15);
        assert_relative_eq!(v.y, 2.0 * PI * 0.4, epsilon = 1e-14);
    }

    #[test]
    fn velocity_vanishes_outside_supports() {
        let fl = vortex_flow();
        let v = fl.velocity(0.5, SurfacePoint::planar(0.0, -0.5));
        assert_eq!(v, SurfacePoint::ZERO);
    }

    #[test]
    fn velocity_is_divergence_free() {
        let disc = vortex_flow();
        let gamma = Polyline::encircling(
            Surface::UnitAreaDisc,
            SurfacePoint::planar(0.1, 0.0),
            SurfacePoint::planar(0.0, 0.0),
            1,
            12,
        )
        .unwrap();
        let push = point_push(Surface::UnitAreaDisc, &gamma, 0.08).unwrap();
        let torus = Flow::new(FlowDescriptor {
            surface: Surface::FlatTorus,
            segments: vec![Segment {
                stream: StreamFunction::Shear {
                    amplitude: 1.5,
                    wavenumber: [1, 2],
                    phase: 0.3,
                },
                t_start: 0.0,
                t_end: 1.0,
            }],
            rk4_steps: 100,
            reparam: Reparam::Identity,
        })
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = 1e-7;
        for fl in [&disc, &push, &torus] {
            for _ in 0..1000 {
                let t: f64 = rng.random();
                let mut p = fl.surface().sample(&mut rng);
                if fl.surface() == Surface::UnitAreaDisc {
                    p = p * 0.9;
                }
                let dx = fl.velocity(t, p + SurfacePoint::planar(h, 0.0)).x
                    - fl.velocity(t, p - SurfacePoint::planar(h, 0.0)).x;
                let dy = fl.velocity(t, p + SurfacePoint::planar(0.0, h)).y
                    - fl.velocity(t, p - SurfacePoint::planar(0.0, h)).y;
                let div = (dx + dy) / (2.0 * h);
                assert!(div.abs() < 1e-6, "div = {div} at {p:?}");
            }
        }
    }

    #[test]
    fn translation_gradient_matches_finite_differences_of_stream_function() {
        // ψ = (rel × u) χ(|rel|/ρ); J∇ψ must equal the closed-form velocity.
        let (from, to, rho) = ([0.0, 0.0], [0.2, 0.1], 0.1);
        let seg = Segment {
            stream: StreamFunction::Translation { from, to, radius: rho },
            t_start: 0.0,
            t_end: 1.0,
        };
        let t = 0.37;
        let (sig, dsig) = ease(t);
        let c = SurfacePoint::planar(from[0] + sig * to[0], from[1] + sig * to[1]);
        let u = SurfacePoint::planar(to[0] * dsig, to[1] * dsig);
        let psi = |q: SurfacePoint| {
            let rel = q - c;
            (rel.x * u.y - rel.y * u.x) * plateau_cutoff(rel.norm2d() / rho).0
        };
        let h = 1e-7;
        for q in [
            c + SurfacePoint::planar(0.07, 0.02),
            c + SurfacePoint::planar(-0.03, 0.06),
            c + SurfacePoint::planar(0.01, 0.0),
        ] {
            let gx = (psi(q + SurfacePoint::planar(h, 0.0)) - psi(q - SurfacePoint::planar(h, 0.0))) / (2.0 * h);
            let gy = (psi(q + SurfacePoint::planar(0.0, h)) - psi(q - SurfacePoint::planar(0.0, h))) / (2.0 * h);
            let v = segment_velocity(Surface::UnitAreaDisc, &seg, t, q);
            assert!((v.x + gy).abs() < 1e-7 && (v.y - gx).abs() < 1e-7, "{v:?} vs ({}, {gx})", -gy);
        }
    }

    #[test]
    fn zero_flow_is_identity() {
        let fl = Flow::zero(Surface::UnitAreaDisc).unwrap();
        let p = SurfacePoint::planar(0.2, -0.1);
        assert_eq!(fl.advect(p, 0.0, 1.0).unwrap(), p);
        assert_eq!(area_distortion(&fl, 1000, 0, Execution::Sequential).unwrap(), 0.0);
    }

    #[test]
    fn full_rotation_closes_orbits() {
        let fl = rotation_flow(2.0 * PI).unwrap();
        for &(x, y) in &[(0.1, 0.0), (0.3, -0.2), (-0.5, 0.1)] {
            let p = SurfacePoint::planar(x, y);
            let q = fl.advect(p, 0.0, 1.0).unwrap();
            assert!((q - p).norm() < 1e-8);
        }
        let id = rotation_flow(0.0).unwrap();
        let p = SurfacePoint::planar(0.3, 0.3);
        assert_eq!(id.advect(p, 0.0, 1.0).unwrap(), p);
    }

    #[test]
    fn rotation_is_an_isometry_on_the_rigid_zone() {
        let fl = rotation_flow_with_collar(2.0 * PI, COLLAR_MARGIN).unwrap();
        let a = SurfacePoint::planar(0.1, 0.2);
        let b = SurfacePoint::planar(-0.3, 0.05);
        let d0 = (a - b).norm();
        for k in 1..=10 {
            let t = k as f64 / 10.0;
            let (pa, pb) = (fl.advect(a, 0.0, t).unwrap(), fl.advect(b, 0.0, t).unwrap());
            assert!(((pa - pb).norm() - d0).abs() < 1e-8);
        }
    }

    #[test]
    fn rk4_is_fourth_order() {
        let p = SurfacePoint::planar(0.4, 0.0);
        let err = |steps: usize| {
            let fl = rotation_flow(2.0 * PI).unwrap().with_rk4_steps(steps).unwrap();
            (fl.advect(p, 0.0, 1.0).unwrap() - p).norm()
        };
        let (e1, e2) = (err(40), err(80));
        let ratio = e1 / e2;
        assert!((ratio - 16.0).abs() < 1.0, "ratio {ratio}");
    }

    #[test]
    fn composition_law() {
        let fl = vortex_flow();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let p = Surface::UnitAreaDisc.sample(&mut rng) * 0.8;
            let (t1, t2) = (0.3 * rng.random::<f64>(), 0.4 + 0.6 * rng.random::<f64>());
            let a = fl.advect(fl.advect(p, 0.0, t1).unwrap(), t1, t2).unwrap();
            let b = fl.advect(p, 0.0, t2).unwrap();
            assert!((a - b).norm() < 1e-10, "{}", (a - b).norm());
        }
    }

    #[test]
    fn advect_rejects_bad_intervals() {
        let fl = vortex_flow();
        assert!(fl.advect(SurfacePoint::ZERO, 0.5, 0.2).is_err());
        assert!(fl.advect(SurfacePoint::ZERO, 0.0, 1.5).is_err());
    }

    #[test]
    fn step_out_is_reported() {
        // A rotation with a huge angle and one RK4 step per unit time spirals out.
        let fl = rotation_flow(40.0).unwrap().with_rk4_steps(1).unwrap();
        let r = fl.advect(SurfacePoint::planar(0.5, 0.0), 0.0, 1.0);
        assert!(matches!(r, Err(Error::StepOut { .. })), "{r:?}");
    }

    #[test]
    fn cutoffs_are_smooth_at_their_ends() {
        assert_eq!(plateau_cutoff(0.3), (1.0, 0.0));
        assert_eq!(plateau_cutoff(1.2), (0.0, 0.0));
        let (a, _) = plateau_cutoff(0.5 + 1e-3);
        let (b, _) = plateau_cutoff(1.0 - 1e-3);
        assert!(1.0 - a < 1e-12 && b < 1e-12);
        let u = 0.71;
        let fd = (plateau_cutoff(u + 1e-7).0 - plateau_cutoff(u - 1e-7).0) / 2e-7;
        assert!((fd - plateau_cutoff(u).1).abs() < 1e-6);
        assert_eq!(bump(0.0), 1.0);
        assert_eq!(bump(1.0), 0.0);
    }

    #[test]
    fn contractible_square_push_returns_core() {
        let s = Surface::UnitAreaDisc;
        let gamma = Polyline::new(
            s,
            vec![[0.0, 0.0], [0.1, 0.0], [0.1, 0.1], [0.0, 0.1], [0.0, 0.0]],
            true,
        )
        .unwrap();
        let fl = point_push(s, &gamma, 0.04).unwrap();
        let c = SurfacePoint::planar(0.0, 0.0);
        assert!((fl.advect(c, 0.0, 1.0).unwrap() - c).norm() < 1e-9);
        let far = SurfacePoint::planar(-0.3, -0.2);
        assert_eq!(fl.advect(far, 0.0, 1.0).unwrap(), far);
    }

    #[test]
    fn push_core_points_return() {
        let s = Surface::UnitAreaDisc;
        let start = SurfacePoint::planar(-0.15, -0.15);
        let gamma = Polyline::lasso(s, start, SurfacePoint::planar(0.15, -0.15), 0.12, 2, 48).unwrap();
        let tube = 0.05;
        let fl = point_push(s, &gamma, tube).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let r = 0.5 * tube * rng.random::<f64>().sqrt();
            let a = 2.0 * PI * rng.random::<f64>();
            let p = start + SurfacePoint::planar(r * a.cos(), r * a.sin());
            let q = fl.advect(p, 0.0, 1.0).unwrap();
            assert!((q - p).norm() < 1e-6, "{}", (q - p).norm());
        }
    }

    #[test]
    fn torus_horizontal_push_translates_lift() {
        let s = Surface::FlatTorus;
        let gamma = Polyline::new(s, vec![[0.0, 0.5], [1.0, 0.5]], true).unwrap();
        let fl = point_push(s, &gamma, 0.1).unwrap();
        let tracked = SurfacePoint::planar(0.0, 0.5);
        let lifted = fl.advect_lifted(tracked, 0.0, 1.0).unwrap();
        assert!((lifted - SurfacePoint::planar(1.0, 0.5)).norm() < 1e-9);
        let far = SurfacePoint::planar(0.3, 0.05);
        assert!((fl.advect_lifted(far, 0.0, 1.0).unwrap() - far).norm() < 1e-9);
    }

    #[test]
    fn push_rejects_crowded_tubes() {
        let s = Surface::UnitAreaDisc;
        let gamma = Polyline::encircling(
            s,
            SurfacePoint::planar(0.0, 0.0),
            SurfacePoint::planar(0.1, 0.0),
            1,
            16,
        )
        .unwrap();
        let kc = [KeepClear {
            point: SurfacePoint::planar(0.1, 0.0),
            radius: 0.02,
        }];
        assert!(matches!(
            point_push_avoiding(s, &gamma, 0.09, &kc),
            Err(Error::TubeTooWide { .. })
        ));
        assert!(point_push_avoiding(s, &gamma, 0.05, &kc).is_ok());
        let wide = Polyline::encircling(
            s,
            SurfacePoint::planar(0.5, 0.0),
            SurfacePoint::planar(0.0, 0.0),
            1,
            16,
        )
        .unwrap();
        assert!(matches!(point_push(s, &wide, 0.06), Err(Error::TubeTooWide { .. })));
    }

    #[test]
    fn polyline_merges_degenerate_vertices_and_checks_closure() {
        let s = Surface::UnitAreaDisc;
        let pl = Polyline::new(
            s,
            vec![[0.0, 0.0], [0.0, 1e-12], [0.1, 0.0], [0.0, 0.0]],
            true,
        )
        .unwrap();
        assert_eq!(pl.points.len(), 3);
        assert!(Polyline::new(s, vec![[0.0, 0.0], [0.1, 0.0]], true).is_err());
    }

    #[test]
    fn reversal_undoes_the_flow() {
        let fl = vortex_flow();
        let back = fl.reversed().unwrap();
        let p = SurfacePoint::planar(0.12, -0.05);
        let q = back.advect(fl.advect(p, 0.0, 1.0).unwrap(), 0.0, 1.0).unwrap();
        assert!((q - p).norm() < 1e-9);
    }

    #[test]
    fn reparametrization_keeps_endpoints() {
        let fl = vortex_flow();
        let warped = fl.with_reparam(Reparam::Power { exponent: 2.0 }).unwrap();
        let p = SurfacePoint::planar(0.05, 0.05);
        assert_eq!(warped.advect(p, 0.0, 1.0).unwrap(), fl.advect(p, 0.0, 1.0).unwrap());
        let t = 0.6;
        let v = warped.velocity(t, p);
        let v0 = fl.velocity(t * t, p) * (2.0 * t);
        assert!((v - v0).norm() < 1e-14);
    }

    #[test]
    fn descriptor_json_round_trip() {
        let fl = vortex_flow();
        let json = serde_json::to_string(&fl).unwrap();
        assert!(json.contains("\"kind\":\"vortex\""));
        assert!(json.contains("\"params\""));
        let back: Flow = serde_json::from_str(&json).unwrap();
        assert_eq!(back.descriptor(), fl.descriptor());
        let bad = r#"{"surface":"sphere","segments":[],"rk4_steps":10}"#;
        assert!(serde_json::from_str::<Flow>(bad).is_err());
        let unknown = r#"{"surface":"disc","segments":[],"rk4_steps":10,"extra":1}"#;
        assert!(serde_json::from_str::<Flow>(unknown).is_err());
    }

    #[test]
    fn area_distortion_of_rotation_is_tiny() {
        let fl = rotation_flow(2.0 * PI).unwrap();
        let d = area_distortion(&fl, 1000, 4, Execution::Sequential).unwrap();
        assert!(d < 1e-8, "{d}");
    }

    #[test]
    fn random_flows_are_valid_and_area_preserving() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for s in [Surface::UnitAreaDisc, Surface::FlatTorus] {
            for _ in 0..20 {
                let fl = random_flow(s, &mut rng).unwrap();
                assert!(!fl.segments().is_empty());
                let d = area_distortion(&fl, 1000, 5, Execution::Sequential).unwrap();
                assert!(d < 1e-4, "{s}: {d}");
            }
        }
    }

    #[test]
    fn tangent_map_matches_finite_differences() {
        let fl = vortex_flow();
        let p = SurfacePoint::planar(0.05, 0.1);
        let tan = fl.advect_tangent(p, 0.0, 1.0).unwrap();
        let (q, jac) = (tan.point, tan.jacobian);
        assert_relative_eq!(q.x, fl.advect(p, 0.0, 1.0).unwrap().x, epsilon = 1e-14);
        let e = 1e-6;
        for (col, d) in [SurfacePoint::planar(e, 0.0), SurfacePoint::planar(0.0, e)].iter().enumerate() {
            let fd = (fl.advect(p + *d, 0.0, 1.0).unwrap() - fl.advect(p - *d, 0.0, 1.0).unwrap()) * (0.5 / e);
            assert!((fd.x - jac.0[0][col]).abs() < 1e-5, "{fd:?} {jac:?}");
            assert!((fd.y - jac.0[1][col]).abs() < 1e-5, "{fd:?} {jac:?}");
        }
        assert!((jac.det() - 1.0).abs() < 1e-6);
        assert!((tan.log_det - jac.det().ln()).abs() < 1e-9);
    }
}
