//! L^p norms of velocity fields and lengths of isotopies, the singular
//! integral constant `C′`, the Lipschitz constant `C` of the configuration
//! space embedding, and the comparison between the two L¹ lengths.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::confspace::{gb_length, lift_trajectories, Configuration, EPSILON_SEP};
use crate::error::{Error, Result};
use crate::flows::Flow;
use crate::geometry::{Surface, SurfacePoint, TangentVector, DISC_RADIUS, SPHERE_RADIUS};
use crate::parallel::{self, Execution, Moments, SampleRng};

/// Minimum time intervals per flow piece in [`lp_isotopy_length`].
pub const MIN_NODES_PER_PIECE: usize = 8;
/// Consecutive rejected draws tolerated before a Monte Carlo chunk gives up.
pub const MAX_REJECTIONS: usize = 1000;
/// Base-point grid used when `C′` is computed implicitly.
pub const DEFAULT_CPRIME_GRID: usize = 16;

/// Monte Carlo and time quadrature settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureSpec {
    pub mc_samples: usize,
    pub time_steps: usize,
    pub seed: u64,
    #[serde(default)]
    pub exec: Execution,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            mc_samples: 16_384,
            time_steps: 256,
            seed: 0,
            exec: Execution::Parallel,
        }
    }
}

impl QuadratureSpec {
    pub fn new(mc_samples: usize, time_steps: usize, seed: u64) -> Result<Self> {
        let q = Self {
            mc_samples,
            time_steps,
            seed,
            exec: Execution::default(),
        };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mc_samples < 100 {
            return Err(Error::Invalid(format!("mc_samples = {} is below 100", self.mc_samples)));
        }
        if self.time_steps < 10 {
            return Err(Error::Invalid(format!("time_steps = {} is below 10", self.time_steps)));
        }
        Ok(())
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn with_exec(self, exec: Execution) -> Self {
        Self { exec, ..self }
    }

    pub fn with_samples(self, mc_samples: usize) -> Self {
        Self { mc_samples, ..self }
    }
}

/// A Monte Carlo estimate with its standard error and the settings that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormEstimate {
    pub value: f64,
    pub std_error: f64,
    pub samples: usize,
    pub rejected: usize,
    pub spec: QuadratureSpec,
}

fn check_p(p: f64) -> Result<()> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::Invalid(format!("exponent p = {p} must be a finite number >= 1")));
    }
    Ok(())
}

/// p-th root of a mean with the standard error carried through the root.
fn root_of_mean(m: f64, se: f64, p: f64) -> (f64, f64) {
    if m <= 0.0 {
        return (0.0, 0.0);
    }
    let v = m.powf(1.0 / p);
    (v, v * se / (p * m))
}

/// `‖X‖_p = (∫ |X|^p dA)^{1/p}` over the unit-area surface.
pub fn lp_field_norm<F>(s: Surface, field: F, p: f64, q: &QuadratureSpec) -> Result<NormEstimate>
where
    F: Fn(SurfacePoint) -> TangentVector + Sync + Send,
{
    check_p(p)?;
    q.validate()?;
    let est = parallel::estimate_mean(q.exec, q.seed, q.mc_samples, 0, |rng| {
        let x = s.sample(rng);
        Some(s.tangent_norm(x, field(x)).powf(p))
    });
    let (value, std_error) = root_of_mean(est.mean, est.std_error, p);
    Ok(NormEstimate {
        value,
        std_error,
        samples: est.samples,
        rejected: est.rejected,
        spec: *q,
    })
}

/// Time nodes: uniform `time_steps` grid refined so every flow piece gets at
/// least [`MIN_NODES_PER_PIECE`] intervals. Returned per piece as `(a, b, m)`.
fn time_cells(fl: &Flow, time_steps: usize) -> Vec<(f64, f64, usize)> {
    fl.breakpoints()
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| {
            let m = ((w[1] - w[0]) * time_steps as f64).ceil() as usize;
            (w[0], w[1], m.max(MIN_NODES_PER_PIECE))
        })
        .collect()
}

/// `l_p = ∫₀¹ ‖ḟ_t‖_p dt` of the flow's isotopy.
///
/// Start points are drawn uniformly and each trajectory is followed through a
/// shared set of time nodes. For `p = 1` every sample contributes its
/// trajectory length (trapezoid rule on the speed), which is the same integral
/// with the order of integration swapped. For `p > 1` the norm is formed per
/// node and integrated by the trapezoid rule; its standard error assumes full
/// correlation between nodes, which overstates it.
pub fn lp_isotopy_length(fl: &Flow, p: f64, q: &QuadratureSpec) -> Result<NormEstimate> {
    check_p(p)?;
    q.validate()?;
    let s = fl.surface();
    let cells = time_cells(fl, q.time_steps);
    let node_count: usize = cells.iter().map(|c| c.2 + 1).sum();
    let chunks = q.mc_samples.div_ceil(parallel::CHUNK_SIZE);

    let parts = parallel::map_indexed(q.exec, chunks, |k| -> Result<(Vec<Moments>, Moments)> {
        let mut rng = parallel::stream_rng(q.seed, k as u64);
        let count = parallel::CHUNK_SIZE.min(q.mc_samples - k * parallel::CHUNK_SIZE);
        let mut nodes = vec![Moments::default(); node_count];
        let mut lengths = Moments::default();
        for _ in 0..count {
            let mut x = s.sample(&mut rng);
            let mut idx = 0;
            let mut len = 0.0;
            for &(a, b, m) in &cells {
                let h = (b - a) / m as f64;
                // Velocities at piece ends are one-sided limits from inside the piece.
                let inside = 1e-12 * (b - a);
                let mut prev = s.tangent_norm(x, fl.velocity(a + inside, x));
                nodes[idx].push(prev.powf(p));
                idx += 1;
                for j in 1..=m {
                    let t1 = if j == m { b } else { a + j as f64 * h };
                    x = fl.advect(x, a + (j - 1) as f64 * h, t1)?;
                    let speed = s.tangent_norm(x, fl.velocity(if j == m { b - inside } else { t1 }, x));
                    nodes[idx].push(speed.powf(p));
                    idx += 1;
                    len += 0.5 * h * (prev + speed);
                    prev = speed;
                }
            }
            lengths.push(len);
        }
        Ok((nodes, lengths))
    });

    let mut nodes = vec![Moments::default(); node_count];
    let mut lengths = Moments::default();
    for part in parts {
        let (n, l) = part?;
        for (acc, m) in nodes.iter_mut().zip(&n) {
            acc.merge(m);
        }
        lengths.merge(&l);
    }

    let (value, std_error) = if p == 1.0 {
        (lengths.mean(), lengths.std_error())
    } else {
        let mut value = 0.0;
        let mut se = 0.0;
        let mut idx = 0;
        for &(a, b, m) in &cells {
            let h = (b - a) / m as f64;
            for j in 0..=m {
                let w = if j == 0 || j == m { 0.5 * h } else { h };
                let (v, e) = root_of_mean(nodes[idx].mean(), nodes[idx].std_error(), p);
                value += w * v;
                se += w * e;
                idx += 1;
            }
        }
        (value, se)
    };
    Ok(NormEstimate {
        value,
        std_error,
        samples: lengths.count,
        rejected: 0,
        spec: *q,
    })
}

/// Estimate of `C′ ≥ sup_p ∫ 1/dist(p, x) dA(x)` over a grid of base points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CPrimeEstimate {
    pub value: f64,
    pub std_error: f64,
    /// Base point attaining the sup.
    pub argmax: SurfacePoint,
    pub grid_points: usize,
}

/// Radius of the polar-stratified ball around the singular point.
pub fn singular_radius(s: Surface) -> f64 {
    0.1 * s.diameter()
}

fn base_grid(s: Surface, grid: usize) -> Vec<SurfacePoint> {
    match s {
        Surface::UnitAreaDisc => {
            let mut pts = vec![SurfacePoint::ZERO];
            for i in 0..=grid {
                for j in 0..=grid {
                    let u = -DISC_RADIUS + 2.0 * DISC_RADIUS * i as f64 / grid as f64;
                    let v = -DISC_RADIUS + 2.0 * DISC_RADIUS * j as f64 / grid as f64;
                    let p = SurfacePoint::planar(u, v);
                    if p.norm2d() <= DISC_RADIUS && p != SurfacePoint::ZERO {
                        pts.push(p);
                    }
                }
            }
            pts
        }
        Surface::FlatTorus => (0..grid * grid)
            .map(|k| SurfacePoint::planar((k / grid) as f64 / grid as f64, (k % grid) as f64 / grid as f64))
            .collect(),
        Surface::RoundSphere => {
            // Fibonacci lattice with grid² points.
            let m = grid * grid;
            let golden = PI * (3.0 - 5f64.sqrt());
            (0..m)
                .map(|k| {
                    let z = 1.0 - 2.0 * (k as f64 + 0.5) / m as f64;
                    let r = (1.0 - z * z).sqrt();
                    let phi = golden * k as f64;
                    SurfacePoint::new(r * phi.cos(), r * phi.sin(), z) * SPHERE_RADIUS
                })
                .collect()
        }
    }
}

/// Length of the ray from `p` in direction `theta` inside the region on
/// which distances to `p` are realized: the disc itself, or the fundamental
/// square centered at `p` on the torus.
fn ray_length(s: Surface, p: SurfacePoint, theta: f64) -> f64 {
    let (c, sn) = (theta.cos(), theta.sin());
    match s {
        Surface::UnitAreaDisc => {
            let b = p.x * c + p.y * sn;
            let disc = b * b - p.norm2d().powi(2) + DISC_RADIUS * DISC_RADIUS;
            (-b + disc.max(0.0).sqrt()).max(0.0)
        }
        _ => (0.5 / c.abs()).min(0.5 / sn.abs()),
    }
}

/// `∫ 1/dist(p, x) dA(x)` in polar coordinates about `p`, where the area
/// element `r dr dθ` cancels the singularity. The integral is split at the
/// radius `ρ`. On planar surfaces the radial integral is the ray length, so
/// only the direction is sampled; on the sphere the integrand
/// `R sin(r/R)/r` does not depend on the direction and `r` is sampled
/// uniformly in each of the two shells. Returns the sum and its standard error.
fn singular_integral(s: Surface, p: SurfacePoint, q: &QuadratureSpec) -> (f64, f64) {
    let rho = singular_radius(s);
    let est = |tag: u64, f: &(dyn Fn(&mut SampleRng) -> f64 + Sync)| {
        parallel::estimate_mean(q.exec, parallel::derive_seed(q.seed, tag), q.mc_samples, 0, |rng| Some(f(rng)))
    };
    let (near, far) = match s {
        Surface::RoundSphere => {
            let shell = |lo: f64, hi: f64| {
                move |rng: &mut SampleRng| {
                    let r: f64 = rng.random_range(lo..hi);
                    let w = if r > 0.0 { SPHERE_RADIUS * (r / SPHERE_RADIUS).sin() / r } else { 1.0 };
                    2.0 * PI * (hi - lo) * w
                }
            };
            (est(1, &shell(0.0, rho)), est(2, &shell(rho, PI * SPHERE_RADIUS)))
        }
        _ => {
            let part = |outer: bool| {
                move |rng: &mut SampleRng| {
                    let len = ray_length(s, p, rng.random_range(0.0..2.0 * PI));
                    2.0 * PI * if outer { (len - rho).max(0.0) } else { len.min(rho) }
                }
            };
            (est(1, &part(false)), est(2, &part(true)))
        }
    };
    (near.mean + far.mean, near.std_error.hypot(far.std_error))
}

/// Sup over a base-point grid of the singular integral `∫ 1/dist(p, x) dA`.
/// All grid points share one random stream so that their estimates are
/// positively correlated and the sup is not inflated by independent noise.
pub fn cprime_estimate(s: Surface, grid: usize, q: &QuadratureSpec) -> Result<CPrimeEstimate> {
    if grid < 16 {
        return Err(Error::Invalid(format!("grid = {grid} is below 16")));
    }
    q.validate()?;
    let pts = base_grid(s, grid);
    // Parallelism lives inside each estimate; the grid loop is sequential.
    let inner = QuadratureSpec { ..*q };
    let mut best = CPrimeEstimate {
        value: f64::NEG_INFINITY,
        std_error: 0.0,
        argmax: pts[0],
        grid_points: pts.len(),
    };
    for &p in &pts {
        let (v, e) = singular_integral(s, p, &inner);
        if v > best.value {
            best.value = v;
            best.std_error = e;
            best.argmax = p;
        }
    }
    Ok(best)
}

/// `C = √2 (n-1) C′ + n(n-1)/√2 · C′`.
pub fn lipschitz_constant(n: usize, cprime: f64) -> Result<f64> {
    if n < 2 {
        return Err(Error::Invalid(format!("lipschitz constant needs n >= 2, got {n}")));
    }
    if !(cprime >= 0.0 && cprime.is_finite()) {
        return Err(Error::Invalid(format!("C′ = {cprime} must be finite and nonnegative")));
    }
    let n = n as f64;
    Ok(2f64.sqrt() * (n - 1.0) * cprime + n * (n - 1.0) / 2f64.sqrt() * cprime)
}

/// `n` independent uniform points (the product measure μ on Sⁿ).
pub fn sample_configuration<R: Rng + ?Sized>(s: Surface, n: usize, rng: &mut R) -> Configuration {
    Configuration((0..n).map(|_| s.sample(rng)).collect())
}

/// L¹ length of the induced isotopy of the configuration space: the μ-average
/// of `g_b`-lengths of lifted trajectories, over `x ~ sampler`. Draws with two
/// points closer than [`EPSILON_SEP`] are rejected and redrawn.
pub fn product_l1_length_with<S>(fl: &Flow, sampler: S, q: &QuadratureSpec) -> Result<NormEstimate>
where
    S: Fn(&mut SampleRng) -> Configuration + Sync + Send,
{
    q.validate()?;
    let s = fl.surface();
    let est = parallel::try_estimate_mean(q.exec, q.seed, q.mc_samples, MAX_REJECTIONS, |rng| {
        let x = sampler(rng);
        if x.closest_pair(s).is_some_and(|(_, _, d)| d < EPSILON_SEP) {
            return Ok(None);
        }
        match lift_trajectories(fl, &x, q.time_steps).and_then(|path| gb_length(s, &path)) {
            Ok(len) => Ok(Some(len)),
            Err(Error::CoincidentPoints { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    })?;
    Ok(NormEstimate {
        value: est.mean,
        std_error: est.std_error,
        samples: est.samples,
        rejected: est.rejected,
        spec: *q,
    })
}

/// [`product_l1_length_with`] under the product of uniform measures.
pub fn product_l1_length(fl: &Flow, n: usize, q: &QuadratureSpec) -> Result<NormEstimate> {
    if n == 0 {
        return Err(Error::Invalid("n must be at least 1".into()));
    }
    let s = fl.surface();
    product_l1_length_with(fl, move |rng| sample_configuration(s, n, rng), q)
}

/// Comparison of the configuration-space length with `C` times the surface length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingReport {
    pub n: usize,
    pub lhs: f64,
    pub lhs_std_error: f64,
    /// `C · l₁(f)`.
    pub rhs: f64,
    pub rhs_std_error: f64,
    pub cprime: f64,
    #[serde(rename = "C")]
    pub c: f64,
    /// `lhs / rhs`, the slack of the inequality (0 when both vanish).
    pub ratio: f64,
    pub ok: bool,
}

/// Checks `l₁(f_*) ≤ C · l₁(f)` at 3σ, computing `C′` on the default grid.
pub fn embedding_ratio(fl: &Flow, n: usize, q: &QuadratureSpec) -> Result<EmbeddingReport> {
    let cp = cprime_estimate(fl.surface(), DEFAULT_CPRIME_GRID, q)?;
    embedding_ratio_with_cprime(fl, n, q, cp.value)
}

/// [`embedding_ratio`] with a precomputed `C′`.
pub fn embedding_ratio_with_cprime(
    fl: &Flow,
    n: usize,
    q: &QuadratureSpec,
    cprime: f64,
) -> Result<EmbeddingReport> {
    let c = lipschitz_constant(n, cprime)?;
    let lhs = product_l1_length(fl, n, &q.with_seed(parallel::derive_seed(q.seed, 3)))?;
    let base = lp_isotopy_length(fl, 1.0, &q.with_seed(parallel::derive_seed(q.seed, 4)))?;
    let rhs = c * base.value;
    let rhs_se = c * base.std_error;
    let sigma = lhs.std_error.hypot(rhs_se);
    Ok(EmbeddingReport {
        n,
        lhs: lhs.value,
        lhs_std_error: lhs.std_error,
        rhs,
        rhs_std_error: rhs_se,
        cprime,
        c,
        ratio: if rhs > 0.0 { lhs.value / rhs } else { 0.0 },
        ok: lhs.value <= rhs + 3.0 * sigma,
    })
}

/// Constants block of a JSON report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportConstants {
    pub cprime: Option<f64>,
    #[serde(rename = "C")]
    pub c: Option<f64>,
}

/// Flat JSON report shared by the measurement operations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureReport {
    pub op: String,
    pub surface: Surface,
    pub n: usize,
    pub p: f64,
    pub value: f64,
    pub std_error: f64,
    pub seed: u64,
    pub mc_samples: usize,
    pub time_steps: usize,
    pub constants: ReportConstants,
}

impl MeasureReport {
    pub fn new(op: &str, surface: Surface, n: usize, p: f64, est: &NormEstimate) -> Self {
        Self {
            op: op.to_string(),
            surface,
            n,
            p,
            value: est.value,
            std_error: est.std_error,
            seed: est.spec.seed,
            mc_samples: est.spec.mc_samples,
            time_steps: est.spec.time_steps,
            constants: ReportConstants {
                cprime: None,
                c: None,
            },
        }
    }
}
