//! Invariant checks across all modules, shared by the `verify` command.
//! Each check compares a computed quantity with a closed form or with an
//! inequality that must hold, and reports a one-line verdict.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use serde::Serialize;

use crate::bounds::{growth_experiment, GrowthConfig};
use crate::braids::{lh_lower, winding_matrix};
use crate::confspace::{
    diag_dist, escape_check, gb_length, lift_trajectories, truncate_at_length, ConfigPath, Configuration,
};
use crate::error::Result;
use crate::flows::{area_distortion, point_push_avoiding, random_flow, rotation_flow, Flow, KeepClear, Polyline};
use crate::functionals::{
    cprime_estimate, embedding_ratio_with_cprime, lipschitz_constant, lp_field_norm, lp_isotopy_length,
    sample_configuration, QuadratureSpec,
};
use crate::geometry::{Surface, SurfacePoint, DISC_RADIUS};
use crate::parallel::{derive_seed, Execution, SampleRng};

/// Closed-form value of `l₁` for one full rigid turn of the unit-area disc.
pub const ROTATION_L1: f64 = 4.0 * PI * PI * DISC_RADIUS * DISC_RADIUS * DISC_RADIUS / 3.0;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    pub quick: bool,
    pub seed: u64,
    pub exec: Execution,
}

impl VerifyOptions {
    fn scale(&self, full: usize, quick: usize) -> usize {
        if self.quick {
            quick
        } else {
            full
        }
    }

    fn spec(&self, full: usize, quick: usize, tag: u64) -> QuadratureSpec {
        QuadratureSpec {
            mc_samples: self.scale(full, quick),
            time_steps: 256,
            seed: derive_seed(self.seed, tag),
            exec: self.exec,
        }
    }
}

/// A random closed configuration loop on the disc or torus: `n` marked
/// points wobble along two Fourier modes, one random pair spins `k` times
/// about its midpoint and (on the disc) everything turns `m` times rigidly.
/// Draws with points closer than 0.01 or leaving the disc are redrawn.
pub fn random_closed_loop<R: Rng + ?Sized>(s: Surface, n: usize, steps: usize, rng: &mut R) -> Result<ConfigPath> {
    loop {
        let centers: Vec<SurfacePoint> = (0..n)
            .map(|_| match s {
                Surface::UnitAreaDisc => s.sample(rng) * 0.6,
                _ => s.sample(rng),
            })
            .collect();
        let wobble: Vec<[f64; 8]> = (0..n).map(|_| std::array::from_fn(|_| rng.random_range(-0.03..0.03))).collect();
        let (i, j) = {
            let i = rng.random_range(0..n);
            let j = (i + rng.random_range(1..n)) % n;
            (i, j)
        };
        let k = rng.random_range(-2..=2) as f64;
        let m = if s == Surface::UnitAreaDisc { rng.random_range(-1..=1) as f64 } else { 0.0 };
        let mid_rel = s.displacement(centers[i], centers[j]) * 0.5;
        let mid = centers[i] + mid_rel;
        let at = |t: f64| {
            let rot = |v: SurfacePoint, a: f64| SurfacePoint::planar(v.x * a.cos() - v.y * a.sin(), v.x * a.sin() + v.y * a.cos());
            let pts = (0..n)
                .map(|z| {
                    let mut p = centers[z];
                    if z == i {
                        p = mid + rot(mid_rel * -1.0, 2.0 * PI * k * t);
                    } else if z == j {
                        p = mid + rot(mid_rel, 2.0 * PI * k * t);
                    }
                    let w = &wobble[z];
                    let (c1, s1, c2, s2) = ((2.0 * PI * t).cos(), (2.0 * PI * t).sin(), (4.0 * PI * t).cos(), (4.0 * PI * t).sin());
                    p = p + SurfacePoint::planar(
                        w[0] * (c1 - 1.0) + w[1] * s1 + w[2] * (c2 - 1.0) + w[3] * s2,
                        w[4] * (c1 - 1.0) + w[5] * s1 + w[6] * (c2 - 1.0) + w[7] * s2,
                    );
                    s.normalize(rot(p, 2.0 * PI * m * t))
                })
                .collect();
            Configuration(pts)
        };
        let path = ConfigPath::from_fn(steps, at)?;
        let fits = path.configs.iter().all(|x| {
            x.0.iter().all(|p| s.contains(*p))
                && x.closest_pair(s).is_some_and(|(_, _, d)| d > 0.01)
        });
        if fits {
            return Ok(path);
        }
    }
}

/// A random bounded smooth vector field for Hölder checks.
pub fn random_field<R: Rng + ?Sized>(rng: &mut R) -> impl Fn(SurfacePoint) -> SurfacePoint + Sync + Send {
    let c: [f64; 8] = std::array::from_fn(|_| rng.random_range(-2.0..2.0));
    move |p: SurfacePoint| {
        let a = (2.0 * PI * (c[0] * p.x + c[1] * p.y)).sin();
        let b = (2.0 * PI * (c[2] * p.x - c[3] * p.y)).cos();
        SurfacePoint::planar(c[4] * a + c[5] * b * b, c[6] * a * b + c[7])
    }
}

/// Flows that the library constructs by default, for area-preservation checks.
pub fn shipped_flows(seed: u64) -> Result<Vec<(String, Flow)>> {
    let mut out = vec![
        ("zero".to_string(), Flow::zero(Surface::UnitAreaDisc)?),
        ("rotation".to_string(), rotation_flow(2.0 * PI)?),
        ("rotation-collar".to_string(), crate::flows::rotation_flow_with_collar(2.0 * PI, 0.05 * DISC_RADIUS)?),
    ];
    let cfg = GrowthConfig::default();
    let u = &cfg.neighborhood;
    for k in [1, 3, 5] {
        let braid = crate::bounds::PushBraid::encircling(u, cfg.moving, cfg.around, k, cfg.loop_radius, cfg.tube_radius)?;
        out.push((format!("push-k{k}"), braid.realize(u)?));
    }
    let torus = Surface::FlatTorus;
    let gamma = Polyline::lasso(torus, SurfacePoint::planar(0.3, 0.5), SurfacePoint::planar(0.5, 0.5), 0.1, 2, 32)?;
    out.push((
        "torus-push".to_string(),
        point_push_avoiding(torus, &gamma, 0.04, &[KeepClear { point: SurfacePoint::planar(0.5, 0.5), radius: 0.01 }])?,
    ));
    let mut rng = SampleRng::seed_from_u64(seed);
    for s in [Surface::UnitAreaDisc, Surface::FlatTorus] {
        for r in 0..2 {
            out.push((format!("random-{s}-{r}"), random_flow(s, &mut rng)?));
        }
    }
    Ok(out)
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

type Suite = fn(&VerifyOptions) -> Result<Check>;

/// Runs every check. Numerical errors inside a check are reported as failures.
pub fn run_all(opts: &VerifyOptions) -> Vec<Check> {
    let suites: [(&'static str, Suite); 9] = [
        ("constants", constants),
        ("rotation-length", rotation_length),
        ("escape-bound", escape_bound),
        ("winding-length", winding_length),
        ("embedding", embedding),
        ("full-twist", full_twist),
        ("growth", growth),
        ("rk4-order", rk4_order),
        ("area-and-holder", area_and_holder),
    ];
    suites
        .iter()
        .map(|(name, f)| f(opts).unwrap_or_else(|e| check(name, false, format!("error: {e}"))))
        .collect()
}

fn constants(o: &VerifyOptions) -> Result<Check> {
    let q = o.spec(16_384, 2000, 1);
    let disc = cprime_estimate(Surface::UnitAreaDisc, 16, &q)?.value;
    let torus = cprime_estimate(Surface::FlatTorus, 16, &q)?.value;
    let (ed, et) = (2.0 * PI.sqrt(), 4.0 * (1.0 + 2f64.sqrt()).ln());
    let c = lipschitz_constant(4, disc)?;
    let passed = (disc / ed - 1.0).abs() < 0.02
        && (torus / et - 1.0).abs() < 0.02
        && (c - 9.0 * 2f64.sqrt() * disc).abs() < 1e-9 * c;
    Ok(check("constants", passed, format!("C'(disc) = {disc:.5} (exact {ed:.5}), C'(torus) = {torus:.5} (exact {et:.5}), C(4) = {c:.4}")))
}

fn rotation_length(o: &VerifyOptions) -> Result<Check> {
    let q = o.spec(16_384, 4000, 2);
    let e = lp_isotopy_length(&rotation_flow(2.0 * PI)?, 1.0, &q)?;
    let rel = e.value / ROTATION_L1 - 1.0;
    Ok(check("rotation-length", rel.abs() < 0.01, format!("l1 = {:.5} ± {:.5}, exact {ROTATION_L1:.5}", e.value, e.std_error)))
}

fn escape_bound(o: &VerifyOptions) -> Result<Check> {
    let count = o.scale(200, 20);
    let mut rng = SampleRng::seed_from_u64(derive_seed(o.seed, 3));
    let mut worst = f64::INFINITY;
    let mut failures = 0;
    for _ in 0..count {
        let s = if rng.random::<bool>() { Surface::UnitAreaDisc } else { Surface::FlatTorus };
        let fl = random_flow(s, &mut rng)?;
        let n = rng.random_range(2..=4);
        let x = loop {
            let x = sample_configuration(s, n, &mut rng);
            if diag_dist(s, &x).is_ok_and(|d| d > 1e-3) {
                break x;
            }
        };
        let path = lift_trajectories(&fl, &x, 200)?;
        let cut = truncate_at_length(s, &path, 0.5)?;
        let rep = escape_check(s, &cut)?;
        worst = worst.min(rep.d_end / rep.d_start);
        if !rep.ok {
            failures += 1;
        }
    }
    Ok(check("escape-bound", failures == 0, format!("{count} paths, worst d(end)/d(start) = {worst:.4}, floor 0.5")))
}

fn winding_length(o: &VerifyOptions) -> Result<Check> {
    let count = o.scale(200, 20);
    let mut rng = SampleRng::seed_from_u64(derive_seed(o.seed, 4));
    let mut failures = 0;
    let mut nontrivial = 0;
    for _ in 0..count {
        let s = if rng.random::<bool>() { Surface::UnitAreaDisc } else { Surface::FlatTorus };
        let path = random_closed_loop(s, rng.random_range(2..=4), 2000, &mut rng)?;
        let w = winding_matrix(s, &path)?;
        let len = gb_length(s, &path)?;
        let tol = 1e-6 + (len - gb_length(s, &path.subsample(2))?).abs();
        if w.max_abs() > 0.5 {
            nontrivial += 1;
        }
        if len < 2.0 * PI * w.max_abs() - tol {
            failures += 1;
        }
    }
    Ok(check("winding-length", failures == 0, format!("{count} loops ({nontrivial} with nonzero winding), {failures} violations")))
}

fn embedding(o: &VerifyOptions) -> Result<Check> {
    let count = o.scale(5, 2);
    let q = o.spec(1000, 200, 5);
    let cp = cprime_estimate(Surface::UnitAreaDisc, 16, &q)?.value;
    let mut rng = SampleRng::seed_from_u64(derive_seed(o.seed, 5));
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for _ in 0..count {
        let fl = random_flow(Surface::UnitAreaDisc, &mut rng)?;
        let r = embedding_ratio_with_cprime(&fl, 4, &q, cp)?;
        worst = worst.max(r.ratio);
        ok &= r.ok;
    }
    Ok(check("embedding", ok, format!("{count} random flows, n = 4, largest lhs/rhs = {worst:.4}")))
}

fn full_twist(o: &VerifyOptions) -> Result<Check> {
    let s = Surface::UnitAreaDisc;
    let x = Configuration::from_chart(s, &[[-0.15, -0.15], [0.15, -0.15], [0.15, 0.15], [-0.15, 0.15]])?;
    let path = lift_trajectories(&rotation_flow(2.0 * PI)?, &x, o.scale(400, 200))?;
    let w = winding_matrix(s, &path)?;
    let ones = w.pairs().all(|(_, _, v)| (v - 1.0).abs() < 1e-3);
    let b = lh_lower(&w, s)?;
    Ok(check("full-twist", ones && b.lh_lower == 0.0, format!("winding all ones: {ones}, L_h_lower = {}", b.lh_lower)))
}

fn growth(o: &VerifyOptions) -> Result<Check> {
    let cfg = GrowthConfig {
        k_max: o.scale(5, 3),
        ..GrowthConfig::default()
    };
    let t = growth_experiment(&cfg, &o.spec(4096, 400, 6))?;
    let slope_ok = t.fit.is_some_and(|f| f.slope > 0.0 && f.r_squared > 0.99);
    Ok(check(
        "growth",
        t.sound() && t.monotone() && slope_ok,
        format!("{} rows, sound {}, monotone {}, fit {:?}", t.rows.len(), t.sound(), t.monotone(), t.fit),
    ))
}

fn rk4_order(_: &VerifyOptions) -> Result<Check> {
    let fl = rotation_flow(2.0 * PI)?;
    let p = SurfacePoint::planar(0.4, 0.1);
    let err = |n: usize| -> Result<f64> {
        let q = fl.with_rk4_steps(n)?.advect(p, 0.0, 1.0)?;
        Ok((q - p).norm2d())
    };
    let (e1, e2) = (err(20)?, err(40)?);
    let order = (e1 / e2).log2();
    Ok(check("rk4-order", (order - 4.0).abs() < 0.3, format!("observed order {order:.3}")))
}

fn area_and_holder(o: &VerifyOptions) -> Result<Check> {
    let mut worst: f64 = 0.0;
    let mut worst_name = String::new();
    for (name, fl) in shipped_flows(derive_seed(o.seed, 7))? {
        let d = area_distortion(&fl, 1000, derive_seed(o.seed, 8), o.exec)?;
        if d >= worst {
            worst = d;
            worst_name = name;
        }
    }
    let fields = o.scale(50, 10);
    let mut rng = SampleRng::seed_from_u64(derive_seed(o.seed, 9));
    let mut holder_ok = true;
    let q = o.spec(4096, 1000, 10);
    for _ in 0..fields {
        let s = if rng.random::<bool>() { Surface::UnitAreaDisc } else { Surface::FlatTorus };
        let f = random_field(&mut rng);
        let a = lp_field_norm(s, &f, 1.0, &q)?;
        let b = lp_field_norm(s, &f, 2.0, &q)?;
        holder_ok &= a.value <= b.value + 3.0 * a.std_error.hypot(b.std_error);
    }
    Ok(check(
        "area-and-holder",
        worst < 1e-4 && holder_ok,
        format!("max area distortion {worst:.2e} ({worst_name}), Hölder on {fields} fields: {holder_ok}"),
    ))
}
