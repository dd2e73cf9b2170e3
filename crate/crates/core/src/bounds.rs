//! The two-sided estimate for a push isotopy realizing a braid: a certified
//! lower bound `μ(U)(L_h − 2 diam U)/C` on its L¹ length from braid data, and
//! the measured L¹ length of the explicit isotopy as an upper bound.

use std::f64::consts::PI;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::braids::{artin_word, free_reduce, lh_lower, winding_matrix, WindingMatrix};
use crate::confspace::{lift_trajectories, Configuration};
use crate::error::{Error, Result};
use crate::flows::{point_push_avoiding, Flow, KeepClear, Polyline, COLLAR_MARGIN};
use crate::functionals::{
    cprime_estimate, lipschitz_constant, lp_isotopy_length, QuadratureSpec, DEFAULT_CPRIME_GRID,
};
use crate::geometry::{Surface, SurfacePoint, DISC_RADIUS};
use crate::parallel;

/// Product `U = U₁ × … × U_n` of disjoint round discs of radius `ρ` around marked points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NeighborhoodRepr", into = "NeighborhoodRepr")]
pub struct ProductNeighborhood {
    surface: Surface,
    centers: Vec<SurfacePoint>,
    rho: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NeighborhoodRepr {
    surface: Surface,
    centers: Vec<[f64; 2]>,
    rho: f64,
}

impl TryFrom<NeighborhoodRepr> for ProductNeighborhood {
    type Error = Error;
    fn try_from(r: NeighborhoodRepr) -> Result<Self> {
        ProductNeighborhood::new(r.surface, &r.centers, r.rho)
    }
}

impl From<ProductNeighborhood> for NeighborhoodRepr {
    fn from(u: ProductNeighborhood) -> Self {
        NeighborhoodRepr {
            surface: u.surface,
            centers: u.centers.iter().map(|c| [c.x, c.y]).collect(),
            rho: u.rho,
        }
    }
}

impl ProductNeighborhood {
    pub fn new(surface: Surface, centers: &[[f64; 2]], rho: f64) -> Result<Self> {
        if !surface.is_planar() {
            return Err(Error::Invalid("neighborhoods are supported on the disc and the torus".into()));
        }
        if centers.is_empty() {
            return Err(Error::Invalid("at least one center is required".into()));
        }
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::Invalid(format!("radius {rho} must be positive")));
        }
        let pts = centers
            .iter()
            .map(|c| surface.chart_point(c[0], c[1]))
            .collect::<Result<Vec<_>>>()?;
        let u = Self {
            surface,
            centers: pts,
            rho,
        };
        match surface {
            Surface::UnitAreaDisc => {
                if let Some(c) = u.centers.iter().find(|c| c.norm2d() + rho > DISC_RADIUS - COLLAR_MARGIN) {
                    return Err(Error::Invalid(format!(
                        "disc around ({}, {}) reaches the boundary collar",
                        c.x, c.y
                    )));
                }
            }
            _ => {
                if rho >= 0.25 {
                    return Err(Error::Invalid(format!("radius {rho} must be below 1/4 on the torus")));
                }
            }
        }
        if u.n() > 1 && u.s_min() <= 2.0 * rho {
            return Err(Error::Invalid(format!(
                "discs overlap: closest centers are {} apart, radius {rho}",
                u.s_min()
            )));
        }
        Ok(u)
    }

    /// Four points on a square of side 0.3 centered in the unit-area disc, `ρ = 0.02`.
    pub fn default_square() -> Self {
        Self::new(
            Surface::UnitAreaDisc,
            &[[-0.15, -0.15], [0.15, -0.15], [0.15, 0.15], [-0.15, 0.15]],
            0.02,
        )
        .expect("default neighborhood is valid")
    }

    pub fn surface(&self) -> Surface {
        self.surface
    }

    pub fn centers(&self) -> &[SurfacePoint] {
        &self.centers
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn n(&self) -> usize {
        self.centers.len()
    }

    pub fn with_rho(&self, rho: f64) -> Result<Self> {
        let c: Vec<[f64; 2]> = self.centers.iter().map(|c| [c.x, c.y]).collect();
        Self::new(self.surface, &c, rho)
    }

    /// `μ(U) = (πρ²)ⁿ`.
    pub fn mu(&self) -> f64 {
        (PI * self.rho * self.rho).powi(self.n() as i32)
    }

    /// Smallest distance between two centers (infinite for one center).
    pub fn s_min(&self) -> f64 {
        Configuration(self.centers.clone())
            .closest_pair(self.surface)
            .map_or(f64::INFINITY, |(_, _, d)| d)
    }

    pub fn center_configuration(&self) -> Configuration {
        Configuration(self.centers.clone())
    }

    /// A uniform point of `U`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Configuration {
        let pts = self
            .centers
            .iter()
            .map(|c| {
                let r = self.rho * rng.random::<f64>().sqrt();
                let a = rng.random_range(0.0..2.0 * PI);
                self.surface.normalize(*c + SurfacePoint::planar(r * a.cos(), r * a.sin()))
            })
            .collect();
        Configuration(pts)
    }
}

/// Upper bound on the `g_b`-diameter of `U` through straight chart segments:
/// their gⁿ-length is at most `2ρ√n` and along them `d ≥ (s_min − 2ρ)/√2`.
pub fn diam_gb_upper(u: &ProductNeighborhood) -> f64 {
    if u.n() < 2 {
        // d ≡ 1 for a single point
        return 2.0 * u.rho;
    }
    2.0 * u.rho * (u.n() as f64).sqrt() * 2f64.sqrt() / (u.s_min() - 2.0 * u.rho)
}

/// A braid realized by pushing one marked point along a closed polyline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PushBraid {
    /// 0-based index of the pushed center.
    pub moving: usize,
    pub gamma: Polyline,
    pub tube_radius: f64,
}

impl PushBraid {
    /// The point `moving` circles `around` `k` times on a loop of radius
    /// `loop_radius` (negative `k` turns clockwise).
    pub fn encircling(
        u: &ProductNeighborhood,
        moving: usize,
        around: usize,
        k: i32,
        loop_radius: f64,
        tube_radius: f64,
    ) -> Result<Self> {
        if moving >= u.n() || around >= u.n() || moving == around {
            return Err(Error::Invalid(format!("bad marked points {moving} and {around}")));
        }
        let gamma = Polyline::lasso(u.surface, u.centers[moving], u.centers[around], loop_radius, k, 48)?;
        Ok(Self {
            moving,
            gamma,
            tube_radius,
        })
    }

    /// The push isotopy. Its rigid core (radius `tube/2`) must carry the whole
    /// disc `U_moving`, and the tube must stay clear of the other discs.
    pub fn realize(&self, u: &ProductNeighborhood) -> Result<Flow> {
        if self.moving >= u.n() {
            return Err(Error::Invalid(format!("moving index {} out of range", self.moving)));
        }
        let s = u.surface;
        let gap = s.dist(self.gamma.start(), u.centers[self.moving]);
        if gap > 1e-9 {
            return Err(Error::Invalid(format!(
                "polyline starts {gap} away from marked point {}",
                self.moving
            )));
        }
        if 0.5 * self.tube_radius < u.rho {
            return Err(Error::Invalid(format!(
                "push core radius {} is smaller than the neighborhood radius {}",
                0.5 * self.tube_radius,
                u.rho
            )));
        }
        let keep: Vec<KeepClear> = u
            .centers
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != self.moving)
            .map(|(_, &c)| KeepClear { point: c, radius: u.rho })
            .collect();
        point_push_avoiding(s, &self.gamma, self.tube_radius, &keep)
    }
}

/// Braid data of the loop traced by the marked points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BraidInfo {
    /// Freely reduced Artin word (disc only).
    pub word: Option<Vec<i32>>,
    pub winding: WindingMatrix,
}

/// The certified chain for one braid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub label: String,
    pub surface: Surface,
    pub n: usize,
    pub rho: f64,
    pub braid: BraidInfo,
    #[serde(rename = "L_h_lower")]
    pub lh_lower: f64,
    /// Full-twist power attaining the center-reduced minimum.
    pub center_shift: i64,
    pub diam_gb_upper: f64,
    #[serde(rename = "mu_U")]
    pub mu_u: f64,
    pub cprime: f64,
    #[serde(rename = "C")]
    pub c: f64,
    pub lower_bound: f64,
    /// True when `L_h_lower ≤ 2 diam_gb_upper` and the lower bound is clamped to 0.
    pub vacuous: bool,
    pub upper_bound: f64,
    pub sigma: f64,
    /// `lower_bound ≤ upper_bound + 3σ`.
    pub ok: bool,
    pub chain: String,
    pub quadrature: QuadratureSpec,
}

pub const CHAIN: &str = "lower_bound = max(0, mu_U * (L_h_lower - 2 * diam_gb_upper)) / C, \
     the configuration-space length bound divided by the Lipschitz constant of the embedding";

/// [`assemble_bound_for_flow`] for a push braid, with `C′` estimated on the default grid.
pub fn assemble_bound(u: &ProductNeighborhood, braid: &PushBraid, q: &QuadratureSpec) -> Result<BoundReport> {
    let cp = cprime_estimate(u.surface, DEFAULT_CPRIME_GRID, q)?;
    let fl = braid.realize(u)?;
    assemble_bound_for_flow(u, &fl, "push", q, cp.value)
}

/// Reads the braid off the marked points moved by `fl`, then combines
/// `L_h_lower`, `diam_gb_upper`, `μ(U)` and `C` into the lower bound and
/// measures `l₁(fl)` as the upper bound. `fl` must map every `U_i` to itself.
pub fn assemble_bound_for_flow(
    u: &ProductNeighborhood,
    fl: &Flow,
    label: &str,
    q: &QuadratureSpec,
    cprime: f64,
) -> Result<BoundReport> {
    let s = u.surface;
    if fl.surface() != s {
        return Err(Error::Invalid("flow and neighborhood live on different surfaces".into()));
    }
    let path = lift_trajectories(fl, &u.center_configuration(), q.time_steps)?;
    let winding = winding_matrix(s, &path)?;
    let reduced = lh_lower(&winding, s)?;
    let word = if s == Surface::UnitAreaDisc {
        Some(free_reduce(&artin_word(s, &path)?).letters)
    } else {
        None
    };
    let n = u.n();
    let c = lipschitz_constant(n.max(2), cprime)?;
    let diam = diam_gb_upper(u);
    let mu = u.mu();
    let raw = mu * (reduced.lh_lower - 2.0 * diam) / c;
    let upper = lp_isotopy_length(fl, 1.0, q)?;
    let lower = raw.max(0.0);
    Ok(BoundReport {
        label: label.to_string(),
        surface: s,
        n,
        rho: u.rho,
        braid: BraidInfo { word, winding },
        lh_lower: reduced.lh_lower,
        center_shift: reduced.shift,
        diam_gb_upper: diam,
        mu_u: mu,
        cprime,
        c,
        lower_bound: lower,
        vacuous: raw <= 0.0,
        upper_bound: upper.value,
        sigma: upper.std_error,
        ok: lower <= upper.value + 3.0 * upper.std_error,
        chain: CHAIN.to_string(),
        quadrature: *q,
    })
}

/// Geometry of the growth experiment: point `moving` circles `around` k times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrowthConfig {
    pub neighborhood: ProductNeighborhood,
    pub moving: usize,
    pub around: usize,
    pub loop_radius: f64,
    pub tube_radius: f64,
    pub k_max: usize,
}

impl Default for GrowthConfig {
    fn default() -> Self {
        Self {
            neighborhood: ProductNeighborhood::default_square(),
            moving: 0,
            around: 1,
            loop_radius: 0.12,
            tube_radius: 0.05,
            k_max: 5,
        }
    }
}

/// One row of the growth table (CSV column names follow the serde names).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthRow {
    pub k: usize,
    #[serde(rename = "L_h_lower")]
    pub lh_lower: f64,
    pub diam_gb_upper: f64,
    #[serde(rename = "mu_U")]
    pub mu_u: f64,
    #[serde(rename = "C")]
    pub c: f64,
    pub lower: f64,
    pub upper: f64,
    pub sigma: f64,
}

/// Least-squares line `lower ≈ slope · L_h_lower + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthTable {
    pub rows: Vec<GrowthRow>,
    /// `2 · diam_gb_upper`: rows with `L_h_lower` above it have positive lower bounds.
    pub threshold: f64,
    pub cprime: f64,
    /// Fit over the rows past the threshold; `None` with fewer than two distinct `L_h_lower`.
    pub fit: Option<LinearFit>,
    pub seeds: Vec<u64>,
}

impl GrowthTable {
    /// Every row has `lower ≤ upper + 3σ`.
    pub fn sound(&self) -> bool {
        self.rows.iter().all(|r| r.lower <= r.upper + 3.0 * r.sigma)
    }

    /// Past the threshold, `lower` rises strictly whenever `L_h_lower` rises
    /// and stays equal when `L_h_lower` does; it never decreases anywhere.
    pub fn monotone(&self) -> bool {
        self.rows.windows(2).all(|w| {
            let (a, b) = (&w[0], &w[1]);
            if b.lower < a.lower {
                return false;
            }
            if b.lh_lower > self.threshold && b.lh_lower > a.lh_lower {
                b.lower > a.lower
            } else {
                true
            }
        })
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let r_squared = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Some(LinearFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
        points: n,
    })
}

/// Runs [`assemble_bound_for_flow`] on the k-fold encircling braid for
/// `k = 1..=k_max`. Row `k` uses the seed `derive_seed(q.seed, k)`; `C′` is
/// estimated once with `q`.
pub fn growth_experiment(cfg: &GrowthConfig, q: &QuadratureSpec) -> Result<GrowthTable> {
    if cfg.k_max < 3 {
        return Err(Error::Invalid(format!("k_max = {} is below 3", cfg.k_max)));
    }
    q.validate()?;
    let u = &cfg.neighborhood;
    let cprime = cprime_estimate(u.surface, DEFAULT_CPRIME_GRID, q)?.value;
    let seeds: Vec<u64> = (1..=cfg.k_max).map(|k| parallel::derive_seed(q.seed, k as u64)).collect();
    let reports = parallel::map_indexed(q.exec, cfg.k_max, |i| -> Result<BoundReport> {
        let k = i + 1;
        let braid = PushBraid::encircling(u, cfg.moving, cfg.around, k as i32, cfg.loop_radius, cfg.tube_radius)?;
        let fl = braid.realize(u)?;
        assemble_bound_for_flow(u, &fl, &format!("k={k}"), &q.with_seed(seeds[i]), cprime)
    });
    let mut rows = Vec::with_capacity(cfg.k_max);
    for (i, r) in reports.into_iter().enumerate() {
        let r = r?;
        rows.push(GrowthRow {
            k: i + 1,
            lh_lower: r.lh_lower,
            diam_gb_upper: r.diam_gb_upper,
            mu_u: r.mu_u,
            c: r.c,
            lower: r.lower_bound,
            upper: r.upper_bound,
            sigma: r.sigma,
        });
    }
    let threshold = 2.0 * diam_gb_upper(u);
    let past: Vec<&GrowthRow> = rows.iter().filter(|r| r.lh_lower > threshold).collect();
    let xs: Vec<f64> = past.iter().map(|r| r.lh_lower).collect();
    let ys: Vec<f64> = past.iter().map(|r| r.lower).collect();
    Ok(GrowthTable {
        fit: linear_fit(&xs, &ys),
        rows,
        threshold,
        cprime,
        seeds,
    })
}
