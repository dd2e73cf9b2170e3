//! Ordered configuration spaces with the rescaled metric `|v|_{g_b} = |v|_{gⁿ} / d(x)`,
//! where `d(x) = min_{i<j} dist(x_i, x_j) / √2` is the product-metric distance
//! from `x` to the big diagonal.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flows::Flow;
use crate::geometry::{Surface, SurfacePoint, TangentVector};

/// Separation floor below which configurations are treated as coincident.
pub const EPSILON_SEP: f64 = 1e-9;
/// Maximal gⁿ-displacement per path step, as a fraction of `d(x)`.
pub const STEP_BOUND_FRACTION: f64 = 0.1;
const MAX_REFINE_DEPTH: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Configuration(pub Vec<SurfacePoint>);

impl Configuration {
    pub fn new(points: Vec<SurfacePoint>) -> Self {
        Self(points)
    }

    /// Builds a planar configuration from chart coordinates.
    pub fn from_chart(surface: Surface, coords: &[[f64; 2]]) -> Result<Self> {
        coords
            .iter()
            .map(|c| surface.chart_point(c[0], c[1]))
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn points(&self) -> &[SurfacePoint] {
        &self.0
    }

    /// Closest pair `(i, j, dist)`; `None` for fewer than two points.
    pub fn closest_pair(&self, s: Surface) -> Option<(usize, usize, f64)> {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..self.len() {
            for j in i + 1..self.len() {
                let d = s.dist(self.0[i], self.0[j]);
                if best.is_none_or(|b| d < b.2) {
                    best = Some((i, j, d));
                }
            }
        }
        best
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self(perm.iter().map(|&k| self.0[k]).collect())
    }
}

/// `n` tangent vectors, the `i`-th based at the `i`-th configuration point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConfigTangent(pub Vec<TangentVector>);

/// Diagonal distance `d(x) = min_{i<j} dist(x_i, x_j) / √2`.
///
/// A single point is infinitely far from the (empty) diagonal; we use the
/// convention `d ≡ 1` so that rescaled lengths reduce to plain lengths.
pub fn diag_dist(s: Surface, x: &Configuration) -> Result<f64> {
    match x.closest_pair(s) {
        None => Ok(1.0),
        Some((i, j, d)) if d < EPSILON_SEP => Err(Error::CoincidentPoints { i, j, separation: d }),
        Some((_, _, d)) => Ok(d / std::f64::consts::SQRT_2),
    }
}

/// Product-metric norm `sqrt(Σ |v_i|²)`.
pub fn gn_norm(s: Surface, x: &Configuration, v: &ConfigTangent) -> f64 {
    x.0.iter()
        .zip(&v.0)
        .map(|(p, w)| s.tangent_norm(*p, *w).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Rescaled norm `|v|_{gⁿ} / d(x)`.
pub fn gb_norm(s: Surface, x: &Configuration, v: &ConfigTangent) -> Result<f64> {
    if v.0.len() != x.len() {
        return Err(Error::Invalid("tangent and configuration sizes differ".into()));
    }
    Ok(gn_norm(s, x, v) / diag_dist(s, x)?)
}

/// Product-metric distance between two configurations of equal size.
pub fn gn_distance(s: Surface, a: &Configuration, b: &Configuration) -> f64 {
    a.0.iter()
        .zip(&b.0)
        .map(|(p, q)| s.dist(*p, *q).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn midpoint(s: Surface, a: &Configuration, b: &Configuration) -> Configuration {
    Configuration(a.0.iter().zip(&b.0).map(|(p, q)| s.midpoint(*p, *q)).collect())
}

/// Time-ordered configurations of a fixed number of points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigPath {
    pub times: Vec<f64>,
    pub configs: Vec<Configuration>,
}

impl ConfigPath {
    pub fn new(times: Vec<f64>, configs: Vec<Configuration>) -> Result<Self> {
        if times.len() != configs.len() || configs.is_empty() {
            return Err(Error::Invalid("path needs matching, nonempty time and configuration lists".into()));
        }
        if times.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Invalid("path times must be nondecreasing".into()));
        }
        let n = configs[0].len();
        if configs.iter().any(|c| c.len() != n) {
            return Err(Error::Invalid("all configurations of a path need the same size".into()));
        }
        Ok(Self { times, configs })
    }

    /// Samples `f(t)` at `steps + 1` uniform times on `[0, 1]`.
    pub fn from_fn(steps: usize, f: impl Fn(f64) -> Configuration) -> Result<Self> {
        let times: Vec<f64> = (0..=steps).map(|k| k as f64 / steps as f64).collect();
        let configs = times.iter().map(|&t| f(t)).collect();
        Self::new(times, configs)
    }

    pub fn n_points(&self) -> usize {
        self.configs[0].len()
    }

    pub fn len(&self) -> usize {
        self.configs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configs.is_empty()
    }

    pub fn first(&self) -> &Configuration {
        &self.configs[0]
    }

    pub fn last(&self) -> &Configuration {
        &self.configs[self.configs.len() - 1]
    }

    /// gⁿ-distance between the endpoints.
    pub fn closure_gap(&self, s: Surface) -> f64 {
        gn_distance(s, self.first(), self.last())
    }

    /// Every `stride`-th node (always keeping the last one).
    pub fn subsample(&self, stride: usize) -> Self {
        let stride = stride.max(1);
        let mut idx: Vec<usize> = (0..self.len()).step_by(stride).collect();
        if *idx.last().unwrap() != self.len() - 1 {
            idx.push(self.len() - 1);
        }
        Self {
            times: idx.iter().map(|&k| self.times[k]).collect(),
            configs: idx.iter().map(|&k| self.configs[k].clone()).collect(),
        }
    }

    /// Permutes the labels of the points in every configuration.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            times: self.times.clone(),
            configs: self.configs.iter().map(|c| c.permuted(perm)).collect(),
        }
    }

    /// Writes `t, u_1, v_1, …, u_n, v_n, d` rows (planar surfaces only).
    pub fn write_csv<W: Write>(&self, s: Surface, out: W) -> Result<()> {
        if !s.is_planar() {
            return Err(Error::Invalid("CSV export is defined for planar charts".into()));
        }
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        for i in 1..=self.n_points() {
            header.push(format!("u_{i}"));
            header.push(format!("v_{i}"));
        }
        header.push("d".into());
        w.write_record(&header)?;
        for (t, c) in self.times.iter().zip(&self.configs) {
            let mut row = vec![format!("{t}")];
            for p in c.points() {
                row.push(format!("{}", p.x));
                row.push(format!("{}", p.y));
            }
            row.push(format!("{}", diag_dist(s, c)?));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the format of [`ConfigPath::write_csv`]; the `d` column is ignored.
    pub fn read_csv<R: Read>(s: Surface, input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let headers = r.headers()?.clone();
        let cols = headers.len();
        if cols < 4 || (cols - 2) % 2 != 0 || &headers[0] != "t" || &headers[cols - 1] != "d" {
            return Err(Error::Invalid("expected columns t, u_1, v_1, …, d".into()));
        }
        let n = (cols - 2) / 2;
        let mut times = Vec::new();
        let mut configs = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let num = |k: usize| -> Result<f64> {
                rec[k]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Invalid(format!("column {k}: {e}")))
            };
            times.push(num(0)?);
            let pts = (0..n)
                .map(|i| s.chart_point(num(1 + 2 * i)?, num(2 + 2 * i)?))
                .collect::<Result<Vec<_>>>()?;
            configs.push(Configuration(pts));
        }
        Self::new(times, configs)
    }
}

/// Per-step rescaled lengths `|Δx|_{gⁿ} / d(midpoint)`.
pub fn gb_step_lengths(s: Surface, path: &ConfigPath) -> Result<Vec<f64>> {
    path.configs
        .windows(2)
        .map(|w| {
            let m = midpoint(s, &w[0], &w[1]);
            Ok(gn_distance(s, &w[0], &w[1]) / diag_dist(s, &m)?)
        })
        .collect()
}

/// Rescaled length of a path by the midpoint rule.
pub fn gb_length(s: Surface, path: &ConfigPath) -> Result<f64> {
    Ok(gb_step_lengths(s, path)?.iter().sum())
}

/// Plain gⁿ polyline length.
pub fn gn_length(s: Surface, path: &ConfigPath) -> f64 {
    path.configs.windows(2).map(|w| gn_distance(s, &w[0], &w[1])).sum()
}

/// Moves every point of `x0` along the flow, sampling at `time_steps` uniform
/// intervals merged with the flow's segment boundaries. Any interval on which
/// the gⁿ displacement exceeds `d(x)/10` is bisected by re-advecting.
pub fn lift_trajectories(fl: &Flow, x0: &Configuration, time_steps: usize) -> Result<ConfigPath> {
    let s = fl.surface();
    if x0.is_empty() {
        return Err(Error::Invalid("empty configuration".into()));
    }
    diag_dist(s, x0)?;
    let mut nodes: Vec<f64> = (0..=time_steps.max(1))
        .map(|k| k as f64 / time_steps.max(1) as f64)
        .collect();
    nodes.extend(fl.breakpoints());
    nodes.sort_by(f64::total_cmp);
    nodes.dedup_by(|a, b| (*a - *b).abs() < 1e-14);

    let mut times = vec![0.0];
    let mut configs = vec![x0.clone()];
    for w in nodes.windows(2) {
        let start = configs.last().unwrap().clone();
        refine(fl, &start, w[0], w[1], 0, &mut times, &mut configs)?;
    }
    ConfigPath::new(times, configs)
}

fn advect_config(fl: &Flow, x: &Configuration, t0: f64, t1: f64) -> Result<Configuration> {
    x.0.iter()
        .map(|p| fl.advect(*p, t0, t1))
        .collect::<Result<Vec<_>>>()
        .map(Configuration)
}

fn refine(
    fl: &Flow,
    a: &Configuration,
    ta: f64,
    tb: f64,
    depth: usize,
    times: &mut Vec<f64>,
    configs: &mut Vec<Configuration>,
) -> Result<()> {
    let s = fl.surface();
    let b = advect_config(fl, a, ta, tb)?;
    let db = diag_dist(s, &b)?;
    let bound = STEP_BOUND_FRACTION * diag_dist(s, a)?.min(db);
    if x_len(a) > 1 && gn_distance(s, a, &b) > bound && depth < MAX_REFINE_DEPTH {
        let tm = 0.5 * (ta + tb);
        refine(fl, a, ta, tm, depth + 1, times, configs)?;
        let m = configs.last().unwrap().clone();
        return refine(fl, &m, tm, tb, depth + 1, times, configs);
    }
    times.push(tb);
    configs.push(b);
    Ok(())
}

fn x_len(x: &Configuration) -> usize {
    x.len()
}

/// Outcome of the escape-bound check on one path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EscapeReport {
    pub ell: f64,
    pub d_start: f64,
    pub d_end: f64,
    pub tol: f64,
    pub ok: bool,
}

/// Checks that a path of rescaled length at most ½ ends at diagonal distance at
/// least half its starting distance. The tolerance adds a quadrature error
/// estimate (difference with the half-resolution length) to `1e-6`.
pub fn escape_check(s: Surface, path: &ConfigPath) -> Result<EscapeReport> {
    let ell = gb_length(s, path)?;
    let coarse = gb_length(s, &path.subsample(2))?;
    let tol = 1e-6 + (ell - coarse).abs();
    let d_start = diag_dist(s, path.first())?;
    let d_end = diag_dist(s, path.last())?;
    let ok = ell > 0.5 + tol || d_end >= d_start / 2.0 - tol;
    Ok(EscapeReport {
        ell,
        d_start,
        d_end,
        tol,
        ok,
    })
}

/// Cuts a path where its rescaled length reaches `ell`, interpolating the last
/// step linearly in the chart.
pub fn truncate_at_length(s: Surface, path: &ConfigPath, ell: f64) -> Result<ConfigPath> {
    let steps = gb_step_lengths(s, path)?;
    let mut acc = 0.0;
    let mut times = vec![path.times[0]];
    let mut configs = vec![path.configs[0].clone()];
    for (k, len) in steps.iter().enumerate() {
        if acc + len >= ell && *len > 0.0 {
            let f = ((ell - acc) / len).clamp(0.0, 1.0);
            let (a, b) = (&path.configs[k], &path.configs[k + 1]);
            let pts = a
                .0
                .iter()
                .zip(&b.0)
                .map(|(p, q)| s.normalize(*p + s.displacement(*p, *q) * f))
                .collect();
            times.push(path.times[k] + f * (path.times[k + 1] - path.times[k]));
            configs.push(Configuration(pts));
            return ConfigPath::new(times, configs);
        }
        acc += len;
        times.push(path.times[k + 1]);
        configs.push(path.configs[k + 1].clone());
    }
    ConfigPath::new(times, configs)
}
