//! Braid data of closed configuration loops: pairwise winding numbers, Artin
//! words read off crossings of the x-order, and the lower bound on rescaled
//! loop length that survives the quotient by the center.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::confspace::{ConfigPath, Configuration};
use crate::error::{Error, Result};
use crate::geometry::{Surface, SurfacePoint};

/// Endpoint gap (in gⁿ) below which a path counts as closed.
pub const CLOSURE_TOL: f64 = 1e-6;
/// Distance of a raw winding entry to the nearest integer still accepted as integral.
pub const INTEGRALITY_TOL: f64 = 1e-3;

/// Pairwise winding numbers `w_ij` (in turns) of a configuration path, `i < j`.
/// The winding of `x_i - x_j` equals that of `x_j - x_i`, so lookups are symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct WindingMatrix {
    n: usize,
    raw: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindingEntry {
    /// 1-based point labels, `i < j`.
    pub i: usize,
    pub j: usize,
    pub raw: f64,
    pub rounded: i64,
}

impl WindingMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            raw: vec![0.0; n * n.saturating_sub(1) / 2],
        }
    }

    fn index(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        // row-major upper triangle
        i * (2 * self.n - i - 1) / 2 + (j - i - 1)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Entry for 0-based labels; zero on the diagonal.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i == j {
            0.0
        } else {
            self.raw[self.index(i, j)]
        }
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        let k = self.index(i, j);
        self.raw[k] = value;
    }

    pub fn add(&mut self, i: usize, j: usize, value: f64) {
        let k = self.index(i, j);
        self.raw[k] += value;
    }

    /// `(i, j, w_ij)` for all `i < j`, 0-based.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| (i + 1..self.n).map(move |j| (i, j, self.get(i, j))))
    }

    pub fn max_abs(&self) -> f64 {
        self.raw.iter().fold(0.0, |m, w| m.max(w.abs()))
    }

    /// Largest distance of an entry to the nearest integer.
    pub fn integrality_defect(&self) -> f64 {
        self.raw.iter().fold(0.0, |m, w| m.max((w - w.round()).abs()))
    }

    pub fn is_integral(&self) -> bool {
        self.integrality_defect() <= INTEGRALITY_TOL
    }

    /// The matrix with every entry shifted by `c` (multiplication by a power of the full twist).
    pub fn shifted(&self, c: f64) -> Self {
        Self {
            n: self.n,
            raw: self.raw.iter().map(|w| w + c).collect(),
        }
    }

    pub fn entries(&self) -> Vec<WindingEntry> {
        self.pairs()
            .map(|(i, j, w)| WindingEntry {
                i: i + 1,
                j: j + 1,
                raw: w,
                rounded: w.round() as i64,
            })
            .collect()
    }
}

impl Serialize for WindingMatrix {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr {
            n: usize,
            entries: Vec<WindingEntry>,
        }
        Repr {
            n: self.n,
            entries: self.entries(),
        }
        .serialize(ser)
    }
}

impl<'de> Deserialize<'de> for WindingMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Repr {
            n: usize,
            entries: Vec<WindingEntry>,
        }
        let r = Repr::deserialize(de)?;
        let mut w = WindingMatrix::zeros(r.n);
        for e in r.entries {
            if e.i == 0 || e.j == 0 || e.i > r.n || e.j > r.n || e.i == e.j {
                return Err(serde::de::Error::custom(format!("bad pair ({}, {})", e.i, e.j)));
            }
            w.set(e.i - 1, e.j - 1, e.raw);
        }
        Ok(w)
    }
}

fn angle_between(a: SurfacePoint, b: SurfacePoint) -> f64 {
    (a.x * b.y - a.y * b.x).atan2(a.x * b.x + a.y * b.y)
}

/// Accumulated turning of every relative vector `x_i - x_j` along a closed path.
///
/// On the torus relative vectors are lifted step by step from the minimal-image
/// displacements of each point; a single-point step longer than a quarter of
/// the side (half the injectivity radius) makes that lift ambiguous.
pub fn winding_matrix(s: Surface, path: &ConfigPath) -> Result<WindingMatrix> {
    let gap = path.closure_gap(s);
    if gap > CLOSURE_TOL {
        return Err(Error::NotClosed { gap });
    }
    accumulated_winding(s, path)
}

/// Same as [`winding_matrix`] without the closure requirement (raw turning).
pub fn accumulated_winding(s: Surface, path: &ConfigPath) -> Result<WindingMatrix> {
    if !s.is_planar() {
        return Err(Error::Invalid("winding numbers are defined on the disc and the torus".into()));
    }
    let n = path.n_points();
    let mut w = WindingMatrix::zeros(n);
    let mut rel: Vec<SurfacePoint> = Vec::with_capacity(w.raw.len());
    let first = path.first();
    for i in 0..n {
        for j in i + 1..n {
            rel.push(s.displacement(first.0[j], first.0[i]));
        }
    }
    for (step, win) in path.configs.windows(2).enumerate() {
        let moves: Vec<SurfacePoint> = win[0]
            .0
            .iter()
            .zip(&win[1].0)
            .map(|(a, b)| s.displacement(*a, *b))
            .collect();
        let mut k = 0;
        for i in 0..n {
            for j in i + 1..n {
                if s == Surface::FlatTorus && moves[i].norm2d().max(moves[j].norm2d()) > 0.25 {
                    return Err(Error::LiftAmbiguous { i, j, step });
                }
                let next = rel[k] + moves[i] - moves[j];
                let da = angle_between(rel[k], next);
                if da.abs() > 0.5 * PI {
                    return Err(Error::LiftAmbiguous { i, j, step });
                }
                w.raw[k] += da / (2.0 * PI);
                rel[k] = next;
                k += 1;
            }
        }
    }
    Ok(w)
}

/// A word in the Artin generators: letter `±i` is `σ_i^{±1}`, `1 <= i < n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BraidWord {
    pub n: usize,
    pub letters: Vec<i32>,
    /// Point label at each x-order position at the start (identity if empty).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub strands: Vec<usize>,
}

impl BraidWord {
    pub fn new(n: usize, letters: Vec<i32>) -> Result<Self> {
        if let Some(&bad) = letters.iter().find(|&&l| l == 0 || l.unsigned_abs() as usize >= n) {
            return Err(Error::Invalid(format!("letter {bad} out of range for {n} strands")));
        }
        Ok(Self {
            n,
            letters,
            strands: Vec::new(),
        })
    }

    fn initial_order(&self) -> Vec<usize> {
        if self.strands.len() == self.n {
            self.strands.clone()
        } else {
            (0..self.n).collect()
        }
    }

    /// Label of the strand ending at each position.
    pub fn permutation(&self) -> Vec<usize> {
        let mut order = self.initial_order();
        for &l in &self.letters {
            let i = l.unsigned_abs() as usize;
            order.swap(i - 1, i);
        }
        order
    }

    pub fn is_pure(&self) -> bool {
        self.permutation() == self.initial_order()
    }

    /// Pairwise linking read from the word: each crossing of strands `a`, `b`
    /// contributes `±½` to `w_ab`. Equals the winding matrix for closed loops.
    pub fn linking(&self) -> WindingMatrix {
        let mut order = self.initial_order();
        let mut w = WindingMatrix::zeros(self.n);
        for &l in &self.letters {
            let i = l.unsigned_abs() as usize;
            w.add(order[i - 1], order[i], 0.5 * l.signum() as f64);
            order.swap(i - 1, i);
        }
        w
    }
}

/// Cancels adjacent inverse pairs `σ_i σ_i^{-1}` until none remain.
pub fn free_reduce(w: &BraidWord) -> BraidWord {
    let mut out: Vec<i32> = Vec::with_capacity(w.letters.len());
    for &l in &w.letters {
        if out.last() == Some(&-l) {
            out.pop();
        } else {
            out.push(l);
        }
    }
    BraidWord {
        n: w.n,
        letters: out,
        strands: w.strands.clone(),
    }
}

const TIE_TOL: f64 = 1e-12;

/// Angle of the projection axis used by [`artin_word`]. A slightly tilted axis
/// keeps axis-aligned marked points (squares, grids) in general position.
pub const PROJECTION_ANGLE: f64 = 0.1;

/// Reads an Artin word off a closed disc path by sweeping time and recording
/// transpositions of the order along the projection axis (the x-axis turned
/// by [`PROJECTION_ANGLE`]). Crossings inside one sampling step are ordered by
/// their linearly interpolated crossing times. `σ_i` is positive when the
/// strand coming from the left has the smaller transverse coordinate.
pub fn artin_word(s: Surface, path: &ConfigPath) -> Result<BraidWord> {
    if s != Surface::UnitAreaDisc {
        return Err(Error::Invalid("Artin words are extracted on the disc only".into()));
    }
    let gap = path.closure_gap(s);
    if gap > CLOSURE_TOL {
        return Err(Error::NotClosed { gap });
    }
    let (sn, cs) = (-PROJECTION_ANGLE).sin_cos();
    let turn = |x: &Configuration| {
        Configuration(
            x.0.iter()
                .map(|p| SurfacePoint::planar(cs * p.x - sn * p.y, sn * p.x + cs * p.y))
                .collect(),
        )
    };
    let configs: Vec<Configuration> = path.configs.iter().map(turn).collect();
    let n = path.n_points();
    let x0 = &configs[0];
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x0.0[a].x.total_cmp(&x0.0[b].x));
    for w in order.windows(2) {
        if (x0.0[w[1]].x - x0.0[w[0]].x).abs() < TIE_TOL {
            return Err(Error::DegenerateCrossing {
                step: 0,
                reason: format!("points {} and {} share an x-coordinate at t = 0", w[0], w[1]),
            });
        }
    }
    let strands = order.clone();
    let mut letters = Vec::new();
    for (step, win) in configs.windows(2).enumerate() {
        let (a, b) = (&win[0].0, &win[1].0);
        let mut events: Vec<(f64, usize, usize)> = Vec::new();
        for p in 0..n {
            for q in p + 1..n {
                let da = a[p].x - a[q].x;
                let db = b[p].x - b[q].x;
                if (da < 0.0) != (db < 0.0) && da != db {
                    events.push((da / (da - db), p, q));
                }
            }
        }
        events.sort_by(|e, f| e.0.total_cmp(&f.0));
        for (k, &(tau, p, q)) in events.iter().enumerate() {
            let shares = |e: &(f64, usize, usize)| e.1 == p || e.1 == q || e.2 == p || e.2 == q;
            if events[k + 1..]
                .iter()
                .take_while(|e| e.0 - tau < TIE_TOL)
                .any(shares)
            {
                return Err(Error::DegenerateCrossing {
                    step,
                    reason: format!("simultaneous crossings involving points {p} and {q}"),
                });
            }
            let pos_p = order.iter().position(|&z| z == p).unwrap();
            let pos_q = order.iter().position(|&z| z == q).unwrap();
            let (lo, hi) = (pos_p.min(pos_q), pos_p.max(pos_q));
            if hi != lo + 1 {
                return Err(Error::DegenerateCrossing {
                    step,
                    reason: format!("points {p} and {q} are not adjacent when they cross"),
                });
            }
            let (left, right) = (order[lo], order[hi]);
            let y = |z: usize| a[z].y + tau * (b[z].y - a[z].y);
            let dy = y(right) - y(left);
            if dy.abs() < TIE_TOL {
                return Err(Error::DegenerateCrossing {
                    step,
                    reason: format!("points {p} and {q} collide"),
                });
            }
            let i = (lo + 1) as i32;
            letters.push(if dy > 0.0 { i } else { -i });
            order.swap(lo, hi);
        }
    }
    Ok(BraidWord {
        n,
        letters,
        strands,
    })
}

/// Lower bound on `min_c l(h·c)` over the center, from winding numbers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CenterReducedBound {
    pub lh_lower: f64,
    /// Power of the full twist attaining the minimum (0 on the torus).
    pub shift: i64,
}

/// `2π · min_c max_{i<j} |w_ij + c|` on the disc, whose pure braid center is
/// generated by the full twist (it adds 1 to every pairwise winding), and
/// `2π · max |w_ij|` on the torus, where the center does not change relative
/// windings. Ties between shifts go to the smallest `|c|`.
pub fn lh_lower(w: &WindingMatrix, surface: Surface) -> Result<CenterReducedBound> {
    if let Some((i, j, value)) = w
        .pairs()
        .find(|(_, _, v)| (v - v.round()).abs() > INTEGRALITY_TOL)
    {
        return Err(Error::NonIntegralWinding { i, j, value });
    }
    let ints: Vec<i64> = w.pairs().map(|(_, _, v)| v.round() as i64).collect();
    if ints.is_empty() {
        return Ok(CenterReducedBound {
            lh_lower: 0.0,
            shift: 0,
        });
    }
    let max_at = |c: i64| ints.iter().map(|v| (v + c).abs()).max().unwrap();
    match surface {
        Surface::UnitAreaDisc => {
            let m = ints.iter().map(|v| v.abs()).max().unwrap();
            let mut best = (max_at(0), 0i64);
            for c in -(m + 1)..=(m + 1) {
                let v = max_at(c);
                if v < best.0 || (v == best.0 && c.abs() < best.1.abs()) {
                    best = (v, c);
                }
            }
            Ok(CenterReducedBound {
                lh_lower: 2.0 * PI * best.0 as f64,
                shift: best.1,
            })
        }
        Surface::FlatTorus => Ok(CenterReducedBound {
            lh_lower: 2.0 * PI * max_at(0) as f64,
            shift: 0,
        }),
        Surface::RoundSphere => Err(Error::Invalid("sphere braids are not supported".into())),
    }
}
