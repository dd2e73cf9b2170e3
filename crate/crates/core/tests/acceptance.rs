//! Acceptance suite. Each criterion prints one PASS/FAIL line with the measured
//! numbers; the process exits nonzero if any criterion fails.
//!
//! Reference values are computed here from closed forms or from small
//! hand-written routines, never from the library's own helpers.

use std::f64::consts::PI;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use lpdiam::bounds::{assemble_bound_for_flow, GrowthConfig, PushBraid};
use lpdiam::braids::{lh_lower, winding_matrix};
use lpdiam::confspace::{
    diag_dist, escape_check, gb_length, lift_trajectories, truncate_at_length, ConfigPath, Configuration,
};
use lpdiam::flows::{area_distortion, random_flow, rotation_flow};
use lpdiam::functionals::{
    cprime_estimate, embedding_ratio_with_cprime, lp_field_norm, lp_isotopy_length, sample_configuration,
    QuadratureSpec,
};
use lpdiam::geometry::{Surface, SurfacePoint};
use lpdiam::parallel::{Execution, SampleRng};
use lpdiam::verify::{random_closed_loop, random_field, shipped_flows};
use rand::{Rng, SeedableRng};

type Outcome = Result<(bool, String), String>;
type Criterion<'a> = (&'a str, Duration, Box<dyn Fn() -> Outcome + 'a>);

fn disc_radius() -> f64 {
    1.0 / PI.sqrt()
}

fn run_cli(args: &[&str], out: &Path) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_lpdiam"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("LPDIAM_SEED")
        .output()
        .map_err(|e| e.to_string())?;
    if status.status.success() {
        Ok(())
    } else {
        Err(format!("lpdiam {args:?} failed: {}", String::from_utf8_lossy(&status.stderr)))
    }
}

fn read_json(path: &Path) -> Result<serde_json::Value, String> {
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    serde_json::from_str(&text).map_err(|e| e.to_string())
}

/// Winding of pair (i, j): lift both trajectories to the plane by unwrapping
/// each step to its nearest lattice translate, then sum wrapped angle
/// increments of the lifted difference. On the torus point j starts at the
/// translate nearest to point i; on the disc the lift is the identity.
fn reference_winding(s: Surface, path: &ConfigPath, i: usize, j: usize) -> f64 {
    let (pi, pj) = (path.configs[0].0[i], path.configs[0].0[j]);
    let nearest = |d: f64| if s == Surface::FlatTorus { d.round() } else { 0.0 };
    let lift = |z: usize| {
        let mut out = Vec::with_capacity(path.configs.len());
        let first = path.configs[0].0[z];
        let (mut x, mut y) = if z == j { (pj.x - nearest(pj.x - pi.x), pj.y - nearest(pj.y - pi.y)) } else { (first.x, first.y) };
        out.push((x, y));
        for w in path.configs.windows(2) {
            let (a, b) = (w[0].0[z], w[1].0[z]);
            let (mut dx, mut dy) = (b.x - a.x, b.y - a.y);
            dx -= nearest(dx);
            dy -= nearest(dy);
            x += dx;
            y += dy;
            out.push((x, y));
        }
        out
    };
    let (a, b) = (lift(i), lift(j));
    let angles: Vec<f64> = a.iter().zip(&b).map(|(p, q)| (q.1 - p.1).atan2(q.0 - p.0)).collect();
    let mut total = 0.0;
    for w in angles.windows(2) {
        let mut d = w[1] - w[0];
        d -= (2.0 * PI) * (d / (2.0 * PI)).round();
        total += d;
    }
    total / (2.0 * PI)
}

fn criterion_1(dir: &Path) -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    for (surface, exact) in [("disc", 2.0 * PI.sqrt()), ("torus", 4.0 * (1.0 + 2f64.sqrt()).ln())] {
        let out = dir.join(format!("c1-{surface}"));
        run_cli(&["constant", "--surface", surface, "--n", "4", "--seed", "1"], &out)?;
        let report = read_json(&out.join("constant.json"))?;
        let cp = report["value"].as_f64().ok_or("missing value")?;
        let c = report["constants"]["C"].as_f64().ok_or("missing C")?;
        let rel = cp / exact - 1.0;
        let c_exact = 9.0 * 2f64.sqrt() * cp;
        ok &= rel.abs() < 0.02 && (c - c_exact).abs() <= 1e-12 * c_exact;
        notes.push(format!("C'({surface}) = {cp:.4} vs {exact:.4} ({:+.2}%), C(4) = {c:.4}", 100.0 * rel));
    }
    Ok((ok, notes.join("; ")))
}

fn criterion_2() -> Outcome {
    let r = disc_radius();
    let exact = 4.0 * PI * PI * r * r * r / 3.0;
    let est = lp_isotopy_length(&rotation_flow(2.0 * PI).map_err(|e| e.to_string())?, 1.0, &QuadratureSpec::default())
        .map_err(|e| e.to_string())?;
    let rel = est.value / exact - 1.0;
    Ok((rel.abs() < 0.01, format!("l1 = {:.5} ± {:.5} vs {exact:.5} ({:+.3}%)", est.value, est.std_error, 100.0 * rel)))
}

fn criterion_3() -> Outcome {
    let err = |e: lpdiam::Error| e.to_string();
    let mut rng = SampleRng::seed_from_u64(31);
    let mut worst = f64::INFINITY;
    let mut violations = 0;
    let count = 1000;
    for _ in 0..count {
        let s = if rng.random::<bool>() { Surface::UnitAreaDisc } else { Surface::FlatTorus };
        let fl = random_flow(s, &mut rng).map_err(err)?;
        let n = rng.random_range(2..=4);
        let x = loop {
            let x = sample_configuration(s, n, &mut rng);
            if diag_dist(s, &x).is_ok_and(|d| d > 1e-3) {
                break x;
            }
        };
        let path = lift_trajectories(&fl, &x, 200).map_err(err)?;
        let cut = truncate_at_length(s, &path, 0.5).map_err(err)?;
        let rep = escape_check(s, &cut).map_err(err)?;
        worst = worst.min(rep.d_end / rep.d_start);
        // the library verdict and a direct comparison must agree
        let direct = rep.d_end >= rep.d_start / 2.0 - rep.tol || rep.ell > 0.5 + rep.tol;
        if !rep.ok || !direct {
            violations += 1;
        }
    }

    // One point walks straight at a fixed one until the rescaled length is ½.
    // With separation s the rescaled speed is √2|s'|/s, so s_end/s_start = exp(-1/(2√2)).
    let s = Surface::UnitAreaDisc;
    let path = ConfigPath::from_fn(20_000, |t| Configuration(vec![SurfacePoint::planar(0.0, 0.0), SurfacePoint::planar(0.4 - 0.39 * t, 0.0)]))
        .map_err(err)?;
    let cut = truncate_at_length(s, &path, 0.5).map_err(err)?;
    let ratio = diag_dist(s, cut.last()).map_err(err)? / diag_dist(s, cut.first()).map_err(err)?;
    let exact = (-1.0 / (2.0 * 2f64.sqrt())).exp();
    let rel = ratio / exact - 1.0;
    Ok((
        violations == 0 && rel.abs() < 0.005,
        format!(
            "{count} paths, {violations} violations, worst d(end)/d(start) = {worst:.4}; straight approach {ratio:.5} vs {exact:.5} ({:+.3}%)",
            100.0 * rel
        ),
    ))
}

fn criterion_4() -> Outcome {
    let err = |e: lpdiam::Error| e.to_string();
    let mut rng = SampleRng::seed_from_u64(41);
    let count = 1000;
    let (mut violations, mut mismatches, mut nontrivial) = (0, 0, 0);
    for _ in 0..count {
        let s = if rng.random::<bool>() { Surface::UnitAreaDisc } else { Surface::FlatTorus };
        let path = random_closed_loop(s, rng.random_range(2..=4), 2000, &mut rng).map_err(err)?;
        let w = winding_matrix(s, &path).map_err(err)?;
        let n = path.n_points();
        let mut max_w: f64 = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let r = reference_winding(s, &path, i, j);
                if (r - w.get(i, j)).abs() > 1e-6 {
                    mismatches += 1;
                }
                max_w = max_w.max(r.round().abs());
            }
        }
        if max_w > 0.0 {
            nontrivial += 1;
        }
        let len = gb_length(s, &path).map_err(err)?;
        let tol = 1e-6 + (len - gb_length(s, &path.subsample(2)).map_err(err)?).abs();
        if len < 2.0 * PI * max_w - tol {
            violations += 1;
        }
    }

    // Two points at ±a turning once about their midpoint: each moves at 2πa, the
    // pair at 2πa√2 in the product metric, and d = √2·a, so the length is 2π.
    let s = Surface::UnitAreaDisc;
    let a = 0.1;
    let pair = ConfigPath::from_fn(4000, |t| {
        let (c, sn) = ((2.0 * PI * t).cos(), (2.0 * PI * t).sin());
        Configuration(vec![SurfacePoint::planar(-a * c, -a * sn), SurfacePoint::planar(a * c, a * sn)])
    })
    .map_err(err)?;
    let len = gb_length(s, &pair).map_err(err)?;
    let ratio = len / (2.0 * PI * reference_winding(s, &pair, 0, 1).abs());
    Ok((
        violations == 0 && mismatches == 0 && (ratio - 1.0).abs() < 0.005,
        format!("{count} loops ({nontrivial} nontrivial), {violations} violations, {mismatches} winding mismatches; pair rotation ratio {ratio:.5}"),
    ))
}

fn criterion_5() -> Outcome {
    let err = |e: lpdiam::Error| e.to_string();
    let q = QuadratureSpec::default().with_samples(2000).with_seed(5);
    let cp = cprime_estimate(Surface::UnitAreaDisc, 16, &q).map_err(err)?.value;
    let mut rng = SampleRng::seed_from_u64(51);
    let mut worst: f64 = 0.0;
    let mut failed = 0;
    for _ in 0..20 {
        let fl = random_flow(Surface::UnitAreaDisc, &mut rng).map_err(err)?;
        let r = embedding_ratio_with_cprime(&fl, 4, &q, cp).map_err(err)?;
        // restate the 3σ comparison from the reported numbers
        let direct = r.lhs <= r.rhs + 3.0 * r.lhs_std_error.hypot(r.rhs_std_error);
        if !(r.ok && direct) {
            failed += 1;
        }
        worst = worst.max(r.ratio);
    }
    Ok((failed == 0, format!("20 flows, n = 4, {failed} failures, largest lhs/rhs = {worst:.4}")))
}

fn criterion_6() -> Outcome {
    let err = |e: lpdiam::Error| e.to_string();
    let s = Surface::UnitAreaDisc;
    let rotation = rotation_flow(2.0 * PI).map_err(err)?;
    let x = Configuration::from_chart(s, &[[-0.15, -0.15], [0.15, -0.15], [0.15, 0.15], [-0.15, 0.15]]).map_err(err)?;
    let path = lift_trajectories(&rotation, &x, 400).map_err(err)?;
    let w = winding_matrix(s, &path).map_err(err)?;
    let mut ones = true;
    for i in 0..4 {
        for j in i + 1..4 {
            ones &= (reference_winding(s, &path, i, j) - 1.0).abs() < 1e-6 && (w.get(i, j) - 1.0).abs() < 1e-3;
        }
    }
    let twist_lower = lh_lower(&w, s).map_err(err)?.lh_lower;

    let cfg = GrowthConfig::default();
    let u = &cfg.neighborhood;
    let q = QuadratureSpec::default().with_samples(500).with_seed(6);
    let cp = 2.0 * PI.sqrt();
    let mut unchanged = true;
    let mut notes = Vec::new();
    for k in 1..=3 {
        let fl = PushBraid::encircling(u, cfg.moving, cfg.around, k, cfg.loop_radius, cfg.tube_radius)
            .and_then(|b| b.realize(u))
            .map_err(err)?;
        let twisted = fl.concat(&rotation, 0.8).map_err(err)?;
        let a = assemble_bound_for_flow(u, &fl, "push", &q, cp).map_err(err)?;
        let b = assemble_bound_for_flow(u, &twisted, "push+twist", &q, cp).map_err(err)?;
        unchanged &= a.lower_bound == b.lower_bound && a.lh_lower == b.lh_lower;
        notes.push(format!("k={k}: {:.4e} / {:.4e}", a.lower_bound, b.lower_bound));
    }
    Ok((
        ones && twist_lower == 0.0 && unchanged,
        format!("twist winding all ones: {ones}, L_h_lower = {twist_lower}; lower bound without/with twist {}", notes.join(", ")),
    ))
}

fn criterion_7(dir: &Path) -> Outcome {
    let out = dir.join("c7");
    run_cli(&["grow", "--surface", "disc", "--n", "4", "--kmax", "5", "--seed", "7"], &out)?;
    let mut reader = csv::Reader::from_path(out.join("growth.csv")).map_err(|e| e.to_string())?;
    let headers = reader.headers().map_err(|e| e.to_string())?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name).ok_or(format!("missing column {name}"));
    let (ck, cl, cd, clo, cu, cs) = (col("k")?, col("L_h_lower")?, col("diam_gb_upper")?, col("lower")?, col("upper")?, col("sigma")?);
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        let f = |c: usize| rec[c].parse::<f64>().map_err(|e| e.to_string());
        rows.push((f(ck)?, f(cl)?, f(cd)?, f(clo)?, f(cu)?, f(cs)?));
    }
    if rows.len() != 5 {
        return Ok((false, format!("expected 5 rows, got {}", rows.len())));
    }
    // (a) soundness
    let sound = rows.iter().all(|r| r.3 <= r.4 + 3.0 * r.5);
    // L_h_lower of the k-fold encircling braid is 2π⌈k/2⌉ after center reduction
    let staircase = rows.iter().all(|r| (r.1 - 2.0 * PI * (r.0 / 2.0).ceil()).abs() < 1e-9);
    // (b) past the threshold, lower rises strictly with L_h_lower and never drops
    let mut monotone = true;
    for w in rows.windows(2) {
        let (a, b) = (w[0], w[1]);
        if a.1 > 2.0 * a.2 {
            monotone &= if b.1 > a.1 { b.3 > a.3 } else { b.3 >= a.3 };
        }
    }
    let past: Vec<(f64, f64)> = rows.iter().filter(|r| r.1 > 2.0 * r.2).map(|r| (r.1, r.3)).collect();
    let m = past.len() as f64;
    let (sx, sy) = past.iter().fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1));
    let (mx, my) = (sx / m, sy / m);
    let sxx: f64 = past.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = past.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = past.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = sxy * sxy / (sxx * syy);
    let fitted = slope > 0.0 && r2 > 0.99;
    let lowers: Vec<String> = rows.iter().map(|r| format!("{:.3e}", r.3)).collect();
    Ok((
        sound && staircase && monotone && fitted,
        format!(
            "sound {sound}, staircase {staircase}, monotone {monotone}, slope {slope:.3e} (R² {r2:.4}); lower = [{}], upper k=5 {:.4}",
            lowers.join(", "),
            rows[4].4
        ),
    ))
}

fn criterion_8() -> Outcome {
    let err = |e: lpdiam::Error| e.to_string();
    // RK4 on a rigid turn by 1 rad; the exact endpoint is the rotated point.
    let fl = rotation_flow(1.0).map_err(err)?;
    let p = SurfacePoint::planar(0.4, 0.1);
    let exact = SurfacePoint::planar(0.4 * 1f64.cos() - 0.1 * 1f64.sin(), 0.4 * 1f64.sin() + 0.1 * 1f64.cos());
    let mut errs = Vec::new();
    for steps in [8, 16, 32] {
        let q = fl.with_rk4_steps(steps).and_then(|f| f.advect(p, 0.0, 1.0)).map_err(err)?;
        errs.push(((q.x - exact.x).powi(2) + (q.y - exact.y).powi(2)).sqrt());
    }
    let orders: Vec<f64> = errs.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    let order_ok = orders.iter().all(|o| (o - 4.0).abs() < 0.3);

    let mut worst: f64 = 0.0;
    let mut worst_name = String::new();
    for (name, fl) in shipped_flows(81).map_err(err)? {
        let d = area_distortion(&fl, 1000, 82, Execution::Parallel).map_err(err)?;
        if d >= worst {
            worst = d;
            worst_name = name;
        }
    }

    let mut rng = SampleRng::seed_from_u64(83);
    let q = QuadratureSpec::default().with_samples(4096).with_seed(84);
    let mut holder_failures = 0;
    for _ in 0..50 {
        let s = if rng.random::<bool>() { Surface::UnitAreaDisc } else { Surface::FlatTorus };
        let f = random_field(&mut rng);
        let a = lp_field_norm(s, &f, 1.0, &q).map_err(err)?;
        let b = lp_field_norm(s, &f, 2.0, &q).map_err(err)?;
        if a.value > b.value + 3.0 * a.std_error.hypot(b.std_error) {
            holder_failures += 1;
        }
    }
    Ok((
        order_ok && worst < 1e-4 && holder_failures == 0,
        format!(
            "RK4 orders {:?}; max area distortion {worst:.2e} ({worst_name}); Hölder failures {holder_failures}/50",
            orders.iter().map(|o| format!("{o:.3}")).collect::<Vec<_>>()
        ),
    ))
}

fn main() {
    let dir = tempfile::tempdir().expect("temporary directory");
    let criteria: Vec<Criterion> = vec![
        ("1 constants", Duration::from_secs(30), Box::new(|| criterion_1(dir.path()))),
        ("2 rotation l1", Duration::from_secs(10), Box::new(criterion_2)),
        ("3 escape bound", Duration::MAX, Box::new(criterion_3)),
        ("4 winding-length", Duration::MAX, Box::new(criterion_4)),
        ("5 embedding", Duration::from_secs(300), Box::new(criterion_5)),
        ("6 full twist", Duration::MAX, Box::new(criterion_6)),
        ("7 growth", Duration::from_secs(600), Box::new(|| criterion_7(dir.path()))),
        ("8 numerics hygiene", Duration::MAX, Box::new(criterion_8)),
    ];
    // optional positional arguments select criteria by number, e.g. `-- 4 7`
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, limit, run) in &criteria {
        if !only.is_empty() && !only.iter().any(|o| name.split(' ').next() == Some(o.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let (passed, detail) = match outcome {
            Ok((p, d)) => (p && elapsed <= *limit, d),
            Err(e) => (false, format!("error: {e}")),
        };
        let budget = if *limit == Duration::MAX { String::new() } else { format!(", limit {}s", limit.as_secs()) };
        println!(
            "{} criterion {name}: {detail} [{:.1}s{budget}]",
            if passed { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
        if !passed {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
