//! Command-line front end: configuration merging, command dispatch, artifacts
//! and the run manifest.
//!
//! Settings come from built-in defaults, then an optional JSON config file
//! (`--config`), then command-line flags. The seed flag also reads
//! `LPDIAM_SEED`. Every run writes its artifacts and a `manifest.json` into the
//! output directory.

use std::f64::consts::PI;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounds::{assemble_bound, growth_experiment, GrowthConfig, ProductNeighborhood, PushBraid};
use crate::braids::{artin_word, free_reduce, lh_lower, winding_matrix};
use crate::confspace::ConfigPath;
use crate::error::Error;
use crate::flows::{area_distortion, point_push, rotation_flow, Flow, Polyline};
use crate::functionals::{
    cprime_estimate, embedding_ratio, lipschitz_constant, lp_isotopy_length, MeasureReport, QuadratureSpec,
    ReportConstants,
};
use crate::geometry::Surface;
use crate::parallel::Execution;
use crate::verify::{run_all, VerifyOptions};

#[derive(Debug, Parser)]
#[command(name = "lpdiam", version, about = "L^p lengths of area-preserving isotopies and braid lower bounds")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON file with run settings; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory for artifacts and the manifest.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, env = "LPDIAM_SEED")]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub surface: Option<Surface>,
    #[arg(long, global = true)]
    pub n: Option<usize>,
    #[arg(long, global = true)]
    pub p: Option<f64>,
    #[arg(long, global = true)]
    pub mc_samples: Option<usize>,
    #[arg(long, global = true)]
    pub time_steps: Option<usize>,
    /// Input file: flow JSON (measure), trajectory CSV (braid), polyline JSON
    /// (push) or push-braid JSON (bound).
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    /// Run Monte Carlo loops on one thread.
    #[arg(long, global = true)]
    pub sequential: bool,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Estimate C′ for the surface and C for n points.
    Constant {
        #[arg(long)]
        grid: Option<usize>,
    },
    /// Measure the L^p length of a flow (default: one full rotation of the disc).
    Measure {
        /// Also compare with the configuration-space length for n points.
        #[arg(long)]
        embedding: bool,
    },
    /// Winding matrix, Artin word and center-reduced bound of a closed trajectory CSV.
    Braid,
    /// Build a finger-push flow along a polyline (default: k loops around a neighbor).
    Push {
        #[arg(long)]
        tube: Option<f64>,
        #[arg(long)]
        k: Option<i32>,
    },
    /// Assemble the two-sided bound for one push braid.
    Bound {
        #[arg(long)]
        k: Option<i32>,
        #[arg(long)]
        rho: Option<f64>,
    },
    /// Lower and upper bounds for k = 1..kmax encircling braids.
    Grow {
        #[arg(long)]
        kmax: Option<usize>,
        #[arg(long)]
        rho: Option<f64>,
    },
    /// Run the invariant checks of every module.
    Verify {
        #[arg(long)]
        quick: bool,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Constant { .. } => "constant",
            Command::Measure { .. } => "measure",
            Command::Braid => "braid",
            Command::Push { .. } => "push",
            Command::Bound { .. } => "bound",
            Command::Grow { .. } => "grow",
            Command::Verify { .. } => "verify",
        }
    }
}

/// Fully resolved run settings; also the schema of the `--config` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: Option<String>,
    pub surface: Surface,
    pub n: usize,
    pub p: f64,
    pub seed: u64,
    pub mc_samples: usize,
    pub time_steps: usize,
    pub input: Option<PathBuf>,
    pub out: PathBuf,
    pub grid: usize,
    pub k: i32,
    pub kmax: usize,
    pub rho: f64,
    pub tube: f64,
    pub embedding: bool,
    pub quick: bool,
    pub sequential: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let q = QuadratureSpec::default();
        let g = GrowthConfig::default();
        Self {
            command: None,
            surface: Surface::UnitAreaDisc,
            n: 4,
            p: 1.0,
            seed: 0,
            mc_samples: q.mc_samples,
            time_steps: q.time_steps,
            input: None,
            out: PathBuf::from("out"),
            grid: 16,
            k: 1,
            kmax: g.k_max,
            rho: g.neighborhood.rho(),
            tube: g.tube_radius,
            embedding: false,
            quick: false,
            sequential: false,
        }
    }
}

impl RunConfig {
    /// Defaults, then the config file, then flags.
    pub fn resolve(cli: &Cli) -> Result<Self, Error> {
        let mut c = match &cli.config {
            Some(path) => serde_json::from_str::<RunConfig>(&fs::read_to_string(path)?)
                .map_err(|e| Error::Invalid(format!("config {}: {e}", path.display())))?,
            None => RunConfig::default(),
        };
        let name = cli.command.name();
        if let Some(cmd) = &c.command {
            if cmd != name {
                return Err(Error::Invalid(format!("config is for command {cmd:?}, not {name:?}")));
            }
        }
        c.command = Some(name.to_string());
        macro_rules! take {
            ($($field:ident),*) => { $(if let Some(v) = cli.$field.clone() { c.$field = v; })* };
        }
        take!(surface, n, p, seed, mc_samples, time_steps, out);
        if cli.input.is_some() {
            c.input = cli.input.clone();
        }
        c.sequential |= cli.sequential;
        match &cli.command {
            Command::Constant { grid } => take_opt(&mut c.grid, grid),
            Command::Measure { embedding } => c.embedding |= embedding,
            Command::Push { tube, k } => {
                take_opt(&mut c.tube, tube);
                take_opt(&mut c.k, k);
            }
            Command::Bound { k, rho } => {
                take_opt(&mut c.k, k);
                take_opt(&mut c.rho, rho);
            }
            Command::Grow { kmax, rho } => {
                take_opt(&mut c.kmax, kmax);
                take_opt(&mut c.rho, rho);
            }
            Command::Verify { quick } => c.quick |= quick,
            Command::Braid => {}
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), Error> {
        let bad = |m: String| Err(Error::Invalid(m));
        if self.n == 0 {
            return bad("n must be at least 1".into());
        }
        if !(self.p >= 1.0 && self.p.is_finite()) {
            return bad(format!("p = {} must be >= 1", self.p));
        }
        if self.grid < 16 {
            return bad(format!("grid = {} is below 16", self.grid));
        }
        if self.kmax < 3 {
            return bad(format!("kmax = {} is below 3", self.kmax));
        }
        if !(self.rho > 0.0 && self.tube > 0.0) {
            return bad("rho and tube must be positive".into());
        }
        self.quadrature().validate()
    }

    pub fn quadrature(&self) -> QuadratureSpec {
        QuadratureSpec {
            mc_samples: self.mc_samples,
            time_steps: self.time_steps,
            seed: self.seed,
            exec: if self.sequential { Execution::Sequential } else { Execution::Parallel },
        }
    }
}

fn take_opt<T: Clone>(dst: &mut T, src: &Option<T>) {
    if let Some(v) = src {
        *dst = v.clone();
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Run(#[from] Error),
    #[error("invariant checks failed: {}", .0.join(", "))]
    ChecksFailed(Vec<String>),
}

impl CliError {
    /// 2 for invalid input, 3 for numerical failures and failed checks.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Run(e) if e.is_numerical() => 3,
            CliError::Run(_) => 2,
            CliError::ChecksFailed(_) => 3,
        }
    }
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: u64,
    config: &'a RunConfig,
    artifacts: Vec<String>,
}

struct Artifacts {
    dir: PathBuf,
    names: Vec<String>,
}

impl Artifacts {
    fn new(dir: &Path) -> Result<Self, Error> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            names: Vec::new(),
        })
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), Error> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        fs::write(self.dir.join(name), s)?;
        self.names.push(name.to_string());
        Ok(())
    }

    fn file(&mut self, name: &str) -> Result<BufWriter<File>, Error> {
        self.names.push(name.to_string());
        Ok(BufWriter::new(File::create(self.dir.join(name))?))
    }
}

fn parse_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, Error> {
    Ok(serde_json::from_str(text)?)
}

fn read_input(c: &RunConfig) -> Result<Option<String>, Error> {
    c.input.as_ref().map(fs::read_to_string).transpose().map_err(Error::from)
}

/// Parses arguments, runs the command and writes its artifacts. Returns the
/// lines printed as a summary.
pub fn run(cli: &Cli) -> Result<Vec<String>, CliError> {
    let cfg = RunConfig::resolve(cli)?;
    let mut out = Artifacts::new(&cfg.out)?;
    let q = cfg.quadrature();
    let s = cfg.surface;
    let mut summary = Vec::new();
    let mut failed = Vec::new();

    match &cli.command {
        Command::Constant { .. } => {
            let cp = cprime_estimate(s, cfg.grid, &q)?;
            let c = if cfg.n >= 2 { Some(lipschitz_constant(cfg.n, cp.value)?) } else { None };
            let report = MeasureReport {
                op: "constant".into(),
                surface: s,
                n: cfg.n,
                p: cfg.p,
                value: cp.value,
                std_error: cp.std_error,
                seed: q.seed,
                mc_samples: q.mc_samples,
                time_steps: q.time_steps,
                constants: ReportConstants { cprime: Some(cp.value), c },
            };
            out.json("constant.json", &report)?;
            summary.push(format!("C' = {:.6} ± {:.6} ({s})", cp.value, cp.std_error));
            if let Some(c) = c {
                summary.push(format!("C = {c:.6} (n = {})", cfg.n));
            }
        }
        Command::Measure { .. } => {
            let fl: Flow = match read_input(&cfg)? {
                Some(text) => parse_json(&text)?,
                None => rotation_flow(2.0 * PI)?,
            };
            let est = lp_isotopy_length(&fl, cfg.p, &q)?;
            let mut report = MeasureReport::new("lp_isotopy_length", fl.surface(), cfg.n, cfg.p, &est);
            summary.push(format!("l_{} = {:.6} ± {:.6}", cfg.p, est.value, est.std_error));
            if cfg.embedding {
                let e = embedding_ratio(&fl, cfg.n, &q)?;
                report.constants = ReportConstants { cprime: Some(e.cprime), c: Some(e.c) };
                summary.push(format!("embedding: lhs {:.6} rhs {:.6} ok {}", e.lhs, e.rhs, e.ok));
                if !e.ok {
                    failed.push("embedding".to_string());
                }
                out.json("embedding.json", &e)?;
            }
            out.json("measure.json", &report)?;
        }
        Command::Braid => {
            let text = read_input(&cfg)?.ok_or_else(|| Error::Invalid("braid needs --input <trajectories.csv>".into()))?;
            let path = ConfigPath::read_csv(s, text.as_bytes())?;
            let w = winding_matrix(s, &path)?;
            let bound = lh_lower(&w, s)?;
            let word = if s == Surface::UnitAreaDisc { Some(artin_word(s, &path)?) } else { None };
            let reduced = word.as_ref().map(free_reduce);
            #[derive(Serialize)]
            struct BraidReport {
                surface: Surface,
                n: usize,
                winding: crate::braids::WindingMatrix,
                word: Option<crate::braids::BraidWord>,
                reduced: Option<crate::braids::BraidWord>,
                #[serde(rename = "L_h_lower")]
                lh_lower: f64,
                center_shift: i64,
            }
            summary.push(format!("L_h_lower = {:.6}, max |w| = {}", bound.lh_lower, w.max_abs().round()));
            if let Some(r) = &reduced {
                summary.push(format!("reduced word: {:?}", r.letters));
            }
            out.json(
                "braid.json",
                &BraidReport {
                    surface: s,
                    n: path.n_points(),
                    winding: w,
                    word,
                    reduced,
                    lh_lower: bound.lh_lower,
                    center_shift: bound.shift,
                },
            )?;
        }
        Command::Push { .. } => {
            let fl = match read_input(&cfg)? {
                Some(text) => {
                    let gamma: Polyline = parse_json(&text)?;
                    point_push(s, &gamma, cfg.tube)?
                }
                None => {
                    let u = ProductNeighborhood::default_square();
                    PushBraid::encircling(&u, 0, 1, cfg.k, 0.12, cfg.tube)?.realize(&u)?
                }
            };
            let distortion = area_distortion(&fl, 1000.max(cfg.mc_samples / 16), q.seed, q.exec)?;
            summary.push(format!(
                "{} segments, {} RK4 steps, area distortion {distortion:.3e}",
                fl.segments().len(),
                fl.rk4_steps()
            ));
            out.json("flow.json", &fl)?;
            out.json(
                "push.json",
                &serde_json::json!({"segments": fl.segments().len(), "rk4_steps": fl.rk4_steps(), "area_distortion": distortion}),
            )?;
        }
        Command::Bound { .. } => {
            let u = ProductNeighborhood::default_square().with_rho(cfg.rho)?;
            let braid = match read_input(&cfg)? {
                Some(text) => parse_json(&text)?,
                None => PushBraid::encircling(&u, 0, 1, cfg.k, 0.12, cfg.tube)?,
            };
            let r = assemble_bound(&u, &braid, &q)?;
            summary.push(format!(
                "L_h_lower {:.4}, lower {:.6e}, upper {:.6} ± {:.6}, ok {}",
                r.lh_lower, r.lower_bound, r.upper_bound, r.sigma, r.ok
            ));
            if !r.ok {
                failed.push("bound soundness".to_string());
            }
            out.json("bound.json", &r)?;
        }
        Command::Grow { .. } => {
            if s != Surface::UnitAreaDisc || cfg.n != 4 {
                return Err(Error::Invalid("grow runs on the disc with n = 4 marked points".into()).into());
            }
            let gc = GrowthConfig {
                neighborhood: ProductNeighborhood::default_square().with_rho(cfg.rho)?,
                k_max: cfg.kmax,
                tube_radius: cfg.tube,
                ..GrowthConfig::default()
            };
            let t = growth_experiment(&gc, &q)?;
            t.write_csv(out.file("growth.csv")?)?;
            out.json("growth.json", &t)?;
            for r in &t.rows {
                summary.push(format!("k={} L_h={:.4} lower={:.6e} upper={:.6} ± {:.6}", r.k, r.lh_lower, r.lower, r.upper, r.sigma));
            }
            if !t.sound() {
                failed.push("growth soundness".to_string());
            }
        }
        Command::Verify { .. } => {
            let checks = run_all(&VerifyOptions {
                quick: cfg.quick,
                seed: cfg.seed,
                exec: q.exec,
            });
            for c in &checks {
                summary.push(format!("[{}] {}: {}", if c.passed { "pass" } else { "FAIL" }, c.name, c.detail));
                if !c.passed {
                    failed.push(c.name.to_string());
                }
            }
            out.json("verify.json", &checks)?;
        }
    }

    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command: cli.command.name(),
        seed: cfg.seed,
        config: &cfg,
        artifacts: out.names.clone(),
    };
    out.json("manifest.json", &manifest)?;
    if failed.is_empty() {
        Ok(summary)
    } else {
        for line in &summary {
            eprintln!("{line}");
        }
        Err(CliError::ChecksFailed(failed))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("lpdiam").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        fs::write(&path, r#"{"surface": "torus", "n": 3, "seed": 9, "mc_samples": 500}"#).unwrap();
        let cli = parse(&["constant", "--config", path.to_str().unwrap(), "--seed", "4"]);
        let c = RunConfig::resolve(&cli).unwrap();
        assert_eq!(c.surface, Surface::FlatTorus);
        assert_eq!((c.n, c.seed, c.mc_samples), (3, 4, 500));
        assert_eq!(c.command.as_deref(), Some("constant"));
    }

    #[test]
    fn unknown_config_fields_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        fs::write(&path, r#"{"surface": "disc", "colour": 1}"#).unwrap();
        let cli = parse(&["constant", "--config", path.to_str().unwrap()]);
        let e = RunConfig::resolve(&cli).unwrap_err();
        assert!(matches!(e, Error::Invalid(_)));
        assert_eq!(CliError::from(e).exit_code(), 2);
    }

    #[test]
    fn mismatched_command_and_bad_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        fs::write(&path, r#"{"command": "grow"}"#).unwrap();
        assert!(RunConfig::resolve(&parse(&["constant", "--config", path.to_str().unwrap()])).is_err());
        assert!(RunConfig::resolve(&parse(&["measure", "--p", "0.5"])).is_err());
        assert!(RunConfig::resolve(&parse(&["grow", "--kmax", "2"])).is_err());
        assert!(RunConfig::resolve(&parse(&["measure", "--mc-samples", "10"])).is_err());
    }

    #[test]
    fn exit_codes() {
        let numeric = CliError::from(Error::TubeTooWide { tube_radius: 1.0, reason: "x".into() });
        assert_eq!(numeric.exit_code(), 3);
        assert_eq!(CliError::from(Error::Invalid("x".into())).exit_code(), 2);
        assert_eq!(CliError::ChecksFailed(vec!["a".into()]).exit_code(), 3);
    }
}
