//! Command-line driver: `effective`, `solve`, `verify` and `birkhoff`.

pub mod config;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::Serialize;
use vkrod::cell::{CellDiscretization, EffectiveForm, Regime, RegimeSpec};
use vkrod::geometry::MeshStats;
use vkrod::microstructure::birkhoff_average;
use vkrod::rod::{energy_parts, galerkin_solve, solve_rod, BoundaryCondition, FormProfile, RodSolution};
use vkrod::verify::convergence_sweep;

use config::{ConfigError, RodMethod, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "vkrod", about = "Homogenized von Kármán rod models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Worker thread cap; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Effective form a0 of the cell problem.
    Effective(Common),
    /// Limit rod equilibrium.
    Solve(Common),
    /// Scaled-energy sweep towards the homogenized limit.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Comma-separated, strictly decreasing thicknesses.
        #[arg(long, value_delimiter = ',')]
        h_list: Option<Vec<f64>>,
    },
    /// Birkhoff averages of a phase observable.
    Birkhoff(Common),
}

#[derive(Debug, thiserror::Error)]
enum RunError {
    #[error("configuration error: {0}")]
    Config(#[from] ConfigError),
    #[error("solver error: {0}")]
    Solver(#[from] vkrod::Error),
    #[error("output error: {0}")]
    Output(String),
}

impl RunError {
    fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Solver(_) | RunError::Output(_) => 1,
        }
    }
}

/// Runs the tool on `argv` (including the program name) and returns the exit
/// code: 0 on success, 2 on usage or configuration errors, 1 on solver
/// failures.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("vkrod: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), RunError> {
    let (common, h_list) = match &cli.command {
        Command::Effective(c) | Command::Solve(c) | Command::Birkhoff(c) => (c, None),
        Command::Verify { common, h_list } => (common, h_list.as_deref()),
    };
    let cfg = config::load(&common.config)?;
    let threads = match common.threads {
        Some(0) => return Err(ConfigError::invalid("--threads", "must be at least 1").into()),
        Some(n) => n,
        None => 0,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| RunError::Output(e.to_string()))?;
    let out = Output::new(common.out.clone().or_else(|| cfg.output.dir.clone()).unwrap_or_else(|| PathBuf::from(".")));
    let base = common.config.parent().map(Path::to_path_buf).unwrap_or_default();
    pool.install(|| match &cli.command {
        Command::Effective(_) => effective(&cfg, &out),
        Command::Solve(_) => solve(&cfg, &base, &out),
        Command::Verify { .. } => verify(&cfg, h_list, &out),
        Command::Birkhoff(_) => birkhoff(&cfg, &out),
    })
}

struct Output {
    dir: PathBuf,
}

impl Output {
    fn new(dir: PathBuf) -> Self {
        Self { dir }
    }

    fn path(&self, name: &str) -> Result<PathBuf, RunError> {
        std::fs::create_dir_all(&self.dir).map_err(|e| RunError::Output(format!("{}: {e}", self.dir.display())))?;
        Ok(self.dir.join(name))
    }

    fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), RunError> {
        let path = self.path(name)?;
        let mut text = serde_json::to_string_pretty(value).map_err(|e| RunError::Output(e.to_string()))?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| RunError::Output(format!("{}: {e}", path.display())))
    }

    fn csv(&self, name: &str, header: &[&str], rows: impl Iterator<Item = Vec<f64>>) -> Result<(), RunError> {
        let path = self.path(name)?;
        let err = |e: csv::Error| RunError::Output(format!("{}: {e}", path.display()));
        let mut w = csv::Writer::from_path(&path).map_err(err)?;
        w.write_record(header).map_err(err)?;
        for row in rows {
            w.write_record(row.iter().map(|v| format_float(*v))).map_err(err)?;
        }
        w.flush().map_err(|e| RunError::Output(e.to_string()))
    }
}

/// 17 significant digits.
pub fn format_float(v: f64) -> String {
    let v = if v == 0.0 { 0.0 } else { v };
    format!("{v:.16e}")
}

fn rows3(m: &Matrix3<f64>) -> Vec<[f64; 3]> {
    (0..3).map(|i| [m[(i, 0)], m[(i, 1)], m[(i, 2)]]).collect()
}

fn rows4(m: &Matrix4<f64>) -> Vec<[f64; 4]> {
    (0..4).map(|i| [m[(i, 0)], m[(i, 1)], m[(i, 2)], m[(i, 3)]]).collect()
}

#[derive(Serialize)]
struct EffectiveOutput {
    seed: u64,
    regime: RegimeSpec,
    a0: Vec<[f64; 4]>,
    a0_1: Vec<[f64; 3]>,
    rho0: [f64; 3],
    residuals: [f64; 4],
    iterations: [usize; 4],
    n_dofs: usize,
    mesh_stats: MeshStats,
}

fn compute_effective(cfg: &RunConfig) -> Result<(EffectiveForm, RegimeSpec, MeshStats), RunError> {
    let micro = cfg.realization()?;
    let cs = cfg.cross_section()?;
    let regime = cfg.regime_for(&micro)?;
    let disc = CellDiscretization::new(&regime, &cs, &micro).map_err(|e| ConfigError::invalid("regime", e))?;
    let eff = disc.effective_form()?;
    Ok((eff, regime, cs.stats()))
}

fn effective(cfg: &RunConfig, out: &Output) -> Result<(), RunError> {
    let seed = cfg.effective_seed()?;
    let (eff, regime, mesh_stats) = compute_effective(cfg)?;
    let diag = eff.diagnostics.expect("computed forms carry diagnostics");
    out.json(
        "effective.json",
        &EffectiveOutput {
            seed,
            regime,
            a0: rows4(&eff.a0),
            a0_1: rows3(&eff.a0_1),
            rho0: vec3(&eff.rho0_coeffs),
            residuals: diag.residuals,
            iterations: diag.iterations,
            n_dofs: diag.n_dofs,
            mesh_stats,
        },
    )
}

fn a0_from_rows(rows: &[[f64; 4]; 4]) -> Matrix4<f64> {
    Matrix4::from_fn(|i, j| rows[i][j])
}

/// Effective form for `solve`: inline block, then `effective_file`, then an
/// in-process cell solve.
fn resolve_effective(cfg: &RunConfig, base: &Path) -> Result<EffectiveForm, RunError> {
    let rows = if let Some(b) = &cfg.effective {
        Some(b.a0)
    } else if let Some(p) = &cfg.effective_file {
        let path = base.join(p);
        let text = std::fs::read_to_string(&path).map_err(|source| ConfigError::Io { path: path.clone(), source })?;
        let b: config::EffectiveBlock = serde_json::from_str(&text).map_err(|e| ConfigError::invalid("effective_file", e))?;
        Some(b.a0)
    } else {
        None
    };
    match rows {
        Some(r) => {
            let a0 = a0_from_rows(&r);
            if r.iter().flatten().any(|v| !v.is_finite()) || (a0 - a0.transpose()).amax() > 1e-12 * a0.amax() {
                return Err(ConfigError::invalid("effective.a0", "must be a finite symmetric 4x4 matrix").into());
            }
            Ok(EffectiveForm::from_a0(a0).map_err(|e| ConfigError::invalid("effective.a0", e))?)
        }
        None => Ok(compute_effective(cfg)?.0),
    }
}

#[derive(Serialize)]
struct SolveSummary {
    seed: u64,
    bc: BoundaryCondition,
    method: &'static str,
    n_nodes: usize,
    a0: Vec<[f64; 4]>,
    energy: f64,
    elastic: f64,
    work: f64,
}

pub const SOLVE_HEADER: [&str; 11] = ["x1", "u", "v2", "v3", "w", "wp", "v2pp", "v3pp", "E11t", "E11h", "Mt"];

fn solve_rows(sol: &RodSolution) -> impl Iterator<Item = Vec<f64>> + '_ {
    let m = &sol.moments;
    (0..sol.grid.len()).map(move |i| {
        vec![
            sol.grid[i],
            sol.u[i],
            sol.v2[i],
            sol.v3[i],
            sol.w[i],
            sol.wp[i],
            sol.v2pp[i],
            sol.v3pp[i],
            m.e11_tilde[i],
            m.e11_hat[i],
            m.m_torsion[i],
        ]
    })
}

fn solve(cfg: &RunConfig, base: &Path, out: &Output) -> Result<(), RunError> {
    let load = cfg.load_spec()?;
    let seed = if cfg.material.is_some() || cfg.microstructure.is_some() { cfg.effective_seed()? } else { cfg.seed.unwrap_or(0) };
    if cfg.rod.n_nodes < 3 {
        return Err(ConfigError::invalid("rod.n_nodes", "must be at least 3").into());
    }
    let eff = resolve_effective(cfg, base)?;
    let profile = FormProfile::from(eff);
    let (sol, method) = match cfg.rod.method {
        RodMethod::Shooting => (solve_rod(&profile, &load, cfg.bc, cfg.rod.n_nodes)?, "shooting"),
        RodMethod::Galerkin => (galerkin_solve(&profile, &load, cfg.bc, cfg.rod.n_modes, cfg.rod.n_nodes)?, "galerkin"),
    };
    let parts = energy_parts(&profile, &sol, &load)?;
    out.csv("solve.csv", &SOLVE_HEADER, solve_rows(&sol))?;
    out.json(
        "solve.json",
        &SolveSummary {
            seed,
            bc: cfg.bc,
            method,
            n_nodes: sol.grid.len(),
            a0: rows4(&eff.a0),
            energy: parts.total(),
            elastic: parts.elastic,
            work: parts.work,
        },
    )
}

#[derive(Serialize)]
struct VerifySummary {
    seed: u64,
    regime: RegimeSpec,
    macro_strain: [f64; 4],
    length: f64,
    limit_value: f64,
    fitted_rate: Option<f64>,
}

fn verify(cfg: &RunConfig, h_list: Option<&[f64]>, out: &Output) -> Result<(), RunError> {
    let seed = cfg.effective_seed()?;
    let micro = cfg.realization()?;
    let cs = cfg.cross_section()?;
    let regime = cfg.regime_for(&micro)?;
    if !matches!(regime.regime, Regime::GammaFinite { .. }) {
        return Err(ConfigError::invalid("regime", "verify supports gamma_finite only").into());
    }
    let (ms, length) = cfg.macro_strain()?;
    let hs = cfg.h_list(h_list)?;
    let res = convergence_sweep(&hs, &regime, &cs, &micro, &ms, length)?;
    out.csv(
        "verify.csv",
        &["h", "epsilon", "energy", "abs_error"],
        res.rows.iter().map(|r| vec![r.h, r.epsilon, r.scaled_energy, r.abs_error]),
    )?;
    out.json(
        "verify.json",
        &VerifySummary {
            seed,
            regime,
            macro_strain: ms.as_vector(),
            length,
            limit_value: res.limit_value,
            fitted_rate: res.fitted_rate,
        },
    )
}

#[derive(Serialize)]
struct BirkhoffSummary {
    seed: u64,
    ensemble_mean: f64,
    windows: Vec<f64>,
}

fn birkhoff(cfg: &RunConfig, out: &Output) -> Result<(), RunError> {
    let seed = cfg.effective_seed()?;
    let micro = cfg.realization()?;
    let b = cfg.birkhoff.as_ref().ok_or_else(|| ConfigError::invalid("birkhoff", "missing block"))?;
    if b.observable.len() != micro.n_phases() {
        return Err(ConfigError::invalid(
            "birkhoff.observable",
            format!("{} values for {} phases", b.observable.len(), micro.n_phases()),
        )
        .into());
    }
    if b.windows.is_empty() || b.windows.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
        return Err(ConfigError::invalid("birkhoff.windows", "need at least one positive window").into());
    }
    let mean = micro.ensemble_mean(&b.observable);
    let mut rows = Vec::with_capacity(b.windows.len());
    for &t in &b.windows {
        let avg = birkhoff_average(&micro, &b.observable, t)?;
        rows.push(vec![t, avg, (avg - mean).abs()]);
    }
    out.csv("birkhoff.csv", &["T", "average", "abs_error"], rows.into_iter())?;
    out.json("birkhoff.json", &BirkhoffSummary { seed, ensemble_mean: mean, windows: b.windows.clone() })
}

fn vec3(v: &Vector3<f64>) -> [f64; 3] {
    [v[0], v[1], v[2]]
}
