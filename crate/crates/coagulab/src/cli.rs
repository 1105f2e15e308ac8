//! Command-line front end: `steady`, `sweep` and `powerlaw`.
//!
//! Every option can also come from a TOML file given with `--config`; flags win over the file.
//!
//! Exit codes: 0 success, 1 configuration or precondition error, 2 non-convergence, 3 regime
//! error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::continuum::{flux_continuous, powerlaw_solution, Measure};
use crate::diagnostics::{
    fit_exponent, flux_profile, partial_fluxes, rescaled_profile, ExponentFit, GeometricBins,
    PartialFlux,
};
use crate::discrete::{SourceSpec, TruncatedSystem};
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::steady::{self, FixedPointOptions};
use crate::sweep::{self, format_real, SweepConfig, Thresholds};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;
pub const EXIT_REGIME: i32 = 3;

pub const STATE_FILE: &str = "steady_state.csv";
pub const FLUX_FILE: &str = "flux.csv";
pub const STEADY_SUMMARY_FILE: &str = "steady_summary.json";
pub const POWERLAW_FILE: &str = "powerlaw.json";
pub const COLLAPSE_FILE: &str = "collapse.csv";

pub const STATE_HEADER: &str = "alpha,n_alpha";
pub const FLUX_HEADER: &str = "alpha,J_alpha";
pub const COLLAPSE_HEADER: &str = "R,x_lo,x_hi,x_mid,mass,density,powerlaw_density";

#[derive(Debug, Parser)]
#[command(name = "coagulab", version, about = "Stationary coagulation with a source")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one truncated system to steady state and write its state, flux and summary.
    Steady(SteadyArgs),
    /// Solve over a ladder of cutoffs and classify the regime.
    Sweep(SweepArgs),
    /// Constant-flux power law of the continuous problem.
    Powerlaw(PowerlawArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML file with any of the options below (kebab-case keys).
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// constant, additive, product, brownian, free-molecular or power.
    #[arg(long)]
    pub kernel: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub gamma: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub lambda: Option<f64>,
    /// Kernel prefactor (constant value for the constant kernel).
    #[arg(long)]
    pub prefactor: Option<f64>,
    /// Injection rates as `size:rate[,size:rate...]`.
    #[arg(long, value_name = "SPEC")]
    pub source: Option<String>,
    #[arg(long)]
    pub tol: Option<f64>,
    /// Worker threads.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverChoice {
    FixedPoint,
    TimeMarching,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SteadyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub rstar: Option<usize>,
    /// March in time up to this horizon (implies the time-marching solver).
    #[arg(long)]
    pub max_time: Option<f64>,
    #[arg(long, value_enum)]
    pub method: Option<SolverChoice>,
    /// Pair-ratio cut for the flux decomposition at z = R*/4.
    #[arg(long)]
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Ascending cutoffs, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub cutoffs: Option<Vec<usize>>,
    #[arg(long)]
    pub ratio_threshold: Option<f64>,
    #[arg(long)]
    pub doublings: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct PowerlawArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Flux carried by the power law.
    #[arg(long)]
    pub j0: Option<f64>,
    #[arg(long)]
    pub quad_tol: Option<f64>,
    /// Points where the flux is checked, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub x_grid: Option<Vec<f64>>,
    /// Directory of an earlier `steady` run; writes rescaled profiles at R = R*/16, R*/8, R*/4.
    #[arg(long, value_name = "DIR")]
    pub collapse: Option<PathBuf>,
}

/// Declarative experiment description; the file form of the command-line options.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kernel: Option<String>,
    pub gamma: Option<f64>,
    pub lambda: Option<f64>,
    pub prefactor: Option<f64>,
    pub source: Option<String>,
    pub rstar: Option<usize>,
    pub tol: Option<f64>,
    pub max_time: Option<f64>,
    pub method: Option<SolverChoice>,
    pub delta: Option<f64>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
    pub quad_tol: Option<f64>,
    pub cutoffs: Option<Vec<usize>>,
    pub ratio_threshold: Option<f64>,
    pub doublings: Option<usize>,
    pub j0: Option<f64>,
    pub x_grid: Option<Vec<f64>>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    /// Values set in `over` replace those in `self`.
    pub fn overlay(self, over: ExperimentConfig) -> Self {
        macro_rules! pick {
            ($($f:ident),*) => { Self { $($f: over.$f.or(self.$f)),* } };
        }
        pick!(
            kernel, gamma, lambda, prefactor, source, rstar, tol, max_time, method, delta, jobs,
            out, quad_tol, cutoffs, ratio_threshold, doublings, j0, x_grid
        )
    }

    pub fn kernel_spec(&self) -> Result<KernelSpec> {
        let name = self
            .kernel
            .as_deref()
            .ok_or_else(|| Error::Parameter("no kernel given (use --kernel)".into()))?;
        KernelSpec::by_name(name, self.gamma, self.lambda, self.prefactor)
    }

    pub fn source_spec(&self) -> Result<SourceSpec> {
        parse_source(self.source.as_deref().unwrap_or("1:1"))
    }

    pub fn tol(&self) -> f64 {
        self.tol.unwrap_or(steady::DEFAULT_TOL)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("."))
    }
}

fn from_common(c: &CommonArgs) -> ExperimentConfig {
    ExperimentConfig {
        kernel: c.kernel.clone(),
        gamma: c.gamma,
        lambda: c.lambda,
        prefactor: c.prefactor,
        source: c.source.clone(),
        tol: c.tol,
        jobs: c.jobs,
        out: c.out.clone(),
        ..Default::default()
    }
}

fn resolve(common: &CommonArgs, flags: ExperimentConfig) -> Result<ExperimentConfig> {
    let file = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    Ok(file.overlay(flags))
}

/// Parses `size:rate[,size:rate...]`.
pub fn parse_source(spec: &str) -> Result<SourceSpec> {
    let mut pairs = Vec::new();
    for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (a, v) = item
            .split_once(':')
            .ok_or_else(|| Error::Parameter(format!("source entry `{item}` is not size:rate")))?;
        let a: usize = a
            .trim()
            .parse()
            .map_err(|_| Error::Parameter(format!("bad source size `{a}`")))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| Error::Parameter(format!("bad source rate `{v}`")))?;
        pairs.push((a, v));
    }
    SourceSpec::from_pairs(&pairs)
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Integration { .. } | Error::Quadrature(_) | Error::Degenerate(_) => {
            EXIT_NOT_CONVERGED
        }
        Error::Regime { .. } => EXIT_REGIME,
        _ => EXIT_CONFIG,
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let result = match &cli.command {
        Command::Steady(a) => cmd_steady(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Powerlaw(a) => cmd_powerlaw(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        None => Ok(f()),
        Some(0) => Err(Error::Parameter("--jobs must be at least 1".into())),
        Some(n) => Ok(rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Parameter(format!("cannot start {n} workers: {e}")))?
            .install(f)),
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn to_json<T: Serialize>(path: &Path, value: &T) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| Error::format(path, e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelInfo {
    pub name: String,
    pub gamma: f64,
    pub lambda: f64,
    pub prefactor: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadySummary {
    pub kernel: KernelInfo,
    /// `(size, rate)` pairs.
    pub source: Vec<(usize, f64)>,
    pub r_star: usize,
    pub method: String,
    pub converged: bool,
    pub residual: f64,
    pub iterations: usize,
    pub time: f64,
    pub flux_plateau: f64,
    pub flux_plateau_deviation: f64,
    pub plateau_window: (usize, usize),
    pub fit: Option<ExponentFit>,
    pub partial_flux: PartialFlux,
}

fn kernel_info(cfg: &ExperimentConfig, kernel: &KernelSpec) -> KernelInfo {
    KernelInfo {
        name: kernel.name().to_string(),
        gamma: kernel.envelope.gamma,
        lambda: kernel.envelope.lambda,
        prefactor: cfg.prefactor,
    }
}

fn source_pairs(source: &SourceSpec) -> Vec<(usize, f64)> {
    source
        .rates()
        .iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(i, v)| (i + 1, *v))
        .collect()
}

pub fn cmd_steady(args: &SteadyArgs) -> Result<i32> {
    let cfg = resolve(
        &args.common,
        ExperimentConfig {
            rstar: args.rstar,
            max_time: args.max_time,
            method: args.method,
            delta: args.delta,
            ..from_common(&args.common)
        },
    )?;
    let kernel = cfg.kernel_spec()?;
    let source = cfg.source_spec()?;
    let r_star = cfg
        .rstar
        .ok_or_else(|| Error::Parameter("no cutoff given (use --rstar)".into()))?;
    let tol = cfg.tol();
    let delta = cfg.delta.unwrap_or(0.05);
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Parameter(format!("--delta must lie in (0, 1), got {delta}")));
    }
    let method = cfg.method.unwrap_or(if cfg.max_time.is_some() {
        SolverChoice::TimeMarching
    } else {
        SolverChoice::FixedPoint
    });
    let system = TruncatedSystem::new(kernel.clone(), source.clone(), r_star)?;
    let out = cfg.out_dir();

    let result = with_jobs(cfg.jobs, || match method {
        SolverChoice::FixedPoint => steady::solve_fixed_point_with(
            &system,
            &FixedPointOptions {
                tol,
                ..Default::default()
            },
        ),
        SolverChoice::TimeMarching => {
            steady::solve_time_marching(&system, tol, cfg.max_time.unwrap_or(1e6))
        }
    })??;
    let n = &result.state;
    let flux = flux_profile(&system, n)?;
    let z_hi = r_star as f64 / 4.0;
    let fit = fit_exponent(n, (r_star as f64 / 32.0).min(16.0), z_hi).ok();
    let partial = partial_fluxes(&system, n, z_hi.max(1.0), delta)?;

    create_dir(&out)?;
    let mut state_csv = format!("{STATE_HEADER}\n");
    for (i, v) in n.iter().enumerate() {
        let _ = writeln!(state_csv, "{},{}", i + 1, format_real(*v));
    }
    write_file(&out.join(STATE_FILE), &state_csv)?;
    let mut flux_csv = format!("{FLUX_HEADER}\n");
    for (a, j) in flux.j.iter().enumerate() {
        let _ = writeln!(flux_csv, "{a},{}", format_real(*j));
    }
    write_file(&out.join(FLUX_FILE), &flux_csv)?;

    let summary = SteadySummary {
        kernel: kernel_info(&cfg, &kernel),
        source: source_pairs(&source),
        r_star,
        method: result.method.to_string(),
        converged: result.converged,
        residual: result.residual_inf,
        iterations: result.iterations,
        time: result.time,
        flux_plateau: flux.plateau_value,
        flux_plateau_deviation: flux.plateau_deviation,
        plateau_window: flux.window,
        fit,
        partial_flux: partial,
    };
    let path = out.join(STEADY_SUMMARY_FILE);
    write_file(&path, &to_json(&path, &summary)?)?;

    println!(
        "{} R*={r_star} method={} converged={} residual={:.3e}",
        summary.kernel.name, summary.method, summary.converged, summary.residual
    );
    println!(
        "flux plateau {:.6} (max deviation {:.3e} on [{}, {}])",
        flux.plateau_value, flux.plateau_deviation, flux.window.0, flux.window.1
    );
    if let Some(fit) = &summary.fit {
        println!("tail slope {:.4} +- {:.4}", fit.slope, fit.stderr);
    }
    if result.converged {
        Ok(EXIT_OK)
    } else {
        eprintln!(
            "error: not converged: residual {:.3e} above tolerance {tol:.1e}",
            result.residual_inf
        );
        Ok(EXIT_NOT_CONVERGED)
    }
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<i32> {
    let cfg = resolve(
        &args.common,
        ExperimentConfig {
            cutoffs: args.cutoffs.clone(),
            ratio_threshold: args.ratio_threshold,
            doublings: args.doublings,
            ..from_common(&args.common)
        },
    )?;
    let defaults = Thresholds::default();
    let config = SweepConfig {
        solver: FixedPointOptions {
            tol: cfg.tol(),
            ..Default::default()
        },
        thresholds: Thresholds {
            ratio_threshold: cfg.ratio_threshold.unwrap_or(defaults.ratio_threshold),
            doublings_required: cfg.doublings.unwrap_or(defaults.doublings_required),
        },
        jobs: cfg.jobs,
        ..SweepConfig::new(
            cfg.kernel_spec()?,
            cfg.source_spec()?,
            cfg.cutoffs.clone().unwrap_or_else(|| vec![128, 256, 512, 1024]),
        )
    };
    let report = sweep::run_sweep(&config)?;
    sweep::persist(&report, &cfg.out_dir())?;
    println!("R_star  converged  moment_def  ratio");
    let ratios = report.ratios();
    for (i, row) in report.rows.iter().enumerate() {
        let ratio = if i == 0 {
            String::from("-")
        } else {
            format!("{:.4}", ratios[i - 1])
        };
        println!(
            "{:>6}  {:>9}  {:.6e}  {ratio}",
            row.r_star, row.converged, row.moment_def
        );
    }
    println!(
        "classification {} (analytic prediction {}{})",
        report.classification,
        report.analytic_prediction,
        if report.borderline { ", borderline" } else { "" }
    );
    Ok(EXIT_OK)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerlawReport {
    pub kernel: KernelInfo,
    pub g_value: f64,
    pub prefactor: f64,
    pub exponent: f64,
    pub j0: f64,
    pub quad_tol: f64,
    /// `(x, J(x), |J(x) - J0| / J0)`.
    pub flux_check: Vec<(f64, f64, f64)>,
}

/// Reads a `steady_state.csv` back into `n_1..n_R*`.
pub fn read_state(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(STATE_HEADER) {
        return Err(Error::format(path, "unexpected header"));
    }
    let mut n = Vec::new();
    for (i, line) in lines.enumerate() {
        let bad = || Error::format(path, format!("line {}: `{line}`", i + 2));
        let (a, v) = line.split_once(',').ok_or_else(bad)?;
        if a.parse::<usize>().map_err(|_| bad())? != i + 1 {
            return Err(bad());
        }
        n.push(v.parse::<f64>().map_err(|_| bad())?);
    }
    Ok(n)
}

pub fn read_steady_summary(path: &Path) -> Result<SteadySummary> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

pub fn cmd_powerlaw(args: &PowerlawArgs) -> Result<i32> {
    let mut flags = ExperimentConfig {
        j0: args.j0,
        quad_tol: args.quad_tol,
        x_grid: args.x_grid.clone(),
        ..from_common(&args.common)
    };
    let prior = match &args.collapse {
        Some(dir) => {
            let summary = read_steady_summary(&dir.join(STEADY_SUMMARY_FILE))?;
            let state = read_state(&dir.join(STATE_FILE))?;
            flags.kernel = flags.kernel.or(Some(summary.kernel.name.clone()));
            flags.gamma = flags.gamma.or(Some(summary.kernel.gamma));
            flags.lambda = flags.lambda.or(Some(summary.kernel.lambda));
            flags.prefactor = flags.prefactor.or(summary.kernel.prefactor);
            Some((dir.clone(), summary, state))
        }
        None => None,
    };
    let cfg = resolve(&args.common, flags)?;
    let kernel = cfg.kernel_spec()?;
    let quad_tol = cfg.quad_tol.unwrap_or(1e-8);
    let j0 = match (cfg.j0, &prior) {
        (Some(j), _) => j,
        (None, Some((_, summary, _))) => summary.source.iter().map(|(a, v)| *a as f64 * v).sum(),
        (None, None) => 1.0,
    };
    let grid = cfg.x_grid.clone().unwrap_or_else(|| vec![1.0, 10.0, 100.0]);
    if grid.is_empty() {
        return Err(Error::Parameter("empty x grid".into()));
    }

    let p = match powerlaw_solution(&kernel, j0, quad_tol) {
        Ok(p) => p,
        Err(Error::Regime { value, reason }) => {
            eprintln!(
                "error: {} kernel has |gamma + 2 lambda| = {value:.6} >= 1: {reason}",
                kernel.name()
            );
            return Ok(EXIT_REGIME);
        }
        Err(e) => return Err(e),
    };
    let mut flux_check = Vec::new();
    for &x in &grid {
        let j = flux_continuous(Measure::PowerLaw(&p), &kernel, x, quad_tol)?;
        flux_check.push((x, j, (j - j0).abs() / j0));
    }
    println!("kernel {}", kernel.name());
    println!("G = {:.9}", p.g_value);
    println!("c_s = {:.6}", p.prefactor);
    println!("exponent = {:.6}", p.exponent);
    println!("{:>12}  {:>14}  {:>10}", "x", "J(x)", "rel dev");
    for (x, j, d) in &flux_check {
        println!("{x:>12.4}  {j:>14.9}  {d:>10.3e}");
    }
    let report = PowerlawReport {
        kernel: kernel_info(&cfg, &kernel),
        g_value: p.g_value,
        prefactor: p.prefactor,
        exponent: p.exponent,
        j0,
        quad_tol,
        flux_check,
    };
    let out = match (&cfg.out, &prior) {
        (Some(out), _) => Some(out.clone()),
        (None, Some((dir, _, _))) => Some(dir.clone()),
        (None, None) => None,
    };
    if let Some(out) = &out {
        create_dir(out)?;
        let path = out.join(POWERLAW_FILE);
        write_file(&path, &to_json(&path, &report)?)?;
    }
    if let (Some((_, summary, state)), Some(out)) = (&prior, &out) {
        let r_star = summary.r_star as f64;
        let bins = GeometricBins::new(1.0 / 16.0, 16.0, 4)?;
        let mut csv = format!("{COLLAPSE_HEADER}\n");
        for r in [r_star / 16.0, r_star / 8.0, r_star / 4.0] {
            let h = rescaled_profile(state, r, kernel.envelope.gamma, &bins)?;
            let centers = h.centers();
            for (k, (m, rho)) in h.masses.iter().zip(h.densities()).enumerate() {
                if let (Some(m), Some(rho)) = (m, rho) {
                    let _ = writeln!(
                        csv,
                        "{},{},{},{},{},{},{}",
                        format_real(r),
                        format_real(h.edges[k]),
                        format_real(h.edges[k + 1]),
                        format_real(centers[k]),
                        format_real(*m),
                        format_real(rho),
                        format_real(p.density(centers[k]))
                    );
                }
            }
        }
        write_file(&out.join(COLLAPSE_FILE), &csv)?;
        println!("rescaled profiles written to {}", out.join(COLLAPSE_FILE).display());
    }
    Ok(EXIT_OK)
}
