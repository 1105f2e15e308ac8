//! Truncation-convergence experiment: steady states over a ladder of cutoffs, their moments,
//! tails and fluxes, and the regime read off from how the defining moment behaves.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{fit_exponent, flux_profile, moment};
use crate::discrete::{SourceSpec, TruncatedSystem};
use crate::error::{Error, Result};
use crate::kernels::{classify_regime, KernelSpec, Regime};
use crate::steady::{solve_fixed_point_with, FixedPointOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// `M(2R*) / M(R*)` at or above this counts as growth.
    pub ratio_threshold: f64,
    pub doublings_required: usize,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            ratio_threshold: 1.04,
            doublings_required: 3,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.ratio_threshold > 1.0 && self.ratio_threshold.is_finite()) {
            return Err(Error::Parameter(format!(
                "ratio threshold must exceed 1, got {}",
                self.ratio_threshold
            )));
        }
        if self.doublings_required == 0 {
            return Err(Error::Parameter("at least one doubling is required".into()));
        }
        Ok(())
    }

    /// Ratios at or below this count as saturation.
    pub fn saturation_bound(&self) -> f64 {
        1.0 + 0.5 * (self.ratio_threshold - 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Classification {
    Existence,
    NonExistence,
    Inconclusive,
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Classification::Existence => "Existence",
            Classification::NonExistence => "NonExistence",
            Classification::Inconclusive => "Inconclusive",
        })
    }
}

impl Classification {
    pub fn matches(&self, regime: Regime) -> bool {
        matches!(
            (self, regime),
            (Classification::Existence, Regime::Existence)
                | (Classification::NonExistence, Regime::NonExistence)
        )
    }
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub kernel: KernelSpec,
    pub source: SourceSpec,
    pub cutoffs: Vec<usize>,
    pub solver: FixedPointOptions,
    /// Lower end of the tail fit; the upper end is `R*/4`. `None` picks
    /// `min(16, R*/32)`.
    pub fit_from: Option<f64>,
    pub thresholds: Thresholds,
    /// Worker threads for the rows; `None` uses the global pool.
    pub jobs: Option<usize>,
}

impl SweepConfig {
    pub fn new(kernel: KernelSpec, source: SourceSpec, cutoffs: Vec<usize>) -> Self {
        Self {
            kernel,
            source,
            cutoffs,
            solver: FixedPointOptions::default(),
            fit_from: None,
            thresholds: Thresholds::default(),
            jobs: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.thresholds.validate()?;
        if self.cutoffs.len() < 3 {
            return Err(Error::Parameter(format!(
                "a sweep needs at least 3 cutoffs, got {}",
                self.cutoffs.len()
            )));
        }
        if self.cutoffs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Parameter("cutoffs must be strictly ascending".into()));
        }
        let support = self.source.support();
        if self.cutoffs[0] <= support {
            return Err(Error::Precondition(format!(
                "cutoff {} must exceed the source support L_s = {support}",
                self.cutoffs[0]
            )));
        }
        if self.jobs == Some(0) {
            return Err(Error::Parameter("jobs must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub r_star: usize,
    pub converged: bool,
    pub residual: f64,
    /// `sum a^(gamma+lambda) n_a + sum a^(-lambda) n_a`.
    pub moment_def: f64,
    /// `sum a^((gamma+1)/2) n_a`.
    pub moment_critical: f64,
    pub slope: Option<f64>,
    pub slope_stderr: Option<f64>,
    pub flux_plateau: f64,
    pub flux_dev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub kernel: String,
    pub gamma: f64,
    pub lambda: f64,
    pub rows: Vec<SweepRow>,
    pub classification: Classification,
    pub analytic_prediction: Regime,
    pub thresholds: Thresholds,
    /// `|gamma + 2 lambda| = 1`.
    pub borderline: bool,
}

impl SweepReport {
    /// `M(R*_{k+1}) / M(R*_k)` for successive rows.
    pub fn ratios(&self) -> Vec<f64> {
        moment_ratios(&self.rows)
    }
}

fn moment_ratios(rows: &[SweepRow]) -> Vec<f64> {
    rows.windows(2)
        .map(|w| w[1].moment_def / w[0].moment_def)
        .collect()
}

/// Growth of the defining moment over the last `doublings_required` doublings decides the
/// regime.
pub fn classify_from_rows(rows: &[SweepRow], thresholds: &Thresholds) -> Result<Classification> {
    thresholds.validate()?;
    let d = thresholds.doublings_required;
    if rows.len() < d + 1 {
        return Err(Error::Precondition(format!(
            "classification needs {} rows for {d} doublings, got {}",
            d + 1,
            rows.len()
        )));
    }
    let window = &rows[rows.len() - d - 1..];
    if window.iter().any(|r| !r.converged || !r.moment_def.is_finite()) {
        return Ok(Classification::Inconclusive);
    }
    let ratios = moment_ratios(window);
    if ratios.iter().all(|&q| q >= thresholds.ratio_threshold) {
        Ok(Classification::NonExistence)
    } else if ratios.iter().all(|&q| q <= thresholds.saturation_bound()) {
        Ok(Classification::Existence)
    } else {
        Ok(Classification::Inconclusive)
    }
}

fn default_fit_from(r_star: usize) -> f64 {
    (r_star as f64 / 32.0).min(16.0)
}

fn run_row(config: &SweepConfig, r_star: usize) -> Result<SweepRow> {
    let system = TruncatedSystem::new(config.kernel.clone(), config.source.clone(), r_star)?;
    let solved = solve_fixed_point_with(&system, &config.solver)?;
    let n = &solved.state;
    let env = &config.kernel.envelope;
    let z_lo = config.fit_from.unwrap_or_else(|| default_fit_from(r_star));
    let (slope, slope_stderr) = match fit_exponent(n, z_lo, r_star as f64 / 4.0) {
        Ok(fit) => (Some(fit.slope), Some(fit.stderr)),
        Err(_) => (None, None),
    };
    let flux = flux_profile(&system, n)?;
    Ok(SweepRow {
        r_star,
        converged: solved.converged,
        residual: solved.residual_inf,
        moment_def: moment(n, env.gamma + env.lambda) + moment(n, -env.lambda),
        moment_critical: moment(n, 0.5 * (env.gamma + 1.0)),
        slope,
        slope_stderr,
        flux_plateau: flux.plateau_value,
        flux_dev: flux.plateau_deviation,
    })
}

/// Solves every cutoff (rows run in parallel) and classifies.
pub fn run_sweep(config: &SweepConfig) -> Result<SweepReport> {
    config.validate()?;
    let work = || -> Result<Vec<SweepRow>> {
        config
            .cutoffs
            .par_iter()
            .map(|&r| run_row(config, r))
            .collect()
    };
    let rows = match config.jobs {
        Some(jobs) => rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Parameter(format!("cannot start {jobs} workers: {e}")))?
            .install(work)?,
        None => work()?,
    };
    for row in rows.iter().filter(|r| !r.converged) {
        log::warn!(
            "cutoff {} did not converge (residual {:.3e})",
            row.r_star,
            row.residual
        );
    }
    let env = &config.kernel.envelope;
    Ok(SweepReport {
        kernel: config.kernel.name().to_string(),
        gamma: env.gamma,
        lambda: env.lambda,
        classification: classify_from_rows(&rows, &config.thresholds)?,
        rows,
        analytic_prediction: classify_regime(env.gamma, env.lambda),
        thresholds: config.thresholds,
        borderline: (env.criticality() - 1.0).abs() < 1e-12,
    })
}

pub const ROWS_FILE: &str = "sweep_rows.csv";
pub const SUMMARY_FILE: &str = "sweep_summary.json";
pub const CSV_HEADER: &str =
    "R_star,converged,residual,moment_def,moment_critical,slope,slope_stderr,flux_plateau,flux_dev";

/// Shortest text that reads back to the same double: 17 significant digits.
pub fn format_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn format_opt(v: Option<f64>) -> String {
    v.map(format_real).unwrap_or_default()
}

#[derive(Debug, Serialize, Deserialize)]
struct Summary {
    kernel: String,
    gamma: f64,
    lambda: f64,
    classification: Classification,
    analytic_prediction: Regime,
    thresholds: Thresholds,
    borderline: bool,
}

/// Writes `sweep_rows.csv` and `sweep_summary.json` into `dir`.
pub fn persist(report: &SweepReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    for r in &report.rows {
        let fields = [
            r.r_star.to_string(),
            r.converged.to_string(),
            format_real(r.residual),
            format_real(r.moment_def),
            format_real(r.moment_critical),
            format_opt(r.slope),
            format_opt(r.slope_stderr),
            format_real(r.flux_plateau),
            format_real(r.flux_dev),
        ];
        csv.push_str(&fields.join(","));
        csv.push('\n');
    }
    let rows_path = dir.join(ROWS_FILE);
    fs::write(&rows_path, csv).map_err(|e| Error::io(&rows_path, e))?;
    let summary = Summary {
        kernel: report.kernel.clone(),
        gamma: report.gamma,
        lambda: report.lambda,
        classification: report.classification,
        analytic_prediction: report.analytic_prediction,
        thresholds: report.thresholds,
        borderline: report.borderline,
    };
    let json_path = dir.join(SUMMARY_FILE);
    let text = serde_json::to_string_pretty(&summary)
        .map_err(|e| Error::format(&json_path, e.to_string()))?;
    fs::write(&json_path, text + "\n").map_err(|e| Error::io(&json_path, e))
}

fn parse_field<T: std::str::FromStr>(path: &Path, line: usize, name: &str, s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::format(path, format!("line {line}: bad {name} '{s}'")))
}

fn parse_opt(path: &Path, line: usize, name: &str, s: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse_field(path, line, name, s).map(Some)
    }
}

/// Reads back what [`persist`] wrote.
pub fn load(dir: &Path) -> Result<SweepReport> {
    let rows_path: PathBuf = dir.join(ROWS_FILE);
    let text = fs::read_to_string(&rows_path).map_err(|e| Error::io(&rows_path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::format(&rows_path, "unexpected header"));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let ln = i + 2;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(Error::format(&rows_path, format!("line {ln}: expected 9 fields")));
        }
        let p = &rows_path;
        rows.push(SweepRow {
            r_star: parse_field(p, ln, "R_star", f[0])?,
            converged: parse_field(p, ln, "converged", f[1])?,
            residual: parse_field(p, ln, "residual", f[2])?,
            moment_def: parse_field(p, ln, "moment_def", f[3])?,
            moment_critical: parse_field(p, ln, "moment_critical", f[4])?,
            slope: parse_opt(p, ln, "slope", f[5])?,
            slope_stderr: parse_opt(p, ln, "slope_stderr", f[6])?,
            flux_plateau: parse_field(p, ln, "flux_plateau", f[7])?,
            flux_dev: parse_field(p, ln, "flux_dev", f[8])?,
        });
    }
    let json_path = dir.join(SUMMARY_FILE);
    let json = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let s: Summary =
        serde_json::from_str(&json).map_err(|e| Error::format(&json_path, e.to_string()))?;
    Ok(SweepReport {
        kernel: s.kernel,
        gamma: s.gamma,
        lambda: s.lambda,
        rows,
        classification: s.classification,
        analytic_prediction: s.analytic_prediction,
        thresholds: s.thresholds,
        borderline: s.borderline,
    })
}
