//! Continuous side of the problem: the integral `G(a)` that fixes the power-law prefactor, the
//! constant-flux power law itself and the flux functional `J(x; f)` for power laws and binned
//! measures.

use serde::{Deserialize, Serialize};

use crate::diagnostics::Histogram;
use crate::error::{Error, Result};
use crate::kernels::{KernelSpec, Regime};
use crate::quadrature::{self, Failure, Outcome};

/// Value of `G(a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GValue {
    Finite(f64),
    Divergent { reason: String },
    /// The adaptive refinement ran out of budget; says nothing about convergence.
    Inconclusive { reason: String },
}

impl GValue {
    pub fn finite(&self) -> Option<f64> {
        match self {
            GValue::Finite(v) => Some(*v),
            _ => None,
        }
    }
}

fn check_quad_tol(quad_tol: f64) -> Result<()> {
    if quad_tol > 0.0 && quad_tol < 1.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!("quadrature tolerance must lie in (0, 1), got {quad_tol}")))
    }
}

fn check_continuous(kernel: &KernelSpec) -> Result<()> {
    if kernel.is_continuous() {
        Ok(())
    } else {
        Err(Error::Precondition(format!(
            "kernel {} is only defined on integer sizes",
            kernel.name()
        )))
    }
}

/// Internal tolerance handed to each quadrature level.
fn level_tol(quad_tol: f64) -> f64 {
    0.1 * quad_tol
}

/// `int_0^x dy int_{x-y}^inf dz g(y, z)`.
///
/// The `y` range is split at `x/2`; both halves are summed over dyadic blocks towards their
/// singular endpoint, and the inner integral over dyadic blocks in `z`.
fn flux_integral<G>(x: f64, g: &G, rel: f64) -> Outcome
where
    G: Fn(f64, f64) -> Outcome,
{
    // The inner value must be far more accurate than the outer rule can resolve, otherwise its
    // truncation jitter looks like a discontinuity.
    let inner_rel = 0.01 * rel;
    let inner = |y: f64, z0: f64| -> Outcome {
        let mut near = 0.0;
        if z0 < y {
            near = quadrature::towards(|z| g(y, z), z0, y - z0, true, inner_rel)?;
        }
        Ok(near + quadrature::tail(|z| g(y, z), z0.max(y), inner_rel)?)
    };
    let half = 0.5 * x;
    let small = quadrature::towards(|y| inner(y, x - y), 0.0, half, false, rel)?;
    let large = quadrature::towards(|u| inner(x - u, u), 0.0, half, false, rel)?;
    Ok(small + large)
}

fn kernel_at(kernel: &KernelSpec, y: f64, z: f64) -> Outcome {
    Ok(kernel.eval(y, z)?)
}

fn into_g(outcome: Outcome) -> Result<GValue> {
    match outcome {
        Ok(v) => Ok(GValue::Finite(v)),
        Err(Failure::Divergent(reason)) => Ok(GValue::Divergent { reason }),
        Err(Failure::Inconclusive(reason)) => Ok(GValue::Inconclusive { reason }),
        Err(Failure::Integrand(e)) => Err(e),
    }
}

/// `G(a) = int_0^1 dy int_{1-y}^inf dz K(y, z) y^(1-a) z^(-a)`.
///
/// At the power-law exponent `a = (3+gamma)/2` a kernel with `|gamma + 2 lambda| >= 1` is
/// reported divergent from its envelope without integrating.
pub fn g_integral(kernel: &KernelSpec, a: f64, quad_tol: f64) -> Result<GValue> {
    check_continuous(kernel)?;
    check_quad_tol(quad_tol)?;
    if !a.is_finite() {
        return Err(Error::Parameter(format!("exponent must be finite, got {a}")));
    }
    let env = &kernel.envelope;
    if (a - env.tail_exponent()).abs() <= 1e-12 && env.regime() == Regime::NonExistence {
        return Ok(GValue::Divergent {
            reason: format!(
                "|gamma + 2 lambda| = {:.6} >= 1 at the power-law exponent",
                env.criticality()
            ),
        });
    }
    let g = |y: f64, z: f64| -> Outcome { Ok(kernel_at(kernel, y, z)? * y.powf(1.0 - a) * z.powf(-a)) };
    into_g(flux_integral(1.0, &g, level_tol(quad_tol)))
}

/// Stationary constant-flux power law `c_s x^(-(3+gamma)/2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawSolution {
    pub exponent: f64,
    pub prefactor: f64,
    pub j0: f64,
    pub g_value: f64,
}

impl PowerLawSolution {
    pub fn density(&self, x: f64) -> f64 {
        self.prefactor * x.powf(-self.exponent)
    }
}

/// Power law carrying the flux `j0`: `c_s = sqrt(j0 / G((3+gamma)/2))`.
pub fn powerlaw_solution(kernel: &KernelSpec, j0: f64, quad_tol: f64) -> Result<PowerLawSolution> {
    if !(j0 > 0.0 && j0.is_finite()) {
        return Err(Error::Parameter(format!("flux must be positive and finite, got {j0}")));
    }
    let env = &kernel.envelope;
    if env.regime() == Regime::NonExistence {
        return Err(Error::Regime {
            value: env.criticality(),
            reason: format!("no constant-flux power law for the {} kernel", kernel.name()),
        });
    }
    let exponent = env.tail_exponent();
    match g_integral(kernel, exponent, quad_tol)? {
        GValue::Finite(g_value) => Ok(PowerLawSolution {
            exponent,
            prefactor: (j0 / g_value).sqrt(),
            j0,
            g_value,
        }),
        GValue::Divergent { reason } => Err(Error::Regime {
            value: env.criticality(),
            reason,
        }),
        GValue::Inconclusive { reason } => Err(Error::Quadrature(reason)),
    }
}

/// Nonnegative masses on disjoint, ordered bins over `x > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureHistogram {
    edges: Vec<f64>,
    masses: Vec<f64>,
}

impl MeasureHistogram {
    pub fn new(edges: Vec<f64>, masses: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 || masses.len() + 1 != edges.len() {
            return Err(Error::Structural(format!(
                "{} edges do not bound {} bins",
                edges.len(),
                masses.len()
            )));
        }
        if !(edges[0] > 0.0) || edges.windows(2).any(|w| !(w[1] > w[0])) || !edges[edges.len() - 1].is_finite() {
            return Err(Error::Structural("bin edges must be positive, finite and increasing".into()));
        }
        if masses.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(Error::Structural("bin masses must be finite and nonnegative".into()));
        }
        Ok(Self { edges, masses })
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn midpoints(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn support(&self) -> (f64, f64) {
        (self.edges[0], self.edges[self.edges.len() - 1])
    }
}

impl TryFrom<&Histogram> for MeasureHistogram {
    type Error = Error;

    fn try_from(h: &Histogram) -> Result<Self> {
        Self::new(
            h.edges.clone(),
            h.masses.iter().map(|m| m.unwrap_or(0.0)).collect(),
        )
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Measure<'a> {
    PowerLaw(&'a PowerLawSolution),
    Histogram(&'a MeasureHistogram),
}

/// `J(x; f) = int_0^x dy int_{x-y}^inf dz K(y, z) y f(y) f(z)`.
///
/// For a histogram, `K` and the weight `y` are taken at bin midpoints while the integration
/// region is cut out of each pair of bins exactly, treating the mass as uniform in its bin.
pub fn flux_continuous(f: Measure<'_>, kernel: &KernelSpec, x: f64, quad_tol: f64) -> Result<f64> {
    check_continuous(kernel)?;
    if !(x > 0.0 && x.is_finite()) {
        return Err(Error::Domain(format!("flux position must be positive and finite, got {x}")));
    }
    match f {
        Measure::PowerLaw(p) => {
            check_quad_tol(quad_tol)?;
            let g = |y: f64, z: f64| -> Outcome {
                Ok(kernel_at(kernel, y, z)? * y * p.density(y) * p.density(z))
            };
            match flux_integral(x, &g, level_tol(quad_tol)) {
                Ok(v) => Ok(v),
                Err(Failure::Integrand(e)) => Err(e),
                Err(Failure::Divergent(reason)) => Err(Error::Regime {
                    value: kernel.envelope.criticality(),
                    reason,
                }),
                Err(Failure::Inconclusive(reason)) => Err(Error::Quadrature(reason)),
            }
        }
        Measure::Histogram(h) => histogram_flux(h, kernel, x),
    }
}

fn histogram_flux(h: &MeasureHistogram, kernel: &KernelSpec, x: f64) -> Result<f64> {
    let mids = h.midpoints();
    let e = &h.edges;
    let mut total = 0.0;
    for i in 0..h.masses.len() {
        let (a, b) = (e[i], e[i + 1]);
        if a >= x {
            break;
        }
        let my = h.masses[i];
        if my == 0.0 {
            continue;
        }
        let y = mids[i];
        let mut inner = 0.0;
        for j in 0..h.masses.len() {
            let mz = h.masses[j];
            let (c, d) = (e[j], e[j + 1]);
            if mz == 0.0 || d <= x - b {
                continue;
            }
            let share = region_share(a, b, c, d, x);
            if share > 0.0 {
                inner += kernel.eval(y, mids[j])? * mz * share;
            }
        }
        total += y * my * inner;
    }
    Ok(total)
}

/// Fraction of the box `[a, b] x [c, d]` where `y <= x` and `y + z > x`.
fn region_share(a: f64, b: f64, c: f64, d: f64, x: f64) -> f64 {
    let top = b.min(x);
    if top <= a {
        return 0.0;
    }
    // For fixed y the admissible z-length is clamp(y - (x - d), 0, d - c).
    let len = d - c;
    let ramp = |t: f64| {
        if t <= 0.0 {
            0.0
        } else if t <= len {
            0.5 * t * t
        } else {
            len * (t - 0.5 * len)
        }
    };
    let shift = x - d;
    (ramp(top - shift) - ramp(a - shift)) / ((b - a) * len)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantFluxReport {
    /// `(x, J(x; f))` pairs.
    pub samples: Vec<(f64, f64)>,
    pub mean: f64,
    /// Largest `|J - mean| / mean` over the grid.
    pub max_deviation: f64,
    pub tol: f64,
    pub passed: bool,
}

/// Checks that `J(x; f)` is flat over `x_grid`.
pub fn verify_constant_flux(
    f: &MeasureHistogram,
    kernel: &KernelSpec,
    x_grid: &[f64],
    tol: f64,
) -> Result<ConstantFluxReport> {
    if x_grid.is_empty() {
        return Err(Error::Parameter("empty x grid".into()));
    }
    let (lo, hi) = f.support();
    if let Some(x) = x_grid.iter().find(|x| !(**x > lo && **x < hi)) {
        return Err(Error::Precondition(format!(
            "grid point {x} is outside the histogram support ({lo}, {hi})"
        )));
    }
    let samples = x_grid
        .iter()
        .map(|&x| Ok((x, histogram_flux(f, kernel, x)?)))
        .collect::<Result<Vec<_>>>()?;
    let mean = samples.iter().map(|s| s.1).sum::<f64>() / samples.len() as f64;
    let max_deviation = if mean > 0.0 {
        samples
            .iter()
            .map(|s| (s.1 - mean).abs() / mean)
            .fold(0.0, f64::max)
    } else {
        0.0
    };
    Ok(ConstantFluxReport {
        samples,
        mean,
        max_deviation,
        tol,
        passed: max_deviation <= tol,
    })
}

/// Samples `p` into geometric bins over `[x_min, x_max]` with exact bin masses.
pub fn powerlaw_histogram(
    p: &PowerLawSolution,
    x_min: f64,
    x_max: f64,
    per_octave: u32,
) -> Result<MeasureHistogram> {
    let edges = crate::diagnostics::GeometricBins::new(x_min, x_max, per_octave)?.edges();
    let e = 1.0 - p.exponent;
    let antiderivative = |x: f64| {
        if e.abs() < 1e-14 {
            p.prefactor * x.ln()
        } else {
            p.prefactor * x.powf(e) / e
        }
    };
    let masses = edges
        .windows(2)
        .map(|w| antiderivative(w[1]) - antiderivative(w[0]))
        .collect();
    MeasureHistogram::new(edges, masses)
}
