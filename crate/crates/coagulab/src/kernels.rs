//! Coagulation kernels.
//!
//! Every kernel carries an envelope `(gamma, lambda, c1, c2)` such that
//!
//! ```text
//! c1 * w(x, y) <= K(x, y) <= c2 * w(x, y),   w(x, y) = x^(gamma+lambda) y^(-lambda) + y^(gamma+lambda) x^(-lambda)
//! ```
//!
//! The homogeneity `gamma` fixes the tail exponent `(3 + gamma) / 2` of stationary states, and
//! `|gamma + 2 lambda| < 1` separates kernels with stationary injection solutions from kernels
//! without them.
//!
//! Evaluation always orders its arguments as `(min, max)` before computing anything, so
//! `eval(x, y)` and `eval(y, x)` are bitwise equal for every kernel.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default half-width of the affine ramp of the interpolation bump.
pub const DEFAULT_EPSILON: f64 = 0.25;

/// Model weight `w(x, y) = x^(gamma+lambda) y^(-lambda) + y^(gamma+lambda) x^(-lambda)`.
pub fn weight(gamma: f64, lambda: f64, x: f64, y: f64) -> f64 {
    let (a, b) = ordered(x, y);
    a.powf(gamma + lambda) * b.powf(-lambda) + b.powf(gamma + lambda) * a.powf(-lambda)
}

#[inline]
fn ordered(x: f64, y: f64) -> (f64, f64) {
    if x <= y {
        (x, y)
    } else {
        (y, x)
    }
}

/// Which side of `|gamma + 2 lambda| = 1` a kernel sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    Existence,
    NonExistence,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Regime::Existence => f.write_str("Existence"),
            Regime::NonExistence => f.write_str("NonExistence"),
        }
    }
}

/// Stationary injection solutions exist iff `|gamma + 2 lambda| < 1`.
pub fn classify_regime(gamma: f64, lambda: f64) -> Regime {
    if (gamma + 2.0 * lambda).abs() < 1.0 {
        Regime::Existence
    } else {
        Regime::NonExistence
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeParams {
    pub gamma: f64,
    pub lambda: f64,
    pub c1: f64,
    pub c2: f64,
}

impl EnvelopeParams {
    pub fn new(gamma: f64, lambda: f64, c1: f64, c2: f64) -> Result<Self> {
        if !(gamma.is_finite() && lambda.is_finite() && c1.is_finite() && c2.is_finite()) {
            return Err(Error::Parameter("envelope parameters must be finite".into()));
        }
        if c1 <= 0.0 || c2 < c1 {
            return Err(Error::Parameter(format!(
                "envelope constants must satisfy 0 < c1 <= c2, got c1 = {c1}, c2 = {c2}"
            )));
        }
        Ok(Self {
            gamma,
            lambda,
            c1,
            c2,
        })
    }

    pub fn weight(&self, x: f64, y: f64) -> f64 {
        weight(self.gamma, self.lambda, x, y)
    }

    /// `|gamma + 2 lambda|`.
    pub fn criticality(&self) -> f64 {
        (self.gamma + 2.0 * self.lambda).abs()
    }

    pub fn regime(&self) -> Regime {
        classify_regime(self.gamma, self.lambda)
    }

    /// Exponent `(3 + gamma) / 2` of the constant-flux power law.
    pub fn tail_exponent(&self) -> f64 {
        0.5 * (3.0 + self.gamma)
    }
}

/// Symmetric kernel values `K[a][b]` for `1 <= a, b <= size`.
///
/// Stored as a dense square so that rows are contiguous; only the upper triangle is ever
/// evaluated, the lower one is mirrored.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteTable {
    size: usize,
    values: Vec<f64>,
}

impl DiscreteTable {
    pub fn from_fn(size: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        if size == 0 {
            return Err(Error::Structural("kernel table must be non-empty".into()));
        }
        let mut values = vec![0.0; size * size];
        for a in 1..=size {
            for b in a..=size {
                let v = f(a, b);
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::Domain(format!(
                        "kernel value K({a},{b}) = {v} is not a nonnegative finite number"
                    )));
                }
                values[(a - 1) * size + (b - 1)] = v;
                values[(b - 1) * size + (a - 1)] = v;
            }
        }
        Ok(Self { size, values })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// `K[a][b]`, one-based.
    #[inline]
    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.values[(a - 1) * self.size + (b - 1)]
    }

    /// Row `a` as a slice indexed by `b - 1`.
    #[inline]
    pub fn row(&self, a: usize) -> &[f64] {
        &self.values[(a - 1) * self.size..a * self.size]
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Leading `size x size` block.
    pub fn truncated(&self, size: usize) -> Result<Self> {
        if size == 0 || size > self.size {
            return Err(Error::Structural(format!(
                "cannot take a {size}x{size} block of a {0}x{0} kernel table",
                self.size
            )));
        }
        Self::from_fn(size, |a, b| self.get(a, b))
    }
}

/// Continuous kernel built from a discrete table with bump functions, optionally rescaled by
/// `R`:
///
/// ```text
/// K_R(x, y) = R^-gamma sum_{a,b} K[a][b] zeta(R x - a) zeta(R y - b) + c1 (zeta(R x) + zeta(R y)) w(x, y)
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct Interpolation {
    table: Arc<DiscreteTable>,
    epsilon: f64,
    scale: f64,
    gamma: f64,
    lambda: f64,
    c1: f64,
}

/// Piecewise-affine bump: 1 on `|t| <= 1/2 - eps`, 0 on `|t| >= 1/2 + eps`.
pub fn bump(epsilon: f64, t: f64) -> f64 {
    let a = t.abs();
    if a <= 0.5 - epsilon {
        1.0
    } else if a >= 0.5 + epsilon {
        0.0
    } else {
        (0.5 + epsilon - a) / (2.0 * epsilon)
    }
}

impl Interpolation {
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn table(&self) -> &DiscreteTable {
        &self.table
    }

    /// Largest argument the table can serve.
    pub fn support_limit(&self) -> f64 {
        (self.table.size as f64 + 0.5 - self.epsilon) / self.scale
    }

    fn neighbours(&self, u: f64) -> Result<Vec<(usize, f64)>> {
        let reach = 0.5 + self.epsilon;
        let lo = (u - reach).ceil().max(1.0) as usize;
        let hi = (u + reach).floor();
        if hi < 1.0 {
            return Ok(Vec::new());
        }
        let hi = hi as usize;
        let mut out = Vec::with_capacity(2);
        for a in lo..=hi {
            let z = bump(self.epsilon, u - a as f64);
            if z > 0.0 {
                if a > self.table.size {
                    return Err(Error::Domain(format!(
                        "argument {u} (scaled) lies outside the tabulated range 1..={}",
                        self.table.size
                    )));
                }
                out.push((a, z));
            }
        }
        Ok(out)
    }

    fn eval_sorted(&self, x: f64, y: f64) -> Result<f64> {
        let (u, v) = (self.scale * x, self.scale * y);
        let nx = self.neighbours(u)?;
        let ny = self.neighbours(v)?;
        let mut bumps = 0.0;
        for &(a, za) in &nx {
            for &(b, zb) in &ny {
                bumps += self.table.get(a, b) * za * zb;
            }
        }
        let floor = self.c1
            * (bump(self.epsilon, u) + bump(self.epsilon, v))
            * weight(self.gamma, self.lambda, x, y);
        Ok(self.scale.powf(-self.gamma) * bumps + floor)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelForm {
    /// `K = c`.
    Constant(f64),
    /// `K = x + y`.
    Additive,
    /// `K = x y`.
    Product,
    /// `K = prefactor * w(x, y)`.
    GeneralizedPower {
        gamma: f64,
        lambda: f64,
        prefactor: f64,
    },
    /// `K = (x^-1/3 + y^-1/3)(x^1/3 + y^1/3)`.
    Brownian,
    /// `K = (x^1/3 + y^1/3)^2 (1/x + 1/y)^1/2`.
    FreeMolecular,
    /// Values on the integer grid only.
    TabulatedDiscrete(Arc<DiscreteTable>),
    /// Continuous interpolation of a tabulated kernel.
    Interpolated(Interpolation),
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    pub form: KernelForm,
    pub envelope: EnvelopeParams,
}

impl KernelSpec {
    pub fn constant(c: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::Parameter(format!("constant kernel needs c > 0, got {c}")));
        }
        Ok(Self {
            form: KernelForm::Constant(c),
            envelope: EnvelopeParams::new(0.0, 0.0, 0.5 * c, 0.5 * c)?,
        })
    }

    pub fn additive() -> Self {
        Self {
            form: KernelForm::Additive,
            envelope: EnvelopeParams {
                gamma: 1.0,
                lambda: 0.0,
                c1: 1.0,
                c2: 1.0,
            },
        }
    }

    pub fn product() -> Self {
        Self {
            form: KernelForm::Product,
            envelope: EnvelopeParams {
                gamma: 2.0,
                lambda: -1.0,
                c1: 0.5,
                c2: 0.5,
            },
        }
    }

    pub fn generalized_power(gamma: f64, lambda: f64, prefactor: f64) -> Result<Self> {
        if !(prefactor.is_finite() && prefactor > 0.0) {
            return Err(Error::Parameter(format!(
                "power kernel needs a positive prefactor, got {prefactor}"
            )));
        }
        Ok(Self {
            form: KernelForm::GeneralizedPower {
                gamma,
                lambda,
                prefactor,
            },
            envelope: EnvelopeParams::new(gamma, lambda, prefactor, prefactor)?,
        })
    }

    /// `K = 2 + w` with `w >= 2`, hence `w <= K <= 2 w`.
    pub fn brownian() -> Self {
        Self {
            form: KernelForm::Brownian,
            envelope: EnvelopeParams {
                gamma: 0.0,
                lambda: 1.0 / 3.0,
                c1: 1.0,
                c2: 2.0,
            },
        }
    }

    /// The ratio `K / w` depends only on `x / y`; it tends to 1 at both extremes and peaks
    /// at `2 sqrt 2` on the diagonal.
    pub fn free_molecular() -> Self {
        Self {
            form: KernelForm::FreeMolecular,
            envelope: EnvelopeParams {
                gamma: 1.0 / 6.0,
                lambda: 0.5,
                c1: 1.0,
                c2: 2.0 * std::f64::consts::SQRT_2,
            },
        }
    }

    pub fn tabulated(table: DiscreteTable, envelope: EnvelopeParams) -> Self {
        Self {
            form: KernelForm::TabulatedDiscrete(Arc::new(table)),
            envelope,
        }
    }

    /// Built-in kernel by name: `constant`, `additive`, `product`, `brownian`,
    /// `free-molecular` or `power` (the last uses `gamma`, `lambda`, `prefactor`).
    pub fn by_name(
        name: &str,
        gamma: Option<f64>,
        lambda: Option<f64>,
        prefactor: Option<f64>,
    ) -> Result<Self> {
        match name.to_ascii_lowercase().replace('_', "-").as_str() {
            "constant" => Self::constant(prefactor.unwrap_or(1.0)),
            "additive" => Ok(Self::additive()),
            "product" => Ok(Self::product()),
            "brownian" | "diffusive" => Ok(Self::brownian()),
            "free-molecular" | "freemolecular" | "ballistic" => Ok(Self::free_molecular()),
            "power" | "generalized-power" => {
                let (Some(g), Some(l)) = (gamma, lambda) else {
                    return Err(Error::Parameter(
                        "the power kernel needs both gamma and lambda".into(),
                    ));
                };
                Self::generalized_power(g, l, prefactor.unwrap_or(1.0))
            }
            other => Err(Error::Parameter(format!("unknown kernel name `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self.form {
            KernelForm::Constant(_) => "constant",
            KernelForm::Additive => "additive",
            KernelForm::Product => "product",
            KernelForm::GeneralizedPower { .. } => "power",
            KernelForm::Brownian => "brownian",
            KernelForm::FreeMolecular => "free-molecular",
            KernelForm::TabulatedDiscrete(_) => "tabulated",
            KernelForm::Interpolated(_) => "interpolated",
        }
    }

    pub fn regime(&self) -> Regime {
        self.envelope.regime()
    }

    /// Whether the kernel can be evaluated at arbitrary positive reals.
    pub fn is_continuous(&self) -> bool {
        !matches!(self.form, KernelForm::TabulatedDiscrete(_))
    }

    /// `K(x, y)` for `x, y > 0`.
    pub fn eval(&self, x: f64, y: f64) -> Result<f64> {
        if !(x.is_finite() && y.is_finite()) {
            return Err(Error::Domain(format!("kernel arguments must be finite, got ({x}, {y})")));
        }
        if x <= 0.0 || y <= 0.0 {
            return Err(Error::Domain(format!("kernel arguments must be positive, got ({x}, {y})")));
        }
        let (a, b) = ordered(x, y);
        self.eval_sorted(a, b)
    }

    fn eval_sorted(&self, a: f64, b: f64) -> Result<f64> {
        let v = match &self.form {
            KernelForm::Constant(c) => *c,
            KernelForm::Additive => a + b,
            KernelForm::Product => a * b,
            KernelForm::GeneralizedPower {
                gamma,
                lambda,
                prefactor,
            } => prefactor * weight(*gamma, *lambda, a, b),
            KernelForm::Brownian => {
                let (ca, cb) = (a.cbrt(), b.cbrt());
                (1.0 / ca + 1.0 / cb) * (ca + cb)
            }
            KernelForm::FreeMolecular => {
                let s = a.cbrt() + b.cbrt();
                s * s * (1.0 / a + 1.0 / b).sqrt()
            }
            KernelForm::TabulatedDiscrete(table) => {
                let (i, j) = (a.round(), b.round());
                if i != a || j != b || j > table.size as f64 {
                    return Err(Error::Domain(format!(
                        "tabulated kernel is only defined on integers 1..={}, got ({a}, {b})",
                        table.size
                    )));
                }
                table.get(i as usize, j as usize)
            }
            KernelForm::Interpolated(interp) => interp.eval_sorted(a, b)?,
        };
        Ok(v)
    }

    /// Table of `K(a, b)` at integer points `1..=size`.
    pub fn discretize(&self, size: usize) -> Result<DiscreteTable> {
        if let KernelForm::TabulatedDiscrete(table) = &self.form {
            return table.truncated(size);
        }
        let mut err = None;
        let table = DiscreteTable::from_fn(size, |a, b| {
            self.eval_sorted(a as f64, b as f64).unwrap_or_else(|e| {
                err.get_or_insert(e);
                0.0
            })
        })?;
        match err {
            Some(e) => Err(e),
            None => Ok(table),
        }
    }

    /// Continuous kernel agreeing with a tabulated one at every integer pair.
    pub fn interpolate_discrete(&self, epsilon: f64) -> Result<KernelSpec> {
        self.rescaled(1.0, epsilon)
    }

    /// Continuous kernel `K_R` with `K_R(a/R, b/R) = R^-gamma K[a][b]`.
    pub fn rescaled(&self, scale: f64, epsilon: f64) -> Result<KernelSpec> {
        let KernelForm::TabulatedDiscrete(table) = &self.form else {
            return Err(Error::Parameter(format!(
                "interpolation needs a tabulated kernel, got `{}`",
                self.name()
            )));
        };
        if !(epsilon > 0.0 && epsilon < 0.5) {
            return Err(Error::Parameter(format!("epsilon must lie in (0, 1/2), got {epsilon}")));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::Parameter(format!("scale R must be positive, got {scale}")));
        }
        let env = self.envelope;
        // Neighbouring grid points are within a factor 4 of the argument on either axis.
        let spread = 4f64.powf((env.gamma + env.lambda).abs() + env.lambda.abs());
        let envelope = EnvelopeParams::new(
            env.gamma,
            env.lambda,
            env.c1 / (2.0 * spread),
            4.0 * env.c2 * spread + 2.0 * env.c1,
        )?;
        Ok(KernelSpec {
            form: KernelForm::Interpolated(Interpolation {
                table: Arc::clone(table),
                epsilon,
                scale,
                gamma: env.gamma,
                lambda: env.lambda,
                c1: env.c1,
            }),
            envelope,
        })
    }

    /// Sampled `(min, max)` of `K / w` over `grid x grid`.
    pub fn verify_envelope(&self, grid: &[f64]) -> Result<(f64, f64)> {
        if grid.is_empty() {
            return Err(Error::Parameter("envelope grid is empty".into()));
        }
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for (i, &x) in grid.iter().enumerate() {
            for &y in &grid[i..] {
                let ratio = self.eval(x, y)? / self.envelope.weight(x, y);
                if !ratio.is_finite() {
                    return Err(Error::Domain(format!(
                        "kernel to weight ratio is not finite at ({x}, {y})"
                    )));
                }
                lo = lo.min(ratio);
                hi = hi.max(ratio);
            }
        }
        Ok((lo, hi))
    }
}
