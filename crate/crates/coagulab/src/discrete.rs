//! The truncated discrete coagulation equation with a source,
//!
//! ```text
//! dn_a/dt = 1/2 sum_{b<a} K[a-b][b] n_{a-b} n_b - n_a sum_{b<=R*} K[a][b] n_b + s_a,   1 <= a <= R*,
//! ```
//!
//! where merges producing clusters larger than `R*` are discarded (non-conservative truncation).

use std::ops::{ControlFlow, Deref};
use std::sync::Arc;

use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{DiscreteTable, KernelSpec};
use crate::ode::{self, IntegrationStats, StepControl};

/// Below this size the right-hand side is evaluated on one thread.
const PARALLEL_THRESHOLD: usize = 384;

/// Injection rates `s_a`, supported on `1..=L_s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    rates: Vec<f64>,
}

impl SourceSpec {
    /// `rates[a - 1] = s_a`. At least one rate must be positive.
    pub fn new(rates: Vec<f64>) -> Result<Self> {
        let source = Self::nonnegative(rates)?;
        if source.rates.is_empty() {
            return Err(Error::Parameter("source needs at least one positive rate".into()));
        }
        Ok(source)
    }

    /// Monomer injection `s = (s1, 0, 0, ...)`.
    pub fn monomer(s1: f64) -> Result<Self> {
        Self::new(vec![s1])
    }

    /// From `(a, s_a)` pairs; repeated sizes add up.
    pub fn from_pairs(pairs: &[(usize, f64)]) -> Result<Self> {
        let len = pairs.iter().map(|&(a, _)| a).max().unwrap_or(0);
        let mut rates = vec![0.0; len];
        for &(a, v) in pairs {
            if a == 0 {
                return Err(Error::Parameter("source sizes start at 1".into()));
            }
            rates[a - 1] += v;
        }
        Self::new(rates)
    }

    /// No injection at all; the homogeneous problem.
    pub fn zero() -> Self {
        Self { rates: Vec::new() }
    }

    fn nonnegative(mut rates: Vec<f64>) -> Result<Self> {
        if let Some(v) = rates.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Parameter(format!(
                "source rates must be nonnegative and finite, got {v}"
            )));
        }
        while rates.last() == Some(&0.0) {
            rates.pop();
        }
        Ok(Self { rates })
    }

    /// Largest injected size `L_s` (0 for the zero source).
    pub fn support(&self) -> usize {
        self.rates.len()
    }

    /// `s_a`, one-based; zero outside the support.
    pub fn rate(&self, a: usize) -> f64 {
        if a == 0 {
            0.0
        } else {
            self.rates.get(a - 1).copied().unwrap_or(0.0)
        }
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn is_zero(&self) -> bool {
        self.rates.is_empty()
    }

    /// `sum_a s_a`.
    pub fn total(&self) -> f64 {
        self.rates.iter().sum()
    }

    /// `sum_a a s_a`, the injected mass per unit time.
    pub fn mass_rate(&self) -> f64 {
        self.rates
            .iter()
            .enumerate()
            .map(|(i, s)| (i + 1) as f64 * s)
            .sum()
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(Error::Parameter(format!("source scale must be positive, got {factor}")));
        }
        Ok(Self {
            rates: self.rates.iter().map(|s| s * factor).collect(),
        })
    }
}

/// Concentrations `n_a` for `a = 1..=R*`, stored zero-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector(Vec<f64>);

impl StateVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    /// `n_a`, one-based.
    pub fn at(&self, a: usize) -> f64 {
        self.0[a - 1]
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn max_norm(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `sum_a n_a`.
    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(self.0.iter().map(|v| v * factor).collect())
    }
}

impl Deref for StateVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Mass bookkeeping of the truncated system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MassBudget {
    /// `sum_a a s_a`.
    pub injection_rate: f64,
    /// Mass carried past `R*` by discarded merges.
    pub outflux: f64,
    /// `d/dt sum_a a n_a`, computed from the right-hand side.
    pub interior_mass_derivative: f64,
}

/// Result of [`TruncatedSystem::evolve`].
#[derive(Debug, Clone)]
pub struct Evolution {
    pub state: StateVector,
    pub time: f64,
    pub stats: IntegrationStats,
    /// Number of components clamped from small negative values to zero.
    pub clamped: usize,
    pub max_clamped: f64,
}

/// Largest negative round-off, relative to `max_a n_a`, that is silently clamped.
pub const CLAMP_ABORT: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct TruncatedSystem {
    kernel: KernelSpec,
    source: SourceSpec,
    r_star: usize,
    table: Arc<DiscreteTable>,
    /// Gain coefficients `K[a-b][b]`, `b = 1..=a/2`, laid out contiguously per `a` with the
    /// diagonal term halved.
    pairs: Arc<Vec<f64>>,
    a1: f64,
    a2: f64,
}

/// Start of the gain coefficients of size `a` in the packed layout.
fn pair_offset(a: usize) -> usize {
    (a - 1) * (a - 1) / 4
}

fn gain_pairs(table: &DiscreteTable) -> Vec<f64> {
    let r = table.size();
    let mut pairs = Vec::with_capacity(r * r / 4 + 1);
    for a in 2..=r {
        for b in 1..=a / 2 {
            let k = table.get(a - b, b);
            pairs.push(if 2 * b == a { 0.5 * k } else { k });
        }
    }
    pairs
}

impl TruncatedSystem {
    pub fn new(kernel: KernelSpec, source: SourceSpec, r_star: usize) -> Result<Self> {
        if r_star <= source.support() {
            return Err(Error::Precondition(format!(
                "cutoff R* = {r_star} must exceed the source support L_s = {}",
                source.support()
            )));
        }
        let table = kernel.discretize(r_star)?;
        let (a1, a2) = (table.min(), table.max());
        if a1 <= 0.0 {
            return Err(Error::Precondition(
                "kernel table must be strictly positive on the truncated range".into(),
            ));
        }
        let pairs = gain_pairs(&table);
        Ok(Self {
            kernel,
            source,
            r_star,
            table: Arc::new(table),
            pairs: Arc::new(pairs),
            a1,
            a2,
        })
    }

    /// Same kernel table and cutoff, different source.
    pub fn with_source(&self, source: SourceSpec) -> Result<Self> {
        if self.r_star <= source.support() {
            return Err(Error::Precondition(format!(
                "cutoff R* = {} must exceed the source support L_s = {}",
                self.r_star,
                source.support()
            )));
        }
        Ok(Self {
            source,
            ..self.clone()
        })
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn source(&self) -> &SourceSpec {
        &self.source
    }

    pub fn r_star(&self) -> usize {
        self.r_star
    }

    pub fn table(&self) -> &DiscreteTable {
        &self.table
    }

    /// `min K` over the truncated range.
    pub fn a1(&self) -> f64 {
        self.a1
    }

    /// `max K` over the truncated range.
    pub fn a2(&self) -> f64 {
        self.a2
    }

    /// Ceiling `sqrt(2 c0 / a1)` of the invariant region, `c0 = sum_a s_a`.
    pub fn invariant_ceiling(&self) -> f64 {
        (2.0 * self.source.total() / self.a1).sqrt()
    }

    fn check_dim(&self, n: &[f64]) -> Result<()> {
        if n.len() != self.r_star {
            return Err(Error::Structural(format!(
                "state has {} entries, system has R* = {}",
                n.len(),
                self.r_star
            )));
        }
        Ok(())
    }

    /// `1/2 sum_{b<a} K[a-b][b] n_{a-b} n_b`, one-based `a`.
    #[inline]
    pub(crate) fn gain(&self, n: &[f64], a: usize) -> f64 {
        let off = pair_offset(a);
        let coeffs = &self.pairs[off..off + a / 2];
        let mut g = 0.0;
        for (i, k) in coeffs.iter().enumerate() {
            g += k * n[a - i - 2] * n[i];
        }
        g
    }

    /// `sum_b K[a][b] n_b`, one-based `a`.
    #[inline]
    pub(crate) fn loss_rate(&self, n: &[f64], a: usize) -> f64 {
        let row = self.table.row(a);
        let mut acc = [0.0; 4];
        let mut rows = row.chunks_exact(4);
        let mut ns = n.chunks_exact(4);
        for (k, v) in (&mut rows).zip(&mut ns) {
            for l in 0..4 {
                acc[l] += k[l] * v[l];
            }
        }
        let mut tail = 0.0;
        for (k, v) in rows.remainder().iter().zip(ns.remainder()) {
            tail += k * v;
        }
        (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
    }

    pub(crate) fn rhs_into(&self, n: &[f64], out: &mut [f64]) {
        let entry = |i: usize| {
            let a = i + 1;
            self.gain(n, a) - n[i] * self.loss_rate(n, a) + self.source.rate(a)
        };
        if self.r_star >= PARALLEL_THRESHOLD {
            out.par_iter_mut()
                .enumerate()
                .for_each(|(i, o)| *o = entry(i));
        } else {
            for (i, o) in out.iter_mut().enumerate() {
                *o = entry(i);
            }
        }
    }

    /// Time derivative of `n`.
    pub fn rhs(&self, n: &[f64]) -> Result<StateVector> {
        self.check_dim(n)?;
        let mut out = vec![0.0; self.r_star];
        self.rhs_into(n, &mut out);
        Ok(StateVector(out))
    }

    /// `max_a |dn_a/dt|`, normalised by `max(a2 N max_a n_a, sum_a s_a)`.
    pub fn normalized_residual(&self, n: &[f64], dndt: &[f64]) -> f64 {
        let total: f64 = n.iter().sum();
        let peak = n.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let scale = (self.a2 * total * peak).max(self.source.total());
        let r = dndt.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if r == 0.0 {
            0.0
        } else if scale > 0.0 {
            r / scale
        } else {
            f64::INFINITY
        }
    }

    /// `max_a |dn_a/dt| / (gain_a + n_a D_a + s_a)`: the imbalance at each size relative to the
    /// gross rates there. Sizes with no activity at all count as balanced.
    pub fn relative_imbalance(&self, n: &[f64]) -> f64 {
        let entry = |i: usize| {
            let a = i + 1;
            let gain = self.gain(n, a);
            let loss = n[i] * self.loss_rate(n, a);
            let s = self.source.rate(a);
            let gross = gain + loss + s;
            let net = (gain - loss + s).abs();
            if net == 0.0 {
                0.0
            } else if gross > 0.0 {
                net / gross
            } else {
                f64::INFINITY
            }
        };
        if self.r_star >= PARALLEL_THRESHOLD {
            (0..self.r_star)
                .into_par_iter()
                .map(entry)
                .reduce(|| 0.0, f64::max)
        } else {
            (0..self.r_star).map(entry).fold(0.0, f64::max)
        }
    }

    /// Stationarity residual of `n`: the larger of [`Self::normalized_residual`] and
    /// [`Self::relative_imbalance`].
    pub fn residual(&self, n: &[f64]) -> Result<f64> {
        let dndt = self.rhs(n)?;
        Ok(self.residual_with(n, &dndt))
    }

    pub(crate) fn residual_with(&self, n: &[f64], dndt: &[f64]) -> f64 {
        self.normalized_residual(n, dndt)
            .max(self.relative_imbalance(n))
    }

    /// `1/2 sum_{a+b>R*} K[a][b] n_a n_b weight(a, b)`.
    fn discarded(&self, n: &[f64], weight: impl Fn(usize, usize) -> f64) -> f64 {
        let r = self.r_star;
        let mut total = 0.0;
        for a in 1..=r {
            let row = self.table.row(a);
            let mut acc = 0.0;
            for b in (r + 1 - a).max(1)..=r {
                acc += row[b - 1] * n[b - 1] * weight(a, b);
            }
            total += n[a - 1] * acc;
        }
        0.5 * total
    }

    /// Rate at which merges past the cutoff remove clusters, `1/2 sum_{a+b>R*} K n_a n_b`.
    pub fn discarded_merge_rate(&self, n: &[f64]) -> Result<f64> {
        self.check_dim(n)?;
        Ok(self.discarded(n, |_, _| 1.0))
    }

    pub fn mass_budget(&self, n: &[f64]) -> Result<MassBudget> {
        let dndt = self.rhs(n)?;
        let interior = dndt
            .iter()
            .enumerate()
            .map(|(i, v)| (i + 1) as f64 * v)
            .sum();
        Ok(MassBudget {
            injection_rate: self.source.mass_rate(),
            outflux: self.discarded(n, |a, b| (a + b) as f64),
            interior_mass_derivative: interior,
        })
    }

    /// Integrates from `n0` up to `horizon`.
    pub fn evolve(&self, n0: &[f64], horizon: f64, control: &StepControl) -> Result<Evolution> {
        self.evolve_observed(n0, horizon, control, |_, _, _| ControlFlow::Continue(()))
    }

    /// Like [`Self::evolve`], calling `observe(t, n, dn/dt)` after every accepted step.
    /// Returning `Break` ends the run at the current time.
    pub fn evolve_observed<O>(
        &self,
        n0: &[f64],
        horizon: f64,
        control: &StepControl,
        mut observe: O,
    ) -> Result<Evolution>
    where
        O: FnMut(f64, &[f64], &[f64]) -> ControlFlow<()>,
    {
        self.check_dim(n0)?;
        if let Some(v) = n0.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Precondition(format!(
                "initial state must be nonnegative and finite, found {v}"
            )));
        }
        if !(horizon.is_finite() && horizon >= 0.0) {
            return Err(Error::Parameter(format!("horizon must be finite and >= 0, got {horizon}")));
        }
        let mut y = n0.to_vec();
        let mut clamped = 0usize;
        let mut max_clamped = 0.0f64;
        let mut clamp_failure: Option<(f64, f64)> = None;
        let (time, stats) = ode::integrate(
            |_, n, out| self.rhs_into(n, out),
            0.0,
            horizon,
            &mut y,
            control,
            |t, n, dndt| {
                let peak = n.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                for v in n.iter_mut().filter(|v| **v < 0.0) {
                    if -*v > CLAMP_ABORT * peak {
                        clamp_failure = Some((t, *v));
                        return ControlFlow::Break(());
                    }
                    max_clamped = max_clamped.max(-*v);
                    clamped += 1;
                    *v = 0.0;
                }
                observe(t, n, dndt)
            },
        )?;
        if let Some((t, v)) = clamp_failure {
            return Err(Error::Integration {
                time: t,
                reason: format!("negative concentration {v:.3e} beyond round-off"),
            });
        }
        if clamped > 0 {
            debug!("clamped {clamped} negative entries, largest magnitude {max_clamped:.3e}");
        }
        Ok(Evolution {
            state: StateVector(y),
            time,
            stats,
            clamped,
            max_clamped,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(r_star: usize, source: &[f64]) -> TruncatedSystem {
        TruncatedSystem::new(
            KernelSpec::constant(1.0).unwrap(),
            SourceSpec::new(source.to_vec()).unwrap(),
            r_star,
        )
        .unwrap()
    }

    /// Straight transcription of the right-hand side, full sums in ascending order.
    fn naive_rhs(sys: &TruncatedSystem, n: &[f64]) -> Vec<f64> {
        let r = sys.r_star();
        let k = |a: usize, b: usize| sys.table().get(a, b);
        (1..=r)
            .map(|a| {
                let mut gain = 0.0;
                for b in 1..a {
                    gain += k(a - b, b) * n[a - b - 1] * n[b - 1];
                }
                let mut loss = 0.0;
                for b in 1..=r {
                    loss += k(a, b) * n[b - 1];
                }
                0.5 * gain - n[a - 1] * loss + sys.source().rate(a)
            })
            .collect()
    }

    #[test]
    fn source_only() {
        let sys = unit(2, &[1.0, 0.0]);
        assert_eq!(sys.rhs(&[0.0, 0.0]).unwrap().to_vec(), vec![1.0, 0.0]);
    }

    #[test]
    fn small_rhs_matches_hand_value() {
        let sys = unit(2, &[1.0, 0.0]);
        assert_eq!(sys.rhs(&[2.0, 0.0]).unwrap().to_vec(), vec![-3.0, 2.0]);
        assert_eq!(naive_rhs(&sys, &[2.0, 0.0]), vec![-3.0, 2.0]);
    }

    #[test]
    fn rhs_agrees_with_naive_sum() {
        let sys = TruncatedSystem::new(
            KernelSpec::brownian(),
            SourceSpec::new(vec![1.0, 0.5]).unwrap(),
            40,
        )
        .unwrap();
        let n: Vec<f64> = (1..=40).map(|a| 1.0 / (a as f64).powf(1.5) + 0.01).collect();
        let fast = sys.rhs(&n).unwrap();
        for (a, b) in fast.iter().zip(naive_rhs(&sys, &n)) {
            assert!((a - b).abs() <= 1e-13 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn dimension_mismatch() {
        let sys = unit(4, &[1.0]);
        assert!(matches!(sys.rhs(&[0.0; 3]), Err(Error::Structural(_))));
    }

    #[test]
    fn cutoff_must_exceed_source_support() {
        let err = TruncatedSystem::new(
            KernelSpec::brownian(),
            SourceSpec::from_pairs(&[(8, 1.0)]).unwrap(),
            4,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
    }

    #[test]
    fn source_validation() {
        assert!(SourceSpec::new(vec![0.0, 0.0]).is_err());
        assert!(SourceSpec::new(vec![1.0, -1.0]).is_err());
        assert!(SourceSpec::from_pairs(&[(0, 1.0)]).is_err());
        let s = SourceSpec::from_pairs(&[(2, 2.0), (1, 1.0)]).unwrap();
        assert_eq!(s.rates(), &[1.0, 2.0]);
        assert_eq!(s.mass_rate(), 5.0);
        assert_eq!(s.support(), 2);
        assert_eq!(SourceSpec::new(vec![1.0, 0.0, 0.0]).unwrap().support(), 1);
    }

    #[test]
    fn zero_state_budget() {
        let sys = unit(16, &[1.0, 2.0]);
        let b = sys.mass_budget(&[0.0; 16]).unwrap();
        assert_eq!(b.injection_rate, 5.0);
        assert_eq!(b.outflux, 0.0);
        assert_eq!(b.interior_mass_derivative, 5.0);
        assert_eq!(unit(4, &[1.0]).source().mass_rate(), 1.0);
    }

    #[test]
    fn zero_is_fixed_without_source() {
        let sys = unit(8, &[1.0]).with_source(SourceSpec::zero()).unwrap();
        let ev = sys.evolve(&[0.0; 8], 50.0, &StepControl::default()).unwrap();
        assert!(ev.state.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_negative_initial_state() {
        let sys = unit(4, &[1.0]);
        assert!(sys
            .evolve(&[1.0, -1.0, 0.0, 0.0], 1.0, &StepControl::default())
            .is_err());
    }
}
