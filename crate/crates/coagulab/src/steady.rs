//! Stationary injection solutions of the truncated system.
//!
//! Two independent routes are provided: marching the time-dependent equation from `n = 0`
//! until the residual vanishes, and a damped sequential fixed-point sweep
//!
//! ```text
//! n_a <- (1 - theta) n_a + theta (gain_a(n) + s_a) / sum_b K[a][b] n_b,   a = 1, 2, ..., R*
//! ```
//!
//! which uses already-updated entries on both the gain and the loss side. Stationary states
//! scale as `sqrt(Lambda) n` under `s -> Lambda s`, and the monomer boundary-value problem is
//! obtained from the monomer-source solution by a single rescaling.

use std::fmt;
use std::ops::ControlFlow;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::discrete::{SourceSpec, StateVector, TruncatedSystem};
use crate::error::{Error, Result};
use crate::ode::StepControl;

pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_DAMPING: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    TimeMarching,
    FixedPoint,
    /// Obtained from another result through the source-scaling symmetry.
    Rescaled,
    /// Zero source, zero state.
    Trivial,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Method::TimeMarching => "time-marching",
            Method::FixedPoint => "fixed-point",
            Method::Rescaled => "rescaled",
            Method::Trivial => "trivial",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyResult {
    pub state: StateVector,
    /// See [`TruncatedSystem::residual`].
    pub residual_inf: f64,
    pub method: Method,
    /// Accepted time steps or fixed-point sweeps.
    pub iterations: usize,
    pub converged: bool,
    /// Damping the fixed-point run finished with (1 for time marching).
    pub damping: f64,
    /// Integration time reached (0 for the fixed point).
    pub time: f64,
}

impl SteadyResult {
    fn trivial(r_star: usize) -> Self {
        Self {
            state: StateVector::zeros(r_star),
            residual_inf: 0.0,
            method: Method::Trivial,
            iterations: 0,
            converged: true,
            damping: 1.0,
            time: 0.0,
        }
    }
}

fn check_tol(tol: f64) -> Result<()> {
    if tol.is_finite() && tol > 0.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!("tolerance must be positive, got {tol}")))
    }
}

/// Integrates from `n = 0` until the residual drops to `tol` or `max_time` is reached.
pub fn solve_time_marching(
    system: &TruncatedSystem,
    tol: f64,
    max_time: f64,
) -> Result<SteadyResult> {
    solve_time_marching_with(system, tol, max_time, &marching_control(tol))
}

/// Step control for marching to a residual of `tol`: accepted steps near the stability limit
/// leave errors of order `rtol`, so `rtol` has to sit below `tol`.
pub fn marching_control(tol: f64) -> StepControl {
    let defaults = StepControl::default();
    let rtol = defaults.rtol.min(0.01 * tol);
    StepControl {
        rtol,
        atol: defaults.atol.min(1e-4 * rtol),
        ..defaults
    }
}

pub fn solve_time_marching_with(
    system: &TruncatedSystem,
    tol: f64,
    max_time: f64,
    control: &StepControl,
) -> Result<SteadyResult> {
    check_tol(tol)?;
    if system.source().is_zero() {
        return Ok(SteadyResult::trivial(system.r_star()));
    }
    let mut residual = f64::INFINITY;
    let evolution = system.evolve_observed(
        &vec![0.0; system.r_star()],
        max_time,
        control,
        |_, n, dndt| {
            residual = system.residual_with(n, dndt);
            if residual <= tol {
                ControlFlow::Break(())
            } else {
                ControlFlow::Continue(())
            }
        },
    )?;
    let converged = residual <= tol;
    if !converged {
        warn!(
            "time marching stopped at t = {:.3e} with residual {residual:.3e} > {tol:.1e}",
            evolution.time
        );
    }
    Ok(SteadyResult {
        state: evolution.state,
        residual_inf: residual,
        method: Method::TimeMarching,
        iterations: evolution.stats.accepted,
        converged,
        damping: 1.0,
        time: evolution.time,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointOptions {
    pub tol: f64,
    pub damping: f64,
    pub max_sweeps: usize,
    /// How often the damping may be halved after a blow-up.
    pub max_halvings: usize,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            damping: DEFAULT_DAMPING,
            max_sweeps: 20_000,
            max_halvings: 6,
        }
    }
}

/// Damped sequential fixed-point iteration.
pub fn solve_fixed_point(system: &TruncatedSystem, tol: f64, damping: f64) -> Result<SteadyResult> {
    solve_fixed_point_with(
        system,
        &FixedPointOptions {
            tol,
            damping,
            ..Default::default()
        },
    )
}

enum Attempt {
    Done(SteadyResult),
    BlewUp,
}

pub fn solve_fixed_point_with(
    system: &TruncatedSystem,
    options: &FixedPointOptions,
) -> Result<SteadyResult> {
    check_tol(options.tol)?;
    if !(options.damping > 0.0 && options.damping <= 1.0) {
        return Err(Error::Parameter(format!(
            "damping must lie in (0, 1], got {}",
            options.damping
        )));
    }
    if system.source().is_zero() {
        return Ok(SteadyResult::trivial(system.r_star()));
    }
    let mut theta = options.damping;
    let mut sweeps_used = 0;
    for halving in 0..=options.max_halvings {
        match fixed_point_attempt(system, options, theta)? {
            Attempt::Done(mut result) => {
                result.iterations += sweeps_used;
                return Ok(result);
            }
            Attempt::BlewUp => {
                sweeps_used += 1;
                if halving < options.max_halvings {
                    debug!("fixed point diverged at damping {theta}, halving");
                    theta *= 0.5;
                }
            }
        }
    }
    Err(Error::Integration {
        time: 0.0,
        reason: format!(
            "fixed-point iteration diverged even at damping {theta:.3e} after {} halvings",
            options.max_halvings
        ),
    })
}

/// Zero start followed by one explicit Euler step of size `1 / (a2 (1 + sum s))`.
fn bootstrap(system: &TruncatedSystem) -> Vec<f64> {
    let h = 1.0 / (system.a2() * (1.0 + system.source().total()));
    (1..=system.r_star())
        .map(|a| h * system.source().rate(a))
        .collect()
}

fn fixed_point_attempt(
    system: &TruncatedSystem,
    options: &FixedPointOptions,
    theta: f64,
) -> Result<Attempt> {
    let r = system.r_star();
    let mut n = bootstrap(system);
    let mut best_change = f64::INFINITY;
    let mut residual = f64::INFINITY;
    for sweep in 1..=options.max_sweeps {
        let mut change = 0.0f64;
        for a in 1..=r {
            let denom = system.loss_rate(&n, a);
            let target = system.gain(&n, a) + system.source().rate(a);
            let proposal = if denom > 0.0 {
                target / denom
            } else if target == 0.0 {
                0.0
            } else {
                // Nothing to coagulate with yet; leave the entry to the next sweep.
                n[a - 1]
            };
            let updated = (1.0 - theta) * n[a - 1] + theta * proposal;
            change = change.max((updated - n[a - 1]).abs());
            n[a - 1] = updated;
        }
        let peak = n.iter().fold(0.0f64, |m, v| m.max(*v));
        if !peak.is_finite() {
            return Ok(Attempt::BlewUp);
        }
        let rel_change = if peak > 0.0 { change / peak } else { change };
        if sweep > 20 && rel_change > 1e6 * best_change.max(f64::MIN_POSITIVE) {
            return Ok(Attempt::BlewUp);
        }
        best_change = best_change.min(rel_change);
        if rel_change <= options.tol {
            residual = system.residual(&n)?;
            if residual <= options.tol {
                return Ok(Attempt::Done(SteadyResult {
                    state: StateVector::new(n),
                    residual_inf: residual,
                    method: Method::FixedPoint,
                    iterations: sweep,
                    converged: true,
                    damping: theta,
                    time: 0.0,
                }));
            }
        }
    }
    if !residual.is_finite() {
        residual = system.residual(&n)?;
    }
    warn!(
        "fixed point not converged after {} sweeps, residual {residual:.3e}",
        options.max_sweeps
    );
    Ok(Attempt::Done(SteadyResult {
        state: StateVector::new(n),
        residual_inf: residual,
        method: Method::FixedPoint,
        iterations: options.max_sweeps,
        converged: false,
        damping: theta,
        time: 0.0,
    }))
}

/// Turns a stationary state for source `s` into one for `Lambda s`.
///
/// The residual is invariant under the scaling, so it is carried over unchanged.
pub fn rescale_source(result: &SteadyResult, lambda: f64) -> Result<SteadyResult> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::Parameter(format!("Lambda must be positive, got {lambda}")));
    }
    if !result.converged {
        return Err(Error::Precondition(
            "only converged stationary states can be rescaled".into(),
        ));
    }
    Ok(SteadyResult {
        state: result.state.scaled(lambda.sqrt()),
        method: Method::Rescaled,
        ..result.clone()
    })
}

/// Solves the monomer boundary-value problem: rows `a >= 2` stationary without source and
/// `n_1 = c1_monomer`.
pub fn solve_bvp(system: &TruncatedSystem, c1_monomer: f64, tol: f64) -> Result<StateVector> {
    if !(c1_monomer.is_finite() && c1_monomer > 0.0) {
        return Err(Error::Parameter(format!(
            "monomer concentration must be positive, got {c1_monomer}"
        )));
    }
    let monomer = system.with_source(SourceSpec::monomer(1.0)?)?;
    let base = solve_fixed_point(&monomer, tol, DEFAULT_DAMPING)?;
    if !base.converged {
        return Err(Error::Integration {
            time: 0.0,
            reason: format!(
                "monomer-source solve did not converge (residual {:.3e})",
                base.residual_inf
            ),
        });
    }
    let n1 = base.state.at(1);
    if n1 < 1e-30 {
        return Err(Error::Degenerate(format!("monomer concentration N_1 = {n1:e}")));
    }
    Ok(base.state.scaled(c1_monomer / n1))
}

/// Largest residual of the boundary-value rows `a >= 2`, relative to the gross rates.
pub fn bvp_residual(system: &TruncatedSystem, n: &[f64]) -> Result<f64> {
    let homogeneous = system.with_source(SourceSpec::zero())?;
    let dndt = homogeneous.rhs(n)?;
    let mut worst = 0.0f64;
    for a in 2..=system.r_star() {
        let gross = homogeneous.gain(n, a) + n[a - 1] * homogeneous.loss_rate(n, a);
        let net = dndt[a - 1].abs();
        if net > 0.0 {
            worst = worst.max(net / gross);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelSpec;

    fn constant_system(r: usize) -> TruncatedSystem {
        TruncatedSystem::new(
            KernelSpec::constant(1.0).unwrap(),
            SourceSpec::monomer(1.0).unwrap(),
            r,
        )
        .unwrap()
    }

    #[test]
    fn zero_source_is_trivial() {
        let sys = constant_system(16).with_source(SourceSpec::zero()).unwrap();
        for res in [
            solve_time_marching(&sys, 1e-9, 10.0).unwrap(),
            solve_fixed_point(&sys, 1e-9, 0.5).unwrap(),
        ] {
            assert!(res.converged);
            assert_eq!(res.residual_inf, 0.0);
            assert!(res.state.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn parameter_checks() {
        let sys = constant_system(8);
        assert!(solve_fixed_point(&sys, 1e-9, 0.0).is_err());
        assert!(solve_fixed_point(&sys, 1e-9, 1.5).is_err());
        assert!(solve_fixed_point(&sys, -1.0, 0.5).is_err());
        assert!(solve_time_marching(&sys, 0.0, 1.0).is_err());
        assert!(solve_bvp(&sys, 0.0, 1e-9).is_err());
    }

    #[test]
    fn starved_time_budget_is_not_converged() {
        let res = solve_time_marching(&constant_system(64), 1e-9, 1e-3).unwrap();
        assert!(!res.converged);
        assert!(res.residual_inf > 1e-9);
    }

    #[test]
    fn monomer_balance_at_convergence() {
        let sys = constant_system(64);
        let res = solve_fixed_point(&sys, 1e-10, 0.5).unwrap();
        assert!(res.converged);
        let n = &res.state;
        let balance = n[0] * sys.loss_rate(n, 1);
        assert!((balance - 1.0).abs() < 1e-9, "{balance}");
    }

    #[test]
    fn rescale_identity_and_doubling() {
        let sys = constant_system(32);
        let res = solve_fixed_point(&sys, 1e-10, 0.5).unwrap();
        assert_eq!(rescale_source(&res, 1.0).unwrap().state, res.state);
        let four = rescale_source(&res, 4.0).unwrap();
        for (a, b) in four.state.iter().zip(res.state.iter()) {
            assert_eq!(*a, 2.0 * b);
        }
        let scaled_sys = sys.with_source(SourceSpec::monomer(4.0).unwrap()).unwrap();
        assert!(scaled_sys.residual(&four.state).unwrap() <= 4.0 * 1e-10);
        assert!(rescale_source(&res, 0.0).is_err());
        assert!(rescale_source(&res, -2.0).is_err());
    }

    #[test]
    fn bvp_identity() {
        let sys = constant_system(32);
        let base = solve_fixed_point(&sys, 1e-11, 0.5).unwrap();
        let n = solve_bvp(&sys, base.state.at(1), 1e-11).unwrap();
        for (a, b) in n.iter().zip(base.state.iter()) {
            assert!((a - b).abs() <= 1e-14 * b.abs().max(1e-300));
        }
    }
}
