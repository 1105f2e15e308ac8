//! Dormand–Prince 5(4) embedded Runge–Kutta pair with adaptive step size.

use std::ops::ControlFlow;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepControl {
    pub rtol: f64,
    pub atol: f64,
    /// First trial step; `None` picks one from the initial derivative.
    pub initial_step: Option<f64>,
    /// Steps below this are treated as underflow.
    pub min_step: f64,
    pub max_step: f64,
    pub max_steps: usize,
}

impl Default for StepControl {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: 1e-12,
            initial_step: None,
            min_step: 1e-14,
            max_step: f64::INFINITY,
            max_steps: 10_000_000,
        }
    }
}

impl StepControl {
    pub fn validate(&self) -> Result<()> {
        let ok = self.rtol > 0.0
            && self.atol >= 0.0
            && self.min_step > 0.0
            && self.max_step >= self.min_step
            && self.initial_step.is_none_or(|h| h > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!("invalid step control {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IntegrationStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
    pub last_step: f64,
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// Difference between the 5th and embedded 4th order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Integrates `dy/dt = f(t, y)` from `t0` to `t_end`.
///
/// `f` writes the derivative into its second argument. After every accepted step `observe`
/// receives `(t, y, dy/dt)` and may modify `y` in place (used for positivity clamping); returning
/// `ControlFlow::Break` stops the integration early. Returns the final time.
pub fn integrate<F, O>(
    mut f: F,
    t0: f64,
    t_end: f64,
    y: &mut [f64],
    control: &StepControl,
    mut observe: O,
) -> Result<(f64, IntegrationStats)>
where
    F: FnMut(f64, &[f64], &mut [f64]),
    O: FnMut(f64, &mut [f64], &[f64]) -> ControlFlow<()>,
{
    control.validate()?;
    let dim = y.len();
    let mut stats = IntegrationStats::default();
    let mut k1 = vec![0.0; dim];
    let mut k2 = vec![0.0; dim];
    let mut k3 = vec![0.0; dim];
    let mut k4 = vec![0.0; dim];
    let mut k5 = vec![0.0; dim];
    let mut k6 = vec![0.0; dim];
    let mut k7 = vec![0.0; dim];
    let mut stage = vec![0.0; dim];
    let mut y_new = vec![0.0; dim];

    let mut t = t0;
    f(t, y, &mut k1);
    stats.evaluations += 1;
    if observe(t, y, &k1).is_break() || t >= t_end {
        return Ok((t, stats));
    }

    let mut h = match control.initial_step {
        Some(h) => h,
        None => {
            let mut d0 = 0.0f64;
            let mut d1 = 0.0f64;
            for i in 0..dim {
                let sc = control.atol + control.rtol * y[i].abs();
                d0 = d0.max(y[i].abs() / sc);
                d1 = d1.max(k1[i].abs() / sc);
            }
            if d0 < 1e-5 || d1 < 1e-5 {
                1e-6
            } else {
                0.01 * d0 / d1
            }
        }
    }
    .clamp(control.min_step, control.max_step);

    let mut prev_err = 1e-4f64;
    while t < t_end {
        if stats.accepted + stats.rejected >= control.max_steps {
            return Err(Error::Integration {
                time: t,
                reason: format!("step budget of {} exhausted", control.max_steps),
            });
        }
        let last = t + h >= t_end;
        if last {
            h = t_end - t;
        }

        for i in 0..dim {
            stage[i] = y[i] + h * A21 * k1[i];
        }
        f(t + C2 * h, &stage, &mut k2);
        for i in 0..dim {
            stage[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        f(t + C3 * h, &stage, &mut k3);
        for i in 0..dim {
            stage[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        f(t + C4 * h, &stage, &mut k4);
        for i in 0..dim {
            stage[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        f(t + C5 * h, &stage, &mut k5);
        for i in 0..dim {
            stage[i] = y[i]
                + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        f(t + h, &stage, &mut k6);
        for i in 0..dim {
            y_new[i] = y[i]
                + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        f(t + h, &y_new, &mut k7);
        stats.evaluations += 6;

        let mut err = 0.0f64;
        for i in 0..dim {
            let e = h
                * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sc = control.atol + control.rtol * y[i].abs().max(y_new[i].abs());
            err = err.max((e / sc).abs());
        }
        if !err.is_finite() {
            err = f64::INFINITY;
        }

        if err <= 1.0 {
            t = if last { t_end } else { t + h };
            y.copy_from_slice(&y_new);
            std::mem::swap(&mut k1, &mut k7);
            stats.accepted += 1;
            stats.last_step = h;
            if observe(t, y, &k1).is_break() {
                break;
            }
            // PI controller.
            let factor = 0.9 * err.max(1e-10).powf(-0.7 / 5.0) * prev_err.powf(0.4 / 5.0);
            prev_err = err.max(1e-4);
            h = (h * factor.clamp(0.2, 5.0)).min(control.max_step);
        } else {
            stats.rejected += 1;
            let factor = if err.is_finite() {
                (0.9 * err.powf(-0.2)).max(0.1)
            } else {
                0.1
            };
            h *= factor;
            if h < control.min_step {
                return Err(Error::Integration {
                    time: t,
                    reason: format!(
                        "step size {h:.3e} fell below the minimum {:.3e}",
                        control.min_step
                    ),
                });
            }
        }
    }
    Ok((t, stats))
}
