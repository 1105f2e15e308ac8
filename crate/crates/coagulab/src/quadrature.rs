//! Adaptive Gauss–Kronrod quadrature and dyadic block series for improper integrals with
//! power-type endpoint behaviour.

use crate::error::Error;

/// Why a quadrature did not produce a value.
#[derive(Debug)]
pub(crate) enum Failure {
    /// Block sums do not decay geometrically.
    Divergent(String),
    /// Refinement or block budget exhausted.
    Inconclusive(String),
    /// The integrand itself failed.
    Integrand(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Integrand(e)
    }
}

pub(crate) type Outcome = std::result::Result<f64, Failure>;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// One 15-point Kronrod rule with the embedded 7-point Gauss estimate as error.
fn gk15<F: FnMut(f64) -> Outcome>(f: &mut F, a: f64, b: f64) -> std::result::Result<(f64, f64), Failure> {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c)?;
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for i in 0..7 {
        let dx = h * XGK[i];
        let s = f(c - dx)? + f(c + dx)?;
        kronrod += WGK[i] * s;
        if i % 2 == 1 {
            gauss += WG[i / 2] * s;
        }
    }
    Ok((kronrod * h, ((kronrod - gauss) * h).abs()))
}

const MAX_DEPTH: u32 = 24;

/// Adaptive bisection until every piece meets `rel` relative to the whole interval's value.
pub(crate) fn adaptive<F: FnMut(f64) -> Outcome>(f: &mut F, a: f64, b: f64, rel: f64) -> Outcome {
    let (whole, err) = gk15(f, a, b)?;
    if err <= rel * whole.abs() || err < f64::MIN_POSITIVE {
        return Ok(whole);
    }
    let budget = rel * whole.abs().max(f64::MIN_POSITIVE);
    refine(f, a, b, whole, budget, b - a, 0)
}

fn refine<F: FnMut(f64) -> Outcome>(
    f: &mut F,
    a: f64,
    b: f64,
    estimate: f64,
    budget: f64,
    span: f64,
    depth: u32,
) -> Outcome {
    let m = 0.5 * (a + b);
    let (left, el) = gk15(f, a, m)?;
    let (right, er) = gk15(f, m, b)?;
    let share = budget * (b - a) / span;
    if el + er <= share || (left + right - estimate).abs() <= 1e-3 * share {
        return Ok(left + right);
    }
    if depth >= MAX_DEPTH {
        return Err(Failure::Inconclusive(format!(
            "bisection depth {MAX_DEPTH} reached on [{a:.6e}, {b:.6e}]"
        )));
    }
    Ok(refine(f, a, m, left, budget, span, depth + 1)?
        + refine(f, m, b, right, budget, span, depth + 1)?)
}

/// Blocks must shrink by at least this factor to count as geometric decay.
pub(crate) const RATIO_BOUND: f64 = 0.98;
/// Consecutive decaying blocks needed before the tail is trusted.
pub(crate) const DECAY_RUN: usize = 4;
const GROWTH_RUN: usize = 12;
pub(crate) const MAX_BLOCKS: usize = 600;

/// Sums `block(0) + block(1) + ...` with the geometric ratio test.
///
/// Once blocks decay geometrically the sum stops as soon as the geometric bound on the rest
/// falls below `rel`, and that bound is added. `bounded` marks a series that tiles a finite
/// interval with a bounded integrand; such a series may grow for a while before it decays.
pub(crate) fn block_series<B: FnMut(usize) -> Outcome>(
    mut block: B,
    bounded: bool,
    rel: f64,
) -> Outcome {
    let count = if bounded { 2 * MAX_BLOCKS } else { MAX_BLOCKS };
    let mut total = 0.0;
    let mut prev: Option<f64> = None;
    let mut ratios: Vec<f64> = Vec::new();
    let mut decaying = 0;
    let mut growing = 0;
    for k in 0..count {
        let b = block(k)?;
        if !b.is_finite() {
            return Err(Failure::Divergent(format!("block {k} is not finite")));
        }
        total += b;
        if let Some(p) = prev {
            let ratio = if b == 0.0 {
                0.0
            } else if p == 0.0 {
                f64::INFINITY
            } else {
                (b / p).abs()
            };
            ratios.push(ratio);
            if ratio <= RATIO_BOUND {
                decaying += 1;
                growing = 0;
            } else {
                decaying = 0;
                growing = if ratio >= 1.0 { growing + 1 } else { 0 };
            }
        }
        prev = Some(b);
        if !bounded && growing >= GROWTH_RUN {
            return Err(Failure::Divergent(format!(
                "{GROWTH_RUN} consecutive tail blocks failed to decay"
            )));
        }
        if decaying >= DECAY_RUN {
            let rho = ratios[ratios.len() - DECAY_RUN..]
                .iter()
                .copied()
                .fold(0.0, f64::max);
            let rest = b * rho / (1.0 - rho);
            if rest.abs() <= rel * total.abs() {
                return Ok(total + rest);
            }
        }
    }
    if bounded || decaying >= DECAY_RUN {
        Err(Failure::Inconclusive(format!(
            "series still above tolerance after {count} blocks"
        )))
    } else {
        Err(Failure::Divergent(format!(
            "blocks never decayed by ratio <= {RATIO_BOUND} over {DECAY_RUN} consecutive blocks"
        )))
    }
}

/// `int_lo^inf g(z) dz` over dyadic blocks `[lo 2^k, lo 2^(k+1)]`.
pub(crate) fn tail<G: FnMut(f64) -> Outcome>(mut g: G, lo: f64, rel: f64) -> Outcome {
    let ln2 = std::f64::consts::LN_2;
    block_series(
        |k| {
            let t0 = k as f64;
            adaptive(
                &mut |t: f64| {
                    let z = lo * (t * ln2).exp();
                    Ok(g(z)? * z * ln2)
                },
                t0,
                t0 + 1.0,
                rel,
            )
        },
        false,
        rel,
    )
}

/// `int_{c}^{c + h} g(y) dy` with the blocks `[c + h 2^-(k+1), c + h 2^-k]` accumulating towards
/// `c`. `bounded` says that `g` stays bounded at `c`.
pub(crate) fn towards<G: FnMut(f64) -> Outcome>(
    mut g: G,
    c: f64,
    h: f64,
    bounded: bool,
    rel: f64,
) -> Outcome {
    let ln2 = std::f64::consts::LN_2;
    block_series(
        |k| {
            let t0 = k as f64;
            adaptive(
                &mut |t: f64| {
                    let u = h * (-t * ln2).exp();
                    Ok(g(c + u)? * u * ln2)
                },
                t0,
                t0 + 1.0,
                rel,
            )
        },
        bounded,
        rel,
    )
}
