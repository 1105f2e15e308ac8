//! Observables of a (stationary) state: fluxes, moments, band-averaged tails, exponent fits and
//! rescaled profiles.

use serde::{Deserialize, Serialize};

use crate::discrete::TruncatedSystem;
use crate::error::{Error, Result};

/// Cluster-size flux `J_a`, `a = 0..R*-1`, with `J_0 = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluxProfile {
    pub j: Vec<f64>,
    /// Mean of `J_a` over the bulk window.
    pub plateau_value: f64,
    /// `max |J_a - J*| / J*` over the bulk window, `J* = sum_a a s_a` (or the plateau mean when
    /// there is no source).
    pub plateau_deviation: f64,
    /// Bulk window `[max(2 L_s, 8), R*/2]`.
    pub window: (usize, usize),
}

/// Bulk window used for plateau checks, clipped to `[.., R* - 1]` on small systems.
pub fn bulk_window(system: &TruncatedSystem) -> (usize, usize) {
    let top = system.r_star() - 1;
    let lo = (2 * system.source().support()).max(8).min(top);
    let hi = system.r_star() / 2;
    (lo, hi.max(lo).min(top))
}

/// `J_a = sum_{b<=a} sum_{c=a-b+1}^{R*} K[b][c] b n_b n_c`, evaluated straight from the
/// definition with per-row suffix sums.
pub fn flux_profile(system: &TruncatedSystem, n: &[f64]) -> Result<FluxProfile> {
    let r = system.r_star();
    if n.len() != r {
        return Err(Error::Structural(format!(
            "state has {} entries, system has R* = {r}",
            n.len()
        )));
    }
    let mut j = vec![0.0; r];
    let mut suffix = vec![0.0; r + 2];
    for b in 1..r {
        let nb = n[b - 1];
        if nb == 0.0 {
            continue;
        }
        let row = system.table().row(b);
        suffix[r + 1] = 0.0;
        for c in (1..=r).rev() {
            suffix[c] = suffix[c + 1] + row[c - 1] * n[c - 1];
        }
        let w = b as f64 * nb;
        for a in b..r {
            j[a] += w * suffix[a - b + 1];
        }
    }
    let window = bulk_window(system);
    let bulk = &j[window.0..=window.1];
    let plateau_value = bulk.iter().sum::<f64>() / bulk.len() as f64;
    let target = if system.source().is_zero() {
        plateau_value
    } else {
        system.source().mass_rate()
    };
    let plateau_deviation = if target > 0.0 {
        bulk.iter()
            .map(|v| (v - target).abs() / target)
            .fold(0.0, f64::max)
    } else {
        0.0
    };
    Ok(FluxProfile {
        j,
        plateau_value,
        plateau_deviation,
        window,
    })
}

/// Flux through `z` split by the ratio of the two merging sizes `(x, y)`, where `x` is the
/// size carrying the weight: `y > x / delta` (J1), `delta x <= y <= x / delta` (J2) and
/// `y < delta x` (J3).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartialFlux {
    pub z: f64,
    pub delta: f64,
    pub j1: f64,
    pub j2: f64,
    pub j3: f64,
}

impl PartialFlux {
    pub fn total(&self) -> f64 {
        self.j1 + self.j2 + self.j3
    }

    /// Share of the flux carried by very unequal pairs, `(J1 + J3) / J`.
    pub fn off_diagonal_share(&self) -> f64 {
        (self.j1 + self.j3) / self.total()
    }
}

pub fn partial_fluxes(
    system: &TruncatedSystem,
    n: &[f64],
    z: f64,
    delta: f64,
) -> Result<PartialFlux> {
    let r = system.r_star();
    if n.len() != r {
        return Err(Error::Structural(format!(
            "state has {} entries, system has R* = {r}",
            n.len()
        )));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Parameter(format!("delta must lie in (0, 1), got {delta}")));
    }
    if !(z > 0.0 && z <= r as f64) {
        return Err(Error::Parameter(format!("z must lie in (0, R*], got {z}")));
    }
    let (mut j1, mut j2, mut j3) = (0.0, 0.0, 0.0);
    let top = (z.floor() as usize).min(r);
    for x in 1..=top {
        let xf = x as f64;
        let row = system.table().row(x);
        // y > z - x
        let first = ((z - xf).floor() + 1.0).max(1.0) as usize;
        let w = xf * n[x - 1];
        for y in first..=r {
            let term = row[y - 1] * w * n[y - 1];
            let yf = y as f64;
            if yf * delta > xf {
                j1 += term;
            } else if yf < delta * xf {
                j3 += term;
            } else {
                j2 += term;
            }
        }
    }
    Ok(PartialFlux {
        z,
        delta,
        j1,
        j2,
        j3,
    })
}

/// `sum_a a^mu n_a`.
pub fn moment(n: &[f64], mu: f64) -> f64 {
    n.iter()
        .enumerate()
        .map(|(i, v)| ((i + 1) as f64).powf(mu) * v)
        .sum()
}

/// `(1/z) sum_{a in [z/2, z]} n_a`.
pub fn tail_band_average(n: &[f64], z: f64) -> Result<f64> {
    if !(z >= 2.0) {
        return Err(Error::Parameter(format!("band [z/2, z] needs z >= 2, got {z}")));
    }
    if z > n.len() as f64 {
        return Err(Error::Parameter(format!(
            "band [z/2, z] with z = {z} leaves the truncated range 1..={}",
            n.len()
        )));
    }
    let lo = (0.5 * z).ceil() as usize;
    let hi = z.floor() as usize;
    Ok(n[lo - 1..hi].iter().sum::<f64>() / z)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
    pub window: (f64, f64),
    pub points: usize,
}

/// Band-average sample points per octave used by [`fit_exponent`].
pub const FIT_POINTS_PER_OCTAVE: u32 = 4;

/// Least-squares slope of `ln(band average)` against `ln z` over geometrically spaced `z`.
pub fn fit_exponent(n: &[f64], z_lo: f64, z_hi: f64) -> Result<ExponentFit> {
    if !(z_lo >= 2.0 && z_hi / z_lo >= 8.0) {
        return Err(Error::Parameter(format!(
            "fit window needs z_lo >= 2 and z_hi / z_lo >= 8, got [{z_lo}, {z_hi}]"
        )));
    }
    if z_hi > n.len() as f64 / 4.0 {
        return Err(Error::Parameter(format!(
            "fit window upper end {z_hi} is inside the cutoff layer (R*/4 = {})",
            n.len() as f64 / 4.0
        )));
    }
    let step = 2f64.powf(1.0 / FIT_POINTS_PER_OCTAVE as f64);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut z = z_lo;
    while z <= z_hi * (1.0 + 1e-12) {
        let avg = tail_band_average(n, z)?;
        if !(avg > 0.0) {
            return Err(Error::Domain(format!("band average at z = {z} is not positive")));
        }
        xs.push(z.ln());
        ys.push(avg.ln());
        z *= step;
    }
    let (slope, intercept, stderr) = least_squares(&xs, &ys)?;
    Ok(ExponentFit {
        slope,
        intercept,
        stderr,
        window: (z_lo, z_hi),
        points: xs.len(),
    })
}

/// Ordinary least squares `y = slope x + intercept`; returns the slope's standard error too.
pub fn least_squares(xs: &[f64], ys: &[f64]) -> Result<(f64, f64, f64)> {
    let m = xs.len();
    if m < 5 || ys.len() != m {
        return Err(Error::Parameter(format!(
            "a fit needs at least 5 points, got {m}"
        )));
    }
    let mf = m as f64;
    let mx = xs.iter().sum::<f64>() / mf;
    let my = ys.iter().sum::<f64>() / mf;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let e = y - (slope * x + intercept);
            e * e
        })
        .sum();
    let stderr = (sse / (mf - 2.0) / sxx).sqrt();
    Ok((slope, intercept, stderr))
}

/// Geometric bins `[x_min q^k, x_min q^(k+1))`, `q = 2^(1/per_octave)`, covering `[x_min, x_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometricBins {
    pub x_min: f64,
    pub x_max: f64,
    pub per_octave: u32,
}

impl GeometricBins {
    pub fn new(x_min: f64, x_max: f64, per_octave: u32) -> Result<Self> {
        if !(x_min > 0.0 && x_max > x_min && x_max.is_finite() && per_octave > 0) {
            return Err(Error::Parameter(format!(
                "invalid geometric bins [{x_min}, {x_max}] with {per_octave} per octave"
            )));
        }
        Ok(Self {
            x_min,
            x_max,
            per_octave,
        })
    }

    pub fn edges(&self) -> Vec<f64> {
        let q = 2f64.powf(1.0 / self.per_octave as f64);
        let count = ((self.x_max / self.x_min).log2() * self.per_octave as f64 - 1e-9).ceil()
            as usize;
        (0..=count.max(1))
            .map(|k| self.x_min * q.powi(k as i32))
            .collect()
    }
}

/// Binned measure over `x > 0`. Bins that received no sample point are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub masses: Vec<Option<f64>>,
}

impl Histogram {
    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// Mass divided by bin width.
    pub fn densities(&self) -> Vec<Option<f64>> {
        self.edges
            .windows(2)
            .zip(&self.masses)
            .map(|(w, m)| m.map(|m| m / (w[1] - w[0])))
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.iter().all(Option::is_none)
    }
}

/// Bins the measure `f_R = R^((1+gamma)/2) sum_a n_a delta_(a/R)`, whose density does not
/// depend on `R` for a power-law tail `n_a ~ a^-((3+gamma)/2)`.
///
/// Only nonzero entries count as sample points, so the zero state gives an empty histogram.
pub fn rescaled_profile(n: &[f64], r: f64, gamma: f64, bins: &GeometricBins) -> Result<Histogram> {
    if !(r > 0.0 && r <= n.len() as f64) {
        return Err(Error::Parameter(format!(
            "rescaling length R = {r} must lie in (0, R* = {}]",
            n.len()
        )));
    }
    let edges = bins.edges();
    let mut masses: Vec<Option<f64>> = vec![None; edges.len() - 1];
    let weight = r.powf(0.5 * (1.0 + gamma));
    let q = 2f64.powf(1.0 / bins.per_octave as f64);
    for (i, &v) in n.iter().enumerate() {
        if v == 0.0 {
            continue;
        }
        let x = (i + 1) as f64 / r;
        if x < edges[0] || x >= edges[edges.len() - 1] {
            continue;
        }
        let mut k = ((x / bins.x_min).ln() / q.ln()).floor() as usize;
        k = k.min(masses.len() - 1);
        // Guard the rounding of the log at the edges.
        while k > 0 && x < edges[k] {
            k -= 1;
        }
        while k + 1 < masses.len() && x >= edges[k + 1] {
            k += 1;
        }
        *masses[k].get_or_insert(0.0) += weight * v;
    }
    Ok(Histogram { edges, masses })
}

/// Largest `|ln rho_1 - ln rho_2|` over bins whose centre lies in `[x_lo, x_hi]` and that are
/// present in every profile. Profiles must share their bin edges.
pub fn collapse_deviation(profiles: &[Histogram], x_lo: f64, x_hi: f64) -> Result<f64> {
    let Some(first) = profiles.first() else {
        return Err(Error::Parameter("no profiles to compare".into()));
    };
    if profiles.iter().any(|p| p.edges != first.edges) {
        return Err(Error::Structural("profiles use different bins".into()));
    }
    let mut worst = 0.0f64;
    let mut compared = 0;
    for (b, c) in first.centers().iter().enumerate() {
        if *c < x_lo || *c > x_hi {
            continue;
        }
        let logs: Option<Vec<f64>> = profiles
            .iter()
            .map(|p| p.masses[b].filter(|m| *m > 0.0).map(f64::ln))
            .collect();
        let Some(logs) = logs else { continue };
        let lo = logs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        worst = worst.max(hi - lo);
        compared += 1;
    }
    if compared == 0 {
        return Err(Error::Parameter(format!(
            "no common bins with centres in [{x_lo}, {x_hi}]"
        )));
    }
    Ok(worst)
}
