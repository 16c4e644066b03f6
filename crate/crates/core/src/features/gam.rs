//! Poisson GAM with a cyclic cubic spline in hour of day.
//!
//! `log(lambda(h)) = beta_0 + sum_j beta_j b_j(h)` where the `b_j` are periodic cubic
//! B-splines with one knot per whole hour. A second-difference penalty on the
//! coefficients controls smoothness. Knots on every hour make the smoother commute
//! with whole-hour rotations of the input.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::circular::HOURS_PER_DAY;
use crate::error::{Error, Result};

/// Fine-grid points per hour on which the smoothed curve is evaluated.
pub const GRID_PER_HOUR: usize = 10;

const N_BASIS: usize = HOURS_PER_DAY;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GamConfig {
    /// Weight of the cyclic second-difference penalty, relative to counts scaled to unit mean.
    pub smoothing: f64,
    /// Ridge added to every coefficient for conditioning.
    pub ridge: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for GamConfig {
    fn default() -> Self {
        GamConfig {
            smoothing: 0.5,
            ridge: 1e-8,
            max_iter: 100,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothedProfile {
    /// Expected count at each whole hour.
    pub hourly: [f64; HOURS_PER_DAY],
    /// Expected count on the `0.1 h` grid, `24 * GRID_PER_HOUR` points starting at 0.
    pub grid: Vec<f64>,
    pub intercept: f64,
    /// Spline coefficients centered on the intercept, one per hourly knot.
    pub coeffs: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl SmoothedProfile {
    /// Rebuild the hourly and grid evaluations from fitted coefficients.
    pub fn from_coefficients(intercept: f64, coeffs: Vec<f64>, iterations: usize, converged: bool) -> Self {
        let mut out = SmoothedProfile {
            hourly: [0.0; HOURS_PER_DAY],
            grid: Vec::new(),
            intercept,
            coeffs,
            iterations,
            converged,
        };
        for h in 0..HOURS_PER_DAY {
            out.hourly[h] = out.eval(h as f64);
        }
        out.grid = (0..HOURS_PER_DAY * GRID_PER_HOUR)
            .map(|g| out.eval(g as f64 / GRID_PER_HOUR as f64))
            .collect();
        out
    }

    pub fn basis_size(&self) -> usize {
        self.coeffs.len()
    }

    /// Evaluate the fitted curve at any hour; periodic in 24.
    pub fn eval(&self, hour: f64) -> f64 {
        let eta: f64 = self.intercept
            + self
                .coeffs
                .iter()
                .enumerate()
                .map(|(j, b)| b * cyclic_basis(j, hour))
                .sum::<f64>();
        eta.exp()
    }

    /// Hourly expectations normalized to sum to one.
    pub fn normalized_hourly(&self) -> [f64; HOURS_PER_DAY] {
        let total: f64 = self.hourly.iter().sum();
        let mut out = [0.0; HOURS_PER_DAY];
        for (o, v) in out.iter_mut().zip(&self.hourly) {
            *o = v / total;
        }
        out
    }
}

fn cubic_bspline(x: f64) -> f64 {
    let a = x.abs();
    if a < 1.0 {
        2.0 / 3.0 - a * a + 0.5 * a * a * a
    } else if a < 2.0 {
        let t = 2.0 - a;
        t * t * t / 6.0
    } else {
        0.0
    }
}

/// Periodic cubic B-spline centered on knot `j` (hour `j`), evaluated at `hour`.
pub fn cyclic_basis(j: usize, hour: f64) -> f64 {
    let d = (hour - j as f64 + 12.0).rem_euclid(24.0) - 12.0;
    cubic_bspline(d)
}

fn design(hours: impl Iterator<Item = f64>) -> DMatrix<f64> {
    let hours: Vec<f64> = hours.collect();
    DMatrix::from_fn(hours.len(), N_BASIS, |r, j| cyclic_basis(j, hours[r]))
}

fn penalty(smoothing: f64, ridge: f64) -> DMatrix<f64> {
    // rows of D are cyclic second differences
    let d = DMatrix::from_fn(N_BASIS, N_BASIS, |r, c| {
        let off = (c + N_BASIS - r) % N_BASIS;
        match off {
            0 => -2.0,
            1 => 1.0,
            o if o == N_BASIS - 1 => 1.0,
            _ => 0.0,
        }
    });
    let mut s = d.transpose() * d * smoothing;
    for i in 0..N_BASIS {
        s[(i, i)] += ridge;
    }
    s
}

/// Fit the cyclic Poisson GAM to 24 non-negative hourly aggregates by penalized IRLS.
pub fn fit_cyclic_gam(counts: &[f64; HOURS_PER_DAY], config: &GamConfig) -> Result<SmoothedProfile> {
    if counts.iter().any(|c| *c < 0.0 || !c.is_finite()) {
        return Err(Error::Degenerate("negative or non-finite hourly aggregate"));
    }
    let mean = counts.iter().sum::<f64>() / HOURS_PER_DAY as f64;
    if !(mean > 0.0) {
        return Err(Error::Degenerate("all-zero hourly aggregates"));
    }
    // Fit on unit-mean counts; the scale goes back into the intercept.
    let y = DVector::from_iterator(HOURS_PER_DAY, counts.iter().map(|c| c / mean));
    let x = design((0..HOURS_PER_DAY).map(|h| h as f64));
    let s = penalty(config.smoothing, config.ridge);

    let mut beta = DVector::<f64>::zeros(N_BASIS);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iter {
        iterations += 1;
        let eta = &x * &beta;
        let mu = eta.map(f64::exp);
        let z = DVector::from_fn(HOURS_PER_DAY, |i, _| eta[i] + (y[i] - mu[i]) / mu[i]);
        let xtw = DMatrix::from_fn(N_BASIS, HOURS_PER_DAY, |j, i| x[(i, j)] * mu[i]);
        let lhs = &xtw * &x + &s;
        let rhs = &xtw * z;
        let next = lhs
            .cholesky()
            .map(|c| c.solve(&rhs))
            .ok_or(Error::Degenerate("penalized normal equations not positive definite"))?;
        let step = (&next - &beta).amax();
        beta = next;
        if step < config.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        warn!("cyclic GAM did not converge after {iterations} iterations");
    }

    let intercept = beta.mean();
    let coeffs: Vec<f64> = beta.iter().map(|b| b - intercept).collect();
    Ok(SmoothedProfile::from_coefficients(
        intercept + mean.ln(),
        coeffs,
        iterations,
        converged,
    ))
}
