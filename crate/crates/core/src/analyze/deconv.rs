//! Redistribution of inferred community mass to neighbouring offsets.
//!
//! Each inferred offset is treated as the circular centre of mass of a spread of
//! users. A single kernel `w` over the 24 shifts (-11..=12 h) is applied to every
//! offset, under `w >= 0`, `sum w = 1` and `sum w sin(theta) = 0`.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{pearson, spearman, OFFSET_BINS};
use crate::error::{Error, Result};

const SUM_TOL: f64 = 1e-8;
const SINE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Objective {
    /// Minimise the squared distance between redistributed and real shares.
    #[default]
    LeastSquares,
    /// Maximise the Pearson correlation between redistributed and real shares.
    Pearson,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeconvConfig {
    pub objective: Objective,
    pub max_iter: usize,
}

impl Default for DeconvConfig {
    fn default() -> Self {
        DeconvConfig {
            objective: Objective::LeastSquares,
            max_iter: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeconvolutionResult {
    /// Shift in hours for each weight, -11..=12.
    pub shifts: Vec<i32>,
    pub weights: Vec<f64>,
    pub theta: Vec<f64>,
    /// Value of the optimised objective (residual sum of squares or Pearson r).
    pub objective: f64,
    pub pearson: f64,
    pub spearman: f64,
    /// Redistributed inferred mass, on the same scale as the inferred input.
    pub optimized: Vec<f64>,
    pub converged: bool,
}

impl DeconvolutionResult {
    /// `(|sum w - 1|, |sum w sin(theta)|)`.
    pub fn feasibility_residuals(&self) -> (f64, f64) {
        feasibility(&self.weights, &self.theta)
    }
}

pub fn shift_of(index: usize) -> i32 {
    index as i32 - 11
}

pub fn thetas() -> Vec<f64> {
    (0..OFFSET_BINS)
        .map(|k| shift_of(k) as f64 * TAU / OFFSET_BINS as f64)
        .collect()
}

fn feasibility(w: &[f64], theta: &[f64]) -> (f64, f64) {
    let s: f64 = w.iter().sum();
    let b: f64 = w.iter().zip(theta).map(|(w, t)| w * t.sin()).sum();
    ((s - 1.0).abs(), b.abs())
}

/// `C[j][k] = pure[j - shift_k]`: column `k` is the input moved by `shift_k` hours.
fn shift_matrix(pure: &[f64]) -> DMatrix<f64> {
    let n = OFFSET_BINS as i64;
    DMatrix::from_fn(OFFSET_BINS, OFFSET_BINS, |j, k| {
        pure[(j as i64 - shift_of(k) as i64).rem_euclid(n) as usize]
    })
}

fn constraints(theta: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
    let a = DMatrix::from_fn(2, OFFSET_BINS, |r, k| if r == 0 { 1.0 } else { theta[k].sin() });
    (a, DVector::from_vec(vec![1.0, 0.0]))
}

/// Primal active-set method for `min 1/2 x'Hx + g'x` s.t. `Ax = b`, `x >= 0`,
/// started from a feasible `x0`. Returns the final iterate and whether the KKT
/// conditions were met.
pub fn active_set_qp(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    a: &DMatrix<f64>,
    x0: DVector<f64>,
    max_iter: usize,
) -> (DVector<f64>, bool) {
    let n = x0.len();
    let m = a.nrows();
    let mut x = x0;
    let mut fixed: Vec<bool> = x.iter().map(|v| *v <= 0.0).collect();
    for i in 0..n {
        if fixed[i] {
            x[i] = 0.0;
        }
    }
    for _ in 0..max_iter {
        let grad = h * &x + g;
        let free: Vec<usize> = (0..n).filter(|i| !fixed[*i]).collect();
        let nf = free.len();
        let mut kkt = DMatrix::zeros(nf + m, nf + m);
        let mut rhs = DVector::zeros(nf + m);
        for (r, &i) in free.iter().enumerate() {
            for (c, &j) in free.iter().enumerate() {
                kkt[(r, c)] = h[(i, j)];
            }
            for q in 0..m {
                kkt[(r, nf + q)] = a[(q, i)];
                kkt[(nf + q, r)] = a[(q, i)];
            }
            rhs[r] = -grad[i];
        }
        let sol = match kkt.svd(true, true).solve(&rhs, 1e-12) {
            Ok(s) => s,
            Err(_) => return (x, false),
        };
        let mut p = DVector::zeros(n);
        for (r, &i) in free.iter().enumerate() {
            p[i] = sol[r];
        }
        let nu = sol.rows(nf, m).into_owned();
        if p.amax() < 1e-13 {
            let mult = &grad + a.transpose() * &nu;
            let worst = (0..n)
                .filter(|i| fixed[*i])
                .min_by(|&i, &j| mult[i].total_cmp(&mult[j]));
            match worst {
                Some(i) if mult[i] < -1e-12 => fixed[i] = false,
                _ => return (x, true),
            }
            continue;
        }
        let mut step = 1.0;
        let mut blocking = None;
        for &i in &free {
            if p[i] < 0.0 {
                let r = -x[i] / p[i];
                if r < step {
                    step = r;
                    blocking = Some(i);
                }
            }
        }
        x += p * step;
        if let Some(i) = blocking {
            x[i] = 0.0;
            fixed[i] = true;
        }
    }
    (x, false)
}

/// Euclidean projection of `z` onto the feasible set, warm-started at feasible `start`.
fn project(z: &DVector<f64>, a: &DMatrix<f64>, start: &DVector<f64>) -> DVector<f64> {
    let n = z.len();
    let (x, _) = active_set_qp(&DMatrix::identity(n, n), &(-z), a, start.clone(), 10 * n + 100);
    x
}

fn corr_and_grad(c: &DMatrix<f64>, w: &DVector<f64>, real_c: &DVector<f64>) -> (f64, DVector<f64>) {
    let y = c * w;
    let mean = y.mean();
    let yc = y.map(|v| v - mean);
    let (ny, nr) = (yc.norm(), real_c.norm());
    if ny == 0.0 || nr == 0.0 {
        return (f64::NAN, DVector::zeros(w.len()));
    }
    let r = yc.dot(real_c) / (ny * nr);
    let dy = real_c / (ny * nr) - &yc * (r / (ny * ny));
    (r, c.transpose() * dy)
}

fn maximise_pearson(
    c: &DMatrix<f64>,
    a: &DMatrix<f64>,
    real: &DVector<f64>,
    start: DVector<f64>,
    max_iter: usize,
) -> (DVector<f64>, bool) {
    let mean = real.mean();
    let real_c = real.map(|v| v - mean);
    let mut w = start;
    let (mut f, mut grad) = corr_and_grad(c, &w, &real_c);
    let mut t = 1.0;
    for _ in 0..max_iter {
        let mut accepted = false;
        while t > 1e-12 {
            let cand = project(&(&w + &grad * t), a, &w);
            let (fc, gc) = corr_and_grad(c, &cand, &real_c);
            if fc >= f + 1e-4 * grad.dot(&(&cand - &w)) && fc.is_finite() {
                let moved = (&cand - &w).amax();
                let gain = fc - f;
                w = cand;
                f = fc;
                grad = gc;
                t *= 2.0;
                accepted = true;
                if moved < 1e-10 || gain < 1e-13 {
                    return (w, true);
                }
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return (w, true);
        }
    }
    (w, false)
}

/// Find the shift kernel that best aligns `pure` (inferred mass per offset,
/// -11..=12 h) with `real` (real-user share per offset).
pub fn deconvolve(pure: &[f64], real: &[f64], config: &DeconvConfig) -> Result<DeconvolutionResult> {
    if pure.len() != OFFSET_BINS || real.len() != OFFSET_BINS {
        return Err(Error::Config(format!(
            "deconvolution needs {OFFSET_BINS} offsets, got {} and {}",
            pure.len(),
            real.len()
        )));
    }
    if pure.iter().chain(real).any(|v| !(*v >= 0.0)) {
        return Err(Error::Degenerate("negative or missing share in deconvolution input"));
    }
    let (pure_total, real_total): (f64, f64) = (pure.iter().sum(), real.iter().sum());
    if pure_total == 0.0 || real_total == 0.0 {
        return Err(Error::Degenerate("all-zero distribution in deconvolution input"));
    }
    let p: Vec<f64> = pure.iter().map(|v| v / pure_total).collect();
    let r = DVector::from_iterator(OFFSET_BINS, real.iter().map(|v| v / real_total));
    let theta = thetas();
    let c = shift_matrix(&p);
    let (a, _) = constraints(&theta);
    let uniform = DVector::from_element(OFFSET_BINS, 1.0 / OFFSET_BINS as f64);

    let h = c.transpose() * &c * 2.0;
    let g = c.transpose() * &r * -2.0;
    let (mut w, mut converged) = active_set_qp(&h, &g, &a, uniform, config.max_iter);
    if config.objective == Objective::Pearson {
        let (wp, cp) = maximise_pearson(&c, &a, &r, w, config.max_iter);
        w = wp;
        converged &= cp;
    }
    let mut weights: Vec<f64> = w.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let (sum_res, sine_res) = feasibility(&weights, &theta);
    if sum_res > SUM_TOL || sine_res > SINE_TOL {
        log::warn!("deconvolution iterate infeasible (sum {sum_res:.2e}, sine {sine_res:.2e}); falling back to the identity kernel");
        weights = vec![0.0; OFFSET_BINS];
        weights[11] = 1.0;
        converged = false;
    }
    let wv = DVector::from_vec(weights.clone());
    let y = &c * &wv;
    let residual = (&y - &r).norm_squared();
    let y_vec: Vec<f64> = y.iter().copied().collect();
    let r_vec: Vec<f64> = r.iter().copied().collect();
    let pr = pearson(&y_vec, &r_vec);
    let objective = match config.objective {
        Objective::LeastSquares => residual,
        Objective::Pearson => pr,
    };
    Ok(DeconvolutionResult {
        shifts: (0..OFFSET_BINS).map(shift_of).collect(),
        weights,
        theta,
        objective,
        pearson: pr,
        spearman: spearman(&y_vec, &r_vec),
        optimized: y_vec.iter().map(|v| v * pure_total).collect(),
        converged,
    })
}
