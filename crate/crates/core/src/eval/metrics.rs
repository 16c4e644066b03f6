//! Agreement metrics between true and predicted offsets.

use std::collections::BTreeSet;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::circular::{circular_mean, hour_class, HOURS_PER_DAY};

/// Below this mean resultant length a set of angles has no usable mean direction.
pub const UNDEFINED_MEAN_RESULTANT: f64 = 1e-6;

/// Shortest distance on the 24 h clock between two offsets in hours, in [0, 12].
pub fn circular_error(y: f64, yhat: f64) -> f64 {
    let d = (y - yhat).abs().rem_euclid(24.0);
    d.min(24.0 - d)
}

pub fn mean_circular_error(ys: &[i32], yhats: &[i32]) -> f64 {
    if ys.is_empty() {
        return f64::NAN;
    }
    ys.iter()
        .zip(yhats)
        .map(|(y, p)| circular_error(*y as f64 / 60.0, *p as f64 / 60.0))
        .sum::<f64>()
        / ys.len() as f64
}

/// Share of exact matches (offsets compared in minutes).
pub fn accuracy(ys: &[i32], yhats: &[i32]) -> f64 {
    if ys.is_empty() {
        return f64::NAN;
    }
    ys.iter().zip(yhats).filter(|(y, p)| y == p).count() as f64 / ys.len() as f64
}

fn hours_to_radians(minutes: i32) -> f64 {
    minutes as f64 / 60.0 * std::f64::consts::TAU / 24.0
}

fn mean_resultant(angles: &[f64]) -> f64 {
    crate::circular::resultant_length(angles.iter().copied())
}

/// Jammalamadaka-SenGupta circular correlation of two offset samples (minutes).
///
/// `rho = sum sin(a - a_bar) sin(b - b_bar) / sqrt(sum sin^2(a - a_bar) sum sin^2(b - b_bar))`.
/// When either sample has no mean direction (e.g. a class-balanced set of offsets
/// around the whole clock), the uniform-marginal form
/// `(|sum e^{i(a-b)}| - |sum e^{i(a+b)}|) / (2 sqrt(...))` is used instead.
/// Returns NaN for fewer than two pairs or a zero denominator.
pub fn circular_correlation(ys: &[i32], yhats: &[i32]) -> f64 {
    let a: Vec<f64> = ys.iter().map(|m| hours_to_radians(*m)).collect();
    let b: Vec<f64> = yhats.iter().map(|m| hours_to_radians(*m)).collect();
    circular_correlation_radians(&a, &b)
}

pub fn circular_correlation_radians(a: &[f64], b: &[f64]) -> f64 {
    if a.len() < 2 || a.len() != b.len() {
        return f64::NAN;
    }
    let uniform = mean_resultant(a) < UNDEFINED_MEAN_RESULTANT
        || mean_resultant(b) < UNDEFINED_MEAN_RESULTANT;
    let a_bar = circular_mean(a.iter().copied()).unwrap_or(0.0);
    let b_bar = circular_mean(b.iter().copied()).unwrap_or(0.0);
    let sa: f64 = a.iter().map(|x| (x - a_bar).sin().powi(2)).sum();
    let sb: f64 = b.iter().map(|x| (x - b_bar).sin().powi(2)).sum();
    let den = (sa * sb).sqrt();
    if !(den > 1e-12) {
        return f64::NAN;
    }
    let rho = if uniform {
        let resultant = |f: fn(f64, f64) -> f64| {
            let (s, c) = a
                .iter()
                .zip(b)
                .fold((0.0, 0.0), |(s, c), (x, y)| (s + f(*x, *y).sin(), c + f(*x, *y).cos()));
            (s * s + c * c).sqrt()
        };
        (resultant(|x, y| x - y) - resultant(|x, y| x + y)) / (2.0 * den)
    } else {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - a_bar).sin() * (y - b_bar).sin())
            .sum::<f64>()
            / den
    };
    rho.clamp(-1.0, 1.0)
}

/// Ordinal category 0..24 for an offset: rounded hour -11..=12 shifted to start at 0.
pub fn ordinal_category(offset_minutes: i32) -> usize {
    (hour_class(offset_minutes) + 11) as usize
}

pub type Confusion = [[u64; HOURS_PER_DAY]; HOURS_PER_DAY];

/// Counts indexed `[true category][predicted category]`.
pub fn confusion_matrix(ys: &[i32], yhats: &[i32]) -> Confusion {
    let mut m = [[0u64; HOURS_PER_DAY]; HOURS_PER_DAY];
    for (y, p) in ys.iter().zip(yhats) {
        m[ordinal_category(*y)][ordinal_category(*p)] += 1;
    }
    m
}

/// Linearly weighted Cohen's kappa over the 24 ordinal hour categories.
/// NaN when chance disagreement is zero (e.g. a single class on both sides).
pub fn weighted_kappa(ys: &[i32], yhats: &[i32]) -> f64 {
    if ys.is_empty() {
        return f64::NAN;
    }
    let m = confusion_matrix(ys, yhats);
    let n = ys.len() as f64;
    let rows: Vec<f64> = m.iter().map(|r| r.iter().sum::<u64>() as f64).collect();
    let cols: Vec<f64> = (0..HOURS_PER_DAY)
        .map(|j| m.iter().map(|r| r[j]).sum::<u64>() as f64)
        .collect();
    let (mut observed, mut expected) = (0.0, 0.0);
    for i in 0..HOURS_PER_DAY {
        for j in 0..HOURS_PER_DAY {
            let w = (i as f64 - j as f64).abs();
            observed += w * m[i][j] as f64;
            expected += w * rows[i] * cols[j] / n;
        }
    }
    if expected <= 0.0 {
        return f64::NAN;
    }
    1.0 - observed / expected
}

/// Support-weighted F1 over rounded-hour classes. Classes never predicted score zero.
pub fn weighted_f1(ys: &[i32], yhats: &[i32]) -> f64 {
    if ys.is_empty() {
        return f64::NAN;
    }
    let yc: Vec<i32> = ys.iter().map(|m| hour_class(*m)).collect();
    let pc: Vec<i32> = yhats.iter().map(|m| hour_class(*m)).collect();
    let classes: BTreeSet<i32> = yc.iter().chain(&pc).copied().collect();
    let n = yc.len() as f64;
    let mut total = 0.0;
    for c in classes {
        let support = yc.iter().filter(|y| **y == c).count();
        if support == 0 {
            continue;
        }
        let tp = yc.iter().zip(&pc).filter(|(y, p)| **y == c && **p == c).count() as f64;
        let predicted = pc.iter().filter(|p| **p == c).count() as f64;
        let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let recall = tp / support as f64;
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        total += f1 * support as f64 / n;
    }
    total
}

/// The five headline metrics for one set of predictions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub accuracy: f64,
    pub weighted_kappa: f64,
    pub circular_correlation: f64,
    pub mean_circular_error: f64,
    pub weighted_f1: f64,
}

impl MetricSet {
    pub fn compute(ys: &[i32], yhats: &[i32]) -> Self {
        MetricSet {
            accuracy: accuracy(ys, yhats),
            weighted_kappa: weighted_kappa(ys, yhats),
            circular_correlation: circular_correlation(ys, yhats),
            mean_circular_error: mean_circular_error(ys, yhats),
            weighted_f1: weighted_f1(ys, yhats),
        }
    }

    pub fn values(&self) -> [f64; 5] {
        [
            self.accuracy,
            self.weighted_kappa,
            self.circular_correlation,
            self.mean_circular_error,
            self.weighted_f1,
        ]
    }

    pub fn has_undefined(&self) -> bool {
        self.values().iter().any(|v| v.is_nan())
    }
}

/// Stratified random baseline: i.i.d. draws from the reference class frequencies.
pub fn dummy_baseline(reference_offsets: &[i32], n_targets: usize, seed: u64) -> Vec<i32> {
    if reference_offsets.is_empty() {
        return Vec::new();
    }
    let mut classes: Vec<i32> = reference_offsets.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let weights: Vec<usize> = classes
        .iter()
        .map(|c| reference_offsets.iter().filter(|o| *o == c).count())
        .collect();
    let dist = WeightedIndex::new(&weights).expect("positive class counts");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_targets).map(|_| classes[dist.sample(&mut rng)]).collect()
}
