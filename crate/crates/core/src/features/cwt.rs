//! Complex Morlet wavelet transform at the daily scale and its hour-of-day aggregates.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::circular::{hour_of_day, wrap_angle, HOURS_PER_DAY};
use crate::error::{Error, Result};
use crate::preprocess::ActivitySeries;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CwtConfig {
    /// Bandwidth `f_b` of the complex Morlet wavelet.
    pub bandwidth: f64,
    /// Center frequency `f_c`.
    pub center: f64,
    /// Scale in hours; with hourly sampling and `f_c = 1` this is the period.
    pub scale: f64,
    /// Kernel truncation and edge exclusion radius, in multiples of the scale.
    pub support_radius: f64,
    /// Optional period band `(lo, hi)` in hours. Power is averaged over every
    /// whole-hour scale in the band; phases always come from `scale`.
    pub band: Option<(u32, u32)>,
}

impl Default for CwtConfig {
    fn default() -> Self {
        CwtConfig {
            bandwidth: 1.5,
            center: 1.0,
            scale: 24.0,
            support_radius: 4.0,
            band: None,
        }
    }
}

impl CwtConfig {
    fn radius(&self, scale: f64) -> usize {
        (self.support_radius * scale).ceil() as usize
    }

    /// Shortest series for which at least one full day of interior coefficients exists.
    pub fn min_len(&self) -> usize {
        let widest = match self.band {
            Some((_, hi)) => (hi as f64 * self.center).max(self.scale),
            None => self.scale,
        };
        2 * self.radius(widest) + HOURS_PER_DAY
    }
}

/// `psi(t) = (pi f_b)^(-1/2) exp(i 2 pi f_c t) exp(-t^2 / f_b)`.
fn morlet(t: f64, bandwidth: f64, center: f64) -> Complex64 {
    let envelope = (-(t * t) / bandwidth).exp() / (PI * bandwidth).sqrt();
    Complex64::from_polar(envelope, 2.0 * PI * center * t)
}

/// `W_n(s) = sum_t x_t conj(psi((t - n) / s))` for every `n` whose kernel lies fully
/// inside the series. Returns `(first_n, coefficients)`.
pub fn cwt_coefficients(x: &[f64], scale: f64, config: &CwtConfig) -> (usize, Vec<Complex64>) {
    let radius = config.radius(scale);
    let kernel: Vec<Complex64> = (-(radius as i64)..=radius as i64)
        .map(|m| morlet(m as f64 / scale, config.bandwidth, config.center).conj())
        .collect();
    if x.len() < 2 * radius + 1 {
        return (radius, Vec::new());
    }
    let coeffs = (radius..x.len() - radius)
        .map(|n| {
            let window = &x[n - radius..=n + radius];
            window
                .iter()
                .zip(&kernel)
                .fold(Complex64::new(0.0, 0.0), |acc, (v, k)| acc + k * v)
        })
        .collect();
    (radius, coeffs)
}

/// Hour-of-day aggregates of the daily-scale wavelet coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhythmFeatures {
    /// Mean `|W_n(s)|^2` per hour.
    pub power: [f64; HOURS_PER_DAY],
    /// Circular mean of `arg W_n(s)` per hour, in (-pi, pi].
    pub mean_phase: [f64; HOURS_PER_DAY],
    /// Phase coherence `R_h` in [0, 1].
    pub coherence: [f64; HOURS_PER_DAY],
    /// Mean wrapped `|Phase_{d,h} - Phase_{d-1,h}|` per hour, in [0, pi].
    pub stability: [f64; HOURS_PER_DAY],
    pub scale_hours: f64,
}

impl RhythmFeatures {
    /// Power vector normalized to sum to one.
    pub fn normalized_power(&self) -> [f64; HOURS_PER_DAY] {
        let total: f64 = self.power.iter().sum();
        let mut out = [0.0; HOURS_PER_DAY];
        for (o, v) in out.iter_mut().zip(&self.power) {
            *o = if total > 0.0 {
                v / total
            } else {
                1.0 / HOURS_PER_DAY as f64
            };
        }
        out
    }
}

/// Wavelet power, phase, coherence and phase stability by UTC hour.
///
/// Coefficients within one support radius of either edge are excluded.
pub fn cwt_features(series: &ActivitySeries, config: &CwtConfig) -> Result<RhythmFeatures> {
    let required = config.min_len();
    if series.len() < required {
        return Err(Error::InsufficientSpan {
            len: series.len(),
            required,
        });
    }
    let x = &series.values;
    let (first, coeffs) = cwt_coefficients(x, config.scale, config);
    // Restrict every scale to the same interior as the widest one.
    let edge = (config.min_len() - HOURS_PER_DAY) / 2;
    let interior = edge..x.len() - edge;

    let mut phases: [Vec<f64>; HOURS_PER_DAY] = Default::default();
    for n in interior.clone() {
        let w = coeffs[n - first];
        phases[hour_of_day(series.start_hour + n as i64)].push(w.arg());
    }

    let mut power = [0.0; HOURS_PER_DAY];
    let mut power_n = [0usize; HOURS_PER_DAY];
    let scales: Vec<f64> = match config.band {
        None => vec![config.scale],
        Some((lo, hi)) => (lo..=hi).map(|p| p as f64 * config.center).collect(),
    };
    for &s in &scales {
        let (first_s, cs) = if s == config.scale {
            (first, coeffs.clone())
        } else {
            cwt_coefficients(x, s, config)
        };
        for n in interior.clone() {
            let h = hour_of_day(series.start_hour + n as i64);
            power[h] += cs[n - first_s].norm_sqr();
            power_n[h] += 1;
        }
    }
    for (p, n) in power.iter_mut().zip(power_n) {
        if n > 0 {
            *p /= n as f64;
        }
    }

    let mut mean_phase = [0.0; HOURS_PER_DAY];
    let mut coherence = [0.0; HOURS_PER_DAY];
    let mut stability = [0.0; HOURS_PER_DAY];
    for h in 0..HOURS_PER_DAY {
        let ph = &phases[h];
        let (s, c) = ph
            .iter()
            .fold((0.0, 0.0), |(s, c), a| (s + a.sin(), c + a.cos()));
        mean_phase[h] = if s == 0.0 && c == 0.0 { 0.0 } else { s.atan2(c) };
        coherence[h] = if ph.is_empty() {
            0.0
        } else {
            ((s * s + c * c).sqrt() / ph.len() as f64).min(1.0)
        };
        // consecutive entries for a given hour are exactly one day apart
        stability[h] = if ph.len() < 2 {
            0.0
        } else {
            ph.windows(2)
                .map(|w| wrap_angle(w[1] - w[0]).abs())
                .sum::<f64>()
                / (ph.len() - 1) as f64
        };
    }

    Ok(RhythmFeatures {
        power,
        mean_phase,
        coherence,
        stability,
        scale_hours: config.scale,
    })
}
