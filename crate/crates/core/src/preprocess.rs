//! Per-series preprocessing: sparsity filter, log transform and Hann detrending.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Processing stage of an [`ActivitySeries`]. Transitions only move forward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    Raw,
    Logged,
    Detrended,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Raw => "raw",
            Stage::Logged => "logged",
            Stage::Detrended => "detrended",
        }
    }
}

/// Uniformly spaced hourly values for one community.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivitySeries {
    /// Epoch hour (`floor(unix_seconds / 3600)`) of the first sample.
    pub start_hour: i64,
    pub values: Vec<f64>,
    pub stage: Stage,
    /// Set when the series was shorter than the Hann window and the global mean was removed instead.
    pub detrend_fallback: bool,
}

impl ActivitySeries {
    pub fn raw(start_hour: i64, counts: Vec<f64>) -> Self {
        ActivitySeries {
            start_hour,
            values: counts,
            stage: Stage::Raw,
            detrend_fallback: false,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Epoch hour one past the last sample.
    pub fn end_hour(&self) -> i64 {
        self.start_hour + self.values.len() as i64
    }

    /// Sum of values; the event count for a raw series.
    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Relabel the time axis by `delta` hours. The values are untouched, so every
    /// hour-of-day aggregate rotates by exactly `delta`.
    pub fn shifted(&self, delta: i64) -> Self {
        ActivitySeries {
            start_hour: self.start_hour + delta,
            ..self.clone()
        }
    }

    fn expect_stage(&self, expected: Stage) -> Result<()> {
        if self.stage != expected {
            return Err(Error::Stage {
                expected: expected.name(),
                found: self.stage.name(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetrendConfig {
    /// Hann window length in hours; the window covers `[-W/2, W/2]`.
    pub window_hours: usize,
    /// Minimum number of strictly positive hours required by the sparsity filter.
    pub min_nonzero: usize,
}

impl Default for DetrendConfig {
    fn default() -> Self {
        DetrendConfig {
            window_hours: 384,
            min_nonzero: 50,
        }
    }
}

impl DetrendConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_hours < 24 || self.window_hours % 2 != 0 {
            return Err(Error::Config(format!(
                "hann window must be even and at least 24 hours, got {}",
                self.window_hours
            )));
        }
        if self.min_nonzero == 0 {
            return Err(Error::Config("min-nonzero must be at least 1".into()));
        }
        Ok(())
    }
}

/// True when the series has at least `min_nonzero` strictly positive hours.
pub fn sparsity_filter(series: &ActivitySeries, min_nonzero: usize) -> bool {
    series.values.iter().filter(|&&c| c > 0.0).count() >= min_nonzero
}

/// Replace every count `c` with `ln(1 + c)`.
pub fn log_transform(series: &ActivitySeries) -> Result<ActivitySeries> {
    series.expect_stage(Stage::Raw)?;
    Ok(ActivitySeries {
        values: series.values.iter().map(|c| c.ln_1p()).collect(),
        stage: Stage::Logged,
        ..series.clone()
    })
}

/// Hann weight `w_k = (1 + cos(2 pi k / W)) / 2`.
#[inline]
pub fn hann_weight(k: i64, window: usize) -> f64 {
    0.5 * (1.0 + (2.0 * PI * k as f64 / window as f64).cos())
}

/// Centered Hann-weighted moving average. Near the edges the weights are
/// renormalized over the in-range offsets.
pub fn hann_trend(values: &[f64], window: usize) -> Vec<f64> {
    let half = (window / 2) as i64;
    let weights: Vec<f64> = (-half..=half).map(|k| hann_weight(k, window)).collect();
    let n = values.len() as i64;
    (0..n)
        .map(|t| {
            let lo = (t - half).max(0);
            let hi = (t + half).min(n - 1);
            let mut num = 0.0;
            let mut den = 0.0;
            for s in lo..=hi {
                let w = weights[(s - t + half) as usize];
                num += w * values[s as usize];
                den += w;
            }
            num / den
        })
        .collect()
}

/// Subtract the local Hann trend. Series shorter than the window fall back to
/// global-mean removal and set [`ActivitySeries::detrend_fallback`].
pub fn hann_detrend(series: &ActivitySeries, config: &DetrendConfig) -> Result<ActivitySeries> {
    series.expect_stage(Stage::Logged)?;
    config.validate()?;
    if series.is_empty() {
        return Err(Error::Degenerate("empty series"));
    }
    let (values, fallback) = if series.len() < config.window_hours {
        let mean = series.total() / series.len() as f64;
        (series.values.iter().map(|x| x - mean).collect(), true)
    } else {
        let trend = hann_trend(&series.values, config.window_hours);
        (
            series
                .values
                .iter()
                .zip(&trend)
                .map(|(x, m)| x - m)
                .collect(),
            false,
        )
    };
    Ok(ActivitySeries {
        start_hour: series.start_hour,
        values,
        stage: Stage::Detrended,
        detrend_fallback: fallback,
    })
}

/// Full preprocessing chain. Returns `None` when the sparsity filter rejects the series.
pub fn preprocess(series: &ActivitySeries, config: &DetrendConfig) -> Result<Option<ActivitySeries>> {
    series.expect_stage(Stage::Raw)?;
    if !sparsity_filter(series, config.min_nonzero) {
        return Ok(None);
    }
    let logged = log_transform(series)?;
    hann_detrend(&logged, config).map(Some)
}
