//! Circadian features: hourly profiles, the cyclic GAM smooth and Morlet rhythm features.

mod cwt;
mod gam;

use serde::{Deserialize, Serialize};

pub use cwt::{cwt_coefficients, cwt_features, CwtConfig, RhythmFeatures};
pub use gam::{cyclic_basis, fit_cyclic_gam, GamConfig, SmoothedProfile, GRID_PER_HOUR};

use crate::circular::{hour_of_day, HOURS_PER_DAY};
use crate::error::{Error, Result};
use crate::preprocess::{preprocess, ActivitySeries, DetrendConfig, Stage};

/// Normalized activity distribution over UTC hour of day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourlyProfile {
    pub p: [f64; HOURS_PER_DAY],
    /// Per-hour aggregates `c_h` the distribution was normalized from.
    pub support_counts: [f64; HOURS_PER_DAY],
    /// No mass to normalize; `p` is uniform.
    pub degenerate: bool,
}

/// Aggregate a series by UTC hour of day and normalize.
///
/// A detrended series is first shifted by its minimum so that every value is
/// non-negative; raw and logged series are aggregated as they are.
pub fn hourly_profile(series: &ActivitySeries) -> HourlyProfile {
    let floor = match series.stage {
        Stage::Detrended => series.values.iter().copied().fold(f64::INFINITY, f64::min),
        Stage::Raw | Stage::Logged => 0.0,
    };
    let mut c = [0.0; HOURS_PER_DAY];
    for (i, v) in series.values.iter().enumerate() {
        c[hour_of_day(series.start_hour + i as i64)] += v - floor;
    }
    profile_from_counts(c)
}

/// Normalize 24 non-negative aggregates into a profile.
pub fn profile_from_counts(c: [f64; HOURS_PER_DAY]) -> HourlyProfile {
    let total: f64 = c.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return HourlyProfile {
            p: [1.0 / HOURS_PER_DAY as f64; HOURS_PER_DAY],
            support_counts: c,
            degenerate: true,
        };
    }
    let mut p = [0.0; HOURS_PER_DAY];
    for (ph, ch) in p.iter_mut().zip(&c) {
        *ph = ch / total;
    }
    HourlyProfile {
        p,
        support_counts: c,
        degenerate: false,
    }
}

/// Scalar anchors read off the feature vectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarFeatures {
    /// Hour of minimum normalized activity.
    pub h_min: usize,
    /// Minimum of the smoothed curve on its fine grid, in hours.
    pub h_smooth_min: f64,
    /// Hour with the smallest mean day-over-day phase change.
    pub h_stable_phase: usize,
}

/// Index of the smallest value; the first index wins ties. NaN never wins.
pub fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x < v[best] || v[best].is_nan() {
            best = i;
        }
    }
    best
}

pub fn extract_scalars(
    profile: &HourlyProfile,
    smoothed: &SmoothedProfile,
    rhythm: &RhythmFeatures,
) -> ScalarFeatures {
    ScalarFeatures {
        h_min: argmin(&profile.p),
        h_smooth_min: argmin(&smoothed.grid) as f64 / GRID_PER_HOUR as f64,
        h_stable_phase: argmin(&rhythm.stability),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub detrend: DetrendConfig,
    pub gam: GamConfig,
    pub cwt: CwtConfig,
}

/// Everything the six inference methods consume for one community.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommunityFeatures {
    pub community_id: String,
    pub profile: HourlyProfile,
    pub smoothed: SmoothedProfile,
    pub rhythm: RhythmFeatures,
    pub scalars: ScalarFeatures,
    pub detrend_fallback: bool,
}

impl CommunityFeatures {
    /// Feature vectors rotated forward by `delta` hours, as if every timestamp moved by `delta`.
    pub fn rotated(&self, delta: i64) -> Self {
        use crate::circular::rotate;
        let mut p = self.profile.clone();
        rotate_in_place(&mut p.p, delta);
        rotate_in_place(&mut p.support_counts, delta);
        let mut smoothed = self.smoothed.clone();
        rotate_in_place(&mut smoothed.hourly, delta);
        smoothed.grid = rotate(&smoothed.grid, delta * GRID_PER_HOUR as i64);
        smoothed.coeffs = rotate(&smoothed.coeffs, delta);
        let mut rhythm = self.rhythm.clone();
        rotate_in_place(&mut rhythm.power, delta);
        rotate_in_place(&mut rhythm.mean_phase, delta);
        rotate_in_place(&mut rhythm.coherence, delta);
        rotate_in_place(&mut rhythm.stability, delta);
        let scalars = extract_scalars(&p, &smoothed, &rhythm);
        CommunityFeatures {
            community_id: self.community_id.clone(),
            profile: p,
            smoothed,
            rhythm,
            scalars,
            detrend_fallback: self.detrend_fallback,
        }
    }
}

fn rotate_in_place(v: &mut [f64], delta: i64) {
    let r = crate::circular::rotate(v, delta);
    v.copy_from_slice(&r);
}

/// Preprocess a raw series and extract all features. `Ok(None)` when the
/// sparsity filter rejects the series.
pub fn extract_features(
    community_id: &str,
    raw: &ActivitySeries,
    config: &FeatureConfig,
) -> Result<Option<CommunityFeatures>> {
    let Some(detrended) = preprocess(raw, &config.detrend)? else {
        return Ok(None);
    };
    features_from_detrended(community_id, &detrended, config).map(Some)
}

/// Like [`extract_features`], but a series too short for the wavelet is skipped
/// with a warning instead of failing.
pub fn extract_or_skip(
    community_id: &str,
    raw: &ActivitySeries,
    config: &FeatureConfig,
) -> Result<Option<CommunityFeatures>> {
    match extract_features(community_id, raw, config) {
        Err(Error::InsufficientSpan { len, required }) => {
            log::warn!("skipping `{community_id}`: {len} h of activity, wavelet needs {required} h");
            Ok(None)
        }
        other => other,
    }
}

pub fn features_from_detrended(
    community_id: &str,
    detrended: &ActivitySeries,
    config: &FeatureConfig,
) -> Result<CommunityFeatures> {
    let profile = hourly_profile(detrended);
    let smoothed = fit_cyclic_gam(&profile.support_counts, &config.gam)?;
    let rhythm = cwt_features(detrended, &config.cwt)?;
    let scalars = extract_scalars(&profile, &smoothed, &rhythm);
    Ok(CommunityFeatures {
        community_id: community_id.to_string(),
        profile,
        smoothed,
        rhythm,
        scalars,
        detrend_fallback: detrended.detrend_fallback,
    })
}
