//! The six offset inference methods.
//!
//! Anchor methods assume the community's quietest hour falls at a fixed local time
//! (4 a.m. by default). Reference methods inherit the offset of the labeled
//! community whose feature distribution is closest in Kullback-Leibler divergence.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::circular::{wrap_hours, wrap_minutes, HOURS_PER_DAY};
use crate::error::{Error, Result};
use crate::features::CommunityFeatures;

/// Additive smoothing applied to reference distributions before taking KL divergence.
pub const KL_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    ActivityCounts,
    ActivityCountsSmooth,
    ActivityLull,
    ActivityLullSmooth,
    Rhythm,
    MostStableRhythm,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::ActivityCounts,
        Method::ActivityCountsSmooth,
        Method::ActivityLull,
        Method::ActivityLullSmooth,
        Method::Rhythm,
        Method::MostStableRhythm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::ActivityCounts => "ActivityCounts",
            Method::ActivityCountsSmooth => "ActivityCountsSmooth",
            Method::ActivityLull => "ActivityLull",
            Method::ActivityLullSmooth => "ActivityLullSmooth",
            Method::Rhythm => "Rhythm",
            Method::MostStableRhythm => "MostStableRhythm",
        }
    }

    /// Whether the method needs a labeled reference pool.
    pub fn needs_pool(self) -> bool {
        self.reference_kind().is_some()
    }

    pub fn reference_kind(self) -> Option<FeatureKind> {
        match self {
            Method::ActivityCounts => Some(FeatureKind::Profile),
            Method::ActivityCountsSmooth => Some(FeatureKind::SmoothedProfile),
            Method::Rhythm => Some(FeatureKind::NormalizedPower),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownMethod(pub String);

impl fmt::Display for UnknownMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<_> = Method::ALL.iter().map(|m| m.name()).collect();
        write!(
            f,
            "unknown method `{}` (valid: {})",
            self.0,
            names.join(", ")
        )
    }
}

impl std::error::Error for UnknownMethod {}

impl FromStr for Method {
    type Err = UnknownMethod;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        Method::ALL
            .into_iter()
            .find(|m| m.name().to_ascii_lowercase() == key)
            .ok_or_else(|| UnknownMethod(s.to_string()))
    }
}

/// Which feature distribution a reference comparison uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    Profile,
    SmoothedProfile,
    NormalizedPower,
}

impl FeatureKind {
    pub fn distribution(self, f: &CommunityFeatures) -> [f64; HOURS_PER_DAY] {
        match self {
            FeatureKind::Profile => f.profile.p,
            FeatureKind::SmoothedProfile => f.smoothed.normalized_hourly(),
            FeatureKind::NormalizedPower => f.rhythm.normalized_power(),
        }
    }
}

/// Per-prediction diagnostics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub matched_ref: Option<String>,
    pub divergence: Option<f64>,
    /// Observed UTC lull hour used by anchor methods.
    pub lull_hour: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffsetPrediction {
    pub community_id: String,
    pub method: Method,
    pub offset_minutes: i32,
    pub diagnostics: Diagnostics,
}

impl OffsetPrediction {
    pub fn offset_hours(&self) -> f64 {
        self.offset_minutes as f64 / 60.0
    }
}

/// `((h_lull - h_obs + 12) mod 24) - 12`, in hours, mapped into (-12, 12].
pub fn anchor_offset(h_obs: f64, h_lull: f64) -> f64 {
    wrap_hours(h_lull - h_obs)
}

/// Snap an offset in hours to the 15-minute grid, in minutes within (-720, 720].
pub fn snap_minutes(hours: f64) -> i32 {
    let quarters = (hours * 4.0).round() as i32;
    wrap_minutes(quarters * 15)
}

/// Kullback-Leibler divergence `sum p ln(p / q)` with `0 ln 0 = 0`.
///
/// `q` is smoothed as `(q + eps) / (1 + n eps)` so sparse references never divide by zero.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len(), "distributions must have equal length");
    let n = q.len() as f64;
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| {
            let qs = (qi + KL_EPSILON) / (1.0 + n * KL_EPSILON);
            pi * (pi / qs).ln()
        })
        .sum::<f64>()
        .max(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceEntry {
    pub community_id: String,
    pub offset_minutes: i32,
    pub features: CommunityFeatures,
}

/// Labeled communities available for nearest-reference matching. Immutable once built.
#[derive(Debug, Clone)]
pub struct ReferencePool {
    entries: Vec<ReferenceEntry>,
}

impl ReferencePool {
    pub fn new(mut entries: Vec<ReferenceEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyPool);
        }
        entries.sort_by(|a, b| a.community_id.cmp(&b.community_id));
        Ok(ReferencePool { entries })
    }

    pub fn entries(&self) -> &[ReferenceEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Offset of the reference with the smallest divergence from the target.
///
/// Ties go to the smaller divergence, then the lexicographically smaller id.
/// A reference with the target's own id is skipped, so a pool that contains the
/// target behaves as leave-one-out.
pub fn nearest_reference(
    target: &CommunityFeatures,
    pool: &ReferencePool,
    kind: FeatureKind,
) -> Result<(String, i32, f64)> {
    let p = kind.distribution(target);
    let mut best: Option<(&ReferenceEntry, f64)> = None;
    for entry in pool.entries() {
        if entry.community_id == target.community_id {
            continue;
        }
        let q = kind.distribution(&entry.features);
        let d = kl_divergence(&p, &q);
        let better = match best {
            None => true,
            Some((b, bd)) => d < bd || (d == bd && entry.community_id < b.community_id),
        };
        if better {
            best = Some((entry, d));
        }
    }
    let (entry, d) = best.ok_or(Error::EmptyPool)?;
    Ok((entry.community_id.clone(), entry.offset_minutes, d))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferConfig {
    /// Assumed local hour of the activity minimum.
    pub lull_hour: f64,
}

impl Default for InferConfig {
    fn default() -> Self {
        InferConfig { lull_hour: 4.0 }
    }
}

pub fn run_method(
    method: Method,
    target: &CommunityFeatures,
    pool: Option<&ReferencePool>,
    config: &InferConfig,
) -> Result<OffsetPrediction> {
    let mut diagnostics = Diagnostics::default();
    let offset_minutes = match method.reference_kind() {
        Some(kind) => {
            let pool = pool.ok_or(Error::MissingFeature {
                method: method.name(),
                missing: "a labeled reference pool",
            })?;
            let (matched, offset, d) = nearest_reference(target, pool, kind)?;
            diagnostics.matched_ref = Some(matched);
            diagnostics.divergence = Some(d);
            offset
        }
        None => {
            let h_obs = match method {
                Method::ActivityLull => target.scalars.h_min as f64,
                Method::ActivityLullSmooth => target.scalars.h_smooth_min,
                Method::MostStableRhythm => target.scalars.h_stable_phase as f64,
                _ => unreachable!("reference methods handled above"),
            };
            diagnostics.lull_hour = Some(h_obs);
            snap_minutes(anchor_offset(h_obs, config.lull_hour))
        }
    };
    Ok(OffsetPrediction {
        community_id: target.community_id.clone(),
        method,
        offset_minutes,
        diagnostics,
    })
}
