//! Data-scarcity sweeps: rerun the evaluation on communities with fewer events or
//! shorter observation windows.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cv::{build_report, evaluate_iteration, EvalSet, Evaluated, SplitPlan};
use crate::circular::HOURS_PER_DAY;
use crate::error::{Error, Result};
use crate::features::{extract_or_skip, FeatureConfig};
use crate::infer::InferConfig;
use crate::ingest::LabeledCorpus;
use crate::preprocess::ActivitySeries;
use crate::seed_of;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    /// Total events per community.
    Comments,
    /// Trailing observation window in days.
    Days,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Comments => "comments",
            Axis::Days => "days",
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "comments" => Ok(Axis::Comments),
            "days" => Ok(Axis::Days),
            other => Err(Error::Config(format!(
                "unknown sweep axis `{other}` (valid: comments, days)"
            ))),
        }
    }
}

fn trimmed(start_hour: i64, values: Vec<f64>) -> Option<ActivitySeries> {
    let a = values.iter().position(|c| *c > 0.0)?;
    let b = values.iter().rposition(|c| *c > 0.0)?;
    Some(ActivitySeries::raw(start_hour + a as i64, values[a..=b].to_vec()))
}

/// Keep `n` events drawn uniformly without replacement. Returns the series unchanged
/// and `true` when it holds `n` events or fewer.
pub fn subsample_events(series: &ActivitySeries, n: usize, rng: &mut ChaCha8Rng) -> (ActivitySeries, bool) {
    let total = series.total().round() as usize;
    if n >= total {
        return (series.clone(), true);
    }
    let mut picks = rand::seq::index::sample(rng, total, n).into_vec();
    picks.sort_unstable();
    let mut out = vec![0.0; series.len()];
    let mut hour = 0;
    let mut upto = series.values[0] as usize;
    for p in picks {
        while p >= upto {
            hour += 1;
            upto += series.values[hour] as usize;
        }
        out[hour] += 1.0;
    }
    (
        trimmed(series.start_hour, out).expect("n > 0 events kept"),
        false,
    )
}

/// Keep the trailing `days * 24` hours. Returns `true` when the series was already
/// that short.
pub fn trailing_window(series: &ActivitySeries, days: usize) -> (Option<ActivitySeries>, bool) {
    let keep = days * HOURS_PER_DAY;
    if keep >= series.len() {
        return (Some(series.clone()), true);
    }
    let skip = series.len() - keep;
    (
        trimmed(series.start_hour + skip as i64, series.values[skip..].to_vec()),
        false,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub method: Evaluated,
    pub axis: Axis,
    pub level: usize,
    pub iteration: usize,
    pub rho: f64,
    pub accuracy: f64,
    /// Communities that had no more data than the level asked for.
    pub clamped: usize,
    /// Communities dropped by the sparsity or class-size filters at this level.
    pub excluded: usize,
}

fn ablate(
    corpus: &LabeledCorpus,
    axis: Axis,
    level: usize,
    iteration: usize,
    seed: u64,
) -> (BTreeMap<String, ActivitySeries>, usize) {
    let mut clamped = 0;
    let mut out = BTreeMap::new();
    for (id, s) in &corpus.series {
        let (series, was_clamped) = match axis {
            Axis::Comments => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed_of!(
                    seed,
                    "subsample",
                    id.as_str(),
                    level,
                    iteration
                ));
                let (s, c) = subsample_events(s, level, &mut rng);
                (Some(s), c)
            }
            Axis::Days => trailing_window(s, level),
        };
        clamped += was_clamped as usize;
        if let Some(series) = series {
            out.insert(id.clone(), series);
        }
    }
    (out, clamped)
}

/// Evaluate every method at each ablation level. Levels are expected in descending order.
pub fn scarcity_sweep(
    corpus: &LabeledCorpus,
    methods: &[Evaluated],
    axis: Axis,
    levels: &[usize],
    plan: &SplitPlan,
    features: &FeatureConfig,
    infer: &InferConfig,
) -> Result<Vec<SweepPoint>> {
    plan.validate()?;
    if levels.windows(2).any(|w| w[1] > w[0]) {
        log::warn!("sweep levels are not in descending order");
    }
    let jobs: Vec<(usize, usize)> = levels
        .iter()
        .flat_map(|&l| (0..plan.iterations).map(move |i| (l, i)))
        .collect();
    let results: Vec<Vec<SweepPoint>> = jobs
        .par_iter()
        .map(|&(level, iteration)| -> Result<Vec<SweepPoint>> {
            let (series, clamped) = ablate(corpus, axis, level, iteration, plan.seed);
            let mut feats = BTreeMap::new();
            let mut excluded = Vec::new();
            for (id, s) in &series {
                match extract_or_skip(id, s, features)? {
                    Some(f) => {
                        feats.insert(id.clone(), f);
                    }
                    None => excluded.push(id.clone()),
                }
            }
            excluded.extend(
                corpus
                    .series
                    .keys()
                    .filter(|id| !series.contains_key(*id))
                    .cloned(),
            );
            let set = EvalSet::new(corpus, feats, excluded);
            if set.features.is_empty() {
                return Ok(methods
                    .iter()
                    .map(|&m| SweepPoint {
                        method: m,
                        axis,
                        level,
                        iteration,
                        rho: f64::NAN,
                        accuracy: f64::NAN,
                        clamped,
                        excluded: set.excluded.len(),
                    })
                    .collect());
            }
            let outcome = evaluate_iteration(&set, methods, plan, iteration, infer)?;
            let report = build_report(vec![outcome], methods, set.excluded.clone());
            Ok(report
                .rows
                .iter()
                .map(|r| SweepPoint {
                    method: r.method,
                    axis,
                    level,
                    iteration,
                    rho: r.metrics.circular_correlation,
                    accuracy: r.metrics.accuracy,
                    clamped,
                    excluded: set.excluded.len(),
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut points: Vec<SweepPoint> = results.into_iter().flatten().collect();
    points.sort_by(|a, b| {
        a.method
            .cmp(&b.method)
            .then(b.level.cmp(&a.level))
            .then(a.iteration.cmp(&b.iteration))
    });
    Ok(points)
}

/// Mean of a sweep metric for one method and level, skipping NaN iterations.
pub fn mean_at(points: &[SweepPoint], method: Evaluated, level: usize, metric: fn(&SweepPoint) -> f64) -> f64 {
    let vals: Vec<f64> = points
        .iter()
        .filter(|p| p.method == method && p.level == level)
        .map(metric)
        .filter(|v| !v.is_nan())
        .collect();
    if vals.is_empty() {
        f64::NAN
    } else {
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}
