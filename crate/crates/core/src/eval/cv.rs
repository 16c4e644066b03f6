//! Repeated stratified reference/target splits.

use std::collections::BTreeMap;
use std::fmt;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{circular_error, confusion_matrix, dummy_baseline, Confusion, MetricSet};
use crate::circular::HOURS_PER_DAY;
use crate::error::{Error, Result};
use crate::features::{extract_or_skip, CommunityFeatures, FeatureConfig};
use crate::infer::{run_method, InferConfig, Method, ReferenceEntry, ReferencePool};
use crate::ingest::LabeledCorpus;
use crate::seed_of;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub iterations: usize,
    /// Share of each offset class placed in the reference pool.
    pub reference_fraction: f64,
    pub seed: u64,
}

impl Default for SplitPlan {
    fn default() -> Self {
        SplitPlan {
            iterations: 10,
            reference_fraction: 0.2,
            seed: 0,
        }
    }
}

impl SplitPlan {
    pub fn validate(&self) -> Result<()> {
        if !(self.reference_fraction > 0.0 && self.reference_fraction < 1.0) {
            return Err(Error::Config(format!(
                "reference fraction must be in (0, 1), got {}",
                self.reference_fraction
            )));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        Ok(())
    }
}

/// A method under evaluation: one of the six, or the stratified dummy baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Evaluated {
    Method(Method),
    Dummy,
}

impl Evaluated {
    pub fn name(self) -> &'static str {
        match self {
            Evaluated::Method(m) => m.name(),
            Evaluated::Dummy => "Dummy",
        }
    }
}

impl fmt::Display for Evaluated {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One reference/target partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub references: Vec<String>,
    pub targets: Vec<String>,
}

/// Per class, `clamp(round(fraction * n), 1, n - 1)` members go to the references.
pub fn stratified_split(
    classes: &BTreeMap<i32, Vec<String>>,
    fraction: f64,
    seed: u64,
) -> Result<Split> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut references = Vec::new();
    let mut targets = Vec::new();
    for (&offset, members) in classes {
        if members.len() < 2 {
            return Err(Error::ClassTooSmall {
                offset_minutes: offset,
                size: members.len(),
            });
        }
        let mut shuffled = members.clone();
        shuffled.sort();
        shuffled.shuffle(&mut rng);
        let n = shuffled.len();
        let n_ref = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
        references.extend_from_slice(&shuffled[..n_ref]);
        targets.extend_from_slice(&shuffled[n_ref..]);
    }
    references.sort();
    targets.sort();
    Ok(Split {
        references,
        targets,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRow {
    pub method: Evaluated,
    pub iteration: usize,
    pub n_targets: usize,
    pub metrics: MetricSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetError {
    pub iteration: usize,
    pub method: Evaluated,
    pub community_id: String,
    pub truth_minutes: i32,
    pub predicted_minutes: i32,
    pub error_hours: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: Evaluated,
    /// Unweighted mean over iterations; NaN iterations are skipped.
    pub metrics: MetricSet,
    /// Iterations in which at least one metric was undefined.
    pub undefined_iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<IterationRow>,
    pub aggregate: Vec<AggregateRow>,
    /// Confusion matrices summed over iterations.
    pub confusion: BTreeMap<Evaluated, Confusion>,
    pub errors: Vec<TargetError>,
    /// Communities dropped before evaluation (sparsity filter or class-size filter).
    pub excluded: Vec<String>,
}

impl EvalReport {
    pub fn aggregate_for(&self, method: Evaluated) -> Option<&MetricSet> {
        self.aggregate
            .iter()
            .find(|r| r.method == method)
            .map(|r| &r.metrics)
    }
}

/// Extract features for every community of a corpus in parallel. Communities that
/// fail the sparsity filter are returned separately.
pub fn corpus_features(
    corpus: &LabeledCorpus,
    config: &FeatureConfig,
) -> Result<(BTreeMap<String, CommunityFeatures>, Vec<String>)> {
    let items: Vec<(&String, &crate::preprocess::ActivitySeries)> = corpus.series.iter().collect();
    let results: Vec<(String, Option<CommunityFeatures>)> = items
        .par_iter()
        .map(|(id, s)| extract_or_skip(id, s, config).map(|f| ((*id).clone(), f)))
        .collect::<Result<_>>()?;
    let mut features = BTreeMap::new();
    let mut excluded = Vec::new();
    for (id, f) in results {
        match f {
            Some(f) => {
                features.insert(id, f);
            }
            None => excluded.push(id),
        }
    }
    Ok((features, excluded))
}

/// Labeled features ready for evaluation: classes with fewer than two members
/// after feature extraction are dropped.
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub features: BTreeMap<String, CommunityFeatures>,
    pub offsets: BTreeMap<String, i32>,
    pub excluded: Vec<String>,
}

impl EvalSet {
    pub fn new(
        corpus: &LabeledCorpus,
        mut features: BTreeMap<String, CommunityFeatures>,
        mut excluded: Vec<String>,
    ) -> Self {
        let mut classes: BTreeMap<i32, Vec<&String>> = BTreeMap::new();
        for id in features.keys() {
            classes
                .entry(corpus.labels[id].offset_minutes)
                .or_default()
                .push(id);
        }
        let small: Vec<String> = classes
            .values()
            .filter(|m| m.len() < 2)
            .flat_map(|m| m.iter().map(|s| (*s).clone()))
            .collect();
        for id in small {
            warn!("excluding `{id}`: its offset class lost members to the sparsity filter");
            features.remove(&id);
            excluded.push(id);
        }
        excluded.sort();
        let offsets = features
            .keys()
            .map(|id| (id.clone(), corpus.labels[id].offset_minutes))
            .collect();
        EvalSet {
            features,
            offsets,
            excluded,
        }
    }

    pub fn classes(&self) -> BTreeMap<i32, Vec<String>> {
        let mut out: BTreeMap<i32, Vec<String>> = BTreeMap::new();
        for (id, o) in &self.offsets {
            out.entry(*o).or_default().push(id.clone());
        }
        out
    }
}

/// Predictions of every requested method for one iteration's split.
pub struct IterationOutcome {
    pub iteration: usize,
    pub per_method: Vec<(Evaluated, Vec<String>, Vec<i32>, Vec<i32>)>,
}

pub fn evaluate_iteration(
    set: &EvalSet,
    methods: &[Evaluated],
    plan: &SplitPlan,
    iteration: usize,
    infer: &InferConfig,
) -> Result<IterationOutcome> {
    let split = stratified_split(
        &set.classes(),
        plan.reference_fraction,
        seed_of!(plan.seed, "cv", iteration),
    )?;
    let pool = ReferencePool::new(
        split
            .references
            .iter()
            .map(|id| ReferenceEntry {
                community_id: id.clone(),
                offset_minutes: set.offsets[id],
                features: set.features[id].clone(),
            })
            .collect(),
    )?;
    let truth: Vec<i32> = split.targets.iter().map(|id| set.offsets[id]).collect();
    let mut per_method = Vec::with_capacity(methods.len());
    for &m in methods {
        let preds = match m {
            Evaluated::Method(method) => split
                .targets
                .iter()
                .map(|id| run_method(method, &set.features[id], Some(&pool), infer).map(|p| p.offset_minutes))
                .collect::<Result<Vec<_>>>()?,
            Evaluated::Dummy => {
                let refs: Vec<i32> = split.references.iter().map(|id| set.offsets[id]).collect();
                dummy_baseline(&refs, split.targets.len(), seed_of!(plan.seed, "dummy", iteration))
            }
        };
        per_method.push((m, split.targets.clone(), truth.clone(), preds));
    }
    Ok(IterationOutcome {
        iteration,
        per_method,
    })
}

fn nan_mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values
        .filter(|v| !v.is_nan())
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Combine iteration outcomes into a report. Rows are ordered by method, then iteration.
pub fn build_report(outcomes: Vec<IterationOutcome>, methods: &[Evaluated], excluded: Vec<String>) -> EvalReport {
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    let mut confusion: BTreeMap<Evaluated, Confusion> = BTreeMap::new();
    for &m in methods {
        let c = confusion.entry(m).or_insert([[0; HOURS_PER_DAY]; HOURS_PER_DAY]);
        for o in &outcomes {
            let (_, ids, truth, preds) = o
                .per_method
                .iter()
                .find(|(mm, ..)| *mm == m)
                .expect("every outcome covers every method");
            rows.push(IterationRow {
                method: m,
                iteration: o.iteration,
                n_targets: ids.len(),
                metrics: MetricSet::compute(truth, preds),
            });
            let cm = confusion_matrix(truth, preds);
            for i in 0..HOURS_PER_DAY {
                for j in 0..HOURS_PER_DAY {
                    c[i][j] += cm[i][j];
                }
            }
            for ((id, y), p) in ids.iter().zip(truth).zip(preds) {
                errors.push(TargetError {
                    iteration: o.iteration,
                    method: m,
                    community_id: id.clone(),
                    truth_minutes: *y,
                    predicted_minutes: *p,
                    error_hours: circular_error(*y as f64 / 60.0, *p as f64 / 60.0),
                });
            }
        }
    }
    let aggregate = methods
        .iter()
        .map(|&m| {
            let rs: Vec<&IterationRow> = rows.iter().filter(|r| r.method == m).collect();
            let col = |f: fn(&MetricSet) -> f64| nan_mean(rs.iter().map(|r| f(&r.metrics)));
            AggregateRow {
                method: m,
                metrics: MetricSet {
                    accuracy: col(|x| x.accuracy),
                    weighted_kappa: col(|x| x.weighted_kappa),
                    circular_correlation: col(|x| x.circular_correlation),
                    mean_circular_error: col(|x| x.mean_circular_error),
                    weighted_f1: col(|x| x.weighted_f1),
                },
                undefined_iterations: rs.iter().filter(|r| r.metrics.has_undefined()).count(),
            }
        })
        .collect();
    EvalReport {
        rows,
        aggregate,
        confusion,
        errors,
        excluded,
    }
}

/// Evaluate pre-extracted features over every iteration of the plan.
pub fn run_cv_on_set(
    set: &EvalSet,
    methods: &[Evaluated],
    plan: &SplitPlan,
    infer: &InferConfig,
) -> Result<EvalReport> {
    plan.validate()?;
    let outcomes = (0..plan.iterations)
        .into_par_iter()
        .map(|i| evaluate_iteration(set, methods, plan, i, infer))
        .collect::<Result<Vec<_>>>()?;
    Ok(build_report(outcomes, methods, set.excluded.clone()))
}

/// Full repeated-split evaluation of a labeled corpus.
pub fn run_cv(
    corpus: &LabeledCorpus,
    methods: &[Evaluated],
    plan: &SplitPlan,
    features: &FeatureConfig,
    infer: &InferConfig,
) -> Result<EvalReport> {
    plan.validate()?;
    for (offset, members) in corpus.classes() {
        if members.len() < 2 {
            return Err(Error::ClassTooSmall {
                offset_minutes: offset,
                size: members.len(),
            });
        }
    }
    let (feats, excluded) = corpus_features(corpus, features)?;
    let set = EvalSet::new(corpus, feats, excluded);
    run_cv_on_set(&set, methods, plan, infer)
}
