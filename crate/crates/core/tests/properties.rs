use std::collections::BTreeMap;

use proptest::prelude::*;

use circtz_core::analyze::{
    deconvolve, gini, growth_index, pearson, population_correlation, DeconvConfig, Objective,
    YearlyOffsetDistribution, OFFSET_BINS,
};
use circtz_core::circular::wrap_minutes;
use circtz_core::eval::cv::{
    build_report, evaluate_iteration, stratified_split, EvalSet, Evaluated, SplitPlan,
};
use circtz_core::eval::metrics::{circular_error, MetricSet};
use circtz_core::features::{extract_features, features_from_detrended};
use circtz_core::preprocess::preprocess;
use circtz_core::infer::{nearest_reference, run_method, FeatureKind, InferConfig, ReferenceEntry};
use circtz_core::synth::{generate, SynthSpec};
use circtz_core::{ActivitySeries, CommunityFeatures, FeatureConfig, Method, ReferencePool};

fn spec(offset_hours: i32, seed: u64) -> SynthSpec {
    SynthSpec {
        offset_minutes: offset_hours * 60,
        n_days: 20,
        phase_jitter_rad: 0.2,
        seed,
        ..SynthSpec::default()
    }
}

fn features(id: &str, s: &ActivitySeries) -> CommunityFeatures {
    extract_features(id, s, &FeatureConfig::default()).unwrap().unwrap()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * (1.0 + x.abs()))
}

fn pool_of(n: usize, seed: u64) -> Vec<ReferenceEntry> {
    (0..n)
        .map(|i| {
            let o = (i as i32 % 24) - 11;
            let id = format!("r{i:02}");
            let s = generate(&spec(o, seed + i as u64), &id).unwrap().0;
            ReferenceEntry {
                community_id: id.clone(),
                offset_minutes: o * 60,
                features: features(&id, &s),
            }
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn shifting_the_clock_rotates_every_feature(offset in -11i32..=12, delta in 1i64..24, seed in 0u64..1000) {
        let s = generate(&spec(offset, seed), "c").unwrap().0;
        let base = features("c", &s);
        let moved = features("c", &s.shifted(delta));
        let want = base.rotated(delta);
        prop_assert!(close(&moved.profile.p, &want.profile.p, 1e-12));
        prop_assert!(close(&moved.rhythm.power, &want.rhythm.power, 1e-12));
        prop_assert!(close(&moved.rhythm.coherence, &want.rhythm.coherence, 1e-12));
        prop_assert!(close(&moved.rhythm.stability, &want.rhythm.stability, 1e-12));
        prop_assert!(close(&moved.smoothed.hourly, &want.smoothed.hourly, 1e-9));
        prop_assert_eq!(moved.scalars.h_min, (base.scalars.h_min + delta as usize) % 24);
        prop_assert_eq!(moved.scalars.h_stable_phase, (base.scalars.h_stable_phase + delta as usize) % 24);
        let d = (moved.scalars.h_smooth_min - base.scalars.h_smooth_min - delta as f64).rem_euclid(24.0);
        prop_assert!(d.min(24.0 - d) < 1e-9);
    }

    #[test]
    fn duplicating_pool_entries_changes_nothing(seed in 0u64..1000, dup in 1usize..4) {
        let entries = pool_of(12, seed);
        let target = features("t", &generate(&spec(3, seed + 99), "t").unwrap().0);
        let mut doubled = entries.clone();
        for e in entries.iter().take(dup * 3) {
            doubled.push(e.clone());
        }
        let a = ReferencePool::new(entries).unwrap();
        let b = ReferencePool::new(doubled).unwrap();
        for kind in [FeatureKind::Profile, FeatureKind::SmoothedProfile, FeatureKind::NormalizedPower] {
            prop_assert_eq!(nearest_reference(&target, &a, kind).unwrap(), nearest_reference(&target, &b, kind).unwrap());
        }
    }

    #[test]
    fn circular_error_is_a_metric(a in -720i32..=840, b in -720i32..=840, c in -720i32..=840) {
        let (a, b, c) = (a as f64 / 60.0, b as f64 / 60.0, c as f64 / 60.0);
        prop_assert_eq!(circular_error(a, b), circular_error(b, a));
        prop_assert!(circular_error(a, c) <= circular_error(a, b) + circular_error(b, c) + 1e-12);
        prop_assert!((0.0..=12.0).contains(&circular_error(a, b)));
    }

    #[test]
    fn metrics_ignore_pair_order(pairs in prop::collection::vec((-11i32..=12, -11i32..=12), 2..30), seed in any::<u64>()) {
        let ys: Vec<i32> = pairs.iter().map(|p| p.0 * 60).collect();
        let ps: Vec<i32> = pairs.iter().map(|p| p.1 * 60).collect();
        let mut idx: Vec<usize> = (0..ys.len()).collect();
        let mut state = seed;
        for i in (1..idx.len()).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            idx.swap(i, (state >> 33) as usize % (i + 1));
        }
        let ys2: Vec<i32> = idx.iter().map(|&i| ys[i]).collect();
        let ps2: Vec<i32> = idx.iter().map(|&i| ps[i]).collect();
        let a = MetricSet::compute(&ys, &ps).values();
        let b = MetricSet::compute(&ys2, &ps2).values();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x.is_nan() && y.is_nan()) || (x - y).abs() < 1e-12, "{} vs {}", x, y);
        }
    }

    #[test]
    fn splits_are_disjoint_and_cover_every_class(sizes in prop::collection::vec(2usize..15, 1..10), frac in 0.05f64..0.95, seed in any::<u64>()) {
        let classes: BTreeMap<i32, Vec<String>> = sizes
            .iter()
            .enumerate()
            .map(|(c, n)| (c as i32 * 60, (0..*n).map(|i| format!("c{c}_{i}")).collect()))
            .collect();
        let split = stratified_split(&classes, frac, seed).unwrap();
        prop_assert!(split.references.iter().all(|r| !split.targets.contains(r)));
        prop_assert_eq!(split.references.len() + split.targets.len(), sizes.iter().sum::<usize>());
        for members in classes.values() {
            prop_assert!(members.iter().any(|m| split.references.contains(m)));
            prop_assert!(members.iter().any(|m| split.targets.contains(m)));
        }
    }

    #[test]
    fn gini_is_scale_invariant(mass in prop::collection::vec(0.0f64..100.0, OFFSET_BINS), c in 0.01f64..1000.0) {
        prop_assume!(mass.iter().sum::<f64>() > 1e-6);
        let scaled: Vec<f64> = mass.iter().map(|m| m * c).collect();
        prop_assert!((gini(&mass).unwrap() - gini(&scaled).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn growth_of_the_base_year_is_zero(mass in prop::collection::vec(0.0f64..50.0, OFFSET_BINS), later in prop::collection::vec(0.0f64..50.0, OFFSET_BINS)) {
        let dist = |year: i32, m: &[f64]| YearlyOffsetDistribution {
            year,
            mass: m.iter().enumerate().map(|(b, v)| ((b as i32 - 11) * 60, *v)).collect(),
        };
        let yearly = vec![dist(2012, &mass), dist(2013, &later)];
        let g = growth_index(&yearly, 2012).unwrap();
        prop_assert!(g[&2012].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn deconvolution_is_always_feasible(pure in prop::collection::vec(0.0f64..10.0, OFFSET_BINS), real in prop::collection::vec(0.0f64..10.0, OFFSET_BINS), pearson_objective in any::<bool>()) {
        prop_assume!(pure.iter().sum::<f64>() > 1e-3 && real.iter().sum::<f64>() > 1e-3);
        let cfg = DeconvConfig {
            objective: if pearson_objective { Objective::Pearson } else { Objective::LeastSquares },
            ..DeconvConfig::default()
        };
        let r = deconvolve(&pure, &real, &cfg).unwrap();
        let (sum_res, sine_res) = r.feasibility_residuals();
        prop_assert!(sum_res <= 1e-6, "sum residual {}", sum_res);
        prop_assert!(sine_res <= 1e-8, "sine residual {}", sine_res);
        prop_assert!(r.weights.iter().all(|w| (0.0..=1.0).contains(w)));
    }

    #[test]
    fn pearson_is_symmetric(a in prop::collection::vec(0.0f64..1.0, OFFSET_BINS), b in prop::collection::vec(0.0f64..1.0, OFFSET_BINS)) {
        let (x, y): ([f64; OFFSET_BINS], [f64; OFFSET_BINS]) = (a.clone().try_into().unwrap(), b.clone().try_into().unwrap());
        let (r1, s1) = population_correlation(&x, &y);
        let (r2, s2) = population_correlation(&y, &x);
        prop_assert!((r1 - r2).abs() < 1e-12 && (s1 - s2).abs() < 1e-12);
        prop_assert!((pearson(&a, &b) - r1).abs() < 1e-15);
    }
}

#[test]
fn scaling_the_preprocessed_series_leaves_predictions_unchanged() {
    let cfg = FeatureConfig::default();
    let pool = ReferencePool::new(pool_of(24, 500)).unwrap();
    for o in [-7, -2, 0, 5, 11] {
        let raw = generate(&spec(o, (40 + o) as u64), "t").unwrap().0;
        let detrended = preprocess(&raw, &cfg.detrend).unwrap().unwrap();
        let base = features_from_detrended("t", &detrended, &cfg).unwrap();
        for k in [0.5, 2.0, 10.0] {
            let mut scaled = detrended.clone();
            scaled.values.iter_mut().for_each(|v| *v *= k);
            let f = features_from_detrended("t", &scaled, &cfg).unwrap();
            assert!(close(&f.profile.p, &base.profile.p, 1e-12));
            for m in Method::ALL {
                let a = run_method(m, &base, Some(&pool), &InferConfig::default()).unwrap();
                let b = run_method(m, &f, Some(&pool), &InferConfig::default()).unwrap();
                assert_eq!(a.offset_minutes, b.offset_minutes, "offset {o}, factor {k}, {m}");
            }
        }
    }
}

#[test]
fn aggregate_is_the_mean_of_iterations() {
    let mut feats = BTreeMap::new();
    let mut labels = Vec::new();
    for o in [-5, 0, 3, 9] {
        for i in 0..4 {
            let id = format!("c{o}_{i}");
            let s = generate(&spec(o, (o * 10 + i + 1000) as u64), &id).unwrap().0;
            feats.insert(id.clone(), features(&id, &s));
            labels.push(circtz_core::GroundTruthLabel::new(id, wrap_minutes(o * 60)));
        }
    }
    let corpus = circtz_core::LabeledCorpus {
        labels: labels.into_iter().map(|l| (l.community_id.clone(), l)).collect(),
        series: BTreeMap::new(),
    };
    let set = EvalSet::new(&corpus, feats, Vec::new());
    let methods = [Evaluated::Method(Method::ActivityCounts), Evaluated::Method(Method::ActivityLull), Evaluated::Dummy];
    let plan = SplitPlan::default();
    let outcomes = (0..plan.iterations)
        .map(|i| evaluate_iteration(&set, &methods, &plan, i, &InferConfig::default()).unwrap())
        .collect();
    let report = build_report(outcomes, &methods, Vec::new());
    for m in methods {
        let rows: Vec<[f64; 5]> = report.rows.iter().filter(|r| r.method == m).map(|r| r.metrics.values()).collect();
        assert_eq!(rows.len(), plan.iterations);
        let agg = report.aggregate_for(m).unwrap().values();
        for k in 0..5 {
            let vals: Vec<f64> = rows.iter().map(|r| r[k]).filter(|v| !v.is_nan()).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            assert!((agg[k] - mean).abs() < 1e-12, "{m} metric {k}");
        }
    }
}
