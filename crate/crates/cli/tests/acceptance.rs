//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits non-zero
//! if any criterion fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use circtz_core::analyze::{deconvolve, DeconvConfig, ShippedTable};
use circtz_core::circular::wrap_minutes;
use circtz_core::eval::cv::{run_cv, Evaluated, SplitPlan};
use circtz_core::eval::metrics::{
    accuracy, circular_correlation, circular_error, dummy_baseline, mean_circular_error,
    weighted_f1, weighted_kappa,
};
use circtz_core::eval::sweep::{mean_at, scarcity_sweep, Axis};
use circtz_core::features::extract_features;
use circtz_core::infer::{kl_divergence, run_method, InferConfig, ReferenceEntry, KL_EPSILON};
use circtz_core::synth::{generate, generate_corpus, CorpusSpec, SynthSpec};
use circtz_core::{CommunityFeatures, FeatureConfig, Method, ReferencePool};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn mce(report: &circtz_core::eval::EvalReport, m: Method) -> f64 {
    report
        .aggregate_for(Evaluated::Method(m))
        .map_or(f64::NAN, |s| s.mean_circular_error)
}

fn end_to_end_recovery() -> Outcome {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let start = Instant::now();
    let report = pool.install(|| {
        let corpus = generate_corpus(&CorpusSpec::preset("clean").unwrap()).unwrap();
        assert_eq!(corpus.len(), 96);
        run_cv(
            &corpus,
            &[
                Evaluated::Method(Method::ActivityCounts),
                Evaluated::Method(Method::ActivityCountsSmooth),
                Evaluated::Method(Method::ActivityLull),
            ],
            &SplitPlan::default(),
            &FeatureConfig::default(),
            &InferConfig::default(),
        )
        .unwrap()
    });
    let elapsed = start.elapsed();
    let acc = |m| report.aggregate_for(Evaluated::Method(m)).unwrap().accuracy;
    let (ac, acs) = (Method::ActivityCounts, Method::ActivityCountsSmooth);
    let ok = acc(ac) == 1.0
        && mce(&report, ac) == 0.0
        && acc(acs) == 1.0
        && mce(&report, acs) == 0.0
        && mce(&report, Method::ActivityLull) <= 0.5
        && elapsed < Duration::from_secs(60);
    check(
        ok,
        format!(
            "AC acc {} mce {}; ACS acc {} mce {}; AL mce {}; {:.1?} single-threaded",
            acc(ac),
            mce(&report, ac),
            acc(acs),
            mce(&report, acs),
            mce(&report, Method::ActivityLull),
            elapsed
        ),
    )
}

fn noisy_ordering() -> Outcome {
    let methods = [Method::ActivityCounts, Method::ActivityLull, Method::MostStableRhythm];
    let evaluated: Vec<Evaluated> = methods.iter().map(|m| Evaluated::Method(*m)).collect();
    let mut ok = true;
    let mut detail = Vec::new();
    for seed in 0..5u64 {
        let corpus = generate_corpus(&CorpusSpec::preset("noisy").unwrap().with_seed(seed)).unwrap();
        let plan = SplitPlan {
            seed,
            ..SplitPlan::default()
        };
        let report = run_cv(&corpus, &evaluated, &plan, &FeatureConfig::default(), &InferConfig::default()).unwrap();
        let [a, l, s] = methods.map(|m| mce(&report, m));
        ok &= a <= l && l <= s;
        detail.push(format!("seed {seed}: {a:.3} <= {l:.3} <= {s:.3}"));
    }
    check(ok, detail.join("; "))
}

fn scarcity_robustness() -> Outcome {
    const FULL: usize = 1_000_000;
    let corpus = generate_corpus(&CorpusSpec::preset("default").unwrap()).unwrap();
    let mut features = FeatureConfig::default();
    features.cwt.band = Some((16, 32));
    let methods = [
        Evaluated::Method(Method::ActivityCounts),
        Evaluated::Method(Method::ActivityLull),
        Evaluated::Method(Method::Rhythm),
    ];
    let points = scarcity_sweep(
        &corpus,
        &methods,
        Axis::Comments,
        &[FULL, 100],
        &SplitPlan::default(),
        &features,
        &InferConfig::default(),
    )
    .unwrap();
    let rho = |m, level| mean_at(&points, Evaluated::Method(m), level, |p| p.rho);
    let ac = rho(Method::ActivityCounts, 100);
    let al = rho(Method::ActivityLull, 100);
    let (r_full, r_100) = (rho(Method::Rhythm, FULL), rho(Method::Rhythm, 100));
    check(
        ac >= 0.7 && al >= 0.7 && r_full - r_100 >= 0.2,
        format!(
            "rho@100: AC {ac:.3}, AL {al:.3}; Rhythm full {r_full:.3} -> 100 {r_100:.3} (drop {:.3})",
            r_full - r_100
        ),
    )
}

fn dummy_calibration() -> Outcome {
    let classes: Vec<i32> = (-11..=12).map(|h| h * 60).collect();
    // Closed form: expected circular distance between two independent uniform
    // whole-hour offsets, by enumeration of all 24 x 24 pairs.
    let mut sum = 0.0;
    for a in -11..=12 {
        for b in -11..=12 {
            let d = ((a - b) as i32).rem_euclid(24);
            sum += d.min(24 - d) as f64;
        }
    }
    let expected = sum / 576.0;
    let n = 10_000;
    let truth: Vec<i32> = (0..n).map(|i| classes[i % 24]).collect();
    let draws = dummy_baseline(&classes, n, 2024);
    let m = mean_circular_error(&truth, &draws);
    let acc = accuracy(&truth, &draws);
    check(
        (expected - 6.0).abs() < 1e-12 && (m - 6.0).abs() <= 0.2 && (acc - 1.0 / 24.0).abs() <= 0.01,
        format!("closed form {expected}; empirical MCE {m:.4} h, accuracy {acc:.4} over {n} draws"),
    )
}

fn table_replication() -> Outcome {
    let table = ShippedTable::load();
    let start = Instant::now();
    let res = deconvolve(&table.inferred_pure, &table.real_share, &DeconvConfig::default()).unwrap();
    let elapsed = start.elapsed();
    let (sum_res, sine_res) = res.feasibility_residuals();
    let worst = res
        .optimized
        .iter()
        .zip(&table.inferred_optimized)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    check(
        res.pearson >= 0.875
            && sum_res <= 1e-6
            && sine_res <= 1e-6
            && worst <= 1.0
            && elapsed < Duration::from_secs(10),
        format!(
            "r {:.4}, residuals {sum_res:.1e}/{sine_res:.1e}, max bin deviation {worst:.4} pp, {elapsed:.1?}",
            res.pearson
        ),
    )
}

// Independent reference implementations for the metric criterion.

fn oracle_circular_error(y: f64, p: f64) -> f64 {
    (-3..=3)
        .map(|k| (y - p + 24.0 * k as f64).abs())
        .fold(f64::INFINITY, f64::min)
}

fn oracle_class(m: i32) -> i32 {
    let h = (m as f64 / 60.0).round() as i32;
    let mut w = h;
    while w > 12 {
        w -= 24;
    }
    while w <= -12 {
        w += 24;
    }
    w
}

fn angle(m: i32) -> f64 {
    m as f64 * std::f64::consts::PI / 720.0
}

fn oracle_rho(ys: &[i32], ps: &[i32]) -> f64 {
    let a: Vec<f64> = ys.iter().map(|m| angle(*m)).collect();
    let b: Vec<f64> = ps.iter().map(|m| angle(*m)).collect();
    let n = a.len() as f64;
    let mean = |v: &[f64]| {
        let (s, c) = v.iter().fold((0.0, 0.0), |(s, c), x| (s + x.sin(), c + x.cos()));
        (s.atan2(c), (s * s + c * c).sqrt() / n)
    };
    let (ma, ra) = mean(&a);
    let (mb, rb) = mean(&b);
    let (ma, mb) = (if ra > 0.0 { ma } else { 0.0 }, if rb > 0.0 { mb } else { 0.0 });
    let da: Vec<f64> = a.iter().map(|x| (x - ma).sin()).collect();
    let db: Vec<f64> = b.iter().map(|x| (x - mb).sin()).collect();
    let den = (da.iter().map(|x| x * x).sum::<f64>() * db.iter().map(|x| x * x).sum::<f64>()).sqrt();
    if den <= 1e-12 {
        return f64::NAN;
    }
    let r = if ra < 1e-6 || rb < 1e-6 {
        let modulus = |sign: f64| {
            let (s, c) = a.iter().zip(&b).fold((0.0, 0.0), |(s, c), (x, y)| {
                let t = x + sign * y;
                (s + t.sin(), c + t.cos())
            });
            s.hypot(c)
        };
        (modulus(-1.0) - modulus(1.0)) / (2.0 * den)
    } else {
        da.iter().zip(&db).map(|(x, y)| x * y).sum::<f64>() / den
    };
    r.clamp(-1.0, 1.0)
}

fn oracle_kappa(ys: &[i32], ps: &[i32]) -> f64 {
    let y: Vec<f64> = ys.iter().map(|m| oracle_class(*m) as f64).collect();
    let p: Vec<f64> = ps.iter().map(|m| oracle_class(*m) as f64).collect();
    let n = y.len() as f64;
    let observed: f64 = y.iter().zip(&p).map(|(a, b)| (a - b).abs()).sum();
    let expected: f64 = y
        .iter()
        .map(|a| p.iter().map(|b| (a - b).abs()).sum::<f64>())
        .sum::<f64>()
        / n;
    if expected <= 0.0 {
        f64::NAN
    } else {
        1.0 - observed / expected
    }
}

fn oracle_f1(ys: &[i32], ps: &[i32]) -> f64 {
    let y: Vec<i32> = ys.iter().map(|m| oracle_class(*m)).collect();
    let p: Vec<i32> = ps.iter().map(|m| oracle_class(*m)).collect();
    let mut support: BTreeMap<i32, f64> = BTreeMap::new();
    for c in &y {
        *support.entry(*c).or_default() += 1.0;
    }
    let n = y.len() as f64;
    support
        .iter()
        .map(|(c, s)| {
            let tp = y.iter().zip(&p).filter(|(a, b)| *a == c && *b == c).count() as f64;
            let fp = y.iter().zip(&p).filter(|(a, b)| *a != c && *b == c).count() as f64;
            let fn_ = s - tp;
            let f1 = if tp > 0.0 { 2.0 * tp / (2.0 * tp + fp + fn_) } else { 0.0 };
            f1 * s / n
        })
        .sum()
}

fn oracle_kl(p: &[f64], q: &[f64]) -> f64 {
    let n = q.len() as f64;
    let mut total = 0.0;
    for (pi, qi) in p.iter().zip(q) {
        if *pi > 0.0 {
            let qs = (qi + KL_EPSILON) / (1.0 + n * KL_EPSILON);
            total += pi * pi.ln() - pi * qs.ln();
        }
    }
    total.max(0.0)
}

fn same(a: f64, b: f64) -> bool {
    (a.is_nan() && b.is_nan()) || (a - b).abs() <= 1e-10
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = [0.0f64; 5];
    let mut failures = Vec::new();
    for case in 0..200 {
        let n = rng.random_range(2..=10);
        let offset = |rng: &mut ChaCha8Rng| rng.random_range(-44..=48) * 15;
        let ys: Vec<i32> = (0..n).map(|_| offset(&mut rng)).collect();
        let ps: Vec<i32> = (0..n)
            .map(|i| if rng.random_bool(0.4) { ys[i] } else { offset(&mut rng) })
            .collect();

        let e = (0..n)
            .map(|i| {
                let (y, p) = (ys[i] as f64 / 60.0, ps[i] as f64 / 60.0);
                (circular_error(y, p) - oracle_circular_error(y, p)).abs()
            })
            .fold(0.0, f64::max);
        let pairs = [
            (circular_correlation(&ys, &ps), oracle_rho(&ys, &ps)),
            (weighted_kappa(&ys, &ps), oracle_kappa(&ys, &ps)),
            (weighted_f1(&ys, &ps), oracle_f1(&ys, &ps)),
        ];

        let mut p: Vec<f64> = (0..24).map(|_| if rng.random_bool(0.2) { 0.0 } else { rng.random() }).collect();
        let mut q: Vec<f64> = (0..24).map(|_| if rng.random_bool(0.2) { 0.0 } else { rng.random() }).collect();
        p[0] += 1e-3;
        for v in [&mut p, &mut q] {
            let t: f64 = v.iter().sum::<f64>().max(1e-300);
            v.iter_mut().for_each(|x| *x /= t);
        }
        let kl = (kl_divergence(&p, &q), oracle_kl(&p, &q));

        worst[0] = worst[0].max(e);
        for (k, (got, want)) in pairs.iter().chain([&kl]).enumerate() {
            if !same(*got, *want) {
                failures.push(format!("case {case} metric {k}: {got} vs {want}"));
            } else if !got.is_nan() {
                worst[k + 1] = worst[k + 1].max((got - want).abs());
            }
        }
        if e > 1e-10 {
            failures.push(format!("case {case} circular_error off by {e}"));
        }
    }
    let detail = format!(
        "200 cases; max |diff| error {:.1e}, rho {:.1e}, kappa {:.1e}, F1 {:.1e}, KL {:.1e}",
        worst[0], worst[1], worst[2], worst[3], worst[4]
    );
    if failures.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail}; {}", failures.join("; ")))
    }
}

fn feature_diff(a: &CommunityFeatures, b: &CommunityFeatures) -> Option<String> {
    let arrays: [(&str, &[f64], &[f64]); 7] = [
        ("p", &a.profile.p, &b.profile.p),
        ("c", &a.profile.support_counts, &b.profile.support_counts),
        ("lambda", &a.smoothed.hourly, &b.smoothed.hourly),
        ("power", &a.rhythm.power, &b.rhythm.power),
        ("phase", &a.rhythm.mean_phase, &b.rhythm.mean_phase),
        ("coherence", &a.rhythm.coherence, &b.rhythm.coherence),
        ("stability", &a.rhythm.stability, &b.rhythm.stability),
    ];
    for (name, x, y) in arrays {
        for (i, (u, v)) in x.iter().zip(y).enumerate() {
            if (u - v).abs() > 1e-9 * (1.0 + u.abs()) {
                return Some(format!("{name}[{i}] {u} vs {v}"));
            }
        }
    }
    if a.scalars.h_min != b.scalars.h_min || a.scalars.h_stable_phase != b.scalars.h_stable_phase {
        return Some(format!("scalars {:?} vs {:?}", a.scalars, b.scalars));
    }
    if (a.scalars.h_smooth_min - b.scalars.h_smooth_min).abs() > 1e-9 {
        return Some(format!("h_smooth_min {} vs {}", a.scalars.h_smooth_min, b.scalars.h_smooth_min));
    }
    None
}

fn rotation_covariance() -> Outcome {
    let cfg = FeatureConfig::default();
    let infer = InferConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let random_spec = |rng: &mut ChaCha8Rng, offset: i32, seed: u64| SynthSpec {
        offset_minutes: offset,
        n_days: 20,
        mean_daily_events: rng.random_range(80.0..400.0),
        trough_hour_local: rng.random_range(2.0..6.0),
        trough_depth: rng.random_range(0.5..0.95),
        concentration: rng.random_range(-2.0..2.0),
        phase_jitter_rad: rng.random_range(0.0..0.4),
        seed,
        ..SynthSpec::default()
    };
    let refs: Vec<(String, i32, circtz_core::ActivitySeries)> = (-11..=12)
        .map(|h| {
            let id = format!("ref{h:+03}");
            let spec = random_spec(&mut rng, h * 60, (1000 + h) as u64);
            (id.clone(), h * 60, generate(&spec, &id).unwrap().0)
        })
        .collect();
    // One fixed pool holding every reference at all 24 clock shifts, each labelled
    // with its shifted offset. A rotated target then meets the same reference in
    // the same pool, so reference methods must follow the rotation exactly.
    let mut entries = Vec::new();
    for (id, o, s) in &refs {
        for d in 0..24i64 {
            let rid = format!("{id}@{d:02}");
            entries.push(ReferenceEntry {
                community_id: rid.clone(),
                offset_minutes: wrap_minutes(o - 60 * d as i32),
                features: extract_features(&rid, &s.shifted(d), &cfg).unwrap().unwrap(),
            });
        }
    }
    let pool = ReferencePool::new(entries).unwrap();

    let mut checked = 0;
    for k in 0..50u64 {
        let id = format!("target{k:02}");
        let offset = rng.random_range(-11..=12) * 60;
        let series = generate(&random_spec(&mut rng, offset, k), &id).unwrap().0;
        let base = extract_features(&id, &series, &cfg).unwrap().unwrap();
        let base_preds: Vec<i32> = Method::ALL
            .iter()
            .map(|m| run_method(*m, &base, Some(&pool), &infer).unwrap().offset_minutes)
            .collect();
        for delta in 1..24i64 {
            let moved = extract_features(&id, &series.shifted(delta), &cfg).unwrap().unwrap();
            if let Some(d) = feature_diff(&moved, &base.rotated(delta)) {
                return Err(format!("series {k}, delta {delta}: {d}"));
            }
            for (m, base_pred) in Method::ALL.iter().zip(&base_preds) {
                let got = run_method(*m, &moved, Some(&pool), &infer)
                    .unwrap()
                    .offset_minutes;
                let want = wrap_minutes(base_pred - 60 * delta as i32);
                if got != want {
                    return Err(format!("series {k}, delta {delta}, {m}: predicted {got}, expected {want}"));
                }
                checked += 1;
            }
        }
    }
    Ok(format!("50 series x 23 shifts, {checked} predictions shifted exactly"))
}

fn read_tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut trees = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run).join("out");
        let status = Command::new(env!("CARGO_BIN_EXE_circtz"))
            .args(["pipeline", "--synthetic", "default", "--seed", "7", "--jobs", "8", "--out"])
            .arg(&out)
            .env_remove("CIRCTZ_SEED")
            .status()
            .unwrap();
        if !status.success() {
            return Err(format!("pipeline run {run} exited with {status}"));
        }
        trees.push(read_tree(&out));
    }
    let (a, b) = (&trees[0], &trees[1]);
    if a.keys().ne(b.keys()) {
        return Err(format!("file sets differ: {:?} vs {:?}", a.keys(), b.keys()));
    }
    let differing: Vec<&String> = a.keys().filter(|k| a[*k] != b[*k]).collect();
    let bytes: usize = a.values().map(Vec::len).sum();
    check(
        differing.is_empty(),
        format!("{} files, {bytes} bytes; differing: {differing:?}", a.len()),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("1 end-to-end synthetic recovery", end_to_end_recovery),
        ("2 noisy-recovery ordering", noisy_ordering),
        ("3 scarcity robustness", scarcity_robustness),
        ("4 dummy baseline calibration", dummy_calibration),
        ("5 population table replication", table_replication),
        ("6 metric oracles", metric_oracles),
        ("7 rotation covariance", rotation_covariance),
        ("8 determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS criterion {name}: {d} [{secs:.1}s]"),
            Err(d) => {
                failed += 1;
                println!("FAIL criterion {name}: {d} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
