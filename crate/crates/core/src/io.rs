//! CSV artifacts: feature dumps, predictions, evaluation reports, sweeps and
//! longitudinal analyses. Floats are written in shortest round-trip form.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::analyze::{bin_offset_hours, DeconvolutionResult, YearlyOffsetDistribution, OFFSET_BINS};
use crate::circular::HOURS_PER_DAY;
use crate::error::{Error, Result};
use crate::eval::cv::{EvalReport, Evaluated};
use crate::eval::sweep::SweepPoint;
use crate::features::{CommunityFeatures, HourlyProfile, RhythmFeatures, ScalarFeatures, SmoothedProfile};
use crate::infer::{Diagnostics, Method, OffsetPrediction};

/// Create a file for writing, along with any missing parent directories.
pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

pub fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn f(v: f64) -> String {
    format!("{v}")
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(T::to_string).unwrap_or_default()
}

const ARRAYS: [&str; 8] = [
    "p", "c", "lambda", "beta", "power", "phase", "coherence", "stability",
];

pub fn feature_header() -> Vec<String> {
    let mut h: Vec<String> = [
        "community_id",
        "offset_minutes",
        "h_min",
        "h_smooth_min",
        "h_stable_phase",
        "degenerate",
        "detrend_fallback",
        "gam_intercept",
        "gam_iterations",
        "gam_converged",
        "scale_hours",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for a in ARRAYS {
        h.extend((0..HOURS_PER_DAY).map(|i| format!("{a}_{i}")));
    }
    h
}

/// Write one row per community, with its label when known.
pub fn write_features<'a, W: Write>(
    out: W,
    rows: impl IntoIterator<Item = (&'a CommunityFeatures, Option<i32>)>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(feature_header())?;
    for (ft, label) in rows {
        let mut rec = vec![
            ft.community_id.clone(),
            opt(&label),
            ft.scalars.h_min.to_string(),
            f(ft.scalars.h_smooth_min),
            ft.scalars.h_stable_phase.to_string(),
            ft.profile.degenerate.to_string(),
            ft.detrend_fallback.to_string(),
            f(ft.smoothed.intercept),
            ft.smoothed.iterations.to_string(),
            ft.smoothed.converged.to_string(),
            f(ft.rhythm.scale_hours),
        ];
        for arr in [
            &ft.profile.p[..],
            &ft.profile.support_counts[..],
            &ft.smoothed.hourly[..],
            &ft.smoothed.coeffs[..],
            &ft.rhythm.power[..],
            &ft.rhythm.mean_phase[..],
            &ft.rhythm.coherence[..],
            &ft.rhythm.stability[..],
        ] {
            rec.extend(arr.iter().map(|v| f(*v)));
        }
        w.write_record(rec)?;
    }
    w.flush().map_err(|e| Error::Config(format!("writing features: {e}")))?;
    Ok(())
}

fn field<'r, T: std::str::FromStr>(rec: &'r csv::StringRecord, idx: &BTreeMap<String, usize>, name: &str, line: u64) -> Result<T> {
    let i = *idx.get(name).ok_or_else(|| Error::Parse {
        path: "features".into(),
        line: 1,
        message: format!("missing column `{name}`"),
    })?;
    rec.get(i).unwrap_or("").parse().map_err(|_| Error::Parse {
        path: "features".into(),
        line,
        message: format!("bad value `{}` in column `{name}`", rec.get(i).unwrap_or("")),
    })
}

/// Read a feature dump. Returns features with their optional labels, in file order.
pub fn read_features(input: impl Read) -> Result<Vec<(CommunityFeatures, Option<i32>)>> {
    let mut r = csv::Reader::from_reader(input);
    let idx: BTreeMap<String, usize> = r
        .headers()?
        .iter()
        .enumerate()
        .map(|(i, h)| (h.to_string(), i))
        .collect();
    let mut out = Vec::new();
    for (n, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = n as u64 + 2;
        let arr = |name: &str| -> Result<[f64; HOURS_PER_DAY]> {
            let mut a = [0.0; HOURS_PER_DAY];
            for (i, v) in a.iter_mut().enumerate() {
                *v = field(&rec, &idx, &format!("{name}_{i}"), line)?;
            }
            Ok(a)
        };
        let id: String = field(&rec, &idx, "community_id", line)?;
        let label_raw: String = field(&rec, &idx, "offset_minutes", line)?;
        let label = if label_raw.is_empty() {
            None
        } else {
            Some(field(&rec, &idx, "offset_minutes", line)?)
        };
        let profile = HourlyProfile {
            p: arr("p")?,
            support_counts: arr("c")?,
            degenerate: field(&rec, &idx, "degenerate", line)?,
        };
        let smoothed = SmoothedProfile::from_coefficients(
            field(&rec, &idx, "gam_intercept", line)?,
            arr("beta")?.to_vec(),
            field(&rec, &idx, "gam_iterations", line)?,
            field(&rec, &idx, "gam_converged", line)?,
        );
        let rhythm = RhythmFeatures {
            power: arr("power")?,
            mean_phase: arr("phase")?,
            coherence: arr("coherence")?,
            stability: arr("stability")?,
            scale_hours: field(&rec, &idx, "scale_hours", line)?,
        };
        let scalars = ScalarFeatures {
            h_min: field(&rec, &idx, "h_min", line)?,
            h_smooth_min: field(&rec, &idx, "h_smooth_min", line)?,
            h_stable_phase: field(&rec, &idx, "h_stable_phase", line)?,
        };
        out.push((
            CommunityFeatures {
                community_id: id,
                profile,
                smoothed,
                rhythm,
                scalars,
                detrend_fallback: field(&rec, &idx, "detrend_fallback", line)?,
            },
            label,
        ));
    }
    Ok(out)
}

pub fn write_predictions<'a, W: Write>(out: W, preds: impl IntoIterator<Item = &'a OffsetPrediction>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "community_id",
        "method",
        "offset_minutes",
        "matched_ref",
        "divergence",
        "lull_hour",
    ])?;
    for p in preds {
        w.write_record([
            p.community_id.clone(),
            p.method.to_string(),
            p.offset_minutes.to_string(),
            opt(&p.diagnostics.matched_ref),
            opt(&p.diagnostics.divergence),
            opt(&p.diagnostics.lull_hour),
        ])?;
    }
    w.flush().map_err(|e| Error::Config(format!("writing predictions: {e}")))?;
    Ok(())
}

pub fn read_predictions(input: impl Read) -> Result<Vec<OffsetPrediction>> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for (n, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |message: String| Error::Parse {
            path: "predictions".into(),
            line: n as u64 + 2,
            message,
        };
        let get = |i: usize| rec.get(i).unwrap_or("");
        let method: Method = get(1).parse().map_err(|e: crate::infer::UnknownMethod| bad(e.to_string()))?;
        let offset_minutes = get(2)
            .parse()
            .map_err(|_| bad(format!("bad offset `{}`", get(2))))?;
        let num = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| bad(format!("bad number `{s}`")))
            }
        };
        out.push(OffsetPrediction {
            community_id: get(0).to_string(),
            method,
            offset_minutes,
            diagnostics: Diagnostics {
                matched_ref: (!get(3).is_empty()).then(|| get(3).to_string()),
                divergence: num(get(4))?,
                lull_hour: num(get(5))?,
            },
        });
    }
    Ok(out)
}

const METRIC_COLUMNS: [&str; 5] = [
    "accuracy",
    "weighted_kappa",
    "circular_correlation",
    "mean_circular_error",
    "weighted_f1",
];

/// Per-iteration rows.
pub fn write_report<W: Write>(out: W, report: &EvalReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["method", "iteration", "n_targets"];
    header.extend(METRIC_COLUMNS);
    header.push("undefined");
    w.write_record(&header)?;
    for r in &report.rows {
        let mut rec = vec![r.method.to_string(), r.iteration.to_string(), r.n_targets.to_string()];
        rec.extend(r.metrics.values().iter().map(|v| f(*v)));
        rec.push(r.metrics.has_undefined().to_string());
        w.write_record(rec)?;
    }
    w.flush().map_err(|e| Error::Config(format!("writing report: {e}")))?;
    Ok(())
}

/// Mean over iterations, one row per method.
pub fn write_aggregate<W: Write>(out: W, report: &EvalReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["method"];
    header.extend(METRIC_COLUMNS);
    header.push("undefined_iterations");
    w.write_record(&header)?;
    for r in &report.aggregate {
        let mut rec = vec![r.method.to_string()];
        rec.extend(r.metrics.values().iter().map(|v| f(*v)));
        rec.push(r.undefined_iterations.to_string());
        w.write_record(rec)?;
    }
    w.flush().map_err(|e| Error::Config(format!("writing aggregate: {e}")))?;
    Ok(())
}

/// Confusion matrix of one method; rows are true offsets, columns predicted.
pub fn write_confusion<W: Write>(out: W, report: &EvalReport, method: Evaluated) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["true_offset_hours".to_string()];
    header.extend((0..HOURS_PER_DAY).map(|j| format!("pred_{}", j as i32 - 11)));
    w.write_record(&header)?;
    let zero = [[0; HOURS_PER_DAY]; HOURS_PER_DAY];
    let m = report.confusion.get(&method).unwrap_or(&zero);
    for (i, row) in m.iter().enumerate() {
        let mut rec = vec![(i as i32 - 11).to_string()];
        rec.extend(row.iter().map(|c| c.to_string()));
        w.write_record(rec)?;
    }
    w.flush().map_err(|e| Error::Config(format!("writing confusion: {e}")))?;
    Ok(())
}

pub fn write_errors<W: Write>(out: W, report: &EvalReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "iteration",
        "method",
        "community_id",
        "truth_minutes",
        "predicted_minutes",
        "error_hours",
    ])?;
    for e in &report.errors {
        w.write_record([
            e.iteration.to_string(),
            e.method.to_string(),
            e.community_id.clone(),
            e.truth_minutes.to_string(),
            e.predicted_minutes.to_string(),
            f(e.error_hours),
        ])?;
    }
    w.flush().map_err(|e| Error::Config(format!("writing errors: {e}")))?;
    Ok(())
}

pub fn write_sweep<W: Write>(out: W, points: &[SweepPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "method",
        "axis",
        "level",
        "iteration",
        "rho",
        "accuracy",
        "clamped",
        "excluded",
    ])?;
    for p in points {
        w.write_record([
            p.method.to_string(),
            p.axis.to_string(),
            p.level.to_string(),
            p.iteration.to_string(),
            f(p.rho),
            f(p.accuracy),
            p.clamped.to_string(),
            p.excluded.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::Config(format!("writing sweep: {e}")))?;
    Ok(())
}

pub fn write_gini<W: Write>(out: W, rows: &[(i32, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["year", "gini"])?;
    for (y, g) in rows {
        w.write_record([y.to_string(), f(*g)])?;
    }
    w.flush().map_err(|e| Error::Config(format!("writing gini: {e}")))?;
    Ok(())
}

/// Long format: one row per (year, offset).
pub fn write_growth<W: Write>(out: W, growth: &BTreeMap<i32, [f64; OFFSET_BINS]>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["year", "offset_hours", "log2_fold_change"])?;
    for (y, row) in growth {
        for (b, v) in row.iter().enumerate() {
            w.write_record([y.to_string(), bin_offset_hours(b).to_string(), f(*v)])?;
        }
    }
    w.flush().map_err(|e| Error::Config(format!("writing growth: {e}")))?;
    Ok(())
}

pub fn write_density<W: Write>(out: W, yearly: &[YearlyOffsetDistribution]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["year", "offset_hours", "mass", "share"])?;
    for y in yearly {
        let bins = y.bins();
        let total: f64 = bins.iter().sum();
        for (b, m) in bins.iter().enumerate() {
            let share = if total > 0.0 { m / total } else { 0.0 };
            w.write_record([y.year.to_string(), bin_offset_hours(b).to_string(), f(*m), f(share)])?;
        }
    }
    w.flush().map_err(|e| Error::Config(format!("writing density: {e}")))?;
    Ok(())
}

/// Kernel weights next to the input and redistributed columns, one row per offset.
pub fn write_deconvolution<W: Write>(
    out: W,
    result: &DeconvolutionResult,
    real: &[f64],
    pure: &[f64],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "offset_hours",
        "real_share",
        "inferred_pure",
        "inferred_optimized",
        "shift_hours",
        "theta",
        "weight",
    ])?;
    for b in 0..OFFSET_BINS {
        w.write_record([
            bin_offset_hours(b).to_string(),
            f(real[b]),
            f(pure[b]),
            f(result.optimized[b]),
            result.shifts[b].to_string(),
            f(result.theta[b]),
            f(result.weights[b]),
        ])?;
    }
    w.flush().map_err(|e| Error::Config(format!("writing deconvolution: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{extract_features, FeatureConfig};
    use crate::synth::{generate, SynthSpec};

    #[test]
    fn features_round_trip_exactly() {
        let spec = SynthSpec {
            offset_minutes: -300,
            n_days: 20,
            ..SynthSpec::default()
        };
        let (series, _) = generate(&spec, "a").unwrap();
        let ft = extract_features("a", &series, &FeatureConfig::default())
            .unwrap()
            .unwrap();
        let mut buf = Vec::new();
        write_features(&mut buf, [(&ft, Some(-300)), (&ft, None)]).unwrap();
        let back = read_features(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].0, ft);
        assert_eq!(back[0].1, Some(-300));
        assert_eq!(back[1].1, None);
    }

    #[test]
    fn predictions_round_trip() {
        let preds = vec![
            OffsetPrediction {
                community_id: "x".into(),
                method: Method::ActivityCounts,
                offset_minutes: 60,
                diagnostics: Diagnostics {
                    matched_ref: Some("y".into()),
                    divergence: Some(0.125),
                    lull_hour: None,
                },
            },
            OffsetPrediction {
                community_id: "z".into(),
                method: Method::ActivityLull,
                offset_minutes: -90,
                diagnostics: Diagnostics {
                    matched_ref: None,
                    divergence: None,
                    lull_hour: Some(5.5),
                },
            },
        ];
        let mut buf = Vec::new();
        write_predictions(&mut buf, &preds).unwrap();
        assert_eq!(read_predictions(buf.as_slice()).unwrap(), preds);
    }

    #[test]
    fn unknown_method_in_predictions_names_the_line() {
        let csv = "community_id,method,offset_minutes,matched_ref,divergence,lull_hour\na,Bogus,0,,,\n";
        let err = read_predictions(csv.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("Bogus") && err.contains('2'), "{err}");
    }
}
