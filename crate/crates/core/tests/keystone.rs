use circtz_core::features::extract_features;
use circtz_core::infer::{run_method, InferConfig};
use circtz_core::synth::{generate, SynthSpec};
use circtz_core::{FeatureConfig, Method};

/// Clean generated series: preprocessing, features and the lull anchor recover
/// every integer offset exactly.
#[test]
fn lull_recovers_integer_offsets_end_to_end() {
    for o in -11..=12 {
        for seed in 0..3 {
            let spec = SynthSpec {
                offset_minutes: o * 60,
                seed,
                ..SynthSpec::default()
            };
            let id = format!("c{o}_{seed}");
            let (series, label) = generate(&spec, &id).unwrap();
            let f = extract_features(&id, &series, &FeatureConfig::default())
                .unwrap()
                .expect("dense series passes the sparsity filter");
            let p = run_method(Method::ActivityLull, &f, None, &InferConfig::default()).unwrap();
            assert_eq!(p.offset_minutes, label.offset_minutes, "{id}");
        }
    }
}

/// Half-hour zones are recovered to the nearest hour by the integer-hour anchor
/// and to the quarter-hour grid by the smoothed anchor.
#[test]
fn half_hour_zone_lands_on_a_neighbouring_hour() {
    let spec = SynthSpec {
        offset_minutes: 330,
        ..SynthSpec::default()
    };
    let (series, _) = generate(&spec, "ist").unwrap();
    let f = extract_features("ist", &series, &FeatureConfig::default()).unwrap().unwrap();
    let lull = run_method(Method::ActivityLull, &f, None, &InferConfig::default()).unwrap();
    assert!([300, 360].contains(&lull.offset_minutes), "{}", lull.offset_minutes);
    let smooth = run_method(Method::ActivityLullSmooth, &f, None, &InferConfig::default()).unwrap();
    assert!((smooth.offset_minutes - 330).abs() <= 30, "{}", smooth.offset_minutes);
}
