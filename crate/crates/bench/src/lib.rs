//! Fixtures shared by the benches.

use circtz_core::synth::{generate, SynthSpec};
use circtz_core::{ActivitySeries, FeatureConfig};

/// A dense generated series of `days` days at the given offset.
pub fn series(offset_hours: i32, days: usize, seed: u64) -> ActivitySeries {
    let spec = SynthSpec {
        offset_minutes: offset_hours * 60,
        n_days: days,
        seed,
        ..SynthSpec::default()
    };
    generate(&spec, "bench").expect("valid spec").0
}

pub fn config() -> FeatureConfig {
    FeatureConfig::default()
}
