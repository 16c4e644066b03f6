//! Synthetic labeled corpora with a known offset.
//!
//! Local-time intensity follows `exp(k cos(2 pi (h - peak) / 24))`, rescaled so that
//! its unique minimum sits at `trough_hour_local` with relative depth `trough_depth`.
//! Hourly counts are Poisson draws; UTC hours map to local hours by adding the offset.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::circular::HOURS_PER_DAY;
use crate::error::{Error, Result};
use crate::ingest::{Event, GroundTruthLabel, LabeledCorpus};
use crate::preprocess::ActivitySeries;
use crate::seed_of;

/// 2020-01-01T00:00:00Z as an epoch hour.
pub const DEFAULT_START_HOUR: i64 = 438_288;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trend {
    #[default]
    None,
    /// Intensity grows linearly to three times its starting level.
    LinearGrowth,
    /// A 48 h burst at 20x baseline in the middle of the series.
    Spike,
}

/// A second population mixed into the same community.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub offset_minutes: i32,
    /// Share of events coming from this component, in [0, 1).
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub offset_minutes: i32,
    pub n_days: usize,
    pub mean_daily_events: f64,
    pub trough_hour_local: f64,
    /// `1 - min/max` of the daily intensity, in (0, 1].
    pub trough_depth: f64,
    /// Shape parameter `k` of the daily profile. Positive values sharpen the peak,
    /// negative values sharpen the trough.
    pub concentration: f64,
    pub trend: Trend,
    /// Standard deviation of a per-day phase shift. Each activity day starts at the
    /// local trough hour, so schedule shifts happen overnight.
    pub phase_jitter_rad: f64,
    pub mixture: Option<MixtureComponent>,
    pub start_hour: i64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            offset_minutes: 0,
            n_days: 180,
            mean_daily_events: 200.0,
            trough_hour_local: 4.0,
            trough_depth: 0.9,
            concentration: -1.0,
            trend: Trend::None,
            phase_jitter_rad: 0.0,
            mixture: None,
            start_hour: DEFAULT_START_HOUR,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_days == 0 {
            return Err(Error::Config("n_days must be at least 1".into()));
        }
        if !(self.mean_daily_events > 0.0) {
            return Err(Error::Config("mean_daily_events must be positive".into()));
        }
        if !(self.trough_depth > 0.0 && self.trough_depth <= 1.0) {
            return Err(Error::Config("trough_depth must be in (0, 1]".into()));
        }
        if !self.concentration.is_finite() {
            return Err(Error::Config("concentration must be finite".into()));
        }
        if !(self.phase_jitter_rad >= 0.0) {
            return Err(Error::Config("phase_jitter_rad must be non-negative".into()));
        }
        if let Some(m) = self.mixture {
            if !(0.0..1.0).contains(&m.weight) {
                return Err(Error::Config("mixture weight must be in [0, 1)".into()));
            }
        }
        Ok(())
    }

    /// Unit-free daily shape in [0, 1], zero at the trough.
    fn shape(&self, local_hour: f64) -> f64 {
        let peak = self.trough_hour_local + 12.0;
        let c = (2.0 * PI * (local_hour - peak) / 24.0).cos();
        let k = self.concentration;
        if k.abs() < 1e-9 {
            return 0.5 * (1.0 + c);
        }
        ((k * c).exp() - (-k).exp()) / (k.exp() - (-k).exp())
    }

    fn relative(&self, local_hour: f64) -> f64 {
        1.0 - self.trough_depth + self.trough_depth * self.shape(local_hour)
    }

    /// Expected events per hour at a local clock time, before trend and mixing.
    pub fn local_rate(&self, local_hour: f64) -> f64 {
        let mean_rel: f64 = (0..HOURS_PER_DAY)
            .map(|h| self.relative(h as f64))
            .sum::<f64>()
            / HOURS_PER_DAY as f64;
        self.mean_daily_events / HOURS_PER_DAY as f64 * self.relative(local_hour) / mean_rel
    }

    fn trend_factor(&self, index: usize, len: usize) -> f64 {
        match self.trend {
            Trend::None => 1.0,
            Trend::LinearGrowth => 1.0 + 2.0 * index as f64 / len.max(1) as f64,
            Trend::Spike => {
                let start = len / 2;
                if (start..start + 48).contains(&index) {
                    20.0
                } else {
                    1.0
                }
            }
        }
    }

    /// Expected count for every hour of the series, with a per-day phase shift drawn
    /// from `rng` when jitter is enabled.
    pub fn intensities(&self, rng: &mut impl Rng) -> Vec<f64> {
        let len = self.n_days * HOURS_PER_DAY;
        let jitter = Normal::new(0.0, self.phase_jitter_rad.max(0.0)).expect("valid sd");
        let components: Vec<(i32, f64)> = match self.mixture {
            None => vec![(self.offset_minutes, 1.0)],
            Some(m) => vec![
                (self.offset_minutes, 1.0 - m.weight),
                (m.offset_minutes, m.weight),
            ],
        };
        let mut out = vec![0.0; len];
        for (offset, weight) in components {
            let offset_h = offset as f64 / 60.0;
            let mut shifts: BTreeMap<i64, f64> = BTreeMap::new();
            for (i, slot) in out.iter_mut().enumerate() {
                let local_abs = (self.start_hour + i as i64) as f64 + offset_h;
                let day = ((local_abs - self.trough_hour_local) / 24.0).floor() as i64;
                let shift = if self.phase_jitter_rad > 0.0 {
                    *shifts
                        .entry(day)
                        .or_insert_with(|| jitter.sample(rng) * 24.0 / (2.0 * PI))
                } else {
                    0.0
                };
                let local = (local_abs - shift).rem_euclid(24.0);
                *slot += weight * self.local_rate(local) * self.trend_factor(i, len);
            }
        }
        out
    }
}

fn rng_for(spec: &SynthSpec, community_id: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed_of!(spec.seed, "synth", community_id))
}

/// Draw one community's raw hourly series and its label. The series is trimmed to
/// its first and last active hour, as ingest would produce it.
pub fn generate(spec: &SynthSpec, community_id: &str) -> Result<(ActivitySeries, GroundTruthLabel)> {
    spec.validate()?;
    let mut rng = rng_for(spec, community_id);
    let counts: Vec<f64> = spec
        .intensities(&mut rng)
        .into_iter()
        .map(|rate| {
            if rate > 0.0 {
                Poisson::new(rate).expect("positive rate").sample(&mut rng)
            } else {
                0.0
            }
        })
        .collect();
    let first = counts.iter().position(|c| *c > 0.0);
    let last = counts.iter().rposition(|c| *c > 0.0);
    let series = match (first, last) {
        (Some(a), Some(b)) => ActivitySeries::raw(spec.start_hour + a as i64, counts[a..=b].to_vec()),
        _ => return Err(Error::Degenerate("synthetic series has no events")),
    };
    let label = GroundTruthLabel::new(community_id, spec.offset_minutes);
    Ok((series, label))
}

/// Expand a raw series into events with uniformly drawn seconds within each hour.
pub fn series_to_events(series: &ActivitySeries, community_id: &str, seed: u64) -> Vec<Event> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed_of!(seed, "events", community_id));
    let mut events = Vec::with_capacity(series.total() as usize);
    for (i, &c) in series.values.iter().enumerate() {
        let base = (series.start_hour + i as i64) * 3600;
        let mut secs: Vec<i64> = (0..c as usize).map(|_| rng.random_range(0..3600)).collect();
        secs.sort_unstable();
        events.extend(secs.into_iter().map(|s| Event {
            community_id: community_id.to_string(),
            timestamp_utc: base + s,
        }));
    }
    events
}

/// Community id encoding the offset, e.g. `utc-0530_02`.
pub fn community_name(offset_minutes: i32, index: usize) -> String {
    let sign = if offset_minutes < 0 { '-' } else { '+' };
    let m = offset_minutes.abs();
    format!("utc{sign}{:02}{:02}_{index:02}", m / 60, m % 60)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub offsets_minutes: Vec<i32>,
    pub per_class: usize,
    pub template: SynthSpec,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec::preset("default").expect("built-in preset")
    }
}

impl CorpusSpec {
    /// Built-in corpora over the 24 whole-hour offsets -11..=12, 4 communities each.
    ///
    /// * `clean`: no day-to-day variation, deep troughs.
    /// * `default`: as `clean` plus mild per-day phase jitter.
    /// * `noisy`: phase jitter 0.5 rad and trough depth 0.5.
    pub fn preset(name: &str) -> Option<Self> {
        let offsets_minutes: Vec<i32> = (-11..=12).map(|h| h * 60).collect();
        let template = match name {
            "clean" => SynthSpec::default(),
            "default" => SynthSpec {
                phase_jitter_rad: 0.25,
                ..SynthSpec::default()
            },
            "noisy" => SynthSpec {
                phase_jitter_rad: 0.5,
                trough_depth: 0.5,
                ..SynthSpec::default()
            },
            _ => return None,
        };
        Some(CorpusSpec {
            offsets_minutes,
            per_class: 4,
            template,
        })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.template.seed = seed;
        self
    }
}

/// Generate every community of a corpus. `per_class` must be at least 2.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<LabeledCorpus> {
    if spec.per_class < 2 {
        return Err(Error::Config("per_class must be at least 2".into()));
    }
    let mut labels = Vec::new();
    let mut series = BTreeMap::new();
    for &offset in &spec.offsets_minutes {
        for i in 0..spec.per_class {
            let id = community_name(offset, i);
            let community = SynthSpec {
                offset_minutes: offset,
                ..spec.template.clone()
            };
            let (s, l) = generate(&community, &id)?;
            series.insert(id, s);
            labels.push(l);
        }
    }
    Ok(LabeledCorpus::assemble(labels, series, 2))
}
