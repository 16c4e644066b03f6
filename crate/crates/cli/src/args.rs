use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use circtz_core::analyze::Objective;
use circtz_core::eval::cv::SplitPlan;
use circtz_core::eval::sweep::Axis;
use circtz_core::features::FeatureConfig;
use circtz_core::infer::InferConfig;
use circtz_core::Method;

/// A problem with how the program was invoked (exit code 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Debug, Parser)]
#[command(name = "circtz", version, about = "Infer the UTC offset of online communities from hourly activity")]
pub struct Cli {
    #[command(flatten)]
    pub knobs: KnobArgs,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

/// Settings shared by every subcommand. Command-line values win over `--config`,
/// which wins over built-in defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct KnobArgs {
    /// Flat `key = value` file with defaults for the options below.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Master seed; falls back to the CIRCTZ_SEED environment variable.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
    /// Hann detrending window in hours.
    #[arg(long, global = true, value_name = "HOURS")]
    pub hann_window: Option<usize>,
    /// Minimum number of non-zero hours for a community to be kept.
    #[arg(long, global = true)]
    pub min_nonzero: Option<usize>,
    /// Local hour of the activity lull used by the anchor methods.
    #[arg(long, global = true, value_name = "HOUR")]
    pub lull_hour: Option<f64>,
    /// Average wavelet power over a band of periods, e.g. `20:28`.
    #[arg(long, global = true, value_name = "LO:HI")]
    pub cwt_band: Option<String>,
    /// Evaluation iterations.
    #[arg(long, global = true)]
    pub iterations: Option<usize>,
    /// Fraction of each offset class used as references.
    #[arg(long, global = true, value_name = "FRAC")]
    pub ref_frac: Option<f64>,
    /// Minimum communities per offset class in the ground truth.
    #[arg(long, global = true)]
    pub min_class: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AxisArg {
    Comments,
    Days,
    Both,
}

impl AxisArg {
    pub fn axes(self) -> Vec<Axis> {
        match self {
            AxisArg::Comments => vec![Axis::Comments],
            AxisArg::Days => vec![Axis::Days],
            AxisArg::Both => vec![Axis::Comments, Axis::Days],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ObjectiveArg {
    LeastSquares,
    Pearson,
}

impl From<ObjectiveArg> for Objective {
    fn from(o: ObjectiveArg) -> Self {
        match o {
            ObjectiveArg::LeastSquares => Objective::LeastSquares,
            ObjectiveArg::Pearson => Objective::Pearson,
        }
    }
}

/// Where activity comes from.
#[derive(Debug, Clone, Default, Args)]
pub struct SeriesInput {
    /// Event files (NDJSON or CSV, optionally gzipped).
    #[arg(long, num_args = 1.., value_name = "FILE")]
    pub events: Vec<PathBuf>,
    /// Pre-binned `community,epoch_hour,count` files.
    #[arg(long, num_args = 1.., value_name = "FILE")]
    pub series: Vec<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labeled synthetic corpus in the ingest formats.
    Synth {
        /// Built-in corpus: clean, default or noisy.
        #[arg(long, default_value = "default")]
        preset: String,
        /// JSON corpus specification; overrides --preset.
        #[arg(long, value_name = "FILE")]
        spec: Option<PathBuf>,
        /// Events output (NDJSON; gzipped when the name ends in .gz).
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Also write the hourly series as pre-binned CSV.
        #[arg(long, value_name = "FILE")]
        series: Option<PathBuf>,
    },
    /// Bin events into hourly series.
    Ingest {
        #[command(flatten)]
        input: SeriesInput,
        /// Ground truth; with --labels-out, writes the labels that survive the filters.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long = "labels-out", value_name = "FILE")]
        labels_out: Option<PathBuf>,
        /// Pre-binned series output.
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract per-community features.
    Features {
        #[command(flatten)]
        input: SeriesInput,
        /// Ground truth; labels are copied into the dump.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict offsets for unlabeled communities.
    Infer {
        /// Methods to run (comma separated).
        #[arg(long = "method", alias = "methods", value_delimiter = ',', required = true)]
        methods: Vec<Method>,
        /// Labeled feature dump used as the reference pool.
        #[arg(long)]
        pool: Option<PathBuf>,
        /// Target communities: a feature dump or pre-binned series.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Repeated stratified evaluation against the ground truth.
    Evaluate {
        #[command(flatten)]
        input: SeriesInput,
        /// Labeled feature dump, instead of series.
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        methods: Vec<Method>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Accuracy as events or observation days are removed.
    Sweep {
        #[command(flatten)]
        input: SeriesInput,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, value_delimiter = ',')]
        methods: Vec<Method>,
        #[arg(long, value_enum, default_value = "both")]
        axis: AxisArg,
        /// Event-count levels.
        #[arg(long = "comment-levels", value_delimiter = ',')]
        comment_levels: Vec<usize>,
        /// Observation-day levels.
        #[arg(long = "day-levels", value_delimiter = ',')]
        day_levels: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Yearly densities, concentration, growth and population comparison.
    Analyze {
        #[arg(long)]
        predictions: PathBuf,
        /// Which method's predictions to analyze.
        #[arg(long, default_value = "ActivityCounts")]
        method: Method,
        /// Series used for the year of first activity and activity volume.
        #[command(flatten)]
        input: SeriesInput,
        /// `offset_minutes,real_share` table; defaults to the shipped table.
        #[arg(long)]
        population: Option<PathBuf>,
        #[arg(long = "base-year")]
        base_year: Option<i32>,
        #[arg(long = "weight-by-volume")]
        weight_by_volume: bool,
        #[arg(long, value_enum, default_value = "least-squares")]
        objective: ObjectiveArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every stage and write the full output tree.
    Pipeline {
        /// Built-in synthetic corpus to generate.
        #[arg(long, value_name = "PRESET")]
        synthetic: Option<String>,
        /// JSON corpus specification to generate.
        #[arg(long, value_name = "FILE")]
        spec: Option<PathBuf>,
        /// Real input instead of a synthetic corpus.
        #[command(flatten)]
        input: SeriesInput,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

/// Fully resolved settings.
#[derive(Debug, Clone, Serialize)]
pub struct Knobs {
    pub seed: u64,
    pub jobs: Option<usize>,
    pub features: FeatureConfig,
    pub infer: InferConfig,
    pub plan: SplitPlan,
    pub min_class: usize,
    pub methods: Vec<Method>,
    pub comment_levels: Vec<usize>,
    pub day_levels: Vec<usize>,
    /// Explicit growth base year; `None` means the default with a fallback.
    pub base_year: Option<i32>,
    pub weight_by_volume: bool,
}

pub const DEFAULT_COMMENT_LEVELS: [usize; 4] = [100_000, 10_000, 1_000, 100];
pub const DEFAULT_DAY_LEVELS: [usize; 3] = [1_000, 100, 10];

const CONFIG_KEYS: [&str; 14] = [
    "seed",
    "jobs",
    "hann_window",
    "min_nonzero",
    "lull_hour",
    "cwt_band",
    "iterations",
    "ref_frac",
    "min_class",
    "methods",
    "comment_levels",
    "day_levels",
    "base_year",
    "weight_by_volume",
];

/// Parse a flat `key = value` file. Blank lines and `#` comments are ignored;
/// values may be quoted.
pub fn parse_config(text: &str, path: &Path) -> anyhow::Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            usage(format!("{}:{}: expected `key = value`", path.display(), n + 1))
        })?;
        let key = k.trim().replace('-', "_");
        if !CONFIG_KEYS.contains(&key.as_str()) {
            return Err(usage(format!(
                "{}:{}: unknown key `{key}` (valid: {})",
                path.display(),
                n + 1,
                CONFIG_KEYS.join(", ")
            )));
        }
        let val = v.trim().trim_matches('"').to_string();
        out.insert(key, val);
    }
    Ok(out)
}

fn parsed<T: std::str::FromStr>(key: &str, v: &str) -> anyhow::Result<T>
where
    T::Err: fmt::Display,
{
    v.parse()
        .map_err(|e| usage(format!("config `{key}`: bad value `{v}`: {e}")))
}

fn list<T: std::str::FromStr>(key: &str, v: &str) -> anyhow::Result<Vec<T>>
where
    T::Err: fmt::Display,
{
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parsed(key, s))
        .collect()
}

pub fn parse_band(v: &str) -> anyhow::Result<(u32, u32)> {
    let (lo, hi) = v
        .split_once(':')
        .ok_or_else(|| usage(format!("--cwt-band expects LO:HI, got `{v}`")))?;
    let lo: u32 = parsed("cwt_band", lo.trim())?;
    let hi: u32 = parsed("cwt_band", hi.trim())?;
    if lo == 0 || lo > hi {
        return Err(usage(format!("--cwt-band needs 0 < LO <= HI, got `{v}`")));
    }
    Ok((lo, hi))
}

impl Knobs {
    pub fn resolve(args: &KnobArgs, env_seed: Option<String>) -> anyhow::Result<Self> {
        let cfg = match &args.config {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| usage(format!("cannot read config {}: {e}", p.display())))?;
                parse_config(&text, p)?
            }
            None => BTreeMap::new(),
        };
        let get = |k: &str| cfg.get(k).map(String::as_str);

        let seed = match (args.seed, get("seed"), env_seed) {
            (Some(s), ..) => s,
            (None, Some(v), _) => parsed("seed", v)?,
            (None, None, Some(v)) => v
                .trim()
                .parse()
                .map_err(|_| usage(format!("CIRCTZ_SEED must be an unsigned integer, got `{v}`")))?,
            (None, None, None) => 0,
        };
        let jobs = match (args.jobs, get("jobs")) {
            (Some(j), _) => Some(j),
            (None, Some(v)) => Some(parsed("jobs", v)?),
            _ => None,
        };
        if jobs == Some(0) {
            return Err(usage("--jobs must be at least 1"));
        }

        let mut features = FeatureConfig::default();
        if let Some(w) = args.hann_window.or(get("hann_window").map(|v| parsed("hann_window", v)).transpose()?) {
            features.detrend.window_hours = w;
        }
        if let Some(m) = args.min_nonzero.or(get("min_nonzero").map(|v| parsed("min_nonzero", v)).transpose()?) {
            features.detrend.min_nonzero = m;
        }
        features
            .detrend
            .validate()
            .map_err(|e| usage(e.to_string()))?;
        if let Some(b) = args.cwt_band.as_deref().or(get("cwt_band")) {
            features.cwt.band = Some(parse_band(b)?);
        }

        let mut infer = InferConfig::default();
        if let Some(h) = args.lull_hour.or(get("lull_hour").map(|v| parsed("lull_hour", v)).transpose()?) {
            if !(0.0..24.0).contains(&h) {
                return Err(usage(format!("--lull-hour must be in [0, 24), got {h}")));
            }
            infer.lull_hour = h;
        }

        let mut plan = SplitPlan {
            seed,
            ..SplitPlan::default()
        };
        if let Some(i) = args.iterations.or(get("iterations").map(|v| parsed("iterations", v)).transpose()?) {
            plan.iterations = i;
        }
        if let Some(f) = args.ref_frac.or(get("ref_frac").map(|v| parsed("ref_frac", v)).transpose()?) {
            plan.reference_fraction = f;
        }
        plan.validate().map_err(|e| usage(e.to_string()))?;

        let min_class = match (args.min_class, get("min_class")) {
            (Some(m), _) => m,
            (None, Some(v)) => parsed("min_class", v)?,
            _ => 2,
        };
        let methods = match get("methods") {
            Some(v) => list("methods", v)?,
            None => Method::ALL.to_vec(),
        };
        let comment_levels = match get("comment_levels") {
            Some(v) => list("comment_levels", v)?,
            None => DEFAULT_COMMENT_LEVELS.to_vec(),
        };
        let day_levels = match get("day_levels") {
            Some(v) => list("day_levels", v)?,
            None => DEFAULT_DAY_LEVELS.to_vec(),
        };
        let base_year = get("base_year").map(|v| parsed("base_year", v)).transpose()?;
        let weight_by_volume = match get("weight_by_volume") {
            Some(v) => parsed("weight_by_volume", v)?,
            None => false,
        };
        Ok(Knobs {
            seed,
            jobs,
            features,
            infer,
            plan,
            min_class,
            methods,
            comment_levels,
            day_levels,
            base_year,
            weight_by_volume,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_file_parsing() {
        let text = "# comment\nseed = 7\nhann-window = 240 # trailing\nmethods = \"ActivityLull,Rhythm\"\n";
        let cfg = parse_config(text, Path::new("c.cfg")).unwrap();
        assert_eq!(cfg["seed"], "7");
        assert_eq!(cfg["hann_window"], "240");
        assert_eq!(cfg["methods"], "ActivityLull,Rhythm");
        let err = parse_config("colour = red\n", Path::new("c.cfg")).unwrap_err();
        assert!(err.downcast_ref::<UsageError>().is_some());
    }

    #[test]
    fn seed_precedence() {
        let args = KnobArgs::default();
        assert_eq!(Knobs::resolve(&args, Some("11".into())).unwrap().seed, 11);
        let args = KnobArgs {
            seed: Some(3),
            ..KnobArgs::default()
        };
        assert_eq!(Knobs::resolve(&args, Some("11".into())).unwrap().seed, 3);
        assert!(Knobs::resolve(&KnobArgs::default(), Some("x".into())).is_err());
    }

    #[test]
    fn band_syntax() {
        assert_eq!(parse_band("20:28").unwrap(), (20, 28));
        assert!(parse_band("28:20").is_err());
        assert!(parse_band("24").is_err());
    }

    #[test]
    fn axis_arg_maps() {
        assert_eq!(AxisArg::Days.axes(), vec![Axis::Days]);
        assert_eq!(AxisArg::from_str("both", true).unwrap().axes().len(), 2);
    }
}
