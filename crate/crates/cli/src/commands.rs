use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use flate2::{Compression, GzBuilder};
use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use circtz_core::analyze::{
    self, deconvolve, population_correlation, CommunityYear, DeconvConfig, Objective, OFFSET_BINS,
    SHIPPED_TABLE_CSV,
};
use circtz_core::eval::cv::{corpus_features, run_cv_on_set, EvalSet, Evaluated};
use circtz_core::eval::sweep::{scarcity_sweep, Axis};
use circtz_core::features::extract_or_skip;
use circtz_core::infer::{run_method, ReferenceEntry};
use circtz_core::ingest::{self, filter_min_class};
use circtz_core::synth::{generate_corpus, series_to_events, CorpusSpec};
use circtz_core::{
    io, seed_of, ActivitySeries, CommunityFeatures, GroundTruthLabel, LabeledCorpus, Method,
    OffsetPrediction, ReferencePool,
};

use crate::args::{usage, AxisArg, Knobs, SeriesInput};

const PRESETS: [&str; 3] = ["clean", "default", "noisy"];

pub fn require_files<'a>(paths: impl IntoIterator<Item = &'a Path>) -> Result<()> {
    for p in paths {
        if !p.is_file() {
            return Err(usage(format!("input file not found: {}", p.display())));
        }
    }
    Ok(())
}

impl SeriesInput {
    fn paths(&self) -> impl Iterator<Item = &Path> {
        self.events.iter().chain(&self.series).map(PathBuf::as_path)
    }

    fn check(&self) -> Result<()> {
        match (self.events.is_empty(), self.series.is_empty()) {
            (true, true) => Err(usage("one of --events or --series is required")),
            (false, false) => Err(usage("--events and --series are mutually exclusive")),
            _ => require_files(self.paths()),
        }
    }

    fn load(&self) -> Result<BTreeMap<String, ActivitySeries>> {
        if self.events.is_empty() {
            return Ok(ingest::load_prebinned(&self.series)?);
        }
        let (series, errors) = ingest::ingest_event_files(&self.events)?;
        if !errors.is_empty() {
            warn!("{} malformed event record(s) skipped", errors.len());
        }
        Ok(series)
    }
}

fn labels_of(path: &Path, knobs: &Knobs) -> Result<Vec<GroundTruthLabel>> {
    Ok(ingest::load_ground_truth(path, knobs.min_class)?)
}

fn create(path: &Path) -> Result<std::io::BufWriter<File>> {
    Ok(io::create(path)?)
}

fn open(path: &Path) -> Result<Box<dyn BufRead>> {
    Ok(ingest::open_input(path)?)
}

fn features_of(
    series: &BTreeMap<String, ActivitySeries>,
    knobs: &Knobs,
) -> Result<Vec<CommunityFeatures>> {
    let items: Vec<(&String, &ActivitySeries)> = series.iter().collect();
    let out: Vec<Option<CommunityFeatures>> = items
        .par_iter()
        .map(|(id, s)| extract_or_skip(id, s, &knobs.features))
        .collect::<circtz_core::Result<_>>()?;
    let kept: Vec<CommunityFeatures> = out.into_iter().flatten().collect();
    if kept.len() < series.len() {
        info!(
            "{} of {} communities removed by the sparsity filter",
            series.len() - kept.len(),
            series.len()
        );
    }
    Ok(kept)
}

fn read_dump(path: &Path) -> Result<Vec<(CommunityFeatures, Option<i32>)>> {
    io::read_features(open(path)?).with_context(|| format!("reading {}", path.display()))
}

fn is_feature_dump(path: &Path) -> Result<bool> {
    let mut first = String::new();
    open(path)?
        .read_line(&mut first)
        .with_context(|| format!("reading {}", path.display()))?;
    let first = first.trim_start_matches('\u{feff}').trim();
    if first.starts_with("community_id,") {
        Ok(true)
    } else if first.starts_with("community,") {
        Ok(false)
    } else {
        Err(usage(format!(
            "{}: expected a feature dump or pre-binned series (header `{first}`)",
            path.display()
        )))
    }
}

fn corpus_spec(preset: &str, spec: Option<&Path>) -> Result<CorpusSpec> {
    match spec {
        Some(p) => {
            let mut text = String::new();
            open(p)?
                .read_to_string(&mut text)
                .with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("{}: invalid corpus spec", p.display()))
        }
        None => CorpusSpec::preset(preset).ok_or_else(|| {
            usage(format!("unknown preset `{preset}` (valid: {})", PRESETS.join(", ")))
        }),
    }
}

pub fn synth(
    knobs: &Knobs,
    preset: &str,
    spec: Option<&Path>,
    out: &Path,
    labels: &Path,
    series_out: Option<&Path>,
) -> Result<()> {
    require_files(spec)?;
    let spec = corpus_spec(preset, spec)?.with_seed(seed_of!(knobs.seed, "synth"));
    let corpus = generate_corpus(&spec)?;
    info!("generated {} communities", corpus.len());

    let events_seed = seed_of!(knobs.seed, "events");
    let events: Vec<_> = corpus
        .series
        .par_iter()
        .map(|(id, s)| series_to_events(s, id, events_seed))
        .collect();
    let file = create(out)?;
    let write = |w: &mut dyn Write| -> std::io::Result<()> {
        for e in &events {
            ingest::write_events_ndjson(e, &mut *w)?;
        }
        w.flush()
    };
    let gz = out.extension().is_some_and(|e| e == "gz");
    if gz {
        let enc = GzBuilder::new().mtime(0).write(file, Compression::fast());
        let mut buf = std::io::BufWriter::with_capacity(1 << 20, enc);
        write(&mut buf).and_then(|_| {
            buf.into_inner()
                .map_err(|e| e.into_error())?
                .finish()
                .map(drop)
        })
    } else {
        let mut file = file;
        write(&mut file)
    }
    .with_context(|| format!("writing {}", out.display()))?;

    ingest::write_ground_truth(corpus.labels.values(), create(labels)?)?;
    if let Some(p) = series_out {
        ingest::write_prebinned(&corpus.series, create(p)?)?;
    }
    Ok(())
}

pub fn ingest(
    knobs: &Knobs,
    input: &SeriesInput,
    labels: Option<&Path>,
    labels_out: Option<&Path>,
    out: &Path,
) -> Result<()> {
    input.check()?;
    require_files(labels)?;
    if labels_out.is_some() && labels.is_none() {
        return Err(usage("--labels-out needs --labels"));
    }
    let series = input.load()?;
    info!("{} communities", series.len());
    ingest::write_prebinned(&series, create(out)?)?;
    if let (Some(l), Some(lo)) = (labels, labels_out) {
        let corpus = LabeledCorpus::assemble(labels_of(l, knobs)?, series, knobs.min_class);
        ingest::write_ground_truth(corpus.labels.values(), create(lo)?)?;
    }
    Ok(())
}

pub fn features(knobs: &Knobs, input: &SeriesInput, labels: Option<&Path>, out: &Path) -> Result<()> {
    input.check()?;
    require_files(labels)?;
    let series = input.load()?;
    let labels: BTreeMap<String, i32> = match labels {
        Some(p) => labels_of(p, knobs)?
            .into_iter()
            .map(|l| (l.community_id, l.offset_minutes))
            .collect(),
        None => BTreeMap::new(),
    };
    let feats = features_of(&series, knobs)?;
    io::write_features(
        create(out)?,
        feats
            .iter()
            .map(|f| (f, labels.get(&f.community_id).copied())),
    )?;
    Ok(())
}

pub fn infer(knobs: &Knobs, methods: &[Method], pool: Option<&Path>, input: &Path, out: &Path) -> Result<()> {
    require_files([input])?;
    require_files(pool)?;
    let needs_pool: Vec<&str> = methods.iter().filter(|m| m.needs_pool()).map(|m| m.name()).collect();
    if pool.is_none() && !needs_pool.is_empty() {
        return Err(usage(format!("--pool is required by {}", needs_pool.join(", "))));
    }

    let mut targets: Vec<CommunityFeatures> = if is_feature_dump(input)? {
        read_dump(input)?.into_iter().map(|(f, _)| f).collect()
    } else {
        features_of(&ingest::load_prebinned(&[input.to_path_buf()])?, knobs)?
    };
    targets.sort_by(|a, b| a.community_id.cmp(&b.community_id));

    let pool = match pool {
        Some(p) if !needs_pool.is_empty() => {
            let entries: Vec<ReferenceEntry> = read_dump(p)?
                .into_iter()
                .filter_map(|(f, l)| {
                    l.map(|offset_minutes| ReferenceEntry {
                        community_id: f.community_id.clone(),
                        offset_minutes,
                        features: f,
                    })
                })
                .collect();
            let pool = ReferencePool::new(entries)
                .with_context(|| format!("{}: no labeled rows", p.display()))?;
            info!("reference pool: {} communities", pool.len());
            Some(pool)
        }
        _ => None,
    };

    let preds: Vec<Vec<OffsetPrediction>> = targets
        .par_iter()
        .map(|t| {
            methods
                .iter()
                .map(|&m| run_method(m, t, pool.as_ref(), &knobs.infer))
                .collect()
        })
        .collect::<circtz_core::Result<_>>()?;
    io::write_predictions(create(out)?, preds.iter().flatten())?;
    Ok(())
}

fn evaluated(methods: &[Method], knobs: &Knobs) -> Vec<Evaluated> {
    let methods = if methods.is_empty() { &knobs.methods } else { methods };
    let mut out: Vec<Evaluated> = methods.iter().map(|&m| Evaluated::Method(m)).collect();
    out.dedup();
    out.push(Evaluated::Dummy);
    out
}

fn check_classes(corpus: &LabeledCorpus) -> Result<()> {
    for (offset, members) in corpus.classes() {
        if members.len() < 2 {
            return Err(circtz_core::Error::ClassTooSmall {
                offset_minutes: offset,
                size: members.len(),
            }
            .into());
        }
    }
    if corpus.is_empty() {
        return Err(anyhow::anyhow!("no labeled communities to evaluate"));
    }
    Ok(())
}

pub fn evaluate(
    knobs: &Knobs,
    input: &SeriesInput,
    features: Option<&Path>,
    labels: Option<&Path>,
    methods: &[Method],
    out: &Path,
) -> Result<()> {
    require_files(labels)?;
    let set = match features {
        Some(fp) => {
            if input.paths().next().is_some() {
                return Err(usage("--features cannot be combined with --events or --series"));
            }
            require_files([fp])?;
            let dump = read_dump(fp)?;
            let labels = match labels {
                Some(l) => labels_of(l, knobs)?,
                None => filter_min_class(
                    dump.iter()
                        .filter_map(|(f, l)| l.map(|o| GroundTruthLabel::new(f.community_id.clone(), o)))
                        .collect(),
                    knobs.min_class,
                ),
            };
            let corpus = LabeledCorpus {
                labels: labels
                    .into_iter()
                    .map(|l| (l.community_id.clone(), l))
                    .collect(),
                series: BTreeMap::new(),
            };
            check_classes(&corpus)?;
            let feats: BTreeMap<String, CommunityFeatures> = dump
                .into_iter()
                .map(|(f, _)| f)
                .filter(|f| corpus.labels.contains_key(&f.community_id))
                .map(|f| (f.community_id.clone(), f))
                .collect();
            let excluded = corpus
                .labels
                .keys()
                .filter(|id| !feats.contains_key(*id))
                .cloned()
                .collect();
            EvalSet::new(&corpus, feats, excluded)
        }
        None => {
            input.check()?;
            let labels = labels.ok_or_else(|| usage("--labels is required with --events or --series"))?;
            let corpus = LabeledCorpus::assemble(labels_of(labels, knobs)?, input.load()?, knobs.min_class);
            check_classes(&corpus)?;
            let (feats, excluded) = corpus_features(&corpus, &knobs.features)?;
            EvalSet::new(&corpus, feats, excluded)
        }
    };
    info!(
        "evaluating {} communities ({} excluded)",
        set.features.len(),
        set.excluded.len()
    );
    let methods = evaluated(methods, knobs);
    let report = run_cv_on_set(&set, &methods, &knobs.plan, &knobs.infer)?;

    io::write_report(create(&out.join("report.csv"))?, &report)?;
    io::write_aggregate(create(&out.join("aggregate.csv"))?, &report)?;
    io::write_errors(create(&out.join("errors.csv"))?, &report)?;
    for m in &methods {
        io::write_confusion(create(&out.join(format!("confusion_{}.csv", m.name())))?, &report, *m)?;
    }
    for m in &methods {
        if let Some(s) = report.aggregate_for(*m) {
            info!(
                "{:<22} acc {:.3}  mce {:.3} h  rho {:.3}",
                m.name(),
                s.accuracy,
                s.mean_circular_error,
                s.circular_correlation
            );
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn sweep(
    knobs: &Knobs,
    input: &SeriesInput,
    labels: &Path,
    methods: &[Method],
    axis: AxisArg,
    comment_levels: &[usize],
    day_levels: &[usize],
    out: &Path,
) -> Result<()> {
    input.check()?;
    require_files([labels])?;
    let corpus = LabeledCorpus::assemble(labels_of(labels, knobs)?, input.load()?, knobs.min_class);
    check_classes(&corpus)?;
    let methods = evaluated(methods, knobs);
    let mut points = Vec::new();
    for a in axis.axes() {
        let levels = match (a, comment_levels.is_empty(), day_levels.is_empty()) {
            (Axis::Comments, false, _) => comment_levels,
            (Axis::Comments, true, _) => &knobs.comment_levels,
            (Axis::Days, _, false) => day_levels,
            (Axis::Days, _, true) => &knobs.day_levels,
        };
        info!("sweeping {a} over {levels:?}");
        points.extend(scarcity_sweep(
            &corpus,
            &methods,
            a,
            levels,
            &knobs.plan,
            &knobs.features,
            &knobs.infer,
        )?);
    }
    io::write_sweep(create(out)?, &points)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct DeconvSummary {
    objective: Objective,
    pearson: f64,
    spearman: f64,
    sum_residual: f64,
    sine_residual: f64,
    converged: bool,
}

#[derive(Debug, Serialize)]
struct AnalysisSummary {
    method: Method,
    communities: usize,
    weight_by_volume: bool,
    base_year: i32,
    years: Vec<i32>,
    population_pearson: f64,
    population_spearman: f64,
    deconvolution: DeconvSummary,
}

fn shares(v: &[f64; OFFSET_BINS]) -> [f64; OFFSET_BINS] {
    let t: f64 = v.iter().sum();
    v.map(|x| if t > 0.0 { x / t } else { 0.0 })
}

#[allow(clippy::too_many_arguments)]
pub fn analyze(
    knobs: &Knobs,
    predictions: &Path,
    method: Method,
    input: &SeriesInput,
    population: Option<&Path>,
    base_year: Option<i32>,
    weight_by_volume: bool,
    objective: Objective,
    out: &Path,
) -> Result<()> {
    require_files([predictions])?;
    require_files(population)?;
    input.check()?;
    let preds: Vec<OffsetPrediction> = io::read_predictions(open(predictions)?)
        .with_context(|| format!("reading {}", predictions.display()))?
        .into_iter()
        .filter(|p| p.method == method)
        .collect();
    if preds.is_empty() {
        anyhow::bail!("{}: no predictions for method {method}", predictions.display());
    }
    let series = input.load()?;
    let mut items = Vec::with_capacity(preds.len());
    for p in &preds {
        match series.get(&p.community_id) {
            Some(s) => items.push(CommunityYear {
                community_id: p.community_id.clone(),
                offset_minutes: p.offset_minutes,
                year: analyze::year_of_epoch_hour(s.start_hour),
                volume: s.total(),
            }),
            None => warn!("no activity for predicted community `{}`; skipped", p.community_id),
        }
    }
    if items.is_empty() {
        anyhow::bail!("none of the predicted communities has activity");
    }
    let yearly = analyze::yearly_distributions(&items, weight_by_volume);
    let years: Vec<i32> = yearly.iter().map(|y| y.year).collect();

    let base = match base_year.or(knobs.base_year) {
        Some(b) => b,
        None if years.contains(&analyze::DEFAULT_BASE_YEAR) => analyze::DEFAULT_BASE_YEAR,
        None => {
            warn!(
                "default base year {} has no communities; using {}",
                analyze::DEFAULT_BASE_YEAR,
                years[0]
            );
            years[0]
        }
    };
    let growth = analyze::growth_index(&yearly, base)?;

    let mut pooled = [0.0; OFFSET_BINS];
    for y in &yearly {
        for (acc, m) in pooled.iter_mut().zip(y.bins()) {
            *acc += m;
        }
    }
    let pure = shares(&pooled).map(|s| 100.0 * s);
    let real = match population {
        Some(p) => analyze::read_population(open(p)?).with_context(|| format!("reading {}", p.display()))?,
        None => analyze::read_population(SHIPPED_TABLE_CSV.as_bytes())?,
    };
    let (r, rs) = population_correlation(&shares(&pooled), &shares(&real));
    let deconv = deconvolve(
        &pure,
        &real,
        &DeconvConfig {
            objective,
            ..DeconvConfig::default()
        },
    )?;
    let (sum_residual, sine_residual) = deconv.feasibility_residuals();

    io::write_gini(create(&out.join("gini_by_year.csv"))?, &analyze::gini_by_year(&yearly))?;
    io::write_growth(create(&out.join("growth_heatmap.csv"))?, &growth)?;
    io::write_density(create(&out.join("density_by_year.csv"))?, &yearly)?;
    io::write_deconvolution(create(&out.join("deconvolution.csv"))?, &deconv, &real, &pure)?;

    let summary = AnalysisSummary {
        method,
        communities: items.len(),
        weight_by_volume,
        base_year: base,
        years,
        population_pearson: r,
        population_spearman: rs,
        deconvolution: DeconvSummary {
            objective,
            pearson: deconv.pearson,
            spearman: deconv.spearman,
            sum_residual,
            sine_residual,
            converged: deconv.converged,
        },
    };
    write_json(&out.join("summary.json"), &summary)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush().with_context(|| format!("writing {}", path.display()))
}

#[derive(Debug, Serialize)]
struct RunRecord<'a> {
    version: &'static str,
    source: String,
    knobs: &'a Knobs,
    files: Vec<String>,
}

/// Where the pipeline's corpus comes from.
pub enum Source<'a> {
    Preset(&'a str),
    Spec(&'a Path),
    Input { input: &'a SeriesInput, labels: &'a Path },
}

/// File names of the pipeline output tree, relative to its root.
pub mod tree {
    pub const EVENTS: &str = "events.ndjson.gz";
    pub const LABELS: &str = "labels.csv";
    pub const SERIES: &str = "series.csv";
    pub const FEATURES: &str = "features.csv";
    pub const PREDICTIONS: &str = "predictions.csv";
    pub const EVALUATION: &str = "evaluation";
    pub const SWEEP: &str = "sweep.csv";
    pub const ANALYSIS: &str = "analysis";
    pub const RUN: &str = "run.json";
}

/// Every stage in sequence, each reading the previous stage's files.
pub fn pipeline(knobs: &Knobs, source: Source<'_>, out: &Path) -> Result<()> {
    let p = |name: &str| out.join(name);
    let series_in = SeriesInput {
        events: Vec::new(),
        series: vec![p(tree::SERIES)],
    };
    let events = SeriesInput {
        events: vec![p(tree::EVENTS)],
        series: Vec::new(),
    };
    let source_desc = match source {
        Source::Preset(name) => {
            synth(knobs, name, None, &p(tree::EVENTS), &p(tree::LABELS), None)?;
            ingest(knobs, &events, None, None, &p(tree::SERIES))?;
            format!("preset:{name}")
        }
        Source::Spec(spec) => {
            synth(knobs, "", Some(spec), &p(tree::EVENTS), &p(tree::LABELS), None)?;
            ingest(knobs, &events, None, None, &p(tree::SERIES))?;
            format!("spec:{}", spec.file_name().unwrap_or_default().to_string_lossy())
        }
        Source::Input { input, labels } => {
            ingest(knobs, input, Some(labels), Some(&p(tree::LABELS)), &p(tree::SERIES))?;
            "input".to_string()
        }
    };
    info!("stage: features");
    features(knobs, &series_in, Some(&p(tree::LABELS)), &p(tree::FEATURES))?;
    info!("stage: infer");
    infer(
        knobs,
        &knobs.methods,
        Some(&p(tree::FEATURES)),
        &p(tree::FEATURES),
        &p(tree::PREDICTIONS),
    )?;
    info!("stage: evaluate");
    evaluate(
        knobs,
        &SeriesInput::default(),
        Some(&p(tree::FEATURES)),
        Some(&p(tree::LABELS)),
        &[],
        &p(tree::EVALUATION),
    )?;
    info!("stage: sweep");
    sweep(knobs, &series_in, &p(tree::LABELS), &[], AxisArg::Both, &[], &[], &p(tree::SWEEP))?;
    info!("stage: analyze");
    let analysis_method = if knobs.methods.contains(&Method::ActivityCounts) {
        Method::ActivityCounts
    } else {
        knobs.methods[0]
    };
    analyze(
        knobs,
        &p(tree::PREDICTIONS),
        analysis_method,
        &series_in,
        None,
        None,
        knobs.weight_by_volume,
        Objective::LeastSquares,
        &p(tree::ANALYSIS),
    )?;

    let mut files = Vec::new();
    collect_files(out, out, &mut files)?;
    files.retain(|f| f != tree::RUN);
    files.push(tree::RUN.to_string());
    files.sort();
    let record = RunRecord {
        version: env!("CARGO_PKG_VERSION"),
        source: source_desc,
        knobs,
        files,
    };
    write_json(&p(tree::RUN), &record)
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else if let Ok(rel) = path.strip_prefix(root) {
            out.push(rel.to_string_lossy().replace('\\', "/"));
        }
    }
    Ok(())
}
