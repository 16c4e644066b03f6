mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use args::{usage, Cli, Command, Knobs, UsageError};
use commands::Source;

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let knobs = Knobs::resolve(&cli.knobs, std::env::var("CIRCTZ_SEED").ok())?;
    if let Some(n) = knobs.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| usage(format!("--jobs: {e}")))?;
    }
    log::debug!("{knobs:?}");
    match &cli.command {
        Command::Synth {
            preset,
            spec,
            out,
            labels,
            series,
        } => commands::synth(&knobs, preset, spec.as_deref(), out, labels, series.as_deref()),
        Command::Ingest {
            input,
            labels,
            labels_out,
            out,
        } => commands::ingest(&knobs, input, labels.as_deref(), labels_out.as_deref(), out),
        Command::Features { input, labels, out } => {
            commands::features(&knobs, input, labels.as_deref(), out)
        }
        Command::Infer {
            methods,
            pool,
            input,
            out,
        } => commands::infer(&knobs, methods, pool.as_deref(), input, out),
        Command::Evaluate {
            input,
            features,
            labels,
            methods,
            out,
        } => commands::evaluate(&knobs, input, features.as_deref(), labels.as_deref(), methods, out),
        Command::Sweep {
            input,
            labels,
            methods,
            axis,
            comment_levels,
            day_levels,
            out,
        } => commands::sweep(&knobs, input, labels, methods, *axis, comment_levels, day_levels, out),
        Command::Analyze {
            predictions,
            method,
            input,
            population,
            base_year,
            weight_by_volume,
            objective,
            out,
        } => commands::analyze(
            &knobs,
            predictions,
            *method,
            input,
            population.as_deref(),
            *base_year,
            *weight_by_volume || knobs.weight_by_volume,
            (*objective).into(),
            out,
        ),
        Command::Pipeline {
            synthetic,
            spec,
            input,
            labels,
            out,
        } => {
            let has_input = !input.events.is_empty() || !input.series.is_empty();
            let source = match (synthetic, spec, has_input) {
                (Some(name), None, false) => Source::Preset(name),
                (None, Some(spec), false) => Source::Spec(spec),
                (None, None, true) => Source::Input {
                    input,
                    labels: labels
                        .as_deref()
                        .ok_or_else(|| usage("--labels is required with --events or --series"))?,
                },
                (None, None, false) => {
                    return Err(usage("pipeline needs --synthetic, --spec, or --events/--series"))
                }
                _ => return Err(usage("choose one of --synthetic, --spec, or --events/--series")),
            };
            commands::pipeline(&knobs, source, out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain().any(|c| c.is::<UsageError>()) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
