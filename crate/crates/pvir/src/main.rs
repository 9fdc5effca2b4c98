use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pvir::config::{load_config, RunConfig};
use pvir::ingest::Stage;
use pvir::metrics::render_text_table;
use pvir::pipeline::{evaluate_persisted_run, run_pipeline, PipelineSummary};
use pvir::sync::{estimate_offset, load_motion_energy};
use pvir::synthesis::validate_report;
use pvir::trigger::{detect_trigger, load_trajectories, TriggerParams};

#[derive(Parser)]
#[command(name = "pvir", about = "Multi-view phase-aware pedestrian-vehicle incident reasoning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Run identifier; artifacts land under <output_dir>/<run-id>/.
    #[arg(long, default_value = "default")]
    run_id: String,
    /// Only process these event ids (repeatable).
    #[arg(long)]
    events: Vec<String>,
    /// Override every stage backend with this HTTP URL.
    #[arg(long)]
    backend_url: Option<String>,
    /// Stop after this stage (sync, segmentation, reasoning, synthesis).
    #[arg(long)]
    stage: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline over the manifest.
    Run(RunArgs),
    /// Run Stage 2 only (phase segmentation).
    Segment(RunArgs),
    /// Run through Stage 3 (phase-specific reasoning).
    Analyze(RunArgs),
    /// Run through Stage 4 (report synthesis); same as `run`.
    Synthesize(RunArgs),
    /// Score a persisted run against the manifest's ground truth.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "default")]
        run_id: String,
    },
    /// Estimate the clock offset between two motion-energy CSVs.
    Sync {
        /// Reference view's motion-energy CSV.
        reference: PathBuf,
        /// Other view's motion-energy CSV.
        other: PathBuf,
        #[arg(long, default_value_t = 10.0)]
        max_lag_s: f64,
    },
    /// Detect pedestrian-vehicle interaction windows in a trajectory CSV.
    Trigger {
        trajectories: PathBuf,
        #[arg(long)]
        distance_threshold_m: Option<f64>,
        #[arg(long)]
        closing_speed_threshold_mps: Option<f64>,
        #[arg(long)]
        sustain_samples: Option<usize>,
        #[arg(long)]
        lookback_s: Option<f64>,
    },
    /// Validate an incident report JSON file against the schema.
    Validate {
        report: PathBuf,
    },
}

fn parse_stop_after(s: &str) -> Result<Stage, String> {
    match s {
        "trigger" => Ok(Stage::Trigger),
        "sync" => Ok(Stage::Sync),
        "segment" | "segmentation" => Ok(Stage::Segmentation),
        "analyze" | "reasoning" => Ok(Stage::Reasoning),
        "synthesize" | "synthesis" => Ok(Stage::Synthesis),
        other => Err(format!("unknown stage \"{other}\"")),
    }
}

fn load_run_config(args: &RunArgs) -> Result<RunConfig, String> {
    let mut config = load_config(&args.config).map_err(|e| e.to_string())?;
    if let Some(url) = &args.backend_url {
        for backend in [&mut config.grounding, &mut config.reasoning, &mut config.synthesis] {
            backend.kind = pvir::config::BackendKind::Http;
            backend.url = Some(url.clone());
            backend.fixtures_dir = None;
        }
    }
    Ok(config)
}

fn print_summary(summary: &PipelineSummary) {
    println!("run {}", summary.run_id);
    for event in &summary.events {
        let stages: Vec<String> = event.stages_completed.iter().map(|s| s.to_string()).collect();
        match &event.error {
            None => println!("  {}: ok [{}]", event.event_id, stages.join(", ")),
            Some(e) => println!("  {}: FAILED ({e}) [{}]", event.event_id, stages.join(", ")),
        }
    }
    let failed = summary.failed_count();
    println!("{} event(s), {} failed", summary.events.len(), failed);
}

fn execute_run(args: &RunArgs, stop_after: Option<Stage>) -> ExitCode {
    let config = match load_run_config(args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let filter = (!args.events.is_empty()).then_some(args.events.as_slice());
    let stop = match args.stage.as_deref().map(parse_stop_after).transpose() {
        Ok(explicit) => explicit.or(stop_after),
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match run_pipeline(&config, &args.run_id, filter, stop) {
        Ok(summary) => {
            print_summary(&summary);
            if summary.failed_count() > 0 {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) | Command::Synthesize(args) => execute_run(&args, None),
        Command::Segment(args) => execute_run(&args, Some(Stage::Segmentation)),
        Command::Analyze(args) => execute_run(&args, Some(Stage::Reasoning)),
        Command::Evaluate { config, run_id } => {
            let config = match load_config(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            match evaluate_persisted_run(&config, &run_id) {
                Ok(summary) => {
                    print!("{}", render_text_table(&summary));
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(2)
                }
            }
        }
        Command::Sync { reference, other, max_lag_s } => {
            let result = load_motion_energy(&reference)
                .and_then(|a| load_motion_energy(&other).map(|b| (a, b)))
                .and_then(|(a, b)| estimate_offset(&a, &b, max_lag_s));
            match result {
                Ok(estimate) => {
                    println!("{}", serde_json::to_string_pretty(&estimate).unwrap());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(2)
                }
            }
        }
        Command::Trigger {
            trajectories,
            distance_threshold_m,
            closing_speed_threshold_mps,
            sustain_samples,
            lookback_s,
        } => {
            let mut params = TriggerParams::default();
            if let Some(v) = distance_threshold_m {
                params.distance_threshold_m = v;
            }
            if let Some(v) = closing_speed_threshold_mps {
                params.closing_speed_threshold_mps = v;
            }
            if let Some(v) = sustain_samples {
                params.sustain_samples = v;
            }
            if let Some(v) = lookback_s {
                params.lookback_s = v;
            }
            let result =
                load_trajectories(&trajectories).and_then(|t| detect_trigger(&t, &params));
            match result {
                Ok(windows) => {
                    println!("{}", serde_json::to_string_pretty(&windows).unwrap());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(2)
                }
            }
        }
        Command::Validate { report } => {
            let text = match std::fs::read_to_string(&report) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("error: {}: {e}", report.display());
                    return ExitCode::from(2);
                }
            };
            match validate_report(&text) {
                Ok(_) => {
                    println!("valid");
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("invalid: {e}");
                    ExitCode::from(1)
                }
            }
        }
    }
}
