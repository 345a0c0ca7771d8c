use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use log::{info, warn};

use sidbench_core::builtin::{BuiltinDetector, BuiltinScorer, BuiltinSpec};
use sidbench_core::demo::{demo_plan, generate_corpus, DemoConfig};
use sidbench_core::imaging::TransformChain;
use sidbench_core::manifest::{load_manifest, validate_files};
use sidbench_core::protocol::{serve_with_hook, Message, ScoreValue, SessionConfig, DEFAULT_BATCH_SIZE, DEFAULT_HANDSHAKE_TIMEOUT};
use sidbench_core::report::{
    calibration_report, calibration_table, metric_table, metrics_table, render, transform_report, transforms_table,
    write_all_reports, write_calibration_report, write_metric_reports, write_transform_report, Format, GroupBy,
    ReportOptions, ThresholdMode,
};
use sidbench_core::runner::{
    default_transform_grid, perturb_corpus, run, sweep_chains, EvaluationPlan, PreprocessOverride, RunOptions,
    RunResult,
};

const EXIT_USAGE: u8 = 1;
const EXIT_PARTIAL: u8 = 2;
const EXIT_FATAL: u8 = 3;
const DEFAULT_OUT: &str = "sidbench-out";

#[derive(Parser)]
#[command(name = "sidbench", version, about = "Benchmark harness for synthetic-image detectors")]
struct Cli {
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for the demo corpus; recorded in run plans.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, default_value_t = DEFAULT_BATCH_SIZE, value_parser = positive_usize)]
    batch_size: usize,
    /// Per-batch timeout for external detectors; the handshake waits at most
    /// this long and never more than 30 s.
    #[arg(long, global = true, default_value_t = 120, value_parser = clap::value_parser!(u64).range(1..))]
    timeout_secs: u64,
    /// Detectors evaluated concurrently (default: all).
    #[arg(long, global = true, value_parser = positive_usize)]
    jobs: Option<usize>,
    /// More logging (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a manifest and the files it references.
    Validate {
        #[arg(long, required = true)]
        manifest: Vec<PathBuf>,
    },
    /// Write a perturbed copy of a corpus.
    Perturb {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        chain: TransformChain,
    },
    /// Evaluate detectors on manifests under the given chains.
    Run {
        #[arg(long, required = true)]
        manifest: Vec<PathBuf>,
        /// `builtin:<spec>` or an external command line.
        #[arg(long, required = true)]
        detector: Vec<String>,
        /// Perturbation chain, e.g. `blur:sigma=2|jpeg:q=50` (default identity).
        #[arg(long)]
        chain: Vec<TransformChain>,
        /// Harness-side `crop:N` or `resize:N` applied after the chain.
        #[arg(long)]
        preprocess: Option<PreprocessOverride>,
    },
    /// Run the robustness grid: identity, blur 2 and 4, JPEG 95, 90, 50, 30.
    Sweep {
        #[arg(long, required = true)]
        manifest: Vec<PathBuf>,
        #[arg(long, required = true)]
        detector: Vec<String>,
        /// Extra chains appended to the default grid.
        #[arg(long)]
        chain: Vec<TransformChain>,
        #[arg(long)]
        preprocess: Option<PreprocessOverride>,
    },
    /// Regenerate metric tables from a run directory.
    Report {
        #[arg(long)]
        run: PathBuf,
        /// A number or `oracle`.
        #[arg(long, default_value = "0.5")]
        threshold: ThresholdMode,
        #[arg(long, value_enum)]
        group_by: Option<GroupArg>,
    },
    /// Compare accuracy at 0.5 with the accuracy-maximizing threshold.
    Calibrate {
        #[arg(long)]
        run: PathBuf,
    },
    /// Generate a procedural corpus, sweep the built-ins over it, write all reports.
    Demo {
        #[arg(long, default_value_t = 1000)]
        n_real: usize,
        #[arg(long, default_value_t = 1000)]
        n_fake: usize,
        #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u32).range(8..=4096))]
        size: u32,
    },
    /// Serve a built-in detector over the line protocol on stdin/stdout.
    #[command(hide = true)]
    DetectorServe {
        spec: BuiltinSpec,
        /// Needed by `label_leak`.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Sleep before every reply.
        #[arg(long, default_value_t = 0)]
        delay_ms: u64,
        #[arg(long, value_enum)]
        fault: Option<Fault>,
        /// Batch (1-based) at which the fault fires.
        #[arg(long, default_value_t = 1)]
        fault_batch: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum GroupArg {
    Family,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Fault {
    /// Drop the last score from the reply.
    MissingId,
    /// Replace the first score with NaN.
    Nan,
    /// Exit with status 3 instead of replying.
    Exit,
    /// Never reply.
    Stall,
}

fn positive_usize(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(n) => Ok(n),
        Err(e) => Err(e.to_string()),
    }
}

/// A failure with its exit status.
struct Failure {
    code: u8,
    message: String,
}

fn fatal(message: impl ToString) -> Failure {
    Failure {
        code: EXIT_FATAL,
        message: message.to_string(),
    }
}

type Outcome = Result<u8, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(cli: &Cli) -> Outcome {
    match &cli.command {
        Command::Validate { manifest } => validate(manifest),
        Command::Perturb { manifest, chain } => perturb(cli, manifest, chain),
        Command::Run {
            manifest,
            detector,
            chain,
            preprocess,
        } => {
            let plan = plan(cli, manifest, detector, chain.clone(), *preprocess);
            execute(cli, &plan)
        }
        Command::Sweep {
            manifest,
            detector,
            chain,
            preprocess,
        } => {
            let mut grid = default_transform_grid();
            grid.extend(chain.iter().cloned());
            let plan = plan(cli, manifest, detector, sweep_chains(&grid), *preprocess);
            execute(cli, &plan)
        }
        Command::Report {
            run,
            threshold,
            group_by,
        } => report(cli, run, *threshold, group_by.map_or(GroupBy::None, |_| GroupBy::Family)),
        Command::Calibrate { run } => calibrate(cli, run),
        Command::Demo { n_real, n_fake, size } => demo(
            cli,
            DemoConfig {
                seed: cli.seed,
                n_real: *n_real,
                n_fake: *n_fake,
                size: *size,
            },
        ),
        Command::DetectorServe {
            spec,
            manifest,
            delay_ms,
            fault,
            fault_batch,
        } => detector_serve(*spec, manifest.as_deref(), *delay_ms, *fault, *fault_batch),
    }
}

fn out_dir(cli: &Cli) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn validate(manifests: &[PathBuf]) -> Outcome {
    let mut code = 0;
    for path in manifests {
        let m = load_manifest(path).map_err(|e| fatal(format!("{}: {e}", path.display())))?;
        let issues = validate_files(&m);
        println!(
            "{}: {} records ({} real, {} fake), {} issues",
            path.display(),
            m.len(),
            m.n_real(),
            m.n_fake(),
            issues.len()
        );
        for issue in &issues {
            println!("  {}: {}", issue.path, issue.issue);
        }
        if !issues.is_empty() {
            code = EXIT_PARTIAL;
        }
    }
    Ok(code)
}

fn perturb(cli: &Cli, manifest: &Path, chain: &TransformChain) -> Outcome {
    let m = load_manifest(manifest).map_err(|e| fatal(format!("{}: {e}", manifest.display())))?;
    let out = out_dir(cli);
    let outcome = perturb_corpus(&m, chain, &out).map_err(fatal)?;
    println!(
        "wrote {} images ({}) and {}",
        outcome.written,
        chain.id(),
        outcome.manifest_path.display()
    );
    for (path, reason) in &outcome.failures {
        eprintln!("  failed {path}: {reason}");
    }
    Ok(if outcome.failures.is_empty() { 0 } else { EXIT_PARTIAL })
}

fn plan(
    cli: &Cli,
    manifests: &[PathBuf],
    detectors: &[String],
    chains: Vec<TransformChain>,
    preprocess: Option<PreprocessOverride>,
) -> EvaluationPlan {
    let mut plan = EvaluationPlan::new(out_dir(cli));
    plan.detectors = detectors.to_vec();
    plan.manifests = manifests.to_vec();
    plan.chains = chains;
    plan.preprocessing_override = preprocess;
    plan.batch_size = cli.batch_size;
    plan.seed = cli.seed;
    plan
}

fn run_options(cli: &Cli) -> RunOptions {
    let timeout = Duration::from_secs(cli.timeout_secs);
    RunOptions {
        jobs: cli.jobs,
        session: SessionConfig {
            handshake_timeout: timeout.min(DEFAULT_HANDSHAKE_TIMEOUT),
            batch_timeout: timeout,
            ..SessionConfig::default()
        },
        ..RunOptions::default()
    }
    .with_env_cache_dir()
}

fn execute(cli: &Cli, plan: &EvaluationPlan) -> Outcome {
    let result = run(plan, &run_options(cli)).map_err(fatal)?;
    summarize(&result);
    finish_run(&result)
}

fn summarize(result: &RunResult) {
    for cell in &result.cells {
        match &cell.error {
            None => println!(
                "ok      {} ({} scores, {} cached)",
                cell.label(),
                cell.n_real + cell.n_fake,
                cell.cache_hits
            ),
            Some(e) => println!("FAILED  {}: {}", cell.label(), e.replace('\n', "\n        ")),
        }
    }
}

/// Writes every report when anything completed; exit 2 when some cells failed.
fn finish_run(result: &RunResult) -> Outcome {
    let failed = result.n_failed();
    if failed == result.cells.len() {
        return Err(Failure {
            code: EXIT_PARTIAL,
            message: format!("all {failed} cells failed"),
        });
    }
    let written = write_all_reports(result, &ReportOptions::default()).map_err(fatal)?;
    for w in &written.warnings {
        warn!("{w}");
    }
    println!(
        "{} cells ({} failed), {} reports in {}",
        result.cells.len(),
        failed,
        written.files.len(),
        result.run_dir.display()
    );
    Ok(if failed > 0 { EXIT_PARTIAL } else { 0 })
}

fn load_run(run: &Path) -> Result<RunResult, Failure> {
    RunResult::load(run).map_err(fatal)
}

fn report(cli: &Cli, run: &Path, threshold: ThresholdMode, group_by: GroupBy) -> Outcome {
    let result = load_run(run)?;
    let dir = cli.out.clone().unwrap_or_else(|| run.to_path_buf());
    std::fs::create_dir_all(&dir).map_err(|e| fatal(format!("creating {}: {e}", dir.display())))?;
    let options = ReportOptions { threshold, group_by };
    let mut written = write_metric_reports(&result, &options, &dir).map_err(fatal)?;
    let transforms = write_transform_report(&result, &dir).map_err(fatal)?;
    written.files.extend(transforms.files);
    for w in &transforms.warnings {
        warn!("{w}");
    }
    let rows = metric_table(&result, threshold, group_by).map_err(fatal)?;
    print!("{}", render(&metrics_table(&rows), Format::Markdown));
    info!("wrote {} files to {}", written.files.len(), dir.display());
    Ok(if result.n_failed() > 0 { EXIT_PARTIAL } else { 0 })
}

fn calibrate(cli: &Cli, run: &Path) -> Outcome {
    let result = load_run(run)?;
    let dir = cli.out.clone().unwrap_or_else(|| run.to_path_buf());
    std::fs::create_dir_all(&dir).map_err(|e| fatal(format!("creating {}: {e}", dir.display())))?;
    write_calibration_report(&result, &dir).map_err(fatal)?;
    let rows = calibration_report(&result).map_err(fatal)?;
    print!("{}", render(&calibration_table(&rows), Format::Markdown));
    Ok(if result.n_failed() > 0 { EXIT_PARTIAL } else { 0 })
}

fn demo(cli: &Cli, config: DemoConfig) -> Outcome {
    let out = out_dir(cli);
    let manifest = generate_corpus(&out.join("corpus"), &config).map_err(fatal)?;
    let mut plan = demo_plan(&out, manifest, config.seed);
    plan.batch_size = cli.batch_size;
    let result = run(&plan, &run_options(cli)).map_err(fatal)?;
    let code = finish_run(&result)?;
    let (rows, _) = transform_report(&result).map_err(fatal)?;
    print!("{}", render(&transforms_table(&rows), Format::Markdown));
    Ok(code)
}

fn detector_serve(spec: BuiltinSpec, manifest: Option<&Path>, delay_ms: u64, fault: Option<Fault>, fault_batch: u64) -> Outcome {
    let manifest = manifest
        .map(|p| load_manifest(p).map_err(|e| fatal(format!("{}: {e}", p.display()))))
        .transpose()?;
    let detector = BuiltinDetector::new(spec, manifest.as_ref()).map_err(fatal)?;
    let descriptor = detector.descriptor();
    let mut scorer = BuiltinScorer::new(detector);
    let mut hook = |reply: &mut Message| {
        if delay_ms > 0 {
            std::thread::sleep(Duration::from_millis(delay_ms));
        }
        let Message::Scores { batch_id, scores } = reply else { return };
        if *batch_id != fault_batch {
            return;
        }
        match fault {
            None => {}
            Some(Fault::MissingId) => {
                scores.pop();
            }
            Some(Fault::Nan) => {
                if let Some(first) = scores.first_mut() {
                    first.score = ScoreValue(f64::NAN);
                }
            }
            Some(Fault::Exit) => {
                eprintln!("injected fault: exiting during batch {batch_id}");
                std::process::exit(3);
            }
            Some(Fault::Stall) => loop {
                std::thread::sleep(Duration::from_secs(3600));
            },
        }
    };
    let stdin = io::stdin();
    let stdout = io::stdout();
    serve_with_hook(&descriptor, &mut scorer, stdin.lock(), stdout.lock(), &mut hook)
        .map_err(|e| fatal(format!("serving: {e}")))?;
    Ok(0)
}
