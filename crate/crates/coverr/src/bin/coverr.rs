//! Thin command-line front end over the library.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 runtime divergence.

use clap::{Args, Parser, Subcommand};
use coverr::harness::{
    compare_series, read_metrics_csv, run_experiment, run_sweep, summarize_sweep,
    ExperimentConfig, HarnessError, Method, MetricsSeries, PartialConfig,
};
use coverr::ingest::{emit_batches, load_rollouts, run_offline_pipeline};
use coverr::metrics::{label_accuracy, reward_accuracy, verifier_recalls};
use coverr::pipeline::{stream_rng, Purpose};
use coverr::theory::{grid_csv_header, grid_csv_row, run_checks};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "coverr",
    version,
    about = "Label-free co-evolution of generator and verifier policies: seeded simulations, offline batch building, and gradient-algebra checks."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write metrics.csv plus config.echo.
    Simulate(SimulateArgs),
    /// Run a method x seed grid and write per-run outputs plus summary.csv.
    Sweep(SweepArgs),
    /// Run the offline pipeline over a rollout dump and emit batches.
    Ingest(IngestArgs),
    /// Check the group-relative gradient algebra and write the residual grid.
    Theory(TheoryArgs),
    /// Compare metric CSVs from paired runs.
    Compare(CompareArgs),
}

/// Config-field overrides; every experiment-config field has a flag of
/// exactly the same name (underscores included).
#[derive(Args, Clone, Default)]
struct ConfigFlags {
    #[arg(long = "method")]
    method: Option<Method>,
    #[arg(long = "n_first")]
    n_first: Option<usize>,
    #[arg(long = "m_budget")]
    m_budget: Option<usize>,
    #[arg(long = "k_corrections")]
    k_corrections: Option<usize>,
    #[arg(long = "tau")]
    tau: Option<f64>,
    #[arg(long = "downsample")]
    downsample: Option<usize>,
    #[arg(long = "steps")]
    steps: Option<usize>,
    #[arg(long = "tasks")]
    tasks: Option<usize>,
    #[arg(long = "answer_space")]
    answer_space: Option<usize>,
    #[arg(long = "distractor_fraction")]
    distractor_fraction: Option<f64>,
    #[arg(long = "distractor_strength")]
    distractor_strength: Option<f64>,
    #[arg(long = "lr")]
    lr: Option<f64>,
    #[arg(long = "unbalance_multiplier")]
    unbalance_multiplier: Option<usize>,
    #[arg(long = "quality_coupling")]
    quality_coupling: Option<f64>,
    #[arg(long = "verifier_noise")]
    verifier_noise: Option<f64>,
}

impl ConfigFlags {
    fn into_partial(self, seed: Option<u64>) -> PartialConfig {
        PartialConfig {
            method: self.method,
            n_first: self.n_first,
            m_budget: self.m_budget,
            k_corrections: self.k_corrections,
            tau: self.tau,
            downsample: self.downsample,
            steps: self.steps,
            tasks: self.tasks,
            answer_space: self.answer_space,
            distractor_fraction: self.distractor_fraction,
            distractor_strength: self.distractor_strength,
            lr: self.lr,
            seed,
            unbalance_multiplier: self.unbalance_multiplier,
            quality_coupling: self.quality_coupling,
            verifier_noise: self.verifier_noise,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// TOML config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run seed (required; no default on purpose).
    #[arg(long)]
    seed: u64,
    /// Output directory for metrics.csv and config.echo.
    #[arg(long, default_value = "run")]
    out_dir: PathBuf,
    #[command(flatten)]
    flags: ConfigFlags,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated seeds or inclusive-exclusive ranges like 0..20.
    #[arg(long, default_value = "0..5")]
    seeds: String,
    /// Comma-separated methods to run.
    #[arg(long, default_value = "coverrl,ttrl")]
    methods: String,
    #[arg(long, default_value = "sweep")]
    out_dir: PathBuf,
    #[command(flatten)]
    flags: ConfigFlags,
}

#[derive(Args)]
struct IngestArgs {
    /// Line-delimited rollout dump.
    #[arg(long)]
    input: PathBuf,
    /// Batch file to write.
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    flags: ConfigFlags,
}

#[derive(Args)]
struct TheoryArgs {
    /// Grid resolution over the open probability interval.
    #[arg(long, default_value_t = 1000)]
    grid: usize,
    /// Sampled operating points for the curriculum-ordering check.
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    /// Where to write the residual grid CSV.
    #[arg(long, default_value = "theory_grid.csv")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct CompareArgs {
    /// Two or more metrics.csv paths from paired runs.
    #[arg(required = true, num_args = 2..)]
    metrics: Vec<PathBuf>,
    /// Where to write the comparison table.
    #[arg(long, default_value = "compare.csv")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap help/version are not errors
            if e.use_stderr() {
                eprintln!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_divergence() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Ingest(#[from] coverr::ingest::IngestError),
    #[error(transparent)]
    Theory(#[from] coverr::theory::TheoryError),
    #[error("{0}")]
    Usage(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl CliError {
    fn is_divergence(&self) -> bool {
        use coverr::pipeline::PipelineError;
        use coverr::policysim::PolicySimError;
        match self {
            CliError::Harness(e) => e.is_divergence(),
            CliError::Ingest(coverr::ingest::IngestError::Pipeline(p)) => {
                matches!(p, PipelineError::Policy(PolicySimError::Diverged))
            }
            _ => false,
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Sweep(args) => sweep(args),
        Command::Ingest(args) => ingest(args),
        Command::Theory(args) => theory(args),
        Command::Compare(args) => compare(args),
    }
}

fn load_config_file(path: &Option<PathBuf>) -> Result<Option<PartialConfig>, CliError> {
    match path {
        None => Ok(None),
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
                path: path.display().to_string(),
                source,
            })?;
            Ok(Some(ExperimentConfig::from_toml_str(&text)?))
        }
    }
}

fn write_file(path: &std::path::Path, content: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|source| CliError::Io {
                path: parent.display().to_string(),
                source,
            })?;
        }
    }
    std::fs::write(path, content).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn simulate(args: SimulateArgs) -> Result<(), CliError> {
    let file = load_config_file(&args.config)?;
    let config = ExperimentConfig::resolve(file, args.flags.into_partial(Some(args.seed)))?;
    let run = run_experiment(&config)?;
    std::fs::create_dir_all(&args.out_dir).map_err(|source| CliError::Io {
        path: args.out_dir.display().to_string(),
        source,
    })?;
    let metrics_path = args.out_dir.join("metrics.csv");
    write_file(&metrics_path, &run.metrics_csv())?;
    write_file(&args.out_dir.join("config.echo"), &run.config.echo())?;
    let last = run.final_metrics();
    eprintln!(
        "{} steps done; final label accuracy {:.4}, reward accuracy {}, retained fraction {:.4}",
        run.config.steps,
        last.label_accuracy,
        last.reward_accuracy.map(|r| format!("{r:.4}")).unwrap_or_else(|| "n/a".into()),
        last.retained_fraction,
    );
    println!("{}", metrics_path.display());
    Ok(())
}

fn parse_seeds(text: &str) -> Result<Vec<u64>, CliError> {
    let mut seeds = Vec::new();
    for part in text.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        if let Some((start, end)) = part.split_once("..") {
            let start: u64 = start
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("bad seed range '{part}'")))?;
            let end: u64 = end
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("bad seed range '{part}'")))?;
            if end <= start {
                return Err(CliError::Usage(format!("empty seed range '{part}'")));
            }
            seeds.extend(start..end);
        } else {
            seeds.push(
                part.parse()
                    .map_err(|_| CliError::Usage(format!("bad seed '{part}'")))?,
            );
        }
    }
    if seeds.is_empty() {
        return Err(CliError::Usage("no seeds given".into()));
    }
    Ok(seeds)
}

fn parse_methods(text: &str) -> Result<Vec<Method>, CliError> {
    let mut methods = Vec::new();
    for part in text.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        methods.push(part.parse::<Method>().map_err(CliError::Usage)?);
    }
    if methods.is_empty() {
        return Err(CliError::Usage("no methods given".into()));
    }
    Ok(methods)
}

fn sweep(args: SweepArgs) -> Result<(), CliError> {
    let seeds = parse_seeds(&args.seeds)?;
    let methods = parse_methods(&args.methods)?;
    let file = load_config_file(&args.config)?;
    let base = ExperimentConfig::resolve(file, args.flags.into_partial(Some(seeds[0])))?;
    let runs = run_sweep(&base, &methods, &seeds)?;
    for run in &runs {
        let dir = args
            .out_dir
            .join(format!("{}_seed{}", run.config.method, run.config.seed));
        std::fs::create_dir_all(&dir).map_err(|source| CliError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        write_file(&dir.join("metrics.csv"), &run.metrics_csv())?;
        write_file(&dir.join("config.echo"), &run.config.echo())?;
    }
    let summary_path = args.out_dir.join("summary.csv");
    write_file(&summary_path, &summarize_sweep(&runs))?;
    eprintln!("{} runs finished", runs.len());
    println!("{}", summary_path.display());
    Ok(())
}

fn ingest(args: IngestArgs) -> Result<(), CliError> {
    let file = load_config_file(&args.config)?;
    let config = ExperimentConfig::resolve(file, args.flags.into_partial(Some(args.seed)))?;
    let dump = load_rollouts(&args.input)?;
    eprintln!(
        "loaded {} records over {} tasks ({} malformed lines skipped, {} undecided judgments treated as rejections)",
        dump.summary.records,
        dump.summary.tasks,
        dump.summary.malformed_skipped,
        dump.summary.undecided_verdicts,
    );
    let outputs = run_offline_pipeline(&dump, &config.pipeline_settings(), config.seed)?;
    let written = emit_batches(&outputs, &args.output)?;
    let retained = outputs.iter().filter(|o| o.training.is_some()).count();
    eprintln!("{retained} of {} tasks retained; {written} batch records written", outputs.len());

    // ground-truth diagnostics when the dump is annotated
    let truths = dump.truths();
    if !truths.is_empty() && truths.len() == dump.summary.tasks {
        let retained_votes = outputs
            .iter()
            .filter(|o| o.training.is_some())
            .map(|o| &o.vote);
        let (label, defined) = label_accuracy(retained_votes, &truths).map_err(HarnessError::from)?;
        let items = outputs
            .iter()
            .filter_map(|o| o.training.as_ref())
            .flat_map(|t| t.items.iter());
        let acc = reward_accuracy(items).map_err(HarnessError::from)?;
        let records = outputs.iter().flat_map(|o| o.verification_records());
        let (correct_recall, wrong_recall) =
            verifier_recalls(records, &truths).map_err(HarnessError::from)?;
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "n/a".into());
        eprintln!(
            "label accuracy {label:.4} ({}), reward accuracy {}, recalls correct {} / wrong {}",
            if defined { "retained tasks" } else { "no tasks retained" },
            fmt(acc.pooled),
            fmt(correct_recall),
            fmt(wrong_recall),
        );
    }
    println!("{}", args.output.display());
    Ok(())
}

fn theory(args: TheoryArgs) -> Result<(), CliError> {
    let mut rng = stream_rng(args.seed, 0, 0, "theory", Purpose::TheoryCheck);
    let (report, rows) = run_checks(args.grid, args.samples, &mut rng)?;
    let mut csv = String::from(grid_csv_header());
    csv.push('\n');
    for row in &rows {
        csv.push_str(&grid_csv_row(row));
        csv.push('\n');
    }
    write_file(&args.out, &csv)?;

    println!(
        "coefficient grid ({} points): max residual {:.3e} -> {}",
        report.grid_points,
        report.max_coefficient_residual,
        pass(report.max_coefficient_residual < 1e-12),
    );
    println!(
        "preference-gradient reduction: max residual {:.3e} -> {}",
        report.max_dpo_residual,
        pass(report.max_dpo_residual < 1e-12),
    );
    println!(
        "curriculum ordering ({} samples): {} violations -> {}",
        report.curriculum_samples,
        report.curriculum_violations,
        pass(report.curriculum_violations == 0),
    );
    println!(
        "opposite-sign vs exact enumeration: largest gap {:.3} (reported, not a failure)",
        report.max_form_gap,
    );
    println!("grid written to {}", args.out.display());
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::Usage("theory checks failed".into()))
    }
}

fn pass(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn compare(args: CompareArgs) -> Result<(), CliError> {
    let mut series: Vec<MetricsSeries> = Vec::new();
    for path in &args.metrics {
        series.push(read_metrics_csv(path)?);
    }
    let table = compare_series(&series)?;
    write_file(&args.out, &table)?;
    println!("{}", args.out.display());
    Ok(())
}
