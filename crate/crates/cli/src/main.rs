use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use gridsearch::chain_analysis::{verify_report, VerifyOptions, DEFAULT_COMPOSITE_CAP};
use gridsearch::engine::{write_history_csv, EpisodeConfig, NoiseScale, NoiseSharing};
use gridsearch::ensemble::{
    fit_exponential, read_stats_csv, run_ensemble, write_stats_csv, ScenarioSweep,
};
use gridsearch::Node;

const OK: u8 = 0;
const FAILURE: u8 = 1;
const NOT_REACHED: u8 = 2;

#[derive(Parser)]
#[command(
    name = "gridsearch",
    version,
    about = "Random-walk search and consensus on a grid"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one seeded episode and print its result as JSON.
    Simulate(SimulateArgs),
    /// Run a scenario sweep and write per-scenario statistics as CSV.
    Ensemble(EnsembleArgs),
    /// Fit mu = a*exp(b*density) to a stats CSV.
    Fit(FitArgs),
    /// Check the mobility chain and communication properties of a grid.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 5)]
    agents: usize,
    #[arg(long, default_value_t = 5)]
    grid_dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Consensus gain; defaults to 1/13.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value_t = 0.01)]
    epsilon: f64,
    /// Comma-separated 1-based node labels; an empty string means no features.
    #[arg(long, default_value = "4,5,6")]
    feature_nodes: String,
    #[arg(long, default_value_t = 0.0)]
    comm_radius: f64,
    /// Variance of the sensed reference.
    #[arg(long, conflicts_with = "noise_std")]
    noise_var: Option<f64>,
    /// Standard deviation of the sensed reference.
    #[arg(long)]
    noise_std: Option<f64>,
    /// Draw the sensed reference separately for each gated agent.
    #[arg(long)]
    noise_per_agent: bool,
    #[arg(long, default_value_t = 100_000)]
    max_steps: u64,
    /// Write the per-step history CSV here.
    #[arg(long)]
    history: Option<PathBuf>,
    /// Write the result JSON here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EnsembleArgs {
    /// ScenarioSweep JSON.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Worker threads: a positive count or `auto`.
    #[arg(long, default_value = "auto", value_parser = parse_parallel)]
    parallel: Parallel,
    /// Manifest path; defaults to the output path with a `.manifest.json` extension.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    stats: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    grid_dim: usize,
    #[arg(long)]
    agents: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Largest composite chain built explicitly.
    #[arg(long, default_value_t = DEFAULT_COMPOSITE_CAP)]
    cap: usize,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Clone, Copy, Debug)]
enum Parallel {
    Auto,
    Threads(usize),
}

fn parse_parallel(s: &str) -> Result<Parallel, String> {
    if s == "auto" {
        return Ok(Parallel::Auto);
    }
    match s.parse::<usize>() {
        Ok(n) if n > 0 => Ok(Parallel::Threads(n)),
        _ => Err(format!("expected a positive integer or `auto`, got `{s}`")),
    }
}

fn parse_feature_nodes(s: &str) -> Result<Vec<Node>, String> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            let label = t
                .parse::<usize>()
                .map_err(|_| format!("feature_nodes: `{t}` is not a node label"))?;
            Node::from_label(label).ok_or_else(|| "feature_nodes: labels start at 1".to_string())
        })
        .collect()
}

/// One-line failure that maps to an exit status.
struct Failure(u8, String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(FAILURE, e.to_string())
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure(FAILURE, format!("{}: {e}", path.display())))
}

fn open(path: &Path) -> Result<BufReader<File>, Failure> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Failure(FAILURE, format!("{}: {e}", path.display())))
}

fn simulate(args: SimulateArgs) -> Result<u8, Failure> {
    let (reference_noise, noise_scale) = match (args.noise_var, args.noise_std) {
        (_, Some(std)) => (std, NoiseScale::StdDev),
        (var, None) => (var.unwrap_or(0.0), NoiseScale::Variance),
    };
    let defaults = EpisodeConfig::default();
    let config = EpisodeConfig {
        grid_dim: args.grid_dim,
        agents: args.agents,
        alpha: args.alpha.unwrap_or(defaults.alpha),
        epsilon: args.epsilon,
        feature_nodes: parse_feature_nodes(&args.feature_nodes)?,
        reference_noise,
        noise_scale,
        noise_sharing: if args.noise_per_agent {
            NoiseSharing::PerAgent
        } else {
            NoiseSharing::Shared
        },
        comm_radius: args.comm_radius,
        seed: args.seed,
        max_steps: args.max_steps,
        record_history: args.history.is_some(),
        ..defaults
    };
    let result = config.prepare()?.run();

    if let (Some(path), Some(history)) = (&args.history, &result.history) {
        let mut w = create(path)?;
        write_history_csv(history, &mut w)?;
        w.flush()?;
    }
    let json = result.to_json();
    match &args.out {
        Some(path) => {
            let mut w = create(path)?;
            writeln!(w, "{json}")?;
            w.flush()?;
        }
        None => println!("{json}"),
    }
    Ok(if result.reached() { OK } else { NOT_REACHED })
}

#[derive(Serialize)]
struct RunManifest<'a> {
    config: &'a ScenarioSweep,
    version: &'static str,
    timestamp_unix_s: u64,
    outputs: Vec<String>,
}

fn ensemble(args: EnsembleArgs) -> Result<u8, Failure> {
    let reader = open(&args.config)?;
    let mut de = serde_json::Deserializer::from_reader(reader);
    let sweep: ScenarioSweep = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        Failure(
            FAILURE,
            format!("{}: field `{path}`: {}", args.config.display(), e.inner()),
        )
    })?;

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Parallel::Threads(n) = args.parallel {
        builder = builder.num_threads(n);
    }
    let pool = builder.build()?;
    let rows = pool.install(|| run_ensemble(&sweep))?;

    let mut w = create(&args.out)?;
    write_stats_csv(&rows, &mut w)?;
    w.flush()?;

    let manifest_path = args
        .manifest
        .unwrap_or_else(|| args.out.with_extension("manifest.json"));
    let manifest = RunManifest {
        config: &sweep,
        version: env!("CARGO_PKG_VERSION"),
        timestamp_unix_s: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
        outputs: vec![
            args.out.display().to_string(),
            manifest_path.display().to_string(),
        ],
    };
    let mut w = create(&manifest_path)?;
    serde_json::to_writer_pretty(&mut w, &manifest)?;
    writeln!(w)?;
    w.flush()?;
    Ok(OK)
}

fn fit(args: FitArgs) -> Result<u8, Failure> {
    let rows = read_stats_csv(open(&args.stats)?)
        .map_err(|e| Failure(FAILURE, format!("{}: {e}", args.stats.display())))?;
    let fit = fit_exponential(&rows)?;
    println!("{}", fit.to_json());
    Ok(OK)
}

fn verify(args: VerifyArgs) -> Result<u8, Failure> {
    let opts = VerifyOptions {
        composite_cap: args.cap,
        seed: args.seed,
        ..VerifyOptions::default()
    };
    let report = verify_report(args.grid_dim, args.agents, &opts)?;
    match args.format {
        Format::Text => println!("{report}"),
        Format::Json => println!("{}", report.to_json()),
    }
    Ok(if report.passed { OK } else { FAILURE })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { FAILURE } else { OK });
        }
    };
    let status = match cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Ensemble(args) => ensemble(args),
        Command::Fit(args) => fit(args),
        Command::Verify(args) => verify(args),
    };
    match status {
        Ok(code) => ExitCode::from(code),
        Err(Failure(code, msg)) => {
            let _ = io::stdout().flush();
            eprintln!("gridsearch: {msg}");
            ExitCode::from(code)
        }
    }
}
