//! `fedvis`: operator entry point for the federated visualization engine.

mod data;
mod exit;
mod plot;
mod query;
mod sweep;
mod up;

use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use fedvis_core::compose::Scheme;
use fedvis_core::model::AccuracyPreset;
use fedvis_core::sweep::{AffinityKind, SweepAxis};
use tracing_subscriber::EnvFilter;

use exit::CliError;

const EXIT_CODES: &str = "Exit codes:
  0  success
  1  other failure
  2  usage error (bad flags, unknown chart kind)
  3  configuration error (unreadable config, missing manifest or shard)
  4  bind error (address in use)
  5  handshake error (cannot reach or join the coordinator)
  6  too few clients (fewer than 4 connected)
  7  session aborted";

#[derive(Parser, Debug)]
#[command(name = "fedvis", version, about = "Privacy-preserving federated visualization", after_help = EXIT_CODES)]
struct Cli {
    /// Seed for data generation, training and sharding.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Number of clients for generated or simulated fleets.
    #[arg(long, global = true)]
    clients: Option<usize>,
    /// More log output (repeatable). RUST_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic trip records and split them into client shards.
    Gen(GenArgs),
    /// Start the coordinator and its client fleet.
    Up(UpArgs),
    /// Run one client node against a coordinator.
    Client(ClientArgs),
    /// Run one visualization query and write the chart data.
    Query(QueryArgs),
    /// Run an accuracy and timing sweep; writes CSV and plots.
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    /// Output directory for shards and manifest.json.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20_000)]
    records: usize,
    /// Non-i.i.d. strength in [0, 1]; 0 shards uniformly.
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
    #[arg(long, value_parser = parse_affinity, default_value = "hotspots")]
    affinity: AffinityKind,
}

#[derive(Args, Debug)]
struct UpArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run clients in-process instead of as child processes.
    #[arg(long)]
    sim: bool,
    /// Shard directory containing manifest.json. Overrides the config.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Client listen address. Overrides the config.
    #[arg(long)]
    listen: Option<String>,
    /// HTTP listen address; "off" disables the API. Overrides the config.
    #[arg(long)]
    http: Option<String>,
    /// Records to generate when simulating without a manifest.
    #[arg(long, default_value_t = 20_000)]
    records: usize,
}

#[derive(Args, Debug)]
struct ClientArgs {
    #[arg(long)]
    connect: String,
    #[arg(long)]
    id: u16,
    /// CSV shard with this client's records.
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct TrainArgs {
    #[arg(long, value_parser = parse_preset, default_value = "medium")]
    preset: AccuracyPreset,
    #[arg(long)]
    rounds: Option<u32>,
    #[arg(long)]
    epochs: Option<u32>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Early-stopping tolerance; 0 always runs every round.
    #[arg(long)]
    tolerance: Option<f64>,
}

#[derive(Args, Debug)]
struct QueryArgs {
    /// Chart preset name or chart kind (see GET /api/charts/presets).
    #[arg(long)]
    chart: String,
    #[arg(long, value_parser = parse_scheme, default_value = "query")]
    scheme: Scheme,
    #[command(flatten)]
    train: TrainArgs,
    /// Start time range filter: LO,HI (unix seconds, half-open).
    #[arg(long, value_parser = parse_range)]
    time_range: Option<(i64, i64)>,
    /// Origin bounding box: LAT_LO,LAT_HI,LON_LO,LON_HI.
    #[arg(long)]
    bbox: Option<String>,
    /// Tag predicate KEY=VALUE (repeatable).
    #[arg(long)]
    tag: Vec<String>,
    /// Run against an in-process fleet instead of a running coordinator.
    #[arg(long)]
    sim: bool,
    /// Shard directory for --sim and --oracle.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Records to generate for --sim without --data.
    #[arg(long, default_value_t = 20_000)]
    records: usize,
    /// Coordinator address when not simulating.
    #[arg(long, default_value = "127.0.0.1:7700")]
    connect: String,
    /// TEST ONLY: compare against a centralized sum read from every shard.
    #[arg(long)]
    oracle: bool,
    /// Output directory for chart.json and rounds.csv. Chart JSON goes to
    /// stdout otherwise.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long, value_parser = parse_axis)]
    axis: SweepAxis,
    /// Comma-separated grid values.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    grid: Vec<f64>,
    #[arg(long, default_value = "week-histogram")]
    chart: String,
    #[arg(long, value_parser = parse_scheme, default_value = "prediction")]
    scheme: Scheme,
    #[command(flatten)]
    train: TrainArgs,
    /// Seeds per grid point, starting at --seed.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long, default_value_t = 20_000)]
    records: usize,
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
    #[arg(long, value_parser = parse_affinity, default_value = "hotspots")]
    affinity: AffinityKind,
    /// Difference-map amplification.
    #[arg(long, default_value_t = 50.0)]
    amplify: f64,
    #[arg(long)]
    out: PathBuf,
}

fn parse_scheme(s: &str) -> Result<Scheme, String> {
    s.parse()
}

fn parse_preset(s: &str) -> Result<AccuracyPreset, String> {
    s.parse()
}

fn parse_axis(s: &str) -> Result<SweepAxis, String> {
    s.parse()
}

fn parse_affinity(s: &str) -> Result<AffinityKind, String> {
    match s {
        "hotspots" => Ok(AffinityKind::Hotspots),
        "weekdays" => Ok(AffinityKind::Weekdays),
        other => Err(format!("unknown affinity {other:?} (hotspots|weekdays)")),
    }
}

fn parse_range(s: &str) -> Result<(i64, i64), String> {
    let (a, b) = s.split_once(',').ok_or("expected LO,HI")?;
    let lo = a.trim().parse().map_err(|_| format!("bad number {a:?}"))?;
    let hi = b.trim().parse().map_err(|_| format!("bad number {b:?}"))?;
    Ok((lo, hi))
}

fn init_logging(verbose: u8, default: &str) {
    let level = match verbose {
        0 => default,
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(level));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .with_ansi(std::io::IsTerminal::is_terminal(&std::io::stderr()))
        .try_init();
}

fn main() {
    let cli = Cli::parse();
    let quiet = matches!(
        cli.command,
        Command::Query(_) | Command::Sweep(_) | Command::Gen(_)
    );
    init_logging(cli.verbose, if quiet { "warn" } else { "info" });

    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: cannot start runtime: {e}");
            std::process::exit(1);
        }
    };
    let result = runtime.block_on(run(cli));
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.code);
    }
}

async fn run(cli: Cli) -> Result<(), CliError> {
    let seed = cli.seed;
    match cli.command {
        Command::Gen(a) => data::cmd_gen(&a, seed, cli.clients.unwrap_or(8)),
        Command::Up(a) => up::cmd_up(a, seed, cli.clients.unwrap_or(8)).await,
        Command::Client(a) => up::cmd_client(a).await,
        Command::Query(a) => query::cmd_query(a, seed, cli.clients.unwrap_or(8)).await,
        Command::Sweep(a) => tokio::task::spawn_blocking(move || {
            sweep::cmd_sweep(&a, seed, cli.clients.unwrap_or(5))
        })
        .await
        .map_err(|e| CliError::other(e.to_string()))?,
    }
}

/// Address helper for log lines.
fn show(addr: Option<SocketAddr>) -> String {
    addr.map_or_else(|| "off".to_string(), |a| a.to_string())
}
