use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Parser, Debug)]
#[command(name = "cbm", version, about = "Multi-robot task planning with a coalition of learning agents")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Solve one instance and write the schedule, objectives, a CSV row and a manifest.
    Solve(SolveArgs),
    /// Generate random instances with precedence constraints.
    Generate(GenerateArgs),
    /// Solve a set of instances over several seeds and tabulate gaps.
    Bench(BenchArgs),
    /// Write the mixed-integer model of a small instance in LP format.
    ExportLp(ExportLpArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormatArg {
    /// `.json` files are native, anything else Cordeau.
    Auto,
    Native,
    Cordeau,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportArg {
    Inproc,
    Tcp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerArg {
    /// Seeded round-robin on one thread; reproducible.
    Deterministic,
    /// One thread per agent.
    Threaded,
}

fn parse_eta(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| format!("not a number: {p:?}")))
        .collect::<Result<_, _>>()?;
    <[f64; 3]>::try_from(parts).map_err(|p| format!("expected three values a,b,c, got {}", p.len()))
}

fn parse_unit(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("not a number: {s:?}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1]"))
    }
}

fn parse_fraction(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("not a number: {s:?}"))?;
    if (0.0..1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1)"))
    }
}

fn parse_seconds(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("not a number: {s:?}"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err("time limit must be positive".into())
    }
}

#[derive(Args, Clone, Debug)]
pub struct SearchArgs {
    /// Number of agents in the coalition.
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u16).range(1..1000))]
    pub agents: u16,
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u32).range(2..))]
    pub pop_size: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Wall-clock limit in seconds; without it the run stops on stagnation only.
    #[arg(long, value_parser = parse_seconds)]
    pub time_limit: Option<f64>,
    /// Steps without improvement of the coalition best before an agent stops.
    #[arg(long, default_value_t = 500, value_parser = clap::value_parser!(u64).range(1..))]
    pub patience: u64,
    /// Mimetism rate.
    #[arg(long, default_value_t = 0.3, value_parser = parse_unit)]
    pub rho: f64,
    /// Learning increments: coalition improvement, agent improvement, no improvement.
    #[arg(long, default_value = "0.5,0.25,-0.05", value_parser = parse_eta, allow_hyphen_values = true)]
    pub eta: [f64; 3],
    /// Stagnant cycles before the current solution is redrawn from the population.
    #[arg(long, default_value_t = 5)]
    pub n_cycles: usize,
    #[arg(long, value_enum, default_value_t = SchedulerArg::Deterministic)]
    pub scheduler: SchedulerArg,
}

#[derive(Args, Debug)]
pub struct SolveArgs {
    #[arg(long, required_unless_present = "from_manifest")]
    pub instance: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Auto)]
    pub format: FormatArg,
    #[command(flatten)]
    pub search: SearchArgs,
    #[arg(long, value_enum, default_value_t = TransportArg::Inproc)]
    pub transport: TransportArg,
    /// Address this agent listens on (tcp transport).
    #[arg(long)]
    pub listen: Option<SocketAddr>,
    /// Comma-separated addresses of the other agents (tcp transport).
    #[arg(long, value_delimiter = ',')]
    pub peers: Vec<SocketAddr>,
    #[arg(long, default_value = "cbm-out")]
    pub out_dir: PathBuf,
    /// Repeat the run recorded in a manifest; other search flags are ignored.
    #[arg(long)]
    pub from_manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    pub tasks: u32,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    pub robots: u32,
    /// Fraction of tasks that receive a precedence predecessor.
    #[arg(long, default_value_t = 0.2, value_parser = parse_fraction)]
    pub prec: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of instances, seeded `seed`, `seed + 1`, ...
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    pub batch: u32,
    #[arg(long, default_value = "instances")]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Instance files or directories of instance files.
    #[arg(required = true)]
    pub instances: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Auto)]
    pub format: FormatArg,
    /// Runs per instance, with seeds `seed`, `seed + 1`, ...
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    pub runs: u32,
    /// CSV of `name,value` best-known values; Cordeau instances fall back to the built-in table.
    #[arg(long)]
    pub bks: Option<PathBuf>,
    #[command(flatten)]
    pub search: SearchArgs,
    #[arg(long, default_value = "bench-out")]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct ExportLpArgs {
    #[arg(long)]
    pub instance: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::Auto)]
    pub format: FormatArg,
    #[arg(long)]
    pub out: PathBuf,
    /// Makespan normalizer of the bi-objective scalarization.
    #[arg(long, default_value_t = 1.0)]
    pub makespan_ref: f64,
    /// Cost normalizer of the bi-objective scalarization.
    #[arg(long, default_value_t = 1.0)]
    pub cost_ref: f64,
}
