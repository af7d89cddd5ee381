mod dataset;
mod defend;
mod evaluate;
mod generate;
mod presets;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use presets::ParamArgs;

/// Padding-defense machines, trace simulation and evaluation.
#[derive(Debug, Parser)]
#[command(name = "padshield", version)]
struct Cli {
    /// Preset file replacing the bundled presets
    #[arg(long, global = true)]
    presets: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write machines in MBN1 form
    Generate(GenerateArgs),
    /// Apply a defense to every trace of a dataset
    Defend(DefendArgs),
    /// Compare two datasets and report overheads
    Evaluate(EvaluateArgs),
    /// Write a synthetic web-like dataset
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Defense {
    Front,
    Regulator,
    Surakav,
}

impl Defense {
    fn default_preset(self, reference: bool) -> &'static str {
        match (self, reference) {
            (Defense::Front, false) => "ft1-maybenot",
            (Defense::Front, true) => "ft1-simulated",
            (Defense::Regulator, false) => "rt-light-maybenot",
            (Defense::Regulator, true) => "rt-light-simulated",
            (Defense::Surakav, _) => "surakav-light",
        }
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(value_enum)]
    defense: Defense,
    /// Named parameter set
    #[arg(long)]
    preset: Option<String>,
    /// Output directory
    #[arg(long, short)]
    out: PathBuf,
    /// Surakav burst-sequence file or directory of them
    #[arg(long)]
    references: Option<PathBuf>,
    #[command(flatten)]
    params: ParamArgs,
}

#[derive(Debug, Args)]
pub struct DefendArgs {
    /// Directory of undefended traces
    #[arg(long)]
    dataset: PathBuf,
    /// Output directory for defended traces
    #[arg(long, short)]
    out: PathBuf,
    /// Defend with generated machines
    #[arg(long, value_enum, conflicts_with = "reference")]
    defense: Option<Defense>,
    /// Apply the reference transform instead of simulating machines
    #[arg(long, value_enum)]
    reference: Option<Defense>,
    /// MBN1 machine run at the client (repeatable)
    #[arg(long = "client-machine", conflicts_with_all = ["defense", "reference"])]
    client_machines: Vec<PathBuf>,
    /// MBN1 machine run at the relay (repeatable)
    #[arg(long = "relay-machine", conflicts_with_all = ["defense", "reference"])]
    relay_machines: Vec<PathBuf>,
    /// Named parameter set
    #[arg(long)]
    preset: Option<String>,
    /// Surakav burst-sequence file or directory keyed by trace file name
    #[arg(long)]
    references: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// One-way client-relay delay in µs
    #[arg(long, default_value_t = padshield::simulator::DEFAULT_DELAY_US)]
    delay_us: u64,
    /// Worker threads, 0 for one per core
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Keep padding after the last real cell
    #[arg(long)]
    keep_trailing: bool,
    #[command(flatten)]
    params: ParamArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// First defended dataset
    #[arg(long)]
    a: PathBuf,
    /// Second dataset to compare against
    #[arg(long)]
    b: PathBuf,
    /// Undefended dataset for latency overhead
    #[arg(long)]
    base: Option<PathBuf>,
    /// Directory for the CSV reports
    #[arg(long, short)]
    out: PathBuf,
    /// Window sizes in ms
    #[arg(long, value_delimiter = ',', default_values_t = [25u32, 50])]
    windows: Vec<u32>,
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long, short)]
    out: PathBuf,
    /// Also write one burst-sequence reference per trace here
    #[arg(long)]
    references: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Failure classes mapped onto exit codes.
#[derive(Debug)]
pub enum CmdError {
    /// Bad arguments, parameters or inputs: exit 2.
    Usage(anyhow::Error),
    /// Some traces or rows could not be produced: exit 1.
    Partial(String),
}

impl From<anyhow::Error> for CmdError {
    fn from(e: anyhow::Error) -> Self {
        CmdError::Usage(e)
    }
}

impl From<padshield::defenses::DefenseError> for CmdError {
    fn from(e: padshield::defenses::DefenseError) -> Self {
        CmdError::Usage(e.into())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PADSHIELD_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let presets = match presets::Presets::load(cli.presets.as_deref()) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Generate(args) => generate::run(&presets, &args),
        Command::Defend(args) => defend::run(&presets, &args),
        Command::Evaluate(args) => evaluate::run(&args),
        Command::Synth(args) => dataset::synth(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CmdError::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(CmdError::Partial(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
