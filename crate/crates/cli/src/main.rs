//! `takeover-lab`: simulate, calibrate, train, evaluate, report.

mod settings;
mod workflows;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use settings::Settings;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub msg: String,
}

impl CliError {
    pub fn input(msg: impl Into<String>) -> Self {
        Self { code: 2, msg: msg.into() }
    }
}

impl From<takeover_lab::Error> for CliError {
    fn from(e: takeover_lab::Error) -> Self {
        use takeover_lab::Error as E;
        let code = match &e {
            E::ZeroAcceptance { .. } => 3,
            E::Checkpoint(_) => 4,
            E::Divergence { .. } => 5,
            _ => 2,
        };
        let msg = match &e {
            E::Divergence {
                checkpoint: Some(p), ..
            } => format!("{e} (last checkpoint: {})", p.display()),
            _ => e.to_string(),
        };
        Self { code, msg }
    }
}

#[derive(Debug, Parser)]
#[command(name = "takeover-lab", version, about = "Voluntary takeover of automated vehicles in mixed platoons")]
struct Cli {
    /// TOML settings file (`[section] key = value`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one setting, e.g. `--set sac.batch_size=256`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Base seed. Required, here or as `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0: all cores). Training is always single-threaded.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Roll out AV + followers behind a leader profile.
    Simulate(SimulateArgs),
    /// Fit the evidence model to an observed bundle.
    Calibrate(CalibrateArgs),
    /// Train a policy with soft actor-critic.
    Train(TrainArgs),
    /// Compare controllers on matched seeds.
    Evaluate(EvaluateArgs),
    /// Summarize a simulate or evaluate output directory.
    Report(ReportArgs),
    /// Write a synthetic observed bundle from a known parameter vector.
    SynthBundle(SynthArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub runs: Option<i64>,
    #[arg(long)]
    pub followers: Option<i64>,
    /// Seconds.
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub leader: Option<String>,
    /// idm-pid | idm-pid-aggressive | hl | policy
    #[arg(long)]
    pub controller: Option<String>,
    /// model | suppressed | forced
    #[arg(long)]
    pub takeover: Option<String>,
    #[arg(long)]
    pub forced_time: Option<f64>,
    #[arg(long)]
    pub policy: Option<String>,
    /// Skip per-run trajectory files.
    #[arg(long)]
    pub no_rollouts: bool,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub bundle: Option<String>,
    #[arg(long)]
    pub particles: Option<i64>,
    #[arg(long)]
    pub generations: Option<i64>,
    #[arg(long)]
    pub replicates: Option<i64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub episodes: Option<i64>,
    /// Use the simplified deterministic environment.
    #[arg(long)]
    pub smoke: bool,
    #[arg(long)]
    pub checkpoint_every: Option<i64>,
    #[arg(long)]
    pub leader: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub runs: Option<i64>,
    #[arg(long)]
    pub policy: Option<String>,
    /// Comma-separated subset of policy,idm-pid,idm-pid-aggressive,hl.
    #[arg(long, value_delimiter = ',')]
    pub controllers: Option<Vec<String>>,
    #[arg(long)]
    pub followers: Option<i64>,
    #[arg(long)]
    pub horizon: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Output directory of a previous simulate or evaluate run.
    #[arg(long)]
    pub input: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub instances: Option<i64>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut s = Settings::load(cli.config.as_deref(), &cli.sets)?;
    s.flag("seed", cli.seed.map(|v| v as i64));
    s.flag("threads", cli.threads.map(|v| v as i64));
    let threads = s.usize("threads")?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::input(format!("thread pool: {e}")))?;
    match cli.cmd {
        Cmd::Simulate(a) => workflows::simulate(s, a),
        Cmd::Calibrate(a) => workflows::calibrate(s, a),
        Cmd::Train(a) => workflows::train(s, a),
        Cmd::Evaluate(a) => workflows::evaluate(s, a),
        Cmd::Report(a) => workflows::report(s, a),
        Cmd::SynthBundle(a) => workflows::synth_bundle(s, a),
    }
}


fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.msg);
            ExitCode::from(e.code)
        }
    }
}
