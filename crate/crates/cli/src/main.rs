mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "anyview", version, about = "Variable-view RGB-D 3D object detection")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// JSON run configuration merged over the defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dotted-key override such as `eval.budget=1000`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Base seed; 0 unless set here or in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for per-scene parallelism.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Log verbosity: -v info, -vv debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic scenes and a manifest.
    Synth(commands::SynthArgs),
    /// Batch detection over sampled views of each scene.
    Detect(commands::DetectArgs),
    /// Frame-by-frame detection with the proxy cache.
    Online(commands::OnlineArgs),
    /// Score detection files against scene ground truth.
    Eval(commands::EvalArgs),
    /// Train the toy model on scene directories.
    TrainToy(commands::TrainArgs),
    /// Token, view-count and architecture sweeps.
    Ablate(commands::AblateArgs),
    /// Run the acceptance suite.
    Accept(commands::AcceptArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.global.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let g = cli.global;
    let mut overrides = g.overrides;
    if let Some(seed) = g.seed {
        overrides.push(format!("seed={seed}"));
    }
    let cfg = RunConfig::resolve(g.config.as_deref(), &overrides)?;
    let jobs = g.jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    match cli.command {
        Command::Synth(a) => commands::synth(cfg, a),
        Command::Detect(a) => commands::detect(cfg, a, jobs),
        Command::Online(a) => commands::online(cfg, a),
        Command::Eval(a) => commands::eval(cfg, a),
        Command::TrainToy(a) => commands::train_toy(cfg, a),
        Command::Ablate(a) => commands::ablate(cfg, a, jobs),
        Command::Accept(a) => commands::accept(a),
    }
}
