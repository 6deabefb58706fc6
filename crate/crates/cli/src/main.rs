use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use zdq_cli::commands::{self, Context};
use zdq_cli::{CliError, ExperimentConfig};

#[derive(Parser)]
#[command(name = "zdq", version, about = "Zero-delay quantization of linear Gaussian sources")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (TOML).
    #[arg(long, global = true, default_value = "zdq.toml")]
    config: PathBuf,
    /// Policy file; defaults to <out>/policy.json.
    #[arg(long, global = true)]
    policy: Option<PathBuf>,
    /// Output directory; overrides `out` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed; overrides `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true, env = "ZDQ_THREADS")]
    threads: Option<usize>,
    /// Exit with status 3 when value iteration does not converge.
    #[arg(long, global = true)]
    strict: bool,
    /// Multiplies the contraction factor given to the bound formulas.
    #[arg(long, global = true, hide = true)]
    sabotage_alpha: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample source trajectories.
    Simulate,
    /// Build the belief cover, solve the average-cost problem, write the policy.
    Design,
    /// Closed-loop cost of a policy over the evaluation grid.
    Evaluate,
    /// Monte Carlo checks of the moment, value and rate bounds.
    Verify,
    /// Cover, value table and discount trend as CSV.
    Export,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let (config, base) = ExperimentConfig::load(&cli.config)?;
    let mut ctx = Context::new(config, base, cli.out, cli.seed, cli.policy);
    ctx.strict = cli.strict;
    ctx.sabotage_alpha = cli.sabotage_alpha;
    match cli.command {
        Command::Simulate => commands::simulate(&ctx),
        Command::Design => commands::design_cmd(&ctx),
        Command::Evaluate => commands::evaluate(&ctx),
        Command::Verify => commands::verify(&ctx).map(|_| ()),
        Command::Export => commands::export(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("zdq: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
