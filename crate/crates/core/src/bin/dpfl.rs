use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dpfl::experiment::{self, ExperimentConfig};
use dpfl::privacy::{calibrate, epsilon_spent};
use dpfl::Error;

#[derive(Parser)]
#[command(name = "dpfl", version, about = "Differentially private federated fine-tuning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a TOML config.
    Run(RunArgs),
    /// Run every cell of the config's [sweep] table.
    Grid(RunArgs),
    /// Calibrate z for a budget, or report the budget spent by a given z.
    Accountant(AccountantArgs),
}

#[derive(Args)]
struct RunArgs {
    config: PathBuf,
    /// Output directory (overrides output.dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed (overrides the config's seed).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct AccountantArgs {
    /// Target epsilon; prints the calibrated z.
    #[arg(long, conflicts_with = "z", required_unless_present = "z")]
    epsilon: Option<f64>,
    /// Noise multiplier; prints the epsilon it spends.
    #[arg(long)]
    z: Option<f64>,
    #[arg(long)]
    delta: f64,
    #[arg(long)]
    q: f64,
    #[arg(long)]
    rounds: usize,
}

fn exit_code(e: &Error) -> ExitCode {
    match e {
        Error::Calibration(_) => ExitCode::from(2),
        _ => ExitCode::from(1),
    }
}

fn load(args: &RunArgs) -> Result<toml::Table, Error> {
    let mut table = experiment::load_table(&args.config)?;
    if let Some(seed) = args.seed {
        table.insert("seed".into(), toml::Value::Integer(seed as i64));
    }
    Ok(table)
}

fn run(args: &RunArgs) -> Result<(), Error> {
    let mut cfg = ExperimentConfig::from_table(load(args)?, args.config.parent())?;
    if let Some(out) = &args.out {
        cfg.output.dir = out.clone();
    }
    print!("{}", cfg.to_toml()?);
    let summary = experiment::run(&cfg)?;
    println!("final_accuracy={}", summary.final_accuracy);
    if let Some(r) = summary.best_rank {
        println!("best_rank={r}");
    }
    if let Some(eps) = summary.epsilon_spent {
        println!("epsilon_spent={eps}");
    }
    println!("output={}", cfg.output.dir.display());
    Ok(())
}

fn grid(args: &RunArgs) -> Result<bool, Error> {
    let table = load(args)?;
    let cells = experiment::expand_grid(table.clone(), args.config.parent())?;
    let out = match &args.out {
        Some(o) => o.clone(),
        None => cells
            .first()
            .map(|c| c.config.output.dir.clone())
            .unwrap_or_else(|| PathBuf::from("out")),
    };
    let results = experiment::run_grid(cells, &out)?;
    let failed = results.iter().filter(|r| r.outcome.is_err()).count();
    println!("cells={} failed={failed} index={}", results.len(), out.join("index.csv").display());
    Ok(failed == 0)
}

fn accountant(args: &AccountantArgs) -> Result<(), Error> {
    let (z, (eps, order)) = match (args.epsilon, args.z) {
        (Some(target), _) => {
            let z = calibrate(target, args.delta, args.q, args.rounds)?;
            (z, epsilon_spent(args.q, z, args.rounds, args.delta)?)
        }
        (None, Some(z)) => (z, epsilon_spent(args.q, z, args.rounds, args.delta)?),
        (None, None) => unreachable!("clap requires one of --epsilon or --z"),
    };
    println!("z={z}");
    println!("epsilon={eps}");
    println!("order={order}");
    println!("delta={}", args.delta);
    println!("q={}", args.q);
    println!("rounds={}", args.rounds);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => run(a).map(|_| true),
        Command::Grid(a) => grid(a),
        Command::Accountant(a) => accountant(a).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
