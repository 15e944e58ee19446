use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hawkes_stein::cli::{self, Command, ExperimentConfig};
use hawkes_stein::Error;

#[derive(Parser)]
#[command(name = "hawkes-stein", version, about = "Simulate Hawkes-type processes and measure Gaussian approximation rates")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Simulate paths at the largest configured horizon; writes events.csv and summary.csv.
    Simulate(Common),
    /// Tabulate the resolvent of the model kernel; writes resolvent.csv.
    Resolvent(Common),
    /// Distance to the Gaussian target per horizon; writes functionals.csv, dw.csv (and bounds.csv).
    Dw(Common),
    /// Rate fit over the horizon sweep; writes rate.csv and rate.json.
    Rate(Common),
    /// Run the invariant suite and print PASS/FAIL per invariant.
    Check(Common),
}

#[derive(Args)]
struct Common {
    /// TOML experiment file (optional for `check`).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Replications per horizon.
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long, env = "HAWKES_STEIN_THREADS")]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Wall-clock budget in seconds.
    #[arg(long)]
    budget: Option<f64>,
}

fn load(cmd: Command, c: &Common) -> Result<ExperimentConfig, Error> {
    let mut cfg = match (&c.config, cmd) {
        (Some(p), _) => ExperimentConfig::from_file(p).map_err(|e| match e {
            Error::Io(io) => Error::Config(format!("{}: {io}", p.display())),
            other => other,
        })?,
        (None, Command::Check) => {
            let mut d = ExperimentConfig::example();
            d.replications = 2000;
            d
        }
        (None, _) => return Err(Error::Config("--config is required".into())),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(r) = c.reps {
        cfg.replications = r;
    }
    if let Some(t) = c.threads {
        cfg.threads = Some(t);
    }
    if let Some(o) = &c.out {
        cfg.outputs.dir = o.clone();
    }
    if let Some(b) = c.budget {
        cfg.budget = Some(b);
    }
    cfg.check()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let args = Cli::parse();
    let (cmd, common) = match &args.command {
        Sub::Simulate(c) => (Command::Simulate, c),
        Sub::Resolvent(c) => (Command::Resolvent, c),
        Sub::Dw(c) => (Command::Dw, c),
        Sub::Rate(c) => (Command::Rate, c),
        Sub::Check(c) => (Command::Check, c),
    };
    let result = load(cmd, common).and_then(|cfg| {
        cfg.model.ensure_valid()?;
        cli::with_threads(cfg.threads, || cli::run(cmd, &cfg))?
    });
    match result {
        Ok(report) => {
            for l in &report.lines {
                println!("{l}");
            }
            if let Some(e) = &report.error {
                eprintln!("error: {e} (partial results flagged in manifest.json)");
            }
            ExitCode::from(report.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}
