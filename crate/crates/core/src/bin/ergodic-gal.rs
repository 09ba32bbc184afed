use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ergodic_gal::harness::{
    concentration_suite, entropy_suite, rates_suite, simulate, tower_suite, train_suite, write_file, ExperimentConfig,
    SuiteReport,
};
use ergodic_gal::{Error, Result};

#[derive(Parser)]
#[command(version, about = "Adversarial learning from ergodic trajectories: experiments and checks")]
struct Cli {
    /// TOML configuration; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured base seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded trajectory of the configured system.
    Simulate,
    /// Structural and measure checks of the doubling-map tower.
    TowerCheck,
    /// One training run with the error-decomposition audit.
    Train,
    /// Convergence rates over the sample-size grid, with the baseline comparison.
    Rates,
    /// Tail bounds, Birkhoff variance scaling and the fitted system constant.
    Concentration,
    /// Net coverage, entropy growth, covering numbers, Dudley integrals, rate constants.
    Entropy,
    /// Print the effective configuration.
    Config,
}

fn report(name: &str, suite: &SuiteReport) {
    for c in &suite.checks {
        println!("[{}] {name}/{}: {:.6e} (target {})", if c.pass { "PASS" } else { "FAIL" }, c.name, c.value, c.target);
    }
}

fn run(cli: &Cli) -> Result<bool> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Error::Input("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::Input(format!("thread pool: {e}")))?;
    }
    let out = &cli.out;
    let suite = match cli.command {
        Command::Config => {
            print!("{}", cfg.to_toml());
            return Ok(true);
        }
        Command::Simulate => {
            let traj = simulate(&cfg)?;
            let path = out.join("trajectory.csv");
            write_file(&path, &traj.to_csv())?;
            println!("{} states of {} written to {}", traj.len(), traj.system_id, path.display());
            return Ok(true);
        }
        Command::TowerCheck => ("tower-check", tower_suite(&cfg)?),
        Command::Train => ("train", train_suite(&cfg)?),
        Command::Rates => {
            let (suite, main, baseline) = rates_suite(&cfg)?;
            println!("{}: slope {:.4}, tau {:.4}", main.source.label(), main.fitted_slope, main.fitted_tau);
            if let Some(b) = baseline {
                println!("{}: slope {:.4}, tau {:.4}", b.source.label(), b.fitted_slope, b.fitted_tau);
            }
            ("rates", suite)
        }
        Command::Concentration => ("concentration", concentration_suite(&cfg)?),
        Command::Entropy => ("entropy", entropy_suite(&cfg)?),
    };
    let (name, suite) = suite;
    suite.write(out)?;
    report(name, &suite);
    println!("reports in {}", out.display());
    Ok(suite.passed())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { 2 } else { 1 })
        }
    }
}
