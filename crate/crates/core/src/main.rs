use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use bh_plasticity::harness::{
    cmd_compare_oracle, cmd_distributed, cmd_scaling, cmd_verify_theorems, simulate, ExperimentSpec, Settings, OUT_DIR_ENV,
};

/// Barnes-Hut synapse formation: theorem checks and work-counter experiments.
#[derive(Parser)]
#[command(name = "bh-plasticity", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the acceptance-criterion theorems and the subdivision table.
    VerifyTheorems {
        #[arg(long, default_value_t = 1_000_000)]
        trials: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Leave descendant boxes unhalved; a counterexample must appear.
        #[arg(long)]
        inject_fault: bool,
    },
    /// Work counters over population sizes.
    Scaling(Options),
    /// Simulated ranks against the single-process result.
    Distributed(Options),
    /// Search probabilities against the naive all-pairs oracle.
    CompareOracle(Options),
    /// Update steps with per-descent counters.
    Simulate(Options),
}

/// Every flag overrides the key of the same name in `--config`.
#[derive(Args)]
struct Options {
    /// key = value file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated list.
    #[arg(long)]
    theta: Option<String>,
    #[arg(long)]
    sigma: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Comma-separated sizes; `2^k` is accepted.
    #[arg(long)]
    n: Option<String>,
    /// Comma-separated powers of two.
    #[arg(long)]
    ranks: Option<String>,
    #[arg(long)]
    steps: Option<String>,
    #[arg(long)]
    draws: Option<String>,
    /// Number of generated populations for compare-oracle.
    #[arg(long)]
    populations: Option<String>,
    /// Population file with lines `id x y z vacant_axons vacant_dendrites`.
    #[arg(long)]
    population: Option<PathBuf>,
    /// `fixed:A:D` or `uniform:MAX`.
    #[arg(long)]
    vacancy: Option<String>,
    /// Prefix of the output files.
    #[arg(long)]
    name: Option<String>,
    /// Output directory.
    #[arg(long, env = OUT_DIR_ENV)]
    out: Option<PathBuf>,
}

impl Options {
    fn spec(&self, command: &str, defaults: &[(&str, &str)]) -> anyhow::Result<ExperimentSpec> {
        let mut settings = Settings::default();
        settings.set("name", command);
        for (k, v) in defaults {
            settings.set(k, *v);
        }
        if let Some(path) = &self.config {
            let file = Settings::read(path).with_context(|| format!("reading {}", path.display()))?;
            settings.merge(&file);
        }
        let flags = [
            ("theta", &self.theta),
            ("sigma", &self.sigma),
            ("seed", &self.seed),
            ("n", &self.n),
            ("ranks", &self.ranks),
            ("steps", &self.steps),
            ("draws", &self.draws),
            ("populations", &self.populations),
            ("vacancy", &self.vacancy),
            ("name", &self.name),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                settings.set(k, v.clone());
            }
        }
        if let Some(p) = &self.population {
            settings.set("population_file", p.display().to_string());
        }
        if let Some(o) = &self.out {
            settings.set("out", o.display().to_string());
        }
        Ok(ExperimentSpec::from_settings(&settings)?)
    }
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let passed = match cli.command {
        Command::VerifyTheorems {
            trials,
            seed,
            inject_fault,
        } => {
            let report = cmd_verify_theorems(trials, seed, inject_fault)?;
            print!("{report}");
            report.passed()
        }
        Command::Scaling(o) => {
            let spec = o.spec("scaling", &[("n", "2^10,2^11,2^12,2^13,2^14"), ("theta", "0.25,0.4")])?;
            let outcome = cmd_scaling(&spec)?;
            print!("{outcome}");
            outcome.passed()
        }
        Command::Distributed(o) => {
            let spec = o.spec("distributed", &[("n", "2^12"), ("ranks", "1,8")])?;
            let report = cmd_distributed(&spec)?;
            print!("{report}");
            report.passed()
        }
        Command::CompareOracle(o) => {
            let spec = o.spec("compare-oracle", &[("n", "1000"), ("theta", "0.25,0.5")])?;
            let report = cmd_compare_oracle(&spec)?;
            print!("{report}");
            report.passed()
        }
        Command::Simulate(o) => {
            let spec = o.spec("simulate", &[("n", "2^12"), ("steps", "3")])?;
            let report = simulate(&spec)?;
            print!("{report}");
            report.passed()
        }
    };
    Ok(passed)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
