use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use neuron_explain_cli::commands::{self, Outcome, TestbedOptions};
use neuron_explain_cli::{exit_code_for, ConfigArgs, RunConfig};

#[derive(Parser)]
#[command(name = "neuron-explain", version, about = "Explain and ablate neurons of vision classifiers")]
struct Cli {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the concept vocabulary by prompting once per corpus class.
    BuildVocab,
    /// Extract activated patches and rank vocabulary concepts per neuron.
    Explain,
    /// Measure per-class accuracy drops from ablating each selected unit.
    Ablate,
    /// List final-layer units with the largest head weight for a class.
    CategoryUnits {
        /// Class index, or class name when --corpus is given.
        #[arg(long)]
        class: String,
        #[arg(long, default_value_t = 2)]
        top_n: usize,
        /// Explain the listed units afterwards.
        #[arg(long)]
        explain: bool,
    },
    /// Regenerate report.html from the artifacts under --out.
    Report,
    /// Write a planted-detector testbed (model, corpus, fixtures, config).
    Testbed {
        dir: PathBuf,
        #[arg(long, default_value_t = 2)]
        planted: usize,
        /// Units in the conv layer.
        #[arg(long, default_value_t = 4)]
        width: usize,
        #[arg(long, default_value_t = 10)]
        n_per_class: usize,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
    },
}

fn summarize(outcome: &Outcome) -> u8 {
    let failures = outcome.record.failures();
    if !failures.is_empty() {
        eprintln!("{} item(s) failed:", failures.len());
        for f in failures {
            eprintln!("  {f}");
        }
    }
    eprintln!("run record: {}", outcome.record_path.display());
    outcome.exit_code()
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    if let Command::Testbed { dir, planted, width, n_per_class, noise } = &cli.command {
        let opts = TestbedOptions {
            seed: cli.config.seed.unwrap_or(0),
            planted: *planted,
            width: *width,
            n_per_class: *n_per_class,
            noise_level: *noise,
        };
        let path = commands::write_testbed(dir, &opts)?;
        println!("{}", path.display());
        return Ok(0);
    }
    let cfg = RunConfig::from_args(&cli.config)?;
    let outcome = match cli.command {
        Command::BuildVocab => commands::build_vocab(&cfg)?,
        Command::Explain => commands::explain(&cfg)?,
        Command::Ablate => commands::ablate(&cfg)?,
        Command::CategoryUnits { class, top_n, explain } => {
            let (units, outcome) = commands::category_units_cmd(&cfg, &class, top_n, explain)?;
            for u in units {
                println!("{}\t{}", u.unit, u.weight);
            }
            outcome
        }
        Command::Report => commands::report(&cfg)?,
        Command::Testbed { .. } => unreachable!("handled above"),
    };
    Ok(summarize(&outcome))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
