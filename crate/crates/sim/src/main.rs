use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fpp_core::data;
use fpp_sim::config::{load_config, ExperimentConfig};
use fpp_sim::experiment::{self, rounds_to_accuracy, Experiment};
use fpp_sim::{dataset_file, DataSource, Result, SimError, Summary};

#[derive(Parser)]
#[command(name = "fpp", version, about = "Federated learning experiments with loss-weighted selection and checkpoint recovery")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one strategy and write its per-round metrics.
    Run(Common),
    /// Run several strategies on the same data and starting model.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Comma-separated strategy names.
        #[arg(long, value_delimiter = ',', default_value = "fpp,poc,fedavg,trimmed_mean,median")]
        strategies: Vec<String>,
    },
    /// Write the client datasets and test set to a directory.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Destination directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a config and print the resolved settings.
    Validate(Common),
}

#[derive(Args)]
struct Common {
    /// TOML config file; defaults apply when omitted.
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set protocol.gamma=1.5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Metrics CSV path.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Suppress per-round progress on stderr.
    #[arg(long, short)]
    quiet: bool,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut overrides = self.overrides.clone();
        if let Some(s) = &self.strategy {
            overrides.push(format!("strategy=\"{s}\""));
        }
        if let Some(r) = self.rounds {
            overrides.push(format!("rounds={r}"));
        }
        if let Some(s) = self.seed {
            overrides.push(format!("seed={s}"));
        }
        if let Some(o) = &self.output {
            overrides.push(format!("output=\"{}\"", o.display().to_string().replace('\\', "\\\\")));
        }
        match &self.config {
            Some(path) => load_config(path, &overrides),
            None => ExperimentConfig::from_toml_str("", &overrides),
        }
    }
}

fn print_summary(s: &Summary, rows: &[fpp_sim::MetricsRow]) {
    let hit = |t: f64| rounds_to_accuracy(rows, t).map_or("-".to_string(), |r| r.to_string());
    println!(
        "{:<13} rounds={:<4} final_accuracy={:.4} recovered={:<4} to60%={:<4} to70%={}",
        s.strategy,
        s.rounds,
        s.final_accuracy,
        s.recovered_rounds,
        hit(0.6),
        hit(0.7)
    );
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(common) => {
            let cfg = common.load()?;
            let quiet = common.quiet;
            let out = experiment::drive(Experiment::new(cfg)?, |_, row| {
                if !quiet {
                    eprintln!(
                        "round {:>4}  acc {:.4}{}",
                        row.round,
                        row.test_accuracy,
                        if row.recovered { "  recovered" } else { "" }
                    );
                }
            })?;
            print_summary(&out.summary, &out.rows);
        }
        Command::Compare { common, strategies } => {
            let cfg = common.load()?;
            let cmp = experiment::compare_strategies(&cfg, &strategies)?;
            for run in &cmp.runs {
                print_summary(&run.summary, &run.rows);
            }
        }
        Command::GenData { common, out } => {
            let cfg = common.load()?;
            let DataSource::Synthetic(spec) = &cfg.data else {
                return Err(SimError::Config("data.path: gen-data needs a synthetic data section".into()));
            };
            let clients = data::generate(spec)?;
            let test = data::generate_test_set(spec, cfg.test_samples)?;
            dataset_file::export_dir(&out, &clients, &test)?;
            println!("wrote {} client files and test.csv to {}", clients.len(), out.display());
        }
        Command::Validate(common) => {
            let cfg = common.load()?;
            println!("{cfg:#?}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
