use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use simcal_cli::commands;
use simcal_cli::{CliResult, ExperimentConfig, Method};

#[derive(Debug, Parser)]
#[command(
    name = "simcal",
    version,
    about = "Post-hoc calibration of graph node classifiers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON experiment configuration; unspecified fields take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Bundle and results directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// uncal, ts, vs, ets, cagcn or simcalib.
    #[arg(long, global = true)]
    method: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic CSBM graph with features, labels and splits.
    Datagen,
    /// Train the GCN classifier and write hidden features and logits.
    Pretrain,
    /// Fit a calibrator for each seed and write results.json.
    Calibrate,
    /// Write reliability tables and confidence histograms for the test mask.
    Reliability {
        /// results.json whose first run supplies the calibrated outputs.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Run the Gaussian-model Monte Carlo sweep.
    Theory,
}

fn run(cli: Cli) -> CliResult<()> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = cli.out {
        config.out = out;
    }
    if let Some(m) = &cli.method {
        config.method = m.parse::<Method>()?;
    }
    match cli.command {
        Command::Datagen => {
            let meta = commands::datagen(&config)?;
            println!(
                "wrote {} nodes, {} classes, {} features to {}",
                meta.num_nodes,
                meta.num_classes,
                meta.feature_dim,
                config.out.display()
            );
        }
        Command::Pretrain => {
            let meta = commands::pretrain(&config)?;
            if let Some(c) = meta.classifier {
                println!(
                    "accuracy train {:.4} val {:.4} test {:.4}; ECE train {:.4} test {:.4}",
                    c.train_accuracy, c.val_accuracy, c.test_accuracy, c.train_ece, c.test_ece
                );
            }
        }
        Command::Calibrate => {
            let r = commands::calibrate(&config)?;
            let (b, a) = (r.aggregate.before, r.aggregate.after);
            println!(
                "{} over {} seeds: test ECE {:.4} ± {:.4} -> {:.4} ± {:.4}",
                r.method,
                r.runs.len(),
                b.mean.ece,
                b.std.ece,
                a.mean.ece,
                a.std.ece
            );
        }
        Command::Reliability { model } => {
            let out = commands::reliability_report(&config, model.as_deref())?;
            print!("uncalibrated ECE {:.4}", out.pre.ece());
            if let Some(post) = out.post {
                print!(", calibrated ECE {:.4}", post.ece());
            }
            println!();
        }
        Command::Theory => {
            let out = commands::theory(&config)?;
            print!("{}", out.csv);
            println!("ECE ordering check: {}", out.verdict());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
