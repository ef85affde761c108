//! Command-line driver for the `webtraffic` pipeline.
//!
//! Every subcommand reads a [`RunConfig`] (TOML file plus flag overrides)
//! and writes fixed-name artifacts into the output directory.

pub mod commands;
pub mod config;
pub mod plot;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};

pub use commands::{cmd_evaluate, cmd_plot, cmd_predict, cmd_prepare, cmd_train, EvaluateOptions};
pub use config::{Method, Overrides, RunConfig, UsageError};

#[derive(Debug, Parser)]
#[command(name = "webtraffic", version, about = "Forecast daily Wikipedia page views")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the scaler and write the window layout.
    Prepare(Overrides),
    /// Train the two LSTM models.
    Train(Overrides),
    /// Write forecasts for the horizon after the input's last day.
    Predict(Overrides),
    /// Score forecasts and the benchmark.
    Evaluate {
        #[command(flatten)]
        flags: Overrides,
        /// Also write per-page scores.
        #[arg(long)]
        per_page: bool,
        /// Report MAE next to SMAPE.
        #[arg(long)]
        mae: bool,
        /// Additional forecast files to score against the answer key.
        #[arg(long, value_name = "PATH")]
        forecast: Vec<PathBuf>,
    },
    /// Chart the forecasts of selected pages.
    Plot {
        #[command(flatten)]
        flags: Overrides,
        /// Exact page key, or a substring of keys.
        #[arg(long)]
        page: String,
        /// Maximum number of pages to plot.
        #[arg(long, default_value_t = 10)]
        limit: usize,
    },
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare(flags) => {
            let r = cmd_prepare(&RunConfig::resolve(&flags)?)?;
            println!(
                "{} pages, {} missing cells; X width {}, horizon {}",
                r.pages,
                r.missing,
                r.layout.x_width(),
                r.layout.horizon
            );
        }
        Command::Train(flags) => {
            if let Some(r) = cmd_train(&RunConfig::resolve(&flags)?)? {
                for (name, h) in [("train", &r.train), ("validate", &r.validate)] {
                    let best = h.epochs.iter().next_back().map(|e| e.best_val_loss).unwrap_or(h.initial_val_loss);
                    println!("{name}: best validation MAE {best:.6}");
                }
            }
        }
        Command::Predict(flags) => {
            let r = cmd_predict(&RunConfig::resolve(&flags)?)?;
            for f in r.forecasts {
                match f.smape {
                    Some(s) => println!("{}  SMAPE {s:.4}", f.file),
                    None => println!("{}", f.file),
                }
            }
        }
        Command::Evaluate {
            flags,
            per_page,
            mae,
            forecast,
        } => {
            let opts = EvaluateOptions {
                per_page,
                mae,
                forecasts: forecast,
            };
            let rows = cmd_evaluate(&RunConfig::resolve(&flags)?, &opts)?;
            print!("{}", commands::format_scores(&rows));
        }
        Command::Plot { flags, page, limit } => {
            let r = cmd_plot(&RunConfig::resolve(&flags)?, &page, limit)?;
            for f in r.files {
                println!("{}", f.display());
            }
        }
    }
    Ok(())
}

/// 2 for bad input or usage, 1 for failures inside the pipeline.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<webtraffic::Error>() {
            return if e.is_input_error() { 2 } else { 1 };
        }
        if cause.is::<UsageError>() || cause.is::<std::io::Error>() || cause.is::<csv::Error>() {
            return 2;
        }
    }
    1
}
