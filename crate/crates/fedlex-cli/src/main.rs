use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand};

use fedlex_cli::config_file::{parse_config, ParsedConfig};
use fedlex_cli::campaign::execute_campaign;
use fedlex_cli::runner::execute_run;
use fedlex_cli::summary::{scan_runs, summarize, write_summary};

#[derive(Parser)]
#[command(name = "fedlex", version, about = "Deterministic federated-learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a single run from a TOML config or a manifest JSON.
    Run {
        config: PathBuf,
        /// Run directory (default: runs/<variant>-seed<seed>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override a config key, e.g. --set eta=0.001 or --set partition.alpha=0.3.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Execute every run of a campaign config and summarize the results.
    Campaign {
        config: PathBuf,
        /// Output root (default: the config's `output` key, else <config>.out).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Summarize previously completed run directories.
    Summarize {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Where to write summary.csv and ranks.csv (default: first dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn cmd_run(config: PathBuf, out: Option<PathBuf>, set: Vec<String>) -> Result<()> {
    let cfg = match parse_config(&config, &set)? {
        ParsedConfig::Single(cfg) => cfg,
        ParsedConfig::Campaign(_) => {
            bail!("{} is a campaign config; use `fedlex campaign`", config.display())
        }
    };
    let dir = out.unwrap_or_else(|| {
        PathBuf::from("runs").join(format!("{}-seed{}", cfg.variant_name(), cfg.seed))
    });
    let art = execute_run(&cfg, &dir)?;
    println!(
        "run complete: {} rounds, mean acc {:.2}, pooled acc {:.2}, results in {}",
        art.rounds_completed,
        art.final_mean_acc,
        art.final_pooled_acc,
        art.dir.display()
    );
    Ok(())
}

fn cmd_campaign(config: PathBuf, out: Option<PathBuf>, set: Vec<String>) -> Result<ExitCode> {
    let mut spec = match parse_config(&config, &set)? {
        ParsedConfig::Campaign(spec) => spec,
        ParsedConfig::Single(_) => {
            bail!(
                "{} is a single-run config; add `seeds`, `variants`, or `sweep`, or use `fedlex run`",
                config.display()
            )
        }
    };
    if let Some(dir) = out {
        spec.output = dir;
    }
    let outcome = execute_campaign(&spec)?;
    println!("campaign: {} runs completed, {} failed", outcome.completed, outcome.failures.len());
    for row in &outcome.summary {
        println!(
            "  {} @ {}: {:.2} +/- {:.2} over {} runs",
            row.variant, row.point, row.mean_acc, row.std_acc, row.runs
        );
    }
    for rank in &outcome.ranks {
        println!("  rank {:.2}: {} ({} points)", rank.mean_rank, rank.variant, rank.points);
    }
    if outcome.failures.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        for (dir, reason) in &outcome.failures {
            eprintln!("failed: {}: {reason}", dir.display());
        }
        Ok(ExitCode::FAILURE)
    }
}

fn cmd_summarize(dirs: Vec<PathBuf>, out: Option<PathBuf>) -> Result<()> {
    let (records, incomplete) = scan_runs(&dirs)?;
    let (rows, ranks) = summarize(&records);
    let out_dir = out.unwrap_or_else(|| dirs[0].clone());
    write_summary(&out_dir, &rows, &ranks)?;
    for row in &rows {
        println!(
            "{} @ {}: {:.2} +/- {:.2} over {} runs",
            row.variant, row.point, row.mean_acc, row.std_acc, row.runs
        );
    }
    for rank in &ranks {
        println!("rank {:.2}: {} ({} points)", rank.mean_rank, rank.variant, rank.points);
    }
    for (dir, reason) in &incomplete {
        eprintln!("incomplete: {}: {reason}", dir.display());
    }
    println!("tables written to {}", out_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { config, out, set } => cmd_run(config, out, set).map(|()| ExitCode::SUCCESS),
        Command::Campaign { config, out, set } => cmd_campaign(config, out, set),
        Command::Summarize { dirs, out } => {
            cmd_summarize(dirs, out).map(|()| ExitCode::SUCCESS)
        }
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
