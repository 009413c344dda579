use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use cngan_cli::config::keys_help;
use cngan_cli::RunConfig;

#[derive(Parser)]
#[command(name = "cngan", version, about = "Cross-network preference generation and time-aware Top-N recommendation")]
#[command(after_long_help = keys_help())]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Configuration sources shared by the commands that build a run.
#[derive(Args)]
struct ConfigArgs {
    /// `key = value` configuration file (see `--help` for the keys).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `key=value` override; repeatable, applied after --config.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic two-network dataset (JSON lines).
    SynthData {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        topics: Option<usize>,
        #[arg(long)]
        users: Option<usize>,
        /// Output dataset file.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Offline training followed by the online test-and-retrain protocol.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Dataset file; synthesized from the configuration when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        variant: Option<String>,
        /// Topics of the synthesized dataset (ignored with --data).
        #[arg(long)]
        topics: Option<usize>,
        #[arg(long)]
        latent_dim: Option<usize>,
        #[arg(long)]
        encoding_dim: Option<usize>,
        /// Comma-separated cutoffs, e.g. 5,10,20.
        #[arg(long)]
        top_n: Option<String>,
        /// Run directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Score a checkpoint on the test window next to the TimePop and TBKNN baselines.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        top_n: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Tabulate one or more report CSVs (or run directories) ranked by HR.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Directory for summary.csv and summary.txt.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
}

fn apply(cfg: &mut RunConfig, args: &ConfigArgs, flags: &[(&str, Option<String>)]) -> Result<()> {
    if let Some(path) = &args.config {
        cfg.apply_file(path)?;
    }
    for pair in &args.set {
        cfg.apply_pair(pair)?;
    }
    if let Some(seed) = args.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SynthData {
            cfg,
            topics,
            users,
            out,
            force,
        } => {
            let mut rc = RunConfig::default();
            apply(
                &mut rc,
                &cfg,
                &[("topics", topics.map(|v| v.to_string())), ("users", users.map(|v| v.to_string()))],
            )?;
            let s = cngan_cli::synth_data(&rc, &out, force)?;
            println!("wrote {}: {s}", out.display());
        }
        Command::Train {
            cfg,
            data,
            variant,
            topics,
            latent_dim,
            encoding_dim,
            top_n,
            out,
            force,
        } => {
            let mut rc = RunConfig::default();
            apply(
                &mut rc,
                &cfg,
                &[
                    ("variant", variant),
                    ("topics", topics.map(|v| v.to_string())),
                    ("latent_dim", latent_dim.map(|v| v.to_string())),
                    ("encoding_dim", encoding_dim.map(|v| v.to_string())),
                    ("top_n", top_n),
                ],
            )?;
            let outcome = cngan_cli::train(&rc, data.as_deref(), &out, force)?;
            print!("{}", cngan_cli::comparison_table(&outcome.aggregates));
            println!("run directory: {}", outcome.dir.display());
        }
        Command::Evaluate {
            cfg,
            checkpoint,
            data,
            top_n,
            out,
            force,
        } => {
            let overrides = |rc: &mut RunConfig| apply(rc, &cfg, &[("top_n", top_n.clone())]);
            let rows = cngan_cli::evaluate(&overrides, &checkpoint, &data, &out, force)?;
            print!("{}", cngan_cli::comparison_table(&rows));
        }
        Command::Report { inputs, out, force } => {
            let c = cngan_cli::compare(&inputs)?;
            if c.fingerprints.len() > 1 {
                eprintln!(
                    "WARNING: inputs come from {} different datasets ({}); the rows are not comparable",
                    c.fingerprints.len(),
                    c.fingerprints.join(", ")
                );
            }
            if c.unfingerprinted > 0 {
                eprintln!("warning: {} input(s) have no dataset fingerprint beside them", c.unfingerprinted);
            }
            print!("{}", cngan_cli::comparison_table(&c.rows));
            if let Some(dir) = out {
                cngan_cli::write_comparison(&c, &dir, force)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(cngan_cli::exit_code(&e) as u8)
        }
    }
}
