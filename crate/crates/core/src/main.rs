use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use star_swarm::fusion::Aggregation;
use star_swarm::harness::{self, HarnessError, RunConfig};
use star_swarm::trainer::CommMode;

#[derive(Parser)]
#[command(name = "star-swarm", version, about = "Multi-robot map classification with bounded-degree communication")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Config file (sectioned key = value text).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in preset used when no config file is given.
    #[arg(long, value_parser = ["desk", "digits"], default_value = "desk")]
    preset: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = parse_comm)]
    comm: Option<CommMode>,
    #[arg(long, value_parser = parse_fusion)]
    fusion: Option<Aggregation>,
    /// Team size override.
    #[arg(long)]
    robots: Option<usize>,
    /// Episode length override.
    #[arg(long)]
    horizon: Option<usize>,
}

#[derive(Args)]
struct WithCheckpoint {
    #[command(flatten)]
    common: Common,
    /// Checkpoint written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Continue from a checkpoint with the stages after its own.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the dataset and export it to `<out>/dataset`.
    Dataset(Common),
    /// Run the three training stages.
    Train(TrainArgs),
    /// Accuracy over the test maps, averaged over the evaluation seeds.
    Eval(WithCheckpoint),
    /// Accuracy at several team sizes without retraining.
    Scalability(WithCheckpoint),
    /// Accuracy of surviving robots after removing part of the team.
    Robustness(WithCheckpoint),
    /// Smallest episode length reaching an accuracy threshold per team size.
    Timing(WithCheckpoint),
}

fn parse_comm(s: &str) -> Result<CommMode, String> {
    s.parse()
}

fn parse_fusion(s: &str) -> Result<Aggregation, String> {
    s.parse()
}

fn load_config(c: &Common) -> Result<RunConfig, HarnessError> {
    let mut cfg = match &c.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Output {
                path: path.clone(),
                source,
            })?;
            RunConfig::parse(&text)?
        }
        None if c.preset == "digits" => RunConfig::digits(),
        None => RunConfig::desk(),
    };
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &c.out {
        cfg.out = out.clone();
    }
    if let Some(comm) = c.comm {
        cfg.eval.comm = comm;
        if comm != CommMode::Off {
            cfg.train.comm = comm;
        }
    }
    if let Some(fusion) = c.fusion {
        cfg.aggregation = fusion;
    }
    if let Some(n) = c.robots {
        cfg.world.robots = n;
    }
    if let Some(t) = c.horizon {
        cfg.world.horizon = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Dataset(c) => {
            let cfg = load_config(&c)?;
            let ds = harness::cmd_dataset(&cfg)?;
            println!(
                "wrote {} train and {} test samples to {}",
                ds.train.len(),
                ds.test.len(),
                cfg.out.join("dataset").display()
            );
        }
        Command::Train(t) => {
            let cfg = load_config(&t.common)?;
            let out = harness::cmd_train(&cfg, t.resume.as_deref())?;
            for s in &out.report.stages {
                println!(
                    "stage {}: epochs {}..{} best J {:.4}{}",
                    s.stage,
                    s.start_epoch,
                    s.start_epoch + s.epochs,
                    s.best_reward,
                    if s.plateaued { " (plateau)" } else { "" }
                );
            }
            println!("checkpoint: {}", out.checkpoint.display());
        }
        Command::Eval(w) => {
            let cfg = load_config(&w.common)?;
            let r = harness::cmd_eval(&w.checkpoint, &cfg)?;
            println!(
                "{} [{}] N={} T={} comm={}: accuracy {:.4} ± {:.4} over {} seeds",
                r.scale, r.config_hash, r.robots, r.horizon, r.comm, r.mean_accuracy, r.std_accuracy, r.seed_count
            );
        }
        Command::Scalability(w) => {
            let cfg = load_config(&w.common)?;
            let r = harness::cmd_scalability(&w.checkpoint, &cfg)?;
            println!("{} [{}] comm={} fusion parameters {}", r.scale, r.config_hash, r.comm, r.fusion_parameters);
            for row in &r.rows {
                println!("N={:<4} accuracy {:.4}", row.robots, row.mean_accuracy);
            }
            println!("spread {:.4}", r.spread);
        }
        Command::Robustness(w) => {
            let cfg = load_config(&w.common)?;
            let r = harness::cmd_robustness(&w.checkpoint, &cfg)?;
            println!("{} [{}] N={} removal at step {}", r.scale, r.config_hash, r.robots, r.removal_step);
            for row in &r.rows {
                println!("removed {:.2} accuracy {:.4}", row.fraction, row.report.mean_accuracy);
            }
        }
        Command::Timing(w) => {
            let cfg = load_config(&w.common)?;
            let r = harness::cmd_timing(&w.checkpoint, &cfg)?;
            println!("{} [{}] threshold {:.3}", r.scale, r.config_hash, r.threshold);
            for row in &r.rows {
                match row.min_horizon {
                    Some(t) => println!("N={:<3} T={:<3} T×N={}", row.robots, t, t * row.robots),
                    None => println!("N={:<3} not reached within T={}", row.robots, r.max_horizon),
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
