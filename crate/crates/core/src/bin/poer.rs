use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use poer::exec::Exec;
use poer::expcli::{compare_arms, run_experiment, run_training, ArmFiles, ExperimentSuite, RunConfig};

#[derive(Parser)]
#[command(name = "poer", version, about = "Train and compare PPO agents with prioritized oversampled replay")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the environment step budget.
    #[arg(long)]
    steps: Option<u64>,
    /// Deterministic single-thread round-robin training.
    #[arg(long)]
    sync: bool,
    /// Write a checkpoint every N updates.
    #[arg(long, value_name = "N")]
    checkpoint_every: Option<u64>,
    /// Evaluate gradients (train) or runs (experiment) on one thread.
    #[arg(long)]
    sequential: bool,
}

impl Common {
    fn apply(&self, c: &mut RunConfig) {
        if let Some(s) = self.steps {
            c.trainer.total_steps = s;
        }
        if self.sync {
            c.trainer.sync = true;
        }
        if let Some(n) = self.checkpoint_every {
            c.trainer.checkpoint_every = n;
        }
    }

    fn exec(&self) -> Exec {
        if self.sequential {
            Exec::Sequential
        } else {
            Exec::Parallel
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration.
    Train {
        /// Run configuration (TOML); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
    /// Run every arm of a suite for every seed.
    Experiment {
        /// Suite file (TOML).
        #[arg(long, conflicts_with = "builtin", required_unless_present = "builtin")]
        config: Option<PathBuf>,
        /// Built-in suite 1-4 on the default configuration.
        #[arg(long)]
        builtin: Option<u32>,
        /// Seeds 0..N for a built-in suite, or replace the suite's seeds.
        #[arg(long)]
        seeds: Option<u64>,
        /// Base configuration for a built-in suite.
        #[arg(long, requires = "builtin")]
        base: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Compare arms by the final value of a metric.
    Compare {
        /// An arm: a directory of per-seed CSVs, or NAME=FILE,FILE,...
        #[arg(long = "arm", required = true)]
        arms: Vec<String>,
        #[arg(long, default_value = "extrinsic_reward_mean")]
        metric: String,
        /// Arm index pair to test, as I:J (repeatable).
        #[arg(long = "pair")]
        pairs: Vec<String>,
    },
}

fn parse_arm(spec: &str) -> anyhow::Result<ArmFiles> {
    match spec.split_once('=') {
        Some((name, files)) => Ok(ArmFiles {
            name: name.to_string(),
            files: files.split(',').map(PathBuf::from).collect(),
        }),
        None => Ok(ArmFiles::from_dir(&PathBuf::from(spec))?),
    }
}

fn parse_pair(spec: &str) -> anyhow::Result<(usize, usize)> {
    let (a, b) = spec.split_once(':').context("pair must look like I:J")?;
    Ok((a.parse()?, b.parse()?))
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Train { config, seed, common } => {
            let mut c = match &config {
                Some(p) => RunConfig::load(p)?,
                None => RunConfig::default(),
            };
            if let Some(s) = seed {
                c.seed = s;
            }
            common.apply(&mut c);
            if let Some(out) = &common.out {
                c.output_dir = out.clone();
            }
            if c.output_dir.as_os_str().is_empty() {
                c.output_dir = PathBuf::from("runs/train");
            }
            let out = c.output_dir.clone();
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            c.save(&out.join("config.toml"))?;
            let outcome = run_training(&c, &out, "metrics.csv", common.exec())?;
            let s = &outcome.summary;
            println!(
                "steps {} updates {} episodes {} fresh {} replayed {} buffers {:?}",
                s.steps,
                s.updates.len(),
                s.episodes.len(),
                s.fresh_batches,
                s.replayed_batches,
                s.buffer_lens
            );
            println!("metrics written to {}", outcome.csv.display());
            Ok(true)
        }
        Command::Experiment {
            config,
            builtin,
            seeds,
            base,
            common,
        } => {
            let mut suite = match (config, builtin) {
                (Some(p), _) => ExperimentSuite::load(&p)?,
                (None, Some(n)) => {
                    let base = match &base {
                        Some(p) => RunConfig::load(p)?,
                        None => RunConfig::default(),
                    };
                    ExperimentSuite::builtin(n, base, (0..seeds.unwrap_or(5)).collect())?
                }
                (None, None) => bail!("either --config or --builtin is required"),
            };
            if let Some(n) = seeds {
                suite.seeds = (0..n).collect();
            }
            common.apply(&mut suite.base);
            let out = common.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(&suite.name));
            let report = run_experiment(&suite, &out, common.exec())?;
            print!("{}", report.table());
            for a in &report.arms {
                for f in &a.failures {
                    eprintln!("{}: {f}", a.name);
                }
            }
            Ok(!report.failed())
        }
        Command::Compare { arms, metric, pairs } => {
            let arms = arms.iter().map(|a| parse_arm(a)).collect::<anyhow::Result<Vec<_>>>()?;
            let pairs = pairs.iter().map(|p| parse_pair(p)).collect::<anyhow::Result<Vec<_>>>()?;
            let report = compare_arms(&arms, &metric, &pairs)?;
            print!("{}", report.table());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
