use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::compare::{final_metric, median};
use super::config::RunConfig;
use super::metrics::{mean_std, write_csv, MetricsSink};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::trainer::{RunSummary, Trainer};

/// One arm: a name plus dotted-key overrides of the suite's base config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmSpec {
    pub name: String,
    #[serde(default)]
    pub set: BTreeMap<String, toml::Value>,
}

/// A named set of arms, each run once per seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSuite {
    pub name: String,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub base: RunConfig,
    #[serde(default)]
    pub arms: Vec<ArmSpec>,
}

impl ExperimentSuite {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// The arm's effective configuration for `seed`.
    pub fn arm_config(&self, arm: &ArmSpec, seed: u64) -> Result<RunConfig> {
        let mut c = self.base.clone();
        for (key, value) in &arm.set {
            c.set(key, value.clone())?;
        }
        c.seed = seed;
        Ok(c)
    }

    fn sweep(name: &str, base: RunConfig, seeds: Vec<u64>, key: &str, values: Vec<(String, toml::Value)>) -> Self {
        let arms = values
            .into_iter()
            .map(|(arm, v)| ArmSpec {
                name: arm,
                set: BTreeMap::from([(key.to_string(), v)]),
            })
            .collect();
        Self {
            name: name.into(),
            seeds,
            base,
            arms,
        }
    }

    /// Replay frequency sweep, μ ∈ {0, 0.5, 1, 2}.
    pub fn replay_frequency(base: RunConfig, seeds: Vec<u64>) -> Self {
        let values = [0.0, 0.5, 1.0, 2.0]
            .map(|mu| (format!("mu-{mu}"), toml::Value::Float(mu)))
            .to_vec();
        Self::sweep("experiment-1", base, seeds, "poer.replay_ratio", values)
    }

    /// Priority definition sweep.
    pub fn prioritization(base: RunConfig, seeds: Vec<u64>) -> Self {
        let values = ["intrinsic", "uniform", "extrinsic", "advantage"]
            .map(|p| (format!("priority-{p}"), toml::Value::String(p.into())))
            .to_vec();
        Self::sweep("experiment-2", base, seeds, "poer.priority", values)
    }

    /// Prioritized drop sweep, P_d ∈ {1, 0.5, 0}.
    pub fn drop_probability(base: RunConfig, seeds: Vec<u64>) -> Self {
        let values = [1.0, 0.5, 0.0]
            .map(|p| (format!("pd-{p}"), toml::Value::Float(p)))
            .to_vec();
        Self::sweep("experiment-3", base, seeds, "poer.drop_probability", values)
    }

    /// Replay against the replay-free baseline on each environment.
    pub fn environments(base: RunConfig, seeds: Vec<u64>) -> Self {
        let mut arms = Vec::new();
        for env in ["deep_chain", "key_door"] {
            for (algo, mu) in [("poer", 0.5), ("baseline", 0.0)] {
                arms.push(ArmSpec {
                    name: format!("{env}-{algo}"),
                    set: BTreeMap::from([
                        ("env.name".to_string(), toml::Value::String(env.into())),
                        ("poer.replay_ratio".to_string(), toml::Value::Float(mu)),
                    ]),
                });
            }
        }
        Self {
            name: "experiment-4".into(),
            seeds,
            base,
            arms,
        }
    }

    /// Built-in suite by experiment number.
    pub fn builtin(number: u32, base: RunConfig, seeds: Vec<u64>) -> Result<Self> {
        match number {
            1 => Ok(Self::replay_frequency(base, seeds)),
            2 => Ok(Self::prioritization(base, seeds)),
            3 => Ok(Self::drop_probability(base, seeds)),
            4 => Ok(Self::environments(base, seeds)),
            n => Err(Error::Usage(format!("no built-in experiment {n}; choose 1-4"))),
        }
    }
}

/// Files written by one training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub csv: PathBuf,
    pub summary: RunSummary,
}

/// Train one configuration and write `metrics.csv`, `config.toml` and
/// `buffers.txt` into `out`; checkpoints go to `out/checkpoints`.
pub fn run_training(config: &RunConfig, out: &Path, csv_name: &str, exec: Exec) -> Result<TrainOutcome> {
    config.validate()?;
    fs::create_dir_all(out).map_err(|e| Error::file(out, e))?;
    let mut trainer = Trainer::new(config.setup())?.with_exec(exec);
    if config.trainer.checkpoint_every > 0 {
        trainer = trainer.with_checkpoint_dir(out.join("checkpoints"));
    }
    let (summary, failure) = match trainer.run() {
        Ok(s) => (s, None),
        Err(e) => (*e.partial, Some(e.error)),
    };
    let sink = MetricsSink::from_episodes(&summary.episodes, config.metrics.window, config.metrics.time_axis)?;
    let csv = out.join(csv_name);
    write_csv(&csv, sink.records())?;
    let dump = out.join("buffers.txt");
    fs::write(&dump, &summary.buffer_dump).map_err(|e| Error::file(&dump, e))?;
    match failure {
        Some(e) => Err(e),
        None => Ok(TrainOutcome { csv, summary }),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmResult {
    pub name: String,
    pub csvs: Vec<PathBuf>,
    pub finals: Vec<f64>,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub name: String,
    pub arms: Vec<ArmResult>,
}

impl ExperimentReport {
    pub fn failed(&self) -> bool {
        self.arms.iter().any(|a| !a.failures.is_empty())
    }

    /// Mean, std and median of the final windowed extrinsic reward per arm.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "suite: {}", self.name);
        let _ = writeln!(
            out,
            "{:<28} {:>6} {:>12} {:>12} {:>12} {:>8}",
            "arm", "seeds", "mean_final", "std_final", "median", "failed"
        );
        for a in &self.arms {
            let (m, s) = mean_std(a.finals.iter().copied());
            let _ = writeln!(
                out,
                "{:<28} {:>6} {:>12.6} {:>12.6} {:>12.6} {:>8}",
                a.name,
                a.finals.len(),
                m,
                s,
                median(&a.finals),
                a.failures.len()
            );
        }
        out
    }
}

/// Run every (arm, seed) pair, writing `out/<arm>/seed-<s>.csv` plus each
/// arm's effective config, and `out/summary.txt`. A failing run is recorded
/// and the others continue. Runs are spread over threads by `exec`; each run
/// trains with sequential gradient evaluation.
pub fn run_experiment(suite: &ExperimentSuite, out: &Path, exec: Exec) -> Result<ExperimentReport> {
    fs::create_dir_all(out).map_err(|e| Error::file(out, e))?;
    let mut jobs = Vec::new();
    for arm in &suite.arms {
        let dir = out.join(&arm.name);
        fs::create_dir_all(&dir).map_err(|e| Error::file(&dir, e))?;
        if let Some(&first) = suite.seeds.first() {
            let mut effective = suite.arm_config(arm, first)?;
            effective.output_dir = dir.clone();
            effective.save(&dir.join("config.toml"))?;
        }
        for &seed in &suite.seeds {
            jobs.push((arm, seed, dir.clone()));
        }
    }
    let results = exec.map(&jobs, |_, (arm, seed, dir)| -> Result<PathBuf> {
        let mut config = suite.arm_config(arm, *seed)?;
        config.output_dir = dir.clone();
        let run_dir = dir.join(format!("seed-{seed}"));
        let outcome = run_training(&config, &run_dir, "metrics.csv", Exec::Sequential)?;
        let csv = dir.join(format!("seed-{seed}.csv"));
        fs::copy(&outcome.csv, &csv).map_err(|e| Error::file(&csv, e))?;
        Ok(csv)
    });
    let mut arms: Vec<ArmResult> = suite
        .arms
        .iter()
        .map(|a| ArmResult {
            name: a.name.clone(),
            csvs: Vec::new(),
            finals: Vec::new(),
            failures: Vec::new(),
        })
        .collect();
    for ((arm, seed, _), result) in jobs.iter().zip(results) {
        let slot = arms
            .iter_mut()
            .find(|a| a.name == arm.name)
            .expect("every job belongs to an arm");
        match result.and_then(|csv| final_metric(&csv, "extrinsic_reward_mean").map(|v| (csv, v))) {
            Ok((csv, v)) => {
                slot.csvs.push(csv);
                slot.finals.push(v);
            }
            Err(e) => slot.failures.push(format!("seed {seed}: {e}")),
        }
    }
    let report = ExperimentReport {
        name: suite.name.clone(),
        arms,
    };
    let path = out.join("summary.txt");
    let mut text = report.table();
    for a in &report.arms {
        for f in &a.failures {
            let _ = writeln!(text, "{}: {f}", a.name);
        }
    }
    fs::write(&path, text).map_err(|e| Error::file(&path, e))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_arm_lists() {
        let s = ExperimentSuite::replay_frequency(RunConfig::default(), vec![0, 1]);
        let mus: Vec<f64> = s
            .arms
            .iter()
            .map(|a| s.arm_config(a, 0).unwrap().poer.replay_ratio)
            .collect();
        assert_eq!(mus, [0.0, 0.5, 1.0, 2.0]);
        let s = ExperimentSuite::drop_probability(RunConfig::default(), vec![0]);
        let pds: Vec<f64> = s
            .arms
            .iter()
            .map(|a| s.arm_config(a, 0).unwrap().poer.drop_probability)
            .collect();
        assert_eq!(pds, [1.0, 0.5, 0.0]);
        assert_eq!(ExperimentSuite::environments(RunConfig::default(), vec![0]).arms.len(), 4);
        assert!(ExperimentSuite::builtin(5, RunConfig::default(), vec![]).is_err());
    }

    #[test]
    fn arms_differ_only_in_swept_keys() {
        let base = RunConfig::default();
        let s = ExperimentSuite::prioritization(base.clone(), vec![3]);
        for arm in &s.arms {
            let mut c = s.arm_config(arm, 3).unwrap();
            c.poer.priority = base.poer.priority;
            c.seed = base.seed;
            assert_eq!(c, base);
        }
    }

    #[test]
    fn suite_toml_round_trip() {
        let s = ExperimentSuite::drop_probability(RunConfig::default(), vec![1, 2]);
        let back: ExperimentSuite = toml::from_str(&s.to_toml().unwrap()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn empty_suite_succeeds() {
        let dir = tempfile::tempdir().unwrap();
        let suite = ExperimentSuite {
            name: "empty".into(),
            seeds: vec![],
            base: RunConfig::default(),
            arms: vec![],
        };
        let report = run_experiment(&suite, dir.path(), Exec::Sequential).unwrap();
        assert!(report.arms.is_empty() && !report.failed());
        assert!(dir.path().join("summary.txt").exists());
    }
}
