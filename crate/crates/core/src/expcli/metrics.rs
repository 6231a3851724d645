use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trainer::EpisodeRecord;

/// What the `time_axis` column counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeAxis {
    #[default]
    Updates,
    Steps,
}

/// One CSV row, emitted per finished episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub time_axis: u64,
    pub updates: u64,
    pub steps: u64,
    pub extrinsic_reward_mean: f64,
    pub extrinsic_reward_std: f64,
    pub extrinsic_reward_per_step_mean: f64,
    pub extrinsic_reward_per_step_std: f64,
    pub extrinsic_value_per_step_mean: f64,
    pub extrinsic_value_per_step_std: f64,
}

pub const COLUMNS: [&str; 9] = [
    "time_axis",
    "updates",
    "steps",
    "extrinsic_reward_mean",
    "extrinsic_reward_std",
    "extrinsic_reward_per_step_mean",
    "extrinsic_reward_per_step_std",
    "extrinsic_value_per_step_mean",
    "extrinsic_value_per_step_std",
];

impl MetricsRecord {
    /// Value of a named column.
    pub fn get(&self, column: &str) -> Option<f64> {
        Some(match column {
            "time_axis" => self.time_axis as f64,
            "updates" => self.updates as f64,
            "steps" => self.steps as f64,
            "extrinsic_reward_mean" => self.extrinsic_reward_mean,
            "extrinsic_reward_std" => self.extrinsic_reward_std,
            "extrinsic_reward_per_step_mean" => self.extrinsic_reward_per_step_mean,
            "extrinsic_reward_per_step_std" => self.extrinsic_reward_per_step_std,
            "extrinsic_value_per_step_mean" => self.extrinsic_value_per_step_mean,
            "extrinsic_value_per_step_std" => self.extrinsic_value_per_step_std,
            _ => return None,
        })
    }
}

/// Mean and population standard deviation, two passes.
pub fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

/// Per-episode series with sliding-window statistics.
#[derive(Debug, Clone)]
pub struct MetricsSink {
    window: usize,
    axis: TimeAxis,
    recent: VecDeque<[f64; 3]>,
    records: Vec<MetricsRecord>,
}

impl MetricsSink {
    pub fn new(window: usize, axis: TimeAxis) -> Self {
        Self {
            window: window.max(1),
            axis,
            recent: VecDeque::new(),
            records: Vec::new(),
        }
    }

    /// Append one finished episode and return the row it produced.
    pub fn record(&mut self, ep: &EpisodeRecord) -> Result<&MetricsRecord> {
        let time = match self.axis {
            TimeAxis::Updates => ep.updates,
            TimeAxis::Steps => ep.steps,
        };
        if self.records.last().is_some_and(|r| r.time_axis > time) {
            return Err(Error::Usage(format!("time axis went backwards to {time}")));
        }
        let len = ep.length.max(1) as f64;
        self.recent
            .push_back([ep.total_reward, ep.total_reward / len, ep.value_ext_sum / len]);
        if self.recent.len() > self.window {
            self.recent.pop_front();
        }
        let col = |k: usize| mean_std(self.recent.iter().map(move |r| r[k]));
        let (rm, rs) = col(0);
        let (pm, ps) = col(1);
        let (vm, vs) = col(2);
        self.records.push(MetricsRecord {
            time_axis: time,
            updates: ep.updates,
            steps: ep.steps,
            extrinsic_reward_mean: rm,
            extrinsic_reward_std: rs,
            extrinsic_reward_per_step_mean: pm,
            extrinsic_reward_per_step_std: ps,
            extrinsic_value_per_step_mean: vm,
            extrinsic_value_per_step_std: vs,
        });
        Ok(self.records.last().expect("just pushed"))
    }

    pub fn records(&self) -> &[MetricsRecord] {
        &self.records
    }

    /// Rows for `episodes`, ordered by the chosen time axis.
    pub fn from_episodes(episodes: &[EpisodeRecord], window: usize, axis: TimeAxis) -> Result<Self> {
        let mut sorted = episodes.to_vec();
        match axis {
            TimeAxis::Updates => sorted.sort_by_key(|e| (e.updates, e.steps)),
            TimeAxis::Steps => sorted.sort_by_key(|e| e.steps),
        }
        let mut sink = Self::new(window, axis);
        for ep in &sorted {
            sink.record(ep)?;
        }
        Ok(sink)
    }
}

pub fn write_csv(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::file(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    if records.is_empty() {
        w.write_record(COLUMNS).map_err(|e| Error::format(path, e.to_string()))?;
    }
    for r in records {
        w.serialize(r).map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::file(path, e))
}

pub fn read_csv(path: &Path) -> Result<Vec<MetricsRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::file(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let header = r.headers().map_err(|e| Error::format(path, e.to_string()))?;
    if header.iter().ne(COLUMNS) {
        return Err(Error::format(path, format!("unexpected header {header:?}")));
    }
    r.deserialize()
        .map(|row| row.map_err(|e| Error::format(path, e.to_string())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn episode(reward: f64, length: usize, value: f64, t: u64) -> EpisodeRecord {
        EpisodeRecord {
            worker: 0,
            episode_id: t,
            total_reward: reward,
            length,
            value_ext_sum: value,
            truncated: false,
            steps: t * 10,
            updates: t,
        }
    }

    #[test]
    fn single_episode_arithmetic() {
        let mut sink = MetricsSink::new(50, TimeAxis::Updates);
        let r = *sink.record(&episode(1.0, 10, 2.0, 1)).unwrap();
        assert_eq!(r.extrinsic_reward_mean, 1.0);
        assert!((r.extrinsic_reward_per_step_mean - 0.1).abs() < 1e-15);
        assert!((r.extrinsic_value_per_step_mean - 0.2).abs() < 1e-15);
        assert_eq!(r.extrinsic_reward_std, 0.0);
    }

    #[test]
    fn constant_series_has_zero_std() {
        let mut sink = MetricsSink::new(5, TimeAxis::Steps);
        for t in 0..20 {
            sink.record(&episode(0.5, 4, 1.0, t)).unwrap();
        }
        assert!(sink.records().iter().all(|r| r.extrinsic_reward_std == 0.0));
        assert!(sink.record(&episode(0.5, 4, 1.0, 3)).is_err());
    }

    #[test]
    fn window_matches_reference_statistics() {
        use statrs::statistics::Statistics;
        let rewards: Vec<f64> = (0..120).map(|i| ((i * 37) % 11) as f64 * 0.3 - 1.0).collect();
        let mut sink = MetricsSink::new(50, TimeAxis::Updates);
        for (t, &r) in rewards.iter().enumerate() {
            let row = *sink.record(&episode(r, 3, 0.0, t as u64)).unwrap();
            let lo = (t + 1).saturating_sub(50);
            let w = &rewards[lo..=t];
            assert!((row.extrinsic_reward_mean - w.mean()).abs() < 1e-9);
            assert!((row.extrinsic_reward_std - w.population_std_dev()).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn csv_round_trips(rows in proptest::collection::vec((any::<u32>(), -1e6f64..1e6, 0.0f64..1e3), 0..30)) {
            let records: Vec<MetricsRecord> = rows.iter().enumerate().map(|(i, &(u, a, b))| MetricsRecord {
                time_axis: i as u64,
                updates: u as u64,
                steps: u as u64 * 3,
                extrinsic_reward_mean: a,
                extrinsic_reward_std: b,
                extrinsic_reward_per_step_mean: a / 7.0,
                extrinsic_reward_per_step_std: b / 3.0,
                extrinsic_value_per_step_mean: -a,
                extrinsic_value_per_step_std: b * 1e-9,
            }).collect();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("m.csv");
            write_csv(&path, &records).unwrap();
            prop_assert_eq!(read_csv(&path).unwrap(), records);
        }
    }
}
