use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use statrs::distribution::{ContinuousCDF, Normal};

use super::metrics::read_csv;
use crate::error::{Error, Result};

pub const MIN_SEEDS: usize = 5;

/// Result of a Mann–Whitney U test of `a` against `b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankTest {
    /// U statistic of the first sample.
    pub u: f64,
    /// Two-sided p-value.
    pub p_two_sided: f64,
    /// P-value of the alternative "first sample tends to be larger".
    pub p_greater: f64,
    pub exact: bool,
}

/// Number of ways to reach each U with `m` and `n` untied observations.
fn u_counts(m: usize, n: usize) -> Vec<f64> {
    // table[j][u] for the current m, built up one observation at a time
    let mut prev: Vec<Vec<f64>> = (0..=n).map(|_| vec![1.0]).collect();
    for i in 1..=m {
        let mut cur: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
        cur.push(vec![1.0]);
        for j in 1..=n {
            let size = i * j + 1;
            let mut row = vec![0.0; size];
            // last of the pooled order is from sample one (adds j) or two
            for (u, c) in prev[j].iter().enumerate() {
                row[u + j] += c;
            }
            for (u, c) in cur[j - 1].iter().enumerate() {
                row[u] += c;
            }
            cur.push(row);
        }
        prev = cur;
    }
    prev.pop().expect("n + 1 rows")
}

/// Two-sample rank test. Exact when there are no ties and the samples are
/// small, normal approximation with tie and continuity correction otherwise.
pub fn mann_whitney(a: &[f64], b: &[f64]) -> Result<RankTest> {
    let (m, n) = (a.len(), b.len());
    if m == 0 || n == 0 {
        return Err(Error::Insufficient("rank test needs two non-empty samples".into()));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::Numerical("rank test input contains NaN".into()));
    }
    let u: f64 = a
        .iter()
        .map(|x| {
            b.iter()
                .map(|y| match x.partial_cmp(y).expect("no NaN") {
                    std::cmp::Ordering::Greater => 1.0,
                    std::cmp::Ordering::Equal => 0.5,
                    std::cmp::Ordering::Less => 0.0,
                })
                .sum::<f64>()
        })
        .sum();
    let mut pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    pooled.sort_by(|x, y| x.partial_cmp(y).expect("no NaN"));
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        while j + 1 < pooled.len() && pooled[j + 1] == pooled[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let (mf, nf) = (m as f64, n as f64);
    if tie_term == 0.0 && m * n <= 400 {
        let counts = u_counts(m, n);
        let total: f64 = counts.iter().sum();
        let k = u as usize;
        let le = counts[..=k].iter().sum::<f64>() / total;
        let ge = counts[k..].iter().sum::<f64>() / total;
        return Ok(RankTest {
            u,
            p_two_sided: (2.0 * le.min(ge)).min(1.0),
            p_greater: ge,
            exact: true,
        });
    }
    let mean = mf * nf / 2.0;
    let big_n = mf + nf;
    let var = mf * nf / 12.0 * ((big_n + 1.0) - tie_term / (big_n * (big_n - 1.0)));
    let std_normal = Normal::new(0.0, 1.0).expect("valid");
    if var <= 0.0 {
        // every observation tied
        return Ok(RankTest {
            u,
            p_two_sided: 1.0,
            p_greater: 1.0,
            exact: false,
        });
    }
    let sd = var.sqrt();
    let diff = u - mean;
    let z_two = ((diff.abs() - 0.5).max(0.0)) / sd;
    let z_greater = (diff - 0.5) / sd;
    Ok(RankTest {
        u,
        p_two_sided: (2.0 * (1.0 - std_normal.cdf(z_two))).min(1.0),
        p_greater: 1.0 - std_normal.cdf(z_greater),
        exact: false,
    })
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|x, y| x.total_cmp(y));
    let k = v.len() / 2;
    if v.len() % 2 == 1 {
        v[k]
    } else {
        (v[k - 1] + v[k]) / 2.0
    }
}

/// CSV files of one arm, one per seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmFiles {
    pub name: String,
    pub files: Vec<PathBuf>,
}

impl ArmFiles {
    /// Every `*.csv` directly inside `dir`, named after the directory.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let entries = std::fs::read_dir(dir).map_err(|e| Error::file(dir, e))?;
        let mut files = Vec::new();
        for entry in entries {
            let path = entry.map_err(|e| Error::file(dir, e))?.path();
            if path.extension().is_some_and(|x| x == "csv") {
                files.push(path);
            }
        }
        files.sort();
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        Ok(Self { name, files })
    }
}

/// Final value of `metric` in one CSV: its last row, or 0 when the run
/// finished no episode.
pub fn final_metric(path: &Path, metric: &str) -> Result<f64> {
    let rows = read_csv(path)?;
    match rows.last() {
        None => Ok(0.0),
        Some(r) => r
            .get(metric)
            .ok_or_else(|| Error::Usage(format!("unknown metric '{metric}'"))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmSummary {
    pub name: String,
    pub finals: Vec<f64>,
    pub median: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairComparison {
    pub a: String,
    pub b: String,
    pub test: RankTest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub metric: String,
    pub arms: Vec<ArmSummary>,
    pub pairs: Vec<PairComparison>,
}

impl ComparisonReport {
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "metric: {}", self.metric);
        let _ = writeln!(out, "{:<24} {:>6} {:>14}", "arm", "seeds", "median_final");
        for a in &self.arms {
            let _ = writeln!(out, "{:<24} {:>6} {:>14.6}", a.name, a.finals.len(), a.median);
        }
        for p in &self.pairs {
            let _ = writeln!(
                out,
                "{} vs {}: U={} p(two-sided)={:.4} p({} > {})={:.4}{}",
                p.a,
                p.b,
                p.test.u,
                p.test.p_two_sided,
                p.a,
                p.b,
                p.test.p_greater,
                if p.test.exact { " exact" } else { "" }
            );
        }
        out
    }
}

/// Median final metric per arm and a rank test for each `(i, j)` pair of
/// arm indices. With no pairs given, every arm is tested against the first.
pub fn compare_arms(arms: &[ArmFiles], metric: &str, pairs: &[(usize, usize)]) -> Result<ComparisonReport> {
    if arms.len() < 2 {
        return Err(Error::Insufficient(format!("need at least 2 arms, got {}", arms.len())));
    }
    let mut summaries = Vec::with_capacity(arms.len());
    for arm in arms {
        if arm.files.len() < MIN_SEEDS {
            return Err(Error::Insufficient(format!(
                "arm '{}' has {} seeds; at least {MIN_SEEDS} are required",
                arm.name,
                arm.files.len()
            )));
        }
        let finals = arm
            .files
            .iter()
            .map(|f| final_metric(f, metric))
            .collect::<Result<Vec<_>>>()?;
        summaries.push(ArmSummary {
            name: arm.name.clone(),
            median: median(&finals),
            finals,
        });
    }
    let default_pairs: Vec<(usize, usize)> = (1..arms.len()).map(|j| (j, 0)).collect();
    let chosen = if pairs.is_empty() { &default_pairs[..] } else { pairs };
    let mut out = Vec::with_capacity(chosen.len());
    for &(i, j) in chosen {
        let (a, b) = match (summaries.get(i), summaries.get(j)) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(Error::Usage(format!("no arm pair ({i}, {j})"))),
        };
        out.push(PairComparison {
            a: a.name.clone(),
            b: b.name.clone(),
            test: mann_whitney(&a.finals, &b.finals)?,
        });
    }
    Ok(ComparisonReport {
        metric: metric.to_string(),
        arms: summaries,
        pairs: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute force over every split of the pooled ranks.
    fn brute_p_greater(m: usize, n: usize, u_obs: f64) -> f64 {
        let total = m + n;
        let (mut hits, mut all) = (0u64, 0u64);
        for mask in 0u32..(1 << total) {
            if mask.count_ones() as usize != m {
                continue;
            }
            let mut u = 0.0;
            for i in 0..total {
                if mask >> i & 1 == 1 {
                    u += (0..total).filter(|&j| mask >> j & 1 == 0 && j < i).count() as f64;
                }
            }
            all += 1;
            if u >= u_obs {
                hits += 1;
            }
        }
        hits as f64 / all as f64
    }

    #[test]
    fn exact_distribution_matches_enumeration() {
        let a = [3.1, 4.0, 9.5, 7.2, 6.6];
        let b = [1.0, 2.5, 5.0, 0.1, 8.8, 2.0];
        let t = mann_whitney(&a, &b).unwrap();
        assert!(t.exact);
        assert!((t.p_greater - brute_p_greater(5, 6, t.u)).abs() < 1e-12);
        let c = u_counts(5, 6);
        assert_eq!(c.iter().sum::<f64>(), 462.0);
    }

    #[test]
    fn identical_samples_give_p_one() {
        let a = [0.0, 1.0, 0.5, 0.25, 1.0];
        let t = mann_whitney(&a, &a).unwrap();
        assert!((t.p_two_sided - 1.0).abs() < 1e-12);
        let zeros = [0.0; 5];
        assert_eq!(mann_whitney(&zeros, &zeros).unwrap().p_two_sided, 1.0);
    }

    #[test]
    fn shifted_sample_is_detected() {
        let a: Vec<f64> = (0..8).map(|i| i as f64 + 10.0).collect();
        let b: Vec<f64> = (0..8).map(|i| i as f64 * 0.9).collect();
        let t = mann_whitney(&a, &b).unwrap();
        assert!(t.p_two_sided < 0.05 && t.p_greater < 0.05);
        assert!(mann_whitney(&b, &a).unwrap().p_greater > 0.95);
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
