//! Seeded Monte Carlo execution over a bounded worker pool.
//!
//! Trajectory `i` draws from the stream `(master seed, i)` only, results come
//! back in index order and every reduction below is either integer-valued or
//! folded sequentially in index order, so summaries do not depend on the
//! worker count.

use std::collections::BTreeMap;
use std::time::Duration;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};

/// Evaluates `f(0..n)` on `workers` threads and returns results in index order.
pub fn run_indexed<T, F>(n: u64, workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    if workers == 0 {
        return Err(Error::Config("workers must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
    Ok(pool.install(|| (0..n).into_par_iter().map(&f).collect()))
}

/// Result of one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStats {
    pub index: u64,
    pub seed: u64,
    /// Outcome label, `None` when undecided or failed.
    pub outcome: Option<String>,
    pub steps: u64,
    /// Audit checks run and failed on this trajectory.
    pub audits_run: u64,
    pub audits_failed: u64,
    /// Error message when the trajectory failed.
    pub failure: Option<String>,
    /// Excluded from every written file.
    pub wall_time: Duration,
}

impl TrajectoryStats {
    pub fn new(index: u64, seed: u64) -> Self {
        Self {
            index,
            seed,
            outcome: None,
            steps: 0,
            audits_run: 0,
            audits_failed: 0,
            failure: None,
            wall_time: Duration::ZERO,
        }
    }

    pub fn failed(index: u64, seed: u64, message: impl Into<String>) -> Self {
        Self {
            failure: Some(message.into()),
            ..Self::new(index, seed)
        }
    }
}

/// Commutative monoid over trajectory results; all counters are integers.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Tally {
    pub trajectories: u64,
    pub outcomes: BTreeMap<String, u64>,
    pub undecided: u64,
    pub failures: u64,
    pub total_steps: u64,
    pub audits_run: u64,
    pub audits_failed: u64,
}

impl Tally {
    pub fn of(stats: &TrajectoryStats) -> Self {
        let mut t = Tally {
            trajectories: 1,
            total_steps: stats.steps,
            audits_run: stats.audits_run,
            audits_failed: stats.audits_failed,
            ..Default::default()
        };
        if stats.failure.is_some() {
            t.failures = 1;
        } else {
            match &stats.outcome {
                Some(label) => {
                    t.outcomes.insert(label.clone(), 1);
                }
                None => t.undecided = 1,
            }
        }
        t
    }

    pub fn merge(mut self, other: Tally) -> Tally {
        self.trajectories += other.trajectories;
        self.undecided += other.undecided;
        self.failures += other.failures;
        self.total_steps += other.total_steps;
        self.audits_run += other.audits_run;
        self.audits_failed += other.audits_failed;
        for (k, v) in other.outcomes {
            *self.outcomes.entry(k).or_default() += v;
        }
        self
    }

    pub fn count(&self, label: &str) -> u64 {
        self.outcomes.get(label).copied().unwrap_or(0)
    }

    /// Frequency of `label` among all trajectories with a 3-sigma interval.
    pub fn frequency(&self, label: &str) -> Frequency {
        Frequency::new(self.count(label), self.trajectories)
    }
}

/// Binomial frequency with a normal-approximation interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Frequency {
    pub hits: u64,
    pub total: u64,
    pub value: f64,
    pub std_error: f64,
}

impl Frequency {
    pub fn new(hits: u64, total: u64) -> Self {
        let n = total.max(1) as f64;
        let value = hits as f64 / n;
        Self {
            hits,
            total,
            value,
            std_error: (value * (1.0 - value) / n).sqrt(),
        }
    }

    /// Whether `p` lies within `k` binomial deviations computed at `p`.
    pub fn consistent_with(&self, p: f64, k: f64) -> bool {
        let sigma = (p * (1.0 - p) / self.total.max(1) as f64).sqrt();
        (self.value - p).abs() <= k * sigma + 1e-15
    }
}

/// Runs `n` trajectories and folds their tallies.
pub fn run_ensemble<F>(n: u64, workers: usize, f: F) -> Result<(Tally, Vec<TrajectoryStats>)>
where
    F: Fn(u64) -> TrajectoryStats + Sync + Send,
{
    if n == 0 {
        return Err(Error::Config(
            "an ensemble needs at least one trajectory".into(),
        ));
    }
    let stats = run_indexed(n, workers, f)?;
    let tally = stats
        .iter()
        .map(Tally::of)
        .fold(Tally::default(), Tally::merge);
    Ok((tally, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    fn coin(i: u64) -> TrajectoryStats {
        let mut rng = stream(9, i);
        let mut s = TrajectoryStats::new(i, 9);
        s.steps = rng.random_range(0..100);
        match rng.random_range(0..4) {
            0 => s.failure = Some("boom".into()),
            1 => {}
            _ => s.outcome = Some(if rng.random::<bool>() { "a" } else { "b" }.into()),
        }
        s
    }

    #[test]
    fn results_do_not_depend_on_worker_count() {
        let (t1, s1) = run_ensemble(500, 1, coin).unwrap();
        let (t8, s8) = run_ensemble(500, 8, coin).unwrap();
        assert_eq!(t1, t8);
        assert_eq!(s1, s8);
        assert_eq!(t1.trajectories, 500);
        assert_eq!(
            t1.count("a") + t1.count("b") + t1.undecided + t1.failures,
            500
        );
    }

    #[test]
    fn merge_is_commutative_and_associative() {
        let parts: Vec<Tally> = (0..30).map(|i| Tally::of(&coin(i))).collect();
        let forward = parts.iter().cloned().fold(Tally::default(), Tally::merge);
        let backward = parts
            .iter()
            .rev()
            .cloned()
            .fold(Tally::default(), Tally::merge);
        assert_eq!(forward, backward);
        let (a, b) = parts.split_at(13);
        let left = a.iter().cloned().fold(Tally::default(), Tally::merge);
        let right = b.iter().cloned().fold(Tally::default(), Tally::merge);
        assert_eq!(left.merge(right), forward);
    }

    #[test]
    fn zero_workers_rejected() {
        assert!(run_indexed(3, 0, |i| i).is_err());
        assert!(run_ensemble(0, 1, coin).is_err());
    }

    #[test]
    fn frequency_interval() {
        let f = Frequency::new(30, 100);
        assert!((f.value - 0.3).abs() < 1e-15);
        assert!(f.consistent_with(0.3, 3.0));
        assert!(!f.consistent_with(0.8, 3.0));
    }
}
