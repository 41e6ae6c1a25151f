//! Simulated-user experiments for comparing bandit policies.
//!
//! A simulated user likes exactly one of `k` arms. With probability
//! `accuracy` its feedback is truthful: 1 for the liked arm, 0 for the
//! others; otherwise the answer is flipped. Each trial runs a fresh bandit
//! for a fixed number of steps and reports its cumulative reward normalized
//! by the expected reward of always pulling the liked arm,
//! `accuracy * steps`.
//!
//! Trials are seeded from `(master_seed, trial_index)` only, so results do
//! not depend on execution order or thread count.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::bandit::{BanditError, BanditState, Policy, DEFAULT_EPSILON};

pub const DEFAULT_ACCURACIES: [f64; 5] = [0.6, 0.7, 0.8, 0.9, 1.0];
pub const DEFAULT_STEPS: usize = 10;
pub const DEFAULT_REPETITIONS: usize = 100;
pub const DEFAULT_K: usize = 3;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error("unknown policy `{0}`")]
    UnknownPolicy(String),
    #[error(transparent)]
    Bandit(#[from] BanditError),
}

/// A learning policy or one of the two fixed reference bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OraclePolicy {
    Bandit(Policy),
    /// Always pulls the liked arm.
    AlwaysLiked,
    /// Always pulls the same arm the user does not like.
    AlwaysDisliked,
}

impl OraclePolicy {
    /// The six policies of the standard sweep.
    pub fn defaults() -> Vec<OraclePolicy> {
        vec![
            OraclePolicy::Bandit(Policy::Thompson),
            OraclePolicy::Bandit(Policy::Ucb1),
            OraclePolicy::Bandit(Policy::EpsilonGreedy {
                epsilon: DEFAULT_EPSILON,
            }),
            OraclePolicy::Bandit(Policy::UniformRandom),
            OraclePolicy::AlwaysLiked,
            OraclePolicy::AlwaysDisliked,
        ]
    }
}

impl fmt::Display for OraclePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OraclePolicy::Bandit(p) => p.fmt(f),
            OraclePolicy::AlwaysLiked => f.write_str("always_liked"),
            OraclePolicy::AlwaysDisliked => f.write_str("always_disliked"),
        }
    }
}

impl FromStr for OraclePolicy {
    type Err = OracleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "always_liked" => Ok(OraclePolicy::AlwaysLiked),
            "always_disliked" => Ok(OraclePolicy::AlwaysDisliked),
            other => other
                .parse()
                .map(OraclePolicy::Bandit)
                .map_err(|_| OracleError::UnknownPolicy(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleConfig {
    pub k_arms: usize,
    pub liked_arm: usize,
    pub accuracies: Vec<f64>,
    pub steps: usize,
    pub repetitions: usize,
    pub policies: Vec<OraclePolicy>,
    pub master_seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            k_arms: DEFAULT_K,
            liked_arm: 0,
            accuracies: DEFAULT_ACCURACIES.to_vec(),
            steps: DEFAULT_STEPS,
            repetitions: DEFAULT_REPETITIONS,
            policies: OraclePolicy::defaults(),
            master_seed: 0,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<(), OracleError> {
        let bad = |m: String| Err(OracleError::InvalidConfig(m));
        if self.k_arms < 2 {
            return bad(format!("k_arms must be at least 2, got {}", self.k_arms));
        }
        if self.liked_arm >= self.k_arms {
            return bad(format!("liked_arm {} >= k_arms {}", self.liked_arm, self.k_arms));
        }
        if self.steps == 0 || self.repetitions == 0 {
            return bad("steps and repetitions must be positive".into());
        }
        if self.accuracies.is_empty() || self.policies.is_empty() {
            return bad("need at least one accuracy and one policy".into());
        }
        if let Some(a) = self.accuracies.iter().find(|a| !(0.5..=1.0).contains(*a)) {
            return bad(format!("accuracy {a} outside [0.5, 1]"));
        }
        Ok(())
    }

    fn disliked_arm(&self) -> usize {
        (self.liked_arm + 1) % self.k_arms
    }
}

/// Simulated user feedback for one pull, 0 or 1.
pub fn oracle_feedback<R: Rng + ?Sized>(liked: usize, pulled: usize, accuracy: f64, rng: &mut R) -> f64 {
    let truthful = rng.random::<f64>() < accuracy;
    if truthful == (pulled == liked) {
        1.0
    } else {
        0.0
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed of trial `trial_index` under `master_seed`.
pub fn trial_seed(master_seed: u64, trial_index: u64) -> u64 {
    splitmix(master_seed ^ splitmix(trial_index))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialResult {
    pub policy: String,
    pub accuracy: f64,
    pub rewards: Vec<f64>,
    pub arms: Vec<usize>,
    pub normalized: f64,
}

/// Runs one trial of `steps` pulls.
pub fn run_trial(
    policy: OraclePolicy,
    accuracy: f64,
    config: &OracleConfig,
    trial_index: u64,
) -> Result<TrialResult, OracleError> {
    let seed = trial_seed(config.master_seed, trial_index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bandit = match policy {
        OraclePolicy::Bandit(p) => Some(BanditState::new(config.k_arms, p, seed)?),
        _ => None,
    };
    let mut rewards = Vec::with_capacity(config.steps);
    let mut arms = Vec::with_capacity(config.steps);
    for _ in 0..config.steps {
        let arm = match (&bandit, policy) {
            (Some(b), _) => b.select_arm(&mut rng)?,
            (None, OraclePolicy::AlwaysLiked) => config.liked_arm,
            (None, _) => config.disliked_arm(),
        };
        let reward = oracle_feedback(config.liked_arm, arm, accuracy, &mut rng);
        if let Some(b) = bandit.as_mut() {
            b.update(arm, reward)?;
        }
        rewards.push(reward);
        arms.push(arm);
    }
    let total: f64 = rewards.iter().sum();
    Ok(TrialResult {
        policy: policy.to_string(),
        accuracy,
        normalized: total / (accuracy * config.steps as f64),
        rewards,
        arms,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentRow {
    pub policy: String,
    pub accuracy: f64,
    pub repetitions: usize,
    pub steps: usize,
    pub mean_normalized: f64,
    /// Sample standard deviation; `None` with a single repetition.
    pub std_normalized: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentTable {
    pub rows: Vec<ExperimentRow>,
}

/// Runs every policy at every accuracy. Rows are sorted by policy name, then
/// accuracy.
pub fn run_experiment(config: &OracleConfig) -> Result<ExperimentTable, OracleError> {
    config.validate()?;
    let conditions: Vec<(OraclePolicy, f64)> = config
        .policies
        .iter()
        .flat_map(|p| config.accuracies.iter().map(move |a| (*p, *a)))
        .collect();
    let mut rows = conditions
        .par_iter()
        .map(|&(policy, accuracy)| {
            let scores = (0..config.repetitions as u64)
                .into_par_iter()
                .map(|i| run_trial(policy, accuracy, config, i).map(|t| t.normalized))
                .collect::<Result<Vec<f64>, _>>()?;
            let n = scores.len() as f64;
            let mean = scores.iter().sum::<f64>() / n;
            let std = (scores.len() > 1).then(|| {
                (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            });
            Ok(ExperimentRow {
                policy: policy.to_string(),
                accuracy,
                repetitions: config.repetitions,
                steps: config.steps,
                mean_normalized: mean,
                std_normalized: std,
                seed: config.master_seed,
            })
        })
        .collect::<Result<Vec<_>, OracleError>>()?;
    rows.sort_by(|a, b| {
        a.policy
            .cmp(&b.policy)
            .then(a.accuracy.total_cmp(&b.accuracy))
    });
    Ok(ExperimentTable { rows })
}

pub const CSV_HEADER: &str = "policy,accuracy,repetitions,steps,mean_normalized,std_normalized,seed";

impl ExperimentTable {
    pub fn get(&self, policy: &str, accuracy: f64) -> Option<&ExperimentRow> {
        self.rows
            .iter()
            .find(|r| r.policy == policy && r.accuracy == accuracy)
    }

    /// CSV with a header line. A missing std is written as an empty cell.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let std = r.std_normalized.map(|s| format!("{s:.6}")).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{:?},{},{},{:.6},{},{}",
                r.policy, r.accuracy, r.repetitions, r.steps, r.mean_normalized, std, r.seed
            );
        }
        out
    }

    /// `{"series":[{"policy":..,"points":[[accuracy, mean], ..]}, ..]}`
    pub fn to_plot_json(&self) -> String {
        let mut series: Vec<serde_json::Value> = Vec::new();
        let mut current: Option<(String, Vec<serde_json::Value>)> = None;
        for r in &self.rows {
            match &mut current {
                Some((p, pts)) if *p == r.policy => {
                    pts.push(serde_json::json!([r.accuracy, r.mean_normalized]))
                }
                _ => {
                    if let Some((p, pts)) = current.take() {
                        series.push(serde_json::json!({"policy": p, "points": pts}));
                    }
                    current = Some((
                        r.policy.clone(),
                        vec![serde_json::json!([r.accuracy, r.mean_normalized])],
                    ));
                }
            }
        }
        if let Some((p, pts)) = current {
            series.push(serde_json::json!({"policy": p, "points": pts}));
        }
        let mut out = serde_json::to_string_pretty(&serde_json::json!({ "series": series }))
            .expect("plot json serializes");
        out.push('\n');
        out
    }

    /// Policy × accuracy grid of mean normalized rewards.
    pub fn render(&self) -> String {
        let mut accuracies: Vec<f64> = self.rows.iter().map(|r| r.accuracy).collect();
        accuracies.sort_by(f64::total_cmp);
        accuracies.dedup();
        let mut policies: Vec<&str> = self.rows.iter().map(|r| r.policy.as_str()).collect();
        policies.dedup();
        let width = policies.iter().map(|p| p.len()).max().unwrap_or(6).max(6);
        let mut out = format!("{:<width$}", "policy");
        for a in &accuracies {
            let _ = write!(out, "  {:>7}", format!("{a:.2}"));
        }
        out.push('\n');
        for p in policies {
            let _ = write!(out, "{p:<width$}");
            for a in &accuracies {
                match self.get(p, *a) {
                    Some(r) => {
                        let _ = write!(out, "  {:>7.3}", r.mean_normalized);
                    }
                    None => out.push_str("        -"),
                }
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(oracle_feedback(0, 0, 1.0, &mut rng), 1.0);
            assert_eq!(oracle_feedback(0, 1, 1.0, &mut rng), 0.0);
        }
    }

    #[test]
    fn noisy_oracle_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 10_000;
        let liked: f64 = (0..n).map(|_| oracle_feedback(0, 0, 0.6, &mut rng)).sum();
        assert!((liked / n as f64 - 0.6).abs() <= 0.015);
        let other: f64 = (0..n).map(|_| oracle_feedback(0, 2, 0.6, &mut rng)).sum();
        assert!((other / n as f64 - 0.4).abs() <= 0.015);
    }

    #[test]
    fn reference_bounds_are_exact_at_full_accuracy() {
        let cfg = OracleConfig::default();
        for i in 0..20 {
            assert_eq!(run_trial(OraclePolicy::AlwaysLiked, 1.0, &cfg, i).unwrap().normalized, 1.0);
            assert_eq!(run_trial(OraclePolicy::AlwaysDisliked, 1.0, &cfg, i).unwrap().normalized, 0.0);
        }
    }

    #[test]
    fn trial_shape() {
        let cfg = OracleConfig::default();
        let t = run_trial(OraclePolicy::Bandit(Policy::Thompson), 0.8, &cfg, 4).unwrap();
        assert_eq!(t.rewards.len(), 10);
        let expected = t.rewards.iter().sum::<f64>() / (0.8 * 10.0);
        assert_eq!(t.normalized, expected);
        assert_eq!(t, run_trial(OraclePolicy::Bandit(Policy::Thompson), 0.8, &cfg, 4).unwrap());
    }

    #[test]
    fn single_repetition_has_no_std() {
        let cfg = OracleConfig {
            repetitions: 1,
            ..Default::default()
        };
        let table = run_experiment(&cfg).unwrap();
        assert_eq!(table.rows.len(), 30);
        assert!(table.rows.iter().all(|r| r.std_normalized.is_none()));
        let csv = table.to_csv();
        assert!(csv.lines().nth(1).unwrap().contains(",,"));
    }

    #[test]
    fn default_table_is_six_by_five() {
        let table = run_experiment(&OracleConfig::default()).unwrap();
        assert_eq!(table.rows.len(), 30);
        assert!(table.get("always_liked", 0.6).is_some());
        assert!(table.get("always_disliked", 1.0).is_some());
        assert!(table.get("epsilon_greedy:0.2", 0.8).is_some());
        let mut sorted = table.rows.clone();
        sorted.sort_by(|a, b| a.policy.cmp(&b.policy).then(a.accuracy.total_cmp(&b.accuracy)));
        assert_eq!(sorted, table.rows);
        let plot: serde_json::Value = serde_json::from_str(&table.to_plot_json()).unwrap();
        assert_eq!(plot["series"].as_array().unwrap().len(), 6);
        assert_eq!(plot["series"][0]["points"].as_array().unwrap().len(), 5);
    }

    #[test]
    fn same_seed_same_csv() {
        let cfg = OracleConfig {
            master_seed: 7,
            ..Default::default()
        };
        assert_eq!(
            run_experiment(&cfg).unwrap().to_csv(),
            run_experiment(&cfg).unwrap().to_csv()
        );
    }

    #[test]
    fn config_validation() {
        let bad = |f: fn(&mut OracleConfig)| {
            let mut c = OracleConfig::default();
            f(&mut c);
            c.validate().is_err()
        };
        assert!(bad(|c| c.liked_arm = 3));
        assert!(bad(|c| c.accuracies = vec![0.4]));
        assert!(bad(|c| c.steps = 0));
        assert!(bad(|c| c.policies.clear()));
        assert!(OracleConfig::default().validate().is_ok());
    }

    #[test]
    fn policy_names() {
        for p in OraclePolicy::defaults() {
            assert_eq!(p.to_string().parse::<OraclePolicy>().unwrap(), p);
        }
        assert!("bogus".parse::<OraclePolicy>().is_err());
    }
}
