use serde::{Deserialize, Serialize};

use crate::combiner::ScoringMode;
use crate::dataset::Task;
use crate::error::{Error, Result};
use crate::proxy_selector::AnnealSchedule;

/// Instances per gradient work unit. Fixed so the reduction order, and hence
/// every bit of the result, is independent of the thread count.
pub const GRAD_CHUNK: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Upper bound on epochs; early stopping may end sooner.
    pub epochs: usize,
    pub negatives: usize,
    pub margin: f64,
    pub lambda_dist: f64,
    pub lambda_orthog: f64,
    pub num_proxies: usize,
    pub dim: usize,
    pub max_len: usize,
    pub anneal: AnnealSchedule,
    /// When false the temperature stays at `anneal.initial`.
    pub anneal_enabled: bool,
    pub seed: u64,
    pub mode: ScoringMode,
    pub task: Task,
    pub patience: usize,
    pub known_user_ratio: f64,
    pub min_user_sessions: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            batch_size: 128,
            epochs: 30,
            negatives: 10,
            margin: 0.5,
            lambda_dist: 0.1,
            lambda_orthog: 0.1,
            num_proxies: 100,
            dim: 64,
            max_len: 50,
            anneal: AnnealSchedule::default(),
            anneal_enabled: true,
            seed: 0,
            mode: ScoringMode::Full,
            task: Task::Unseen,
            patience: 10,
            known_user_ratio: 0.0,
            min_user_sessions: 10,
        }
    }
}

impl TrainConfig {
    pub fn semi_supervised(&self) -> bool {
        self.known_user_ratio > 0.0
    }

    pub fn temperature(&self, epoch: usize) -> f64 {
        if self.anneal_enabled {
            crate::proxy_selector::temperature(epoch, &self.anneal)
        } else {
            self.anneal.initial
        }
    }

    /// Every violated constraint, not just the first.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.learning_rate > 0.0) {
            errs.push(format!("learning_rate must be > 0 (got {})", self.learning_rate));
        }
        if !(self.margin > 0.0) {
            errs.push(format!("margin must be > 0 (got {})", self.margin));
        }
        if !(self.lambda_dist >= 0.0) {
            errs.push(format!("lambda_dist must be >= 0 (got {})", self.lambda_dist));
        }
        if !(self.lambda_orthog >= 0.0) {
            errs.push(format!("lambda_orthog must be >= 0 (got {})", self.lambda_orthog));
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("negatives", self.negatives),
            ("num_proxies", self.num_proxies),
            ("dim", self.dim),
            ("max_len", self.max_len),
            ("patience", self.patience),
        ] {
            if v == 0 {
                errs.push(format!("{name} must be >= 1"));
            }
        }
        if !(0.0..=1.0).contains(&self.known_user_ratio) {
            errs.push(format!(
                "known_user_ratio must lie in [0, 1] (got {})",
                self.known_user_ratio
            ));
        }
        if let Err(e) = self.anneal.validate() {
            errs.push(e);
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn all_violations_reported() {
        let cfg = TrainConfig {
            margin: 0.0,
            lambda_dist: -1.0,
            batch_size: 0,
            ..TrainConfig::default()
        };
        match cfg.validate() {
            Err(Error::Config(v)) => assert_eq!(v.len(), 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn pinned_temperature() {
        let cfg = TrainConfig {
            anneal_enabled: false,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.temperature(0), 3.0);
        assert_eq!(cfg.temperature(25), 3.0);
        assert_eq!(TrainConfig::default().temperature(25), 0.01);
    }
}
