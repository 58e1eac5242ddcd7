//! Session configuration and deterministic rng derivation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::graph_layout::{LayoutError, LayoutParams};
use crate::profiling::LearningParams;
use crate::recommender::RecommenderParams;
use crate::scoring::{ScoringError, WeightTable};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Weights(#[from] ScoringError),
    #[error("{0}")]
    Layout(#[from] LayoutError),
    #[error("{field} = {value} is out of range: {rule}")]
    OutOfRange {
        field: &'static str,
        value: f64,
        rule: &'static str,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub seed: u64,
    pub weights: WeightTable,
    /// Minimum cosine for a user-similarity edge.
    pub theta_sim: f64,
    /// Score at which a (user, image) pair counts as engaged.
    pub theta_engaged: f64,
    /// EMA rate of strategy-weight learning.
    pub alpha: f64,
    /// Lower bound on each learned strategy weight.
    pub strategy_floor: f64,
    pub pairing_ttl_secs: u64,
    /// Colour propagation steps applied after each layout run.
    pub color_iters: usize,
    pub recommender: RecommenderParams,
    pub layout: LayoutParams,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            weights: WeightTable::default(),
            theta_sim: 0.15,
            theta_engaged: 4.0,
            alpha: 0.2,
            strategy_floor: 0.05,
            pairing_ttl_secs: 300,
            color_iters: 50,
            recommender: RecommenderParams::default(),
            layout: LayoutParams::default(),
        }
    }
}

impl SessionConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.weights.validate()?;
        self.layout.validate()?;
        let check = |field, value: f64, ok: bool, rule| {
            if ok {
                Ok(())
            } else {
                Err(ConfigError::OutOfRange { field, value, rule })
            }
        };
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        let r = &self.recommender;
        check("recommender.epsilon", r.epsilon, unit(r.epsilon), "must lie in [0, 1]")?;
        check("theta_sim", self.theta_sim, unit(self.theta_sim), "must lie in [0, 1]")?;
        check(
            "theta_engaged",
            self.theta_engaged,
            self.theta_engaged > 0.0 && self.theta_engaged <= self.weights.score_max,
            "must lie in (0, score_max]",
        )?;
        check("alpha", self.alpha, self.alpha > 0.0 && self.alpha <= 1.0, "must lie in (0, 1]")?;
        check(
            "strategy_floor",
            self.strategy_floor,
            self.strategy_floor >= 0.0 && 3.0 * self.strategy_floor <= 1.0 - r.epsilon,
            "must lie in [0, (1 - epsilon) / 3]",
        )?;
        check(
            "recommender.popularity_weight",
            r.popularity_weight,
            r.popularity_weight.is_finite() && r.popularity_weight >= 0.0,
            "must be non-negative",
        )?;
        check(
            "recommender.recency_penalty",
            r.recency_penalty,
            r.recency_penalty.is_finite() && r.recency_penalty <= 0.0,
            "must be non-positive",
        )?;
        check(
            "recommender.queue_len",
            r.queue_len as f64,
            r.queue_len > 0,
            "must be positive",
        )?;
        Ok(())
    }

    pub fn learning(&self) -> LearningParams {
        LearningParams {
            alpha: self.alpha,
            floor: self.strategy_floor,
            random_rate: self.recommender.epsilon,
        }
    }
}

/// Independent ChaCha stream for (seed, label, counter).
pub fn derive_rng(seed: u64, label: &str, counter: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    h.update(counter.to_le_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn default_is_valid() {
        SessionConfig::default().validate().unwrap();
    }

    #[test]
    fn epsilon_out_of_range() {
        let err = SessionConfig::from_json(r#"{"recommender":{"epsilon":1.5}}"#).unwrap_err();
        assert!(matches!(err, ConfigError::OutOfRange { field: "recommender.epsilon", .. }));
    }

    #[test]
    fn unknown_field_rejected() {
        assert!(SessionConfig::from_json(r#"{"sede":1}"#).is_err());
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c = SessionConfig::from_json(r#"{"seed":7,"theta_sim":0.5}"#).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.theta_sim, 0.5);
        assert_eq!(c.recommender, RecommenderParams::default());
    }

    #[test]
    fn floor_bound() {
        let c = SessionConfig {
            strategy_floor: 0.34,
            ..SessionConfig::default()
        };
        assert!(c.validate().is_err());
        // 0.31 fits alone but not beside the default epsilon of 0.1
        let c = SessionConfig {
            strategy_floor: 0.31,
            ..SessionConfig::default()
        };
        assert!(c.validate().is_err());
        let c = SessionConfig {
            strategy_floor: 0.3,
            ..SessionConfig::default()
        };
        assert!(c.validate().is_ok());
    }

    #[test]
    fn rng_streams_are_separate_and_stable() {
        let draw = |label, n| derive_rng(42, label, n).random::<u64>();
        assert_eq!(draw("a", 0), draw("a", 0));
        assert_ne!(draw("a", 0), draw("a", 1));
        assert_ne!(draw("a", 0), draw("b", 0));
        // length prefix keeps ("ab", …) and ("a", …) apart
        assert_ne!(derive_rng(1, "ab", 0).random::<u64>(), derive_rng(1, "a", 0).random::<u64>());
    }
}
