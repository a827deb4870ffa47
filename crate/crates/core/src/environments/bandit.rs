use serde::{Deserialize, Serialize};

use super::{Observation, StepOutcome};
use crate::error::{Error, Result};
use crate::factored_actions::FactoredActionSpace;

/// One-step task: every composite action pays its table entry and ends the
/// episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompositeBanditConfig {
    pub factor_sizes: Vec<usize>,
    pub reward_table: Vec<f64>,
    pub seed: u64,
}

impl Default for CompositeBanditConfig {
    /// Additive main effects over the 3 x 3 x 2 space, best arm (1, 2, 1) = 11.
    fn default() -> Self {
        let h = [0.0, 0.5, 0.2];
        let v = [0.1, 0.0, 0.6];
        let f = [0.0, 0.3];
        let reward_table = (0..18).map(|i| h[i / 6] + v[(i / 2) % 3] + f[i % 2]).collect();
        CompositeBanditConfig {
            factor_sizes: vec![3, 3, 2],
            reward_table,
            seed: 0,
        }
    }
}

impl CompositeBanditConfig {
    pub fn validate(&self) -> Result<()> {
        let space = FactoredActionSpace::from_sizes(&self.factor_sizes)
            .map_err(|e| Error::validation("bandit.factor_sizes", e.to_string()))?;
        if self.reward_table.len() != space.total() {
            return Err(Error::validation(
                "bandit.reward_table",
                format!("expected {} entries, got {}", space.total(), self.reward_table.len()),
            ));
        }
        if self.reward_table.iter().any(|r| !r.is_finite()) {
            return Err(Error::validation("bandit.reward_table", "rewards must be finite"));
        }
        let max = self.reward_table.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if self.reward_table.iter().filter(|&&r| r == max).count() != 1 {
            return Err(Error::validation("bandit.reward_table", "maximum reward must be unique"));
        }
        Ok(())
    }

    pub fn best_arm(&self) -> usize {
        crate::rng::argmax(&self.reward_table)
    }

    pub fn mean_reward(&self) -> f64 {
        self.reward_table.iter().sum::<f64>() / self.reward_table.len() as f64
    }
}

#[derive(Debug, Clone)]
pub struct CompositeBandit {
    config: CompositeBanditConfig,
    done: bool,
}

impl CompositeBandit {
    pub fn new(config: CompositeBanditConfig) -> Result<Self> {
        config.validate()?;
        Ok(CompositeBandit { config, done: false })
    }

    pub fn reset(&mut self) -> Observation {
        self.done = false;
        Self::observation()
    }

    fn observation() -> Observation {
        Observation {
            features: vec![1.0],
            state_index: 0,
        }
    }

    pub fn step(&mut self, action: usize) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::Environment("step called on a terminal state".into()));
        }
        let outcome = bandit_step(&self.config, action)?;
        self.done = true;
        Ok(outcome)
    }
}

pub fn bandit_step(config: &CompositeBanditConfig, action: usize) -> Result<StepOutcome> {
    let reward = *config.reward_table.get(action).ok_or(Error::OutOfRange {
        what: "bandit arm",
        value: action,
        bound: config.reward_table.len(),
    })?;
    Ok(StepOutcome {
        observation: CompositeBandit::observation(),
        reward,
        terminal: true,
    })
}
