//! Seedable desk-scale tasks with compositional action spaces.

mod bandit;
mod hunter;

use serde::{Deserialize, Serialize};

pub use bandit::{CompositeBandit, CompositeBanditConfig};
pub use hunter::{EnvState, HunterGrid, HunterGridConfig};

use crate::error::Result;
use crate::factored_actions::FactoredActionSpace;

/// Feature vector for networks plus a dense state index for tables.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub features: Vec<f64>,
    pub state_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EnvConfig {
    Hunter(HunterGridConfig),
    Bandit(CompositeBanditConfig),
}

impl EnvConfig {
    pub fn name(&self) -> &'static str {
        match self {
            EnvConfig::Hunter(_) => "hunter",
            EnvConfig::Bandit(_) => "bandit",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            EnvConfig::Hunter(c) => c.validate(),
            EnvConfig::Bandit(c) => c.validate(),
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            EnvConfig::Hunter(c) => c.seed,
            EnvConfig::Bandit(c) => c.seed,
        }
    }

    pub fn with_seed(&self, seed: u64) -> EnvConfig {
        let mut c = self.clone();
        match &mut c {
            EnvConfig::Hunter(h) => h.seed = seed,
            EnvConfig::Bandit(b) => b.seed = seed,
        }
        c
    }

    pub fn action_space(&self) -> Result<FactoredActionSpace> {
        match self {
            EnvConfig::Hunter(_) => Ok(FactoredActionSpace::move_and_fire()),
            EnvConfig::Bandit(c) => FactoredActionSpace::from_sizes(&c.factor_sizes),
        }
    }

    pub fn observation_dim(&self) -> usize {
        match self {
            EnvConfig::Hunter(c) => 2 * c.width * c.height,
            EnvConfig::Bandit(_) => 1,
        }
    }

    pub fn n_states(&self) -> usize {
        match self {
            EnvConfig::Hunter(c) => {
                let cells = c.width * c.height;
                cells * cells
            }
            EnvConfig::Bandit(_) => 1,
        }
    }

    /// Bounds on the undiscounted return of one episode, when finite.
    pub fn return_bounds(&self) -> Option<(f64, f64)> {
        match self {
            EnvConfig::Hunter(c) => {
                let cap = c.episode_cap as f64;
                Some((
                    cap * (c.step_cost + c.miss_fire_cost.min(0.0)),
                    cap * (c.step_cost + c.hit_reward),
                ))
            }
            EnvConfig::Bandit(c) => {
                let lo = c.reward_table.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = c.reward_table.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                Some((lo, hi))
            }
        }
    }

    pub fn build(&self) -> Result<Environment> {
        Ok(match self {
            EnvConfig::Hunter(c) => Environment::Hunter(HunterGrid::new(c.clone())?),
            EnvConfig::Bandit(c) => Environment::Bandit(CompositeBandit::new(c.clone())?),
        })
    }
}

#[derive(Debug, Clone)]
pub enum Environment {
    Hunter(HunterGrid),
    Bandit(CompositeBandit),
}

impl Environment {
    pub fn reset(&mut self) -> Observation {
        match self {
            Environment::Hunter(e) => e.reset().1,
            Environment::Bandit(e) => e.reset(),
        }
    }

    pub fn step(&mut self, action: usize) -> Result<StepOutcome> {
        match self {
            Environment::Hunter(e) => e.step_index(action),
            Environment::Bandit(e) => e.step(action),
        }
    }
}
