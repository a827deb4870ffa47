use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Observation, StepOutcome};
use crate::error::{Error, Result};
use crate::factored_actions::{CompositeAction, FactoredActionSpace};
use crate::rng::{stream_rng, AgentRng};

/// Grid pursuit task. The agent moves horizontally and vertically and may
/// fire; firing while standing on the target scores and respawns it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HunterGridConfig {
    pub width: usize,
    pub height: usize,
    pub episode_cap: usize,
    pub step_cost: f64,
    pub miss_fire_cost: f64,
    pub hit_reward: f64,
    pub seed: u64,
}

impl Default for HunterGridConfig {
    fn default() -> Self {
        HunterGridConfig {
            width: 5,
            height: 5,
            episode_cap: 50,
            step_cost: -0.01,
            miss_fire_cost: -0.05,
            hit_reward: 1.0,
            seed: 0,
        }
    }
}

impl HunterGridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width < 2 {
            return Err(Error::validation("hunter.width", "must be at least 2"));
        }
        if self.height < 2 {
            return Err(Error::validation("hunter.height", "must be at least 2"));
        }
        if self.episode_cap < 1 {
            return Err(Error::validation("hunter.episode_cap", "must be at least 1"));
        }
        if !(self.hit_reward > 0.0 && self.hit_reward.is_finite()) {
            return Err(Error::validation("hunter.hit_reward", "must be finite and > 0"));
        }
        if !self.step_cost.is_finite() {
            return Err(Error::validation("hunter.step_cost", "must be finite"));
        }
        if !self.miss_fire_cost.is_finite() {
            return Err(Error::validation("hunter.miss_fire_cost", "must be finite"));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.width * self.height
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnvState {
    pub agent_pos: (usize, usize),
    pub target_pos: (usize, usize),
    pub steps_taken: usize,
}

#[derive(Debug, Clone)]
pub struct HunterGrid {
    config: HunterGridConfig,
    space: FactoredActionSpace,
    state: EnvState,
    rng: AgentRng,
}

impl HunterGrid {
    pub fn new(config: HunterGridConfig) -> Result<Self> {
        config.validate()?;
        let rng = stream_rng(config.seed, 0);
        Ok(HunterGrid {
            config,
            space: FactoredActionSpace::move_and_fire(),
            state: EnvState {
                agent_pos: (0, 0),
                target_pos: (1, 0),
                steps_taken: 0,
            },
            rng,
        })
    }

    pub fn config(&self) -> &HunterGridConfig {
        &self.config
    }

    pub fn state(&self) -> EnvState {
        self.state
    }

    /// Place agent and target directly; used to probe dynamics.
    pub fn set_state(&mut self, state: EnvState) -> Result<()> {
        let in_bounds = |(x, y): (usize, usize)| x < self.config.width && y < self.config.height;
        if !in_bounds(state.agent_pos) || !in_bounds(state.target_pos) {
            return Err(Error::Environment("position outside the grid".into()));
        }
        if state.steps_taken > self.config.episode_cap {
            return Err(Error::Environment("steps_taken exceeds episode_cap".into()));
        }
        self.state = state;
        Ok(())
    }

    fn cell(&self, (x, y): (usize, usize)) -> usize {
        y * self.config.width + x
    }

    fn pos(&self, cell: usize) -> (usize, usize) {
        (cell % self.config.width, cell / self.config.width)
    }

    /// Uniform cell other than `avoid`.
    fn random_cell_except(&mut self, avoid: usize) -> usize {
        let k = self.rng.gen_range(0..self.config.cells() - 1);
        if k >= avoid {
            k + 1
        } else {
            k
        }
    }

    pub fn reset(&mut self) -> (EnvState, Observation) {
        let cells = self.config.cells();
        let agent = self.rng.gen_range(0..cells);
        let target = self.random_cell_except(agent);
        self.state = EnvState {
            agent_pos: self.pos(agent),
            target_pos: self.pos(target),
            steps_taken: 0,
        };
        (self.state, self.observation())
    }

    /// Dense index `agent_cell * cells + target_cell`. Coincident positions
    /// are reachable (stepping onto the target without firing).
    pub fn state_index(&self) -> usize {
        self.cell(self.state.agent_pos) * self.config.cells() + self.cell(self.state.target_pos)
    }

    pub fn observation(&self) -> Observation {
        let cells = self.config.cells();
        let mut features = vec![0.0; 2 * cells];
        features[self.cell(self.state.agent_pos)] = 1.0;
        features[cells + self.cell(self.state.target_pos)] = 1.0;
        Observation {
            features,
            state_index: self.state_index(),
        }
    }

    pub fn is_terminal(&self) -> bool {
        self.state.steps_taken >= self.config.episode_cap
    }

    pub fn step_index(&mut self, action: usize) -> Result<StepOutcome> {
        let a = self.space.decompose_index(action)?;
        self.step(&a)
    }

    /// Factor encoding: horizontal 0/1/2 = left/none/right, vertical
    /// 0/1/2 = up/none/down, fire 0/1 = hold/fire.
    pub fn step(&mut self, action: &CompositeAction) -> Result<StepOutcome> {
        if self.is_terminal() {
            return Err(Error::Environment("step called on a terminal state".into()));
        }
        let fv = &action.factor_values;
        if fv.len() != 3 || fv[0] > 2 || fv[1] > 2 || fv[2] > 1 {
            return Err(Error::Environment(format!("invalid hunter action {fv:?}")));
        }
        let (x, y) = self.state.agent_pos;
        let nx = (x as i64 + fv[0] as i64 - 1).clamp(0, self.config.width as i64 - 1) as usize;
        let ny = (y as i64 + fv[1] as i64 - 1).clamp(0, self.config.height as i64 - 1) as usize;
        self.state.agent_pos = (nx, ny);

        let mut reward = 0.0;
        if fv[2] == 1 {
            if self.state.agent_pos == self.state.target_pos {
                reward += self.config.hit_reward;
                let avoid = self.cell(self.state.agent_pos);
                let t = self.random_cell_except(avoid);
                self.state.target_pos = self.pos(t);
            } else {
                reward += self.config.miss_fire_cost;
            }
        }
        reward += self.config.step_cost;
        self.state.steps_taken += 1;
        Ok(StepOutcome {
            observation: self.observation(),
            reward,
            terminal: self.is_terminal(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(seed: u64) -> HunterGrid {
        HunterGrid::new(HunterGridConfig { seed, ..Default::default() }).unwrap()
    }

    fn act(h: usize, v: usize, f: usize) -> CompositeAction {
        FactoredActionSpace::move_and_fire().action(&[h, v, f]).unwrap()
    }

    #[test]
    fn reset_is_seeded_and_distinct() {
        for seed in 0..200 {
            let (a, oa) = env(seed).reset();
            let (b, ob) = env(seed).reset();
            assert_eq!(a, b);
            assert_eq!(oa, ob);
            assert_ne!(a.agent_pos, a.target_pos);
            assert_eq!(a.steps_taken, 0);
            assert_eq!(oa.features.iter().filter(|&&x| x == 1.0).count(), 2);
            assert_eq!(oa.features.iter().filter(|&&x| x == 0.0).count(), 48);
        }
    }

    #[test]
    fn idle_step_costs_step_cost() {
        let mut e = env(1);
        e.set_state(EnvState { agent_pos: (2, 2), target_pos: (0, 0), steps_taken: 0 }).unwrap();
        let out = e.step(&act(1, 1, 0)).unwrap();
        assert_eq!(out.reward, -0.01);
        assert_eq!(e.state().agent_pos, (2, 2));
    }

    #[test]
    fn firing_on_target_scores_and_respawns() {
        let mut e = env(2);
        e.set_state(EnvState { agent_pos: (3, 1), target_pos: (3, 1), steps_taken: 0 }).unwrap();
        let out = e.step(&act(1, 1, 1)).unwrap();
        assert_eq!(out.reward, 1.0 + -0.01);
        assert_ne!(e.state().target_pos, (3, 1));
        let out = e.step(&act(1, 1, 1)).unwrap();
        assert_eq!(out.reward, -0.05 + -0.01);
    }

    #[test]
    fn diagonal_move_composes_factor_moves() {
        for (h, v) in [(0, 0), (0, 2), (2, 0), (2, 2)] {
            let start = EnvState { agent_pos: (2, 2), target_pos: (0, 4), steps_taken: 0 };
            let mut diag = env(0);
            diag.set_state(start).unwrap();
            diag.step(&act(h, v, 0)).unwrap();
            let mut seq = env(0);
            seq.set_state(start).unwrap();
            seq.step(&act(h, 1, 0)).unwrap();
            seq.step(&act(1, v, 0)).unwrap();
            assert_eq!(diag.state().agent_pos, seq.state().agent_pos);
        }
    }

    #[test]
    fn moves_clip_at_walls() {
        let mut e = env(0);
        e.set_state(EnvState { agent_pos: (0, 0), target_pos: (4, 4), steps_taken: 0 }).unwrap();
        e.step(&act(0, 0, 0)).unwrap();
        assert_eq!(e.state().agent_pos, (0, 0));
    }

    #[test]
    fn terminal_at_cap_and_then_errors() {
        let mut e = HunterGrid::new(HunterGridConfig { episode_cap: 3, ..Default::default() }).unwrap();
        e.reset();
        assert!(!e.step(&act(1, 1, 0)).unwrap().terminal);
        assert!(!e.step(&act(1, 1, 0)).unwrap().terminal);
        assert!(e.step(&act(1, 1, 0)).unwrap().terminal);
        assert!(e.step(&act(1, 1, 0)).is_err());
    }

    #[test]
    fn identical_action_sequences_give_identical_trajectories() {
        let run = || {
            let mut e = env(77);
            e.reset();
            let mut rewards = vec![];
            for i in 0..50 {
                let out = e.step_index((i * 7) % 18).unwrap();
                rewards.push((out.reward.to_bits(), out.observation.state_index));
            }
            rewards
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn state_index_is_a_bijection() {
        let mut e = env(0);
        let mut seen = std::collections::HashSet::new();
        for a in 0..25 {
            for t in 0..25 {
                e.set_state(EnvState { agent_pos: (a % 5, a / 5), target_pos: (t % 5, t / 5), steps_taken: 0 })
                    .unwrap();
                assert!(seen.insert(e.state_index()));
            }
        }
        assert_eq!(seen.len(), 625);
        assert!(seen.iter().all(|&i| i < 625));
    }

    #[test]
    fn config_validation() {
        let bad = HunterGridConfig { width: 1, ..Default::default() };
        assert!(HunterGrid::new(bad).is_err());
        let bad = HunterGridConfig { hit_reward: 0.0, ..Default::default() };
        assert!(HunterGrid::new(bad).is_err());
    }
}
