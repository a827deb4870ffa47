//! Exact solvers used to check learned agents: tabular models of the
//! environments, value iteration, finite-horizon policy evaluation, and
//! closed-form distributions.
//!
//! The hunter dynamics here are written out separately from the
//! `environments` module so the two can be checked against each other.

use crate::environments::{CompositeBanditConfig, EnvConfig, HunterGridConfig};
use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const MAX_STATES: usize = 1_000_000;
const MAX_SWEEPS: usize = 1_000_000;

/// Finite MDP with sparse stochastic transitions `(next_state, probability)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    /// Indexed by `s * n_actions + a`.
    pub transitions: Vec<Vec<(usize, f64)>>,
    pub rewards: Vec<f64>,
    pub terminal: Vec<bool>,
    pub gamma: f64,
    /// Distribution over start states.
    pub initial: Vec<f64>,
}

impl TabularMdp {
    pub fn validate(&self) -> Result<()> {
        let sa = self.n_states * self.n_actions;
        if self.transitions.len() != sa || self.rewards.len() != sa {
            return Err(Error::Shape {
                context: "mdp tables",
                expected: sa,
                actual: self.transitions.len().min(self.rewards.len()),
            });
        }
        if self.terminal.len() != self.n_states || self.initial.len() != self.n_states {
            return Err(Error::Shape {
                context: "mdp state vectors",
                expected: self.n_states,
                actual: self.terminal.len().min(self.initial.len()),
            });
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::validation("gamma", "must lie in (0, 1]"));
        }
        for (i, row) in self.transitions.iter().enumerate() {
            if self.terminal[i / self.n_actions] {
                continue;
            }
            if row.iter().any(|&(s, p)| s >= self.n_states || !(0.0..=1.0).contains(&p)) {
                return Err(Error::Distribution(format!("bad transition row {i}")));
            }
            let total: f64 = row.iter().map(|t| t.1).sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::Distribution(format!("transition row {i} sums to {total}")));
            }
        }
        Ok(())
    }

    fn q_value(&self, values: &[f64], s: usize, a: usize, gamma: f64) -> f64 {
        let i = s * self.n_actions + a;
        let next: f64 = self.transitions[i].iter().map(|&(t, p)| p * values[t]).sum();
        self.rewards[i] + gamma * next
    }

    fn greedy_action(&self, values: &[f64], s: usize, gamma: f64) -> (usize, f64) {
        let mut best = (0, f64::NEG_INFINITY);
        for a in 0..self.n_actions {
            let q = self.q_value(values, s, a, gamma);
            if q > best.1 {
                best = (a, q);
            }
        }
        best
    }

    /// `max_s |V(s) - max_a [r + gamma * E V(s')]|`.
    pub fn bellman_residual(&self, values: &[f64]) -> f64 {
        (0..self.n_states)
            .map(|s| {
                let target = if self.terminal[s] {
                    0.0
                } else {
                    self.greedy_action(values, s, self.gamma).1
                };
                (values[s] - target).abs()
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueSolution {
    pub values: Vec<f64>,
    pub policy: Vec<usize>,
    pub sweeps: usize,
}

/// Synchronous Bellman-optimality sweeps until `max |dV| < tol`. Greedy ties
/// go to the lowest action index.
pub fn value_iteration(mdp: &TabularMdp, tol: f64) -> Result<ValueSolution> {
    mdp.validate()?;
    if !(tol > 0.0) {
        return Err(Error::validation("tol", "must be > 0"));
    }
    let mut values = vec![0.0; mdp.n_states];
    let mut next = vec![0.0; mdp.n_states];
    for sweep in 1..=MAX_SWEEPS {
        let mut delta: f64 = 0.0;
        for s in 0..mdp.n_states {
            next[s] = if mdp.terminal[s] {
                0.0
            } else {
                mdp.greedy_action(&values, s, mdp.gamma).1
            };
            delta = delta.max((next[s] - values[s]).abs());
        }
        std::mem::swap(&mut values, &mut next);
        if !delta.is_finite() || (mdp.gamma >= 1.0 && sweep == MAX_SWEEPS) {
            return Err(Error::NonConvergence {
                iterations: sweep,
                delta,
            });
        }
        if delta < tol {
            let policy = (0..mdp.n_states).map(|s| mdp.greedy_action(&values, s, mdp.gamma).0).collect();
            return Ok(ValueSolution {
                values,
                policy,
                sweeps: sweep,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: MAX_SWEEPS,
        delta: f64::NAN,
    })
}

/// Expected undiscounted return of `policy` over `horizon` steps, per start state.
pub fn finite_horizon_return(mdp: &TabularMdp, policy: &[usize], horizon: usize) -> Vec<f64> {
    let mut values = vec![0.0; mdp.n_states];
    let mut next = vec![0.0; mdp.n_states];
    for _ in 0..horizon {
        for s in 0..mdp.n_states {
            next[s] = if mdp.terminal[s] {
                0.0
            } else {
                mdp.q_value(&values, s, policy[s], 1.0)
            };
        }
        std::mem::swap(&mut values, &mut next);
    }
    values
}

pub fn expected_start_value(mdp: &TabularMdp, values: &[f64]) -> f64 {
    mdp.initial.iter().zip(values).map(|(p, v)| p * v).sum()
}

/// Mean episode return, from the start distribution, of the greedy policy
/// of the discounted solution over one full episode.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedyReturn {
    pub solution: ValueSolution,
    pub horizon: usize,
    pub expected_return: f64,
}

pub fn greedy_policy_return(env: &EnvConfig, gamma: f64, tol: f64) -> Result<GreedyReturn> {
    let mdp = tabularize(env, gamma)?;
    let solution = value_iteration(&mdp, tol)?;
    let horizon = match env {
        EnvConfig::Hunter(c) => c.episode_cap,
        EnvConfig::Bandit(_) => 1,
    };
    let per_state = finite_horizon_return(&mdp, &solution.policy, horizon);
    Ok(GreedyReturn {
        expected_return: expected_start_value(&mdp, &per_state),
        solution,
        horizon,
    })
}

pub fn tabularize(env: &EnvConfig, gamma: f64) -> Result<TabularMdp> {
    env.validate()?;
    let mdp = match env {
        EnvConfig::Hunter(c) => tabularize_hunter(c, gamma)?,
        EnvConfig::Bandit(c) => tabularize_bandit(c, gamma),
    };
    mdp.validate()?;
    Ok(mdp)
}

/// Hunter state id `((ax * H + ay) * W + tx) * H + ty`; coincident agent and
/// target positions included.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HunterIds {
    pub width: usize,
    pub height: usize,
}

impl HunterIds {
    pub fn n_states(&self) -> usize {
        (self.width * self.height).pow(2)
    }

    pub fn id(&self, agent: (usize, usize), target: (usize, usize)) -> usize {
        ((agent.0 * self.height + agent.1) * self.width + target.0) * self.height + target.1
    }

    pub fn positions(&self, id: usize) -> ((usize, usize), (usize, usize)) {
        let ty = id % self.height;
        let rest = id / self.height;
        let tx = rest % self.width;
        let rest = rest / self.width;
        let ay = rest % self.height;
        let ax = rest / self.height;
        ((ax, ay), (tx, ty))
    }
}

/// Composite action `a` as (dx, dy, fire).
fn hunter_action(a: usize) -> (i64, i64, bool) {
    let h = a / 6;
    let v = (a / 2) % 3;
    (h as i64 - 1, v as i64 - 1, a % 2 == 1)
}

fn tabularize_hunter(c: &HunterGridConfig, gamma: f64) -> Result<TabularMdp> {
    let ids = HunterIds {
        width: c.width,
        height: c.height,
    };
    let n_states = ids.n_states();
    if n_states > MAX_STATES {
        return Err(Error::validation("hunter", format!("{n_states} states exceed the oracle limit")));
    }
    let n_actions = 18;
    let cells = c.width * c.height;
    let respawn_p = 1.0 / (cells - 1) as f64;
    let mut transitions = Vec::with_capacity(n_states * n_actions);
    let mut rewards = Vec::with_capacity(n_states * n_actions);
    let mut initial = vec![0.0; n_states];
    for s in 0..n_states {
        let ((ax, ay), target) = ids.positions(s);
        if (ax, ay) != target {
            initial[s] = 1.0 / (cells * (cells - 1)) as f64;
        }
        for a in 0..n_actions {
            let (dx, dy, fire) = hunter_action(a);
            let nx = (ax as i64 + dx).max(0).min(c.width as i64 - 1) as usize;
            let ny = (ay as i64 + dy).max(0).min(c.height as i64 - 1) as usize;
            let mut r = c.step_cost;
            if fire && (nx, ny) == target {
                r += c.hit_reward;
                let mut row = Vec::with_capacity(cells - 1);
                for tx in 0..c.width {
                    for ty in 0..c.height {
                        if (tx, ty) != (nx, ny) {
                            row.push((ids.id((nx, ny), (tx, ty)), respawn_p));
                        }
                    }
                }
                transitions.push(row);
            } else {
                if fire {
                    r += c.miss_fire_cost;
                }
                transitions.push(vec![(ids.id((nx, ny), target), 1.0)]);
            }
            rewards.push(r);
        }
    }
    Ok(TabularMdp {
        n_states,
        n_actions,
        transitions,
        rewards,
        terminal: vec![false; n_states],
        gamma,
        initial,
    })
}

/// State 0 is the decision state, state 1 the absorbing end.
fn tabularize_bandit(c: &CompositeBanditConfig, gamma: f64) -> TabularMdp {
    let n_actions = c.reward_table.len();
    let mut transitions = vec![vec![(1, 1.0)]; n_actions];
    transitions.extend(vec![vec![(1, 1.0)]; n_actions]);
    let mut rewards = c.reward_table.clone();
    rewards.extend(vec![0.0; n_actions]);
    TabularMdp {
        n_states: 2,
        n_actions,
        transitions,
        rewards,
        terminal: vec![false, true],
        gamma,
        initial: vec![1.0, 0.0],
    }
}

/// Outer product of per-factor distributions, last factor varying fastest.
pub fn exact_product_distribution(factors: &[Vec<f64>]) -> Result<Vec<f64>> {
    if factors.is_empty() {
        return Err(Error::Distribution("no factors".into()));
    }
    for f in factors {
        crate::analysis::validate_distribution(f)?;
    }
    let mut out = vec![1.0];
    for f in factors {
        out = out.iter().flat_map(|&p| f.iter().map(move |&q| p * q)).collect();
    }
    Ok(out)
}

/// Score-space gradient of `log softmax(scores)[action] * advantage`:
/// `(1{j = action} - pi_j) * advantage`.
pub fn softmax_policy_gradient(probs: &[f64], action: usize, advantage: f64) -> Vec<f64> {
    probs
        .iter()
        .enumerate()
        .map(|(j, &p)| ((j == action) as u8 as f64 - p) * advantage)
        .collect()
}
