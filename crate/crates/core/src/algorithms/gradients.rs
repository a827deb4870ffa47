//! Rollout segments, n-step targets, and the per-segment gradients of the
//! actor-critic and n-step Q-learning losses.

use crate::approximators::{max_q, q_of, GradientVector, HeadGrads, HeadsOutput, Model};
use crate::environments::Observation;
use crate::error::{Error, Result};
use crate::factored_actions::{combine_backward, entropy, log_softmax, softmax};

use super::agent::AgentSpec;

#[derive(Debug, Clone)]
pub struct Transition {
    pub observation: Observation,
    /// Composite action index in the environment's space.
    pub action: usize,
    pub reward: f64,
    /// Forward pass of the local parameters at `observation`.
    pub output: HeadsOutput,
}

/// Up to `rollout_len` consecutive transitions. `bootstrap_observation` is
/// the state reached after the last step, or `None` if it was terminal.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub steps: Vec<Transition>,
    pub bootstrap_observation: Option<Observation>,
}

impl Trajectory {
    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|t| t.reward).collect()
    }

    pub fn ended_terminal(&self) -> bool {
        self.bootstrap_observation.is_none()
    }
}

/// Reverse accumulation `R <- r_i + gamma * R` seeded with `bootstrap`.
pub fn n_step_targets(rewards: &[f64], bootstrap: f64, gamma: f64) -> Vec<f64> {
    let mut targets = vec![0.0; rewards.len()];
    let mut r = bootstrap;
    for i in (0..rewards.len()).rev() {
        r = rewards[i] + gamma * r;
        targets[i] = r;
    }
    targets
}

/// `0` after a terminal state, otherwise `V(s_t)` under `params`.
pub fn value_bootstrap(model: &Model, params: &[f64], traj: &Trajectory) -> Result<f64> {
    match &traj.bootstrap_observation {
        None => Ok(0.0),
        Some(obs) => model
            .forward(params, obs)?
            .value
            .ok_or_else(|| Error::validation("approximator", "actor-critic agents need a value head")),
    }
}

/// `0` after a terminal state, otherwise `max_a Q(s_t, a)` under the target
/// parameters, using the per-factor maxima for the additive form.
pub fn q_bootstrap(model: &Model, target_params: &[f64], traj: &Trajectory) -> Result<f64> {
    match &traj.bootstrap_observation {
        None => Ok(0.0),
        Some(obs) => Ok(max_q(&model.forward(target_params, obs)?)),
    }
}

/// Weights on the two actor terms; `policy = 1, entropy = beta` is the
/// training objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActorTerms {
    pub policy: f64,
    pub entropy: f64,
}

/// Gradient of `policy * log pi(a) * adv + entropy * H(pi)` with respect to
/// the composite scores of `pi = softmax(scores)`.
pub(crate) fn actor_score_grad(scores: &[f64], action: usize, advantage: f64, terms: ActorTerms) -> Vec<f64> {
    let probs = softmax(scores);
    let logp = log_softmax(scores);
    let h = entropy(&probs);
    probs
        .iter()
        .zip(&logp)
        .enumerate()
        .map(|(j, (&p, &lp))| {
            let indicator = if j == action { 1.0 } else { 0.0 };
            terms.policy * advantage * (indicator - p) - terms.entropy * p * (lp + h)
        })
        .collect()
}

/// Returns `(d_theta, d_w)`.
///
/// `d_theta` is the ascent direction of
/// `sum_i log pi(a_i|s_i) (R_i - V(s_i)) + beta H(pi(.|s_i))` with the advantage held constant; `d_w` is the
/// gradient of `sum_i (R_i - V(s_i))^2`. Both span the full parameter layout,
/// so the shared torso receives contributions from each.
pub fn actor_critic_grads(
    traj: &Trajectory,
    params: &[f64],
    model: &Model,
    spec: &AgentSpec,
    beta: f64,
    gamma: f64,
) -> Result<(GradientVector, GradientVector)> {
    actor_critic_grads_weighted(
        traj,
        params,
        model,
        spec,
        ActorTerms {
            policy: 1.0,
            entropy: beta,
        },
        gamma,
    )
}

pub fn actor_critic_grads_weighted(
    traj: &Trajectory,
    params: &[f64],
    model: &Model,
    spec: &AgentSpec,
    terms: ActorTerms,
    gamma: f64,
) -> Result<(GradientVector, GradientVector)> {
    if traj.steps.is_empty() {
        return Err(Error::validation("trajectory", "must contain at least one step"));
    }
    let bootstrap = value_bootstrap(model, params, traj)?;
    let mut d_theta = GradientVector::zeros(model.num_params());
    let mut d_w = GradientVector::zeros(model.num_params());
    let head_sizes = spec.head_sizes();
    let mut r = bootstrap;
    for step in traj.steps.iter().rev() {
        r = step.reward + gamma * r;
        let value = step
            .output
            .value
            .ok_or_else(|| Error::validation("approximator", "actor-critic agents need a value head"))?;
        let advantage = r - value;
        if !advantage.is_finite() {
            return Err(Error::NonFinite("advantage"));
        }

        let scores = spec.scores(&step.output)?;
        let score_grad = actor_score_grad(&scores, step.action, advantage, terms);
        let heads = combine_backward(spec.rule, &step.output.factor_logits, &spec.head_space, &score_grad)?;
        if heads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("policy gradient"));
        }
        let policy_grads = HeadGrads { heads, value: 0.0 };
        model.backward_into(params, &step.output, &policy_grads, &mut d_theta.0)?;

        let value_grads = HeadGrads {
            heads: HeadGrads::zeros(&head_sizes).heads,
            value: -2.0 * advantage,
        };
        model.backward_into(params, &step.output, &value_grads, &mut d_w.0)?;
    }
    Ok((d_theta, d_w))
}

/// Gradient of `sum_i (R_i - Q(s_i, a_i))^2`, bootstrapped from the target
/// parameters.
pub fn q_learning_grads(
    traj: &Trajectory,
    params: &[f64],
    model: &Model,
    spec: &AgentSpec,
    target_params: &[f64],
    gamma: f64,
) -> Result<GradientVector> {
    if traj.steps.is_empty() {
        return Err(Error::validation("trajectory", "must contain at least one step"));
    }
    let bootstrap = q_bootstrap(model, target_params, traj)?;
    let mut grad = GradientVector::zeros(model.num_params());
    let head_sizes = spec.head_sizes();
    let mut r = bootstrap;
    for step in traj.steps.iter().rev() {
        r = step.reward + gamma * r;
        let head_action = spec.head_space.decompose_index(step.action)?;
        let q = q_of(&step.output, &spec.head_space, &head_action)?;
        let d_q = -2.0 * (r - q);
        if !d_q.is_finite() {
            return Err(Error::NonFinite("td error"));
        }
        let mut g = HeadGrads::zeros(&head_sizes);
        for (head, &v) in g.heads.iter_mut().zip(&head_action.factor_values) {
            head[v] = d_q;
        }
        model.backward_into(params, &step.output, &g, &mut grad.0)?;
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algorithms::agent::Algorithm;
    use crate::approximators::{Approximator, TabularArch};
    use crate::factored_actions::{CombinationRule, FactoredActionSpace};
    use crate::rng::stream_rng;
    use rand::Rng;

    #[test]
    fn targets_hand_examples() {
        assert_eq!(n_step_targets(&[1.0, 0.0, 0.0], 0.0, 0.5), vec![1.0, 0.0, 0.0]);
        assert_eq!(n_step_targets(&[0.0, 0.0], 8.0, 0.5), vec![2.0, 4.0]);
        assert!(n_step_targets(&[], 3.0, 0.9).is_empty());
    }

    #[test]
    fn targets_match_closed_form() {
        let mut rng = stream_rng(3, 0);
        for _ in 0..100 {
            let m = rng.gen_range(1..25);
            let rewards: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let bootstrap = rng.gen_range(-5.0..5.0);
            let gamma = rng.gen_range(0.01..=1.0);
            let got = n_step_targets(&rewards, bootstrap, gamma);
            for i in 0..m {
                let direct: f64 = (i..m).map(|k| gamma.powi((k - i) as i32) * rewards[k]).sum::<f64>()
                    + gamma.powi((m - i) as i32) * bootstrap;
                assert!((got[i] - direct).abs() < 1e-12);
            }
        }
    }

    fn bandit_setup(algorithm: Algorithm) -> (Model, AgentSpec, Vec<f64>) {
        let spec = AgentSpec::new(algorithm, CombinationRule::Sum, FactoredActionSpace::move_and_fire()).unwrap();
        let approx = Approximator::Tabular(TabularArch {
            n_states: 1,
            head_sizes: spec.head_sizes(),
            value_head: algorithm.is_actor_critic(),
        });
        let model = approx.build().unwrap();
        let mut rng = stream_rng(4, 0);
        let params = (0..model.num_params()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        (model, spec, params)
    }

    fn one_step(model: &Model, params: &[f64], action: usize, reward: f64) -> Trajectory {
        let obs = Observation { features: vec![1.0], state_index: 0 };
        let output = model.forward(params, &obs).unwrap();
        Trajectory {
            steps: vec![Transition { observation: obs, action, reward, output }],
            bootstrap_observation: None,
        }
    }

    #[test]
    fn zero_advantage_and_beta_give_zero_policy_grad() {
        let (model, spec, params) = bandit_setup(Algorithm::Fara3c);
        let v = model.forward(&params, &Observation { features: vec![1.0], state_index: 0 }).unwrap().value.unwrap();
        let traj = one_step(&model, &params, 5, v);
        let (dt, dw) = actor_critic_grads(&traj, &params, &model, &spec, 0.0, 0.99).unwrap();
        assert!(dt.is_zero());
        assert!(dw.is_zero());
    }

    #[test]
    fn closed_form_softmax_policy_gradient() {
        for algorithm in [Algorithm::A3c, Algorithm::Fara3c] {
            let (model, spec, params) = bandit_setup(algorithm);
            let traj = one_step(&model, &params, 11, 1.3);
            let out = &traj.steps[0].output;
            let adv = 1.3 - out.value.unwrap();
            let (dt, _) = actor_critic_grads(&traj, &params, &model, &spec, 0.0, 0.99).unwrap();
            let taken = spec.head_values(11).unwrap();
            let mut off = 0;
            for (h, logits) in out.factor_logits.per_factor.iter().enumerate() {
                let p = softmax(logits);
                for a in 0..logits.len() {
                    let ind = if a == taken[h] { 1.0 } else { 0.0 };
                    assert!((dt.0[off + a] - (ind - p[a]) * adv).abs() < 1e-12);
                }
                off += logits.len();
            }
        }
    }

    #[test]
    fn exact_target_gives_zero_td_gradient() {
        let (model, spec, params) = bandit_setup(Algorithm::Faraql);
        let out = model.forward(&params, &Observation { features: vec![1.0], state_index: 0 }).unwrap();
        let q = q_of(&out, &spec.head_space, &spec.head_space.decompose_index(3).unwrap()).unwrap();
        let traj = one_step(&model, &params, 3, q);
        let g = q_learning_grads(&traj, &params, &model, &spec, &params, 0.99).unwrap();
        assert!(g.is_zero());
    }

    #[test]
    fn empty_trajectory_rejected() {
        let (model, spec, params) = bandit_setup(Algorithm::Fara3c);
        let traj = Trajectory::default();
        assert!(actor_critic_grads(&traj, &params, &model, &spec, 0.01, 0.99).is_err());
        assert!(q_learning_grads(&traj, &params, &model, &spec, &params, 0.99).is_err());
    }

    #[test]
    fn bootstrap_is_zero_exactly_when_terminal() {
        let (model, _, params) = bandit_setup(Algorithm::Fara3c);
        let mut traj = one_step(&model, &params, 0, 0.0);
        assert_eq!(value_bootstrap(&model, &params, &traj).unwrap(), 0.0);
        traj.bootstrap_observation = Some(Observation { features: vec![1.0], state_index: 0 });
        let v = value_bootstrap(&model, &params, &traj).unwrap();
        assert_eq!(v, traj.steps[0].output.value.unwrap());
        assert_ne!(v, 0.0);
    }
}
