//! Finite-difference verification of the composed training losses.
//!
//! Each check draws random parameters and a random rollout segment, freezes
//! every quantity the update treats as a constant (advantages, n-step
//! targets), and compares the analytic gradient with central differences.

use rand::Rng;

use super::{Approximator, Model};
use crate::algorithms::gradients::{
    actor_critic_grads_weighted, n_step_targets, q_learning_grads, ActorTerms, Trajectory, Transition,
};
use crate::algorithms::{AgentSpec, Algorithm};
use crate::environments::Observation;
use crate::error::{Error, Result};
use crate::factored_actions::{entropy, log_softmax, softmax, CombinationRule, FactoredActionSpace};
use crate::approximators::{q_of, GradientVector};
use crate::rng::stream_rng;

pub const FD_STEP: f64 = 1e-5;
const MAX_PARAMS: usize = 10_000;
const GAMMA: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossSpec {
    /// `sum_i log pi(a_i|s_i) A_i` with fixed advantages.
    PolicyGradient(CombinationRule),
    /// `sum_i (R_i - V(s_i))^2` with fixed targets.
    ValueLoss,
    /// `sum_i H(pi(.|s_i))`.
    Entropy(CombinationRule),
    /// `sum_i (R_i - Q(s_i, a_i))^2` with targets bootstrapped from a frozen copy.
    TdError,
}

/// Max over parameters of `|analytic - numeric| / max(|analytic|, |numeric|, 1e-4)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-4))
        .fold(0.0, f64::max)
}

pub fn central_difference(params: &[f64], loss: &dyn Fn(&[f64]) -> Result<f64>) -> Result<Vec<f64>> {
    let mut p = params.to_vec();
    let mut out = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + FD_STEP;
        let plus = loss(&p)?;
        p[i] = orig - FD_STEP;
        let minus = loss(&p)?;
        p[i] = orig;
        out.push((plus - minus) / (2.0 * FD_STEP));
    }
    Ok(out)
}

struct Instance {
    model: Model,
    spec: AgentSpec,
    params: Vec<f64>,
    traj: Trajectory,
}

fn random_instance(arch: &Approximator, seed: u64, algorithm: Algorithm, rule: CombinationRule) -> Result<Instance> {
    let model = arch.build()?;
    if model.num_params() > MAX_PARAMS {
        return Err(Error::validation("arch", format!("grad_check expects at most {MAX_PARAMS} parameters")));
    }
    let space = FactoredActionSpace::from_sizes(arch.head_sizes())?;
    let spec = AgentSpec::new(algorithm, rule, space.clone())?;
    let mut rng = stream_rng(seed, 0);
    let params: Vec<f64> = (0..model.num_params()).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let len = rng.gen_range(1..=5);
    let mut obs = Vec::with_capacity(len + 1);
    for _ in 0..=len {
        obs.push(match arch {
            Approximator::Network(n) => Observation {
                features: (0..n.input_dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                state_index: 0,
            },
            Approximator::Tabular(t) => Observation {
                features: vec![1.0],
                state_index: rng.gen_range(0..t.n_states),
            },
        });
    }
    let mut steps = Vec::with_capacity(len);
    for o in &obs[..len] {
        steps.push(Transition {
            observation: o.clone(),
            action: rng.gen_range(0..space.total()),
            reward: rng.gen_range(-1.0..1.0),
            output: model.forward(&params, o)?,
        });
    }
    let bootstrap_observation = rng.gen_bool(0.5).then(|| obs[len].clone());
    Ok(Instance {
        model,
        spec,
        params,
        traj: Trajectory {
            steps,
            bootstrap_observation,
        },
    })
}

fn value_of(model: &Model, params: &[f64], obs: &Observation) -> Result<f64> {
    model
        .forward(params, obs)?
        .value
        .ok_or_else(|| Error::validation("arch", "value loss needs a value head"))
}

/// Fixed n-step targets and advantages at the base parameters.
fn frozen_targets(inst: &Instance) -> Result<(Vec<f64>, Vec<f64>)> {
    let bootstrap = match &inst.traj.bootstrap_observation {
        Some(o) => value_of(&inst.model, &inst.params, o)?,
        None => 0.0,
    };
    let targets = n_step_targets(&inst.traj.rewards(), bootstrap, GAMMA);
    let advantages = inst
        .traj
        .steps
        .iter()
        .zip(&targets)
        .map(|(s, r)| Ok(r - s.output.value.unwrap_or(0.0)))
        .collect::<Result<Vec<f64>>>()?;
    Ok((targets, advantages))
}

/// Maximum relative error between the analytic and finite-difference
/// gradients of `loss` on one random instance.
pub fn grad_check(arch: &Approximator, seed: u64, loss: LossSpec) -> Result<f64> {
    let (analytic, numeric) = match loss {
        LossSpec::PolicyGradient(rule) | LossSpec::Entropy(rule) => {
            if !arch.has_value_head() {
                return Err(Error::validation("arch", "actor-critic losses need a value head"));
            }
            let inst = random_instance(arch, seed, Algorithm::Fara3c, rule)?;
            let (_, advantages) = frozen_targets(&inst)?;
            let terms = match loss {
                LossSpec::PolicyGradient(_) => ActorTerms {
                    policy: 1.0,
                    entropy: 0.0,
                },
                _ => ActorTerms {
                    policy: 0.0,
                    entropy: 1.0,
                },
            };
            let (d_theta, _) =
                actor_critic_grads_weighted(&inst.traj, &inst.params, &inst.model, &inst.spec, terms, GAMMA)?;
            let objective = |p: &[f64]| -> Result<f64> {
                let mut total = 0.0;
                for (step, adv) in inst.traj.steps.iter().zip(&advantages) {
                    let scores = inst.spec.scores(&inst.model.forward(p, &step.observation)?)?;
                    total += terms.policy * log_softmax(&scores)[step.action] * adv;
                    total += terms.entropy * entropy(&softmax(&scores));
                }
                Ok(total)
            };
            (d_theta, central_difference(&inst.params, &objective)?)
        }
        LossSpec::ValueLoss => {
            let inst = random_instance(arch, seed, Algorithm::Fara3c, CombinationRule::Sum)?;
            let (targets, _) = frozen_targets(&inst)?;
            let terms = ActorTerms {
                policy: 0.0,
                entropy: 0.0,
            };
            let (_, d_w) =
                actor_critic_grads_weighted(&inst.traj, &inst.params, &inst.model, &inst.spec, terms, GAMMA)?;
            let objective = |p: &[f64]| -> Result<f64> {
                let mut total = 0.0;
                for (step, r) in inst.traj.steps.iter().zip(&targets) {
                    let v = value_of(&inst.model, p, &step.observation)?;
                    total += (r - v).powi(2);
                }
                Ok(total)
            };
            (d_w, central_difference(&inst.params, &objective)?)
        }
        LossSpec::TdError => {
            let inst = random_instance(arch, seed, Algorithm::Faraql, CombinationRule::Sum)?;
            let mut rng = stream_rng(seed, 1);
            let target: Vec<f64> = inst.params.iter().map(|p| p + rng.gen_range(-0.1..0.1)).collect();
            let grad = q_learning_grads(&inst.traj, &inst.params, &inst.model, &inst.spec, &target, GAMMA)?;
            let bootstrap = match &inst.traj.bootstrap_observation {
                Some(o) => {
                    let out = inst.model.forward(&target, o)?;
                    let q = inst.spec.scores(&out)?;
                    q.into_iter().fold(f64::NEG_INFINITY, f64::max)
                }
                None => 0.0,
            };
            let targets = n_step_targets(&inst.traj.rewards(), bootstrap, GAMMA);
            let objective = |p: &[f64]| -> Result<f64> {
                let mut total = 0.0;
                for (step, r) in inst.traj.steps.iter().zip(&targets) {
                    let out = inst.model.forward(p, &step.observation)?;
                    let a = inst.spec.head_space.decompose_index(step.action)?;
                    total += (r - q_of(&out, &inst.spec.head_space, &a)?).powi(2);
                }
                Ok(total)
            };
            (grad, central_difference(&inst.params, &objective)?)
        }
    };
    let GradientVector(analytic) = analytic;
    Ok(relative_error(&analytic, &numeric))
}
