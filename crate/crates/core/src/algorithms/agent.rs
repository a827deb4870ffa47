use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::approximators::{Approximator, HeadsOutput, Model, NetworkArch, TabularArch};
use crate::environments::{EnvConfig, Observation};
use crate::error::{Error, Result};
use crate::factored_actions::{combine, softmax, CombinationRule, FactoredActionSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    A3c,
    Fara3c,
    Aql,
    Faraql,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Algorithm::A3c, Algorithm::Fara3c, Algorithm::Aql, Algorithm::Faraql];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::A3c => "a3c",
            Algorithm::Fara3c => "fara3c",
            Algorithm::Aql => "aql",
            Algorithm::Faraql => "faraql",
        }
    }

    pub fn is_actor_critic(self) -> bool {
        matches!(self, Algorithm::A3c | Algorithm::Fara3c)
    }

    pub fn is_factored(self) -> bool {
        matches!(self, Algorithm::Fara3c | Algorithm::Faraql)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                Error::validation("algorithm", format!("unknown algorithm {s:?}; expected a3c, fara3c, aql or faraql"))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApproximatorKind {
    Network,
    Tabular,
}

/// How an agent's heads map onto the environment's composite actions.
///
/// Factored agents have one head per factor of the environment space.
/// Baselines have a single head covering every composite action, which
/// makes every combination rule the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentSpec {
    pub algorithm: Algorithm,
    pub rule: CombinationRule,
    pub env_space: FactoredActionSpace,
    pub head_space: FactoredActionSpace,
}

impl AgentSpec {
    pub fn new(algorithm: Algorithm, rule: CombinationRule, env_space: FactoredActionSpace) -> Result<Self> {
        let (rule, head_space) = if algorithm.is_factored() {
            (rule, env_space.clone())
        } else {
            (CombinationRule::Sum, FactoredActionSpace::flat(env_space.total())?)
        };
        if !algorithm.is_actor_critic() && rule != CombinationRule::Sum {
            return Err(Error::validation(
                "combination",
                format!("{algorithm} uses the additive Q decomposition; only \"sum\" is supported"),
            ));
        }
        Ok(AgentSpec {
            algorithm,
            rule,
            env_space,
            head_space,
        })
    }

    pub fn head_sizes(&self) -> Vec<usize> {
        self.head_space.sizes()
    }

    pub fn approximator(&self, env: &EnvConfig, kind: ApproximatorKind, hidden: &[usize]) -> Approximator {
        let value_head = self.algorithm.is_actor_critic();
        match kind {
            ApproximatorKind::Network => Approximator::Network(NetworkArch {
                input_dim: env.observation_dim(),
                hidden: hidden.to_vec(),
                head_sizes: self.head_sizes(),
                value_head,
            }),
            ApproximatorKind::Tabular => Approximator::Tabular(TabularArch {
                n_states: env.n_states(),
                head_sizes: self.head_sizes(),
                value_head,
            }),
        }
    }

    /// Composite scores indexed like the environment's actions: `m(.)` for
    /// actor-critic agents, `Q(s, .)` for Q-learning agents.
    pub fn scores(&self, output: &HeadsOutput) -> Result<Vec<f64>> {
        combine(self.rule, &output.factor_logits, &self.head_space)
    }

    /// Per-head values of composite `action`.
    pub fn head_values(&self, action: usize) -> Result<Vec<usize>> {
        Ok(self.head_space.decompose_index(action)?.factor_values)
    }
}

/// A frozen policy: spec, model and parameters.
#[derive(Debug, Clone)]
pub struct Agent {
    pub spec: AgentSpec,
    pub model: Model,
    pub params: Vec<f64>,
}

/// Residual exploration used when evaluating Q-learning agents.
pub const Q_EVAL_EPSILON: f64 = 0.05;

impl Agent {
    pub fn output(&self, obs: &Observation) -> Result<HeadsOutput> {
        self.model.forward(&self.params, obs)
    }

    pub fn scores(&self, obs: &Observation) -> Result<Vec<f64>> {
        self.spec.scores(&self.output(obs)?)
    }

    /// Behaviour distribution used for plain evaluation.
    pub fn policy(&self, scores: &[f64]) -> Vec<f64> {
        if self.spec.algorithm.is_actor_critic() {
            softmax(scores)
        } else {
            epsilon_greedy_distribution(scores, Q_EVAL_EPSILON)
        }
    }
}

/// `(1 - eps) * onehot(argmax) + eps * uniform`.
pub fn epsilon_greedy_distribution(q: &[f64], epsilon: f64) -> Vec<f64> {
    let n = q.len() as f64;
    let best = crate::rng::argmax(q);
    let mut p = vec![epsilon / n; q.len()];
    p[best] += 1.0 - epsilon;
    p
}
