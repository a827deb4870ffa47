//! Function approximators with one output head per action factor.
//!
//! Both the fully-connected network and the tabular variant expose the same
//! contract: a flat parameter vector, a forward pass producing per-head
//! outputs (plus an optional state value), and a reverse-mode pass that
//! accumulates `sum_heads grad . output` into a gradient buffer.

pub mod grad_check;
mod network;
mod rmsprop;
mod tabular;

use serde::{Deserialize, Serialize};

pub use network::{init_network, Dense, FactorHeadNetwork, NetworkArch};
pub use rmsprop::{apply_rmsprop, RmspropState, SharedParameters, SharedVector};
pub use tabular::{tabular_forward, tabular_update, TabularArch};

use crate::environments::Observation;
use crate::error::{Error, Result};
use crate::factored_actions::{CompositeAction, FactorLogits, FactoredActionSpace};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterVector(pub Vec<f64>);

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradientVector(pub Vec<f64>);

impl GradientVector {
    pub fn zeros(len: usize) -> Self {
        GradientVector(vec![0.0; len])
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&g| g == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ForwardCache {
    /// Post-activation values: `[input, hidden_1, ..., hidden_L]`.
    Network { activations: Vec<Vec<f64>> },
    Tabular { state: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadsOutput {
    pub factor_logits: FactorLogits,
    pub value: Option<f64>,
    pub cache: ForwardCache,
}

/// Upstream gradients for each head (and the value head, if any).
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrads {
    pub heads: Vec<Vec<f64>>,
    pub value: f64,
}

impl HeadGrads {
    pub fn zeros(head_sizes: &[usize]) -> Self {
        HeadGrads {
            heads: head_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            value: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Approximator {
    Network(NetworkArch),
    Tabular(TabularArch),
}

impl Approximator {
    pub fn head_sizes(&self) -> &[usize] {
        match self {
            Approximator::Network(a) => &a.head_sizes,
            Approximator::Tabular(a) => &a.head_sizes,
        }
    }

    pub fn has_value_head(&self) -> bool {
        match self {
            Approximator::Network(a) => a.value_head,
            Approximator::Tabular(a) => a.value_head,
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            Approximator::Network(a) => FactorHeadNetwork::new(a.clone()).num_params(),
            Approximator::Tabular(a) => a.num_params(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Approximator::Network(a) => a.validate(),
            Approximator::Tabular(a) => a.validate(),
        }
    }

    /// Bind the descriptor to an evaluable model.
    pub fn build(&self) -> Result<Model> {
        self.validate()?;
        Ok(match self {
            Approximator::Network(a) => Model::Network(FactorHeadNetwork::new(a.clone())),
            Approximator::Tabular(a) => Model::Tabular(a.clone()),
        })
    }
}

/// An approximator with its parameter layout resolved.
#[derive(Debug, Clone)]
pub enum Model {
    Network(FactorHeadNetwork),
    Tabular(TabularArch),
}

impl Model {
    pub fn descriptor(&self) -> Approximator {
        match self {
            Model::Network(n) => Approximator::Network(n.arch().clone()),
            Model::Tabular(t) => Approximator::Tabular(t.clone()),
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            Model::Network(n) => n.num_params(),
            Model::Tabular(t) => t.num_params(),
        }
    }

    pub fn head_sizes(&self) -> &[usize] {
        match self {
            Model::Network(n) => &n.arch().head_sizes,
            Model::Tabular(t) => &t.head_sizes,
        }
    }

    /// Weights uniform in `±1/sqrt(fan_in)` for networks; zeros for tables.
    pub fn init(&self, seed: u64) -> ParameterVector {
        match self {
            Model::Network(n) => init_network(n.arch(), seed),
            Model::Tabular(t) => ParameterVector(vec![0.0; t.num_params()]),
        }
    }

    pub fn forward(&self, params: &[f64], obs: &Observation) -> Result<HeadsOutput> {
        match self {
            Model::Network(n) => n.forward(params, &obs.features),
            Model::Tabular(t) => tabular_forward(t, params, obs.state_index),
        }
    }

    /// Accumulate the reverse-mode gradient into `grad`.
    pub fn backward_into(
        &self,
        params: &[f64],
        cached: &HeadsOutput,
        output_grads: &HeadGrads,
        grad: &mut [f64],
    ) -> Result<()> {
        match self {
            Model::Network(n) => n.backward_into(params, cached, output_grads, grad),
            Model::Tabular(t) => t.backward_into(cached, output_grads, grad),
        }
    }

    pub fn backward(
        &self,
        params: &[f64],
        cached: &HeadsOutput,
        output_grads: &HeadGrads,
    ) -> Result<GradientVector> {
        let mut g = GradientVector::zeros(self.num_params());
        self.backward_into(params, cached, output_grads, &mut g.0)?;
        Ok(g)
    }
}

/// `Q(s, a)` as the sum of the factor heads' entries for `a`.
///
/// An unfactored output (a single head of width `space.total()`) is read at
/// the composite index directly.
pub fn q_of(
    output: &HeadsOutput,
    space: &FactoredActionSpace,
    action: &CompositeAction,
) -> Result<f64> {
    let heads = &output.factor_logits.per_factor;
    if heads.len() == 1 && space.n_factors() > 1 && heads[0].len() == space.total() {
        if action.index >= space.total() {
            return Err(Error::OutOfRange {
                what: "composite index",
                value: action.index,
                bound: space.total(),
            });
        }
        return Ok(heads[0][action.index]);
    }
    output.factor_logits.validate(space)?;
    if action.factor_values.len() != heads.len() {
        return Err(Error::Shape {
            context: "action tuple",
            expected: heads.len(),
            actual: action.factor_values.len(),
        });
    }
    let mut q = 0.0;
    for (head, &v) in heads.iter().zip(&action.factor_values) {
        q += *head.get(v).ok_or(Error::OutOfRange {
            what: "factor value",
            value: v,
            bound: head.len(),
        })?;
    }
    Ok(q)
}

/// `max_a Q(s, a)` for the additive form: the sum of the per-head maxima.
pub fn max_q(output: &HeadsOutput) -> f64 {
    output
        .factor_logits
        .per_factor
        .iter()
        .map(|h| h.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .sum()
}

/// Greedy factor values for the additive form (ties to the lowest value).
pub fn greedy_factor_values(output: &HeadsOutput) -> Vec<usize> {
    output
        .factor_logits
        .per_factor
        .iter()
        .map(|h| crate::rng::argmax(h))
        .collect()
}
