//! Compositional discrete action spaces and the combination functions that
//! fuse per-factor outputs into composite scores.
//!
//! A composite action picks one value from each factor set. Composite indices
//! flatten the factor cuboid lexicographically with the last factor varying
//! fastest, so `(a_1, a_2, a_3)` on sizes `[3, 3, 2]` maps to
//! `(a_1 * 3 + a_2) * 2 + a_3`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::sample_categorical;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorSpec {
    pub name: String,
    pub size: usize,
}

impl FactorSpec {
    pub fn new(name: impl Into<String>, size: usize) -> Self {
        FactorSpec {
            name: name.into(),
            size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FactoredActionSpace {
    factors: Vec<FactorSpec>,
    strides: Vec<usize>,
    total: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompositeAction {
    pub factor_values: Vec<usize>,
    pub index: usize,
}

/// Validate factor specs and build the space.
pub fn build_action_space(factor_specs: Vec<FactorSpec>) -> Result<FactoredActionSpace> {
    if factor_specs.is_empty() {
        return Err(Error::validation("factors", "at least one factor is required"));
    }
    for (i, spec) in factor_specs.iter().enumerate() {
        if spec.size == 0 {
            return Err(Error::validation(
                format!("factors[{i}].size"),
                "factor size must be at least 1",
            ));
        }
        if spec.name.is_empty() {
            return Err(Error::validation(
                format!("factors[{i}].name"),
                "factor name must be nonempty",
            ));
        }
        if factor_specs[..i].iter().any(|s| s.name == spec.name) {
            return Err(Error::validation(
                format!("factors[{i}].name"),
                format!("duplicate factor name {:?}", spec.name),
            ));
        }
    }
    let mut strides = vec![1usize; factor_specs.len()];
    for i in (0..factor_specs.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1]
            .checked_mul(factor_specs[i + 1].size)
            .ok_or_else(|| Error::validation("factors", "composite action count overflows"))?;
    }
    let total = strides[0]
        .checked_mul(factor_specs[0].size)
        .ok_or_else(|| Error::validation("factors", "composite action count overflows"))?;
    Ok(FactoredActionSpace {
        factors: factor_specs,
        strides,
        total,
    })
}

impl FactoredActionSpace {
    pub fn from_sizes(sizes: &[usize]) -> Result<Self> {
        build_action_space(
            sizes
                .iter()
                .enumerate()
                .map(|(i, &s)| FactorSpec::new(format!("f{i}"), s))
                .collect(),
        )
    }

    /// Horizontal x vertical x fire, 3 x 3 x 2 = 18 composite actions.
    pub fn move_and_fire() -> Self {
        build_action_space(vec![
            FactorSpec::new("horizontal", 3),
            FactorSpec::new("vertical", 3),
            FactorSpec::new("fire", 2),
        ])
        .expect("static space is valid")
    }

    /// Unfactored space with a single factor covering every composite action.
    pub fn flat(total: usize) -> Result<Self> {
        build_action_space(vec![FactorSpec::new("action", total)])
    }

    pub fn factors(&self) -> &[FactorSpec] {
        &self.factors
    }

    pub fn n_factors(&self) -> usize {
        self.factors.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.size).collect()
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn compose_index(&self, factor_values: &[usize]) -> Result<usize> {
        if factor_values.len() != self.factors.len() {
            return Err(Error::Shape {
                context: "factor tuple",
                expected: self.factors.len(),
                actual: factor_values.len(),
            });
        }
        let mut index = 0;
        for ((&v, spec), &stride) in factor_values.iter().zip(&self.factors).zip(&self.strides) {
            if v >= spec.size {
                return Err(Error::OutOfRange {
                    what: "factor value",
                    value: v,
                    bound: spec.size,
                });
            }
            index += v * stride;
        }
        Ok(index)
    }

    pub fn decompose_index(&self, index: usize) -> Result<CompositeAction> {
        if index >= self.total {
            return Err(Error::OutOfRange {
                what: "composite index",
                value: index,
                bound: self.total,
            });
        }
        let factor_values = self
            .strides
            .iter()
            .zip(&self.factors)
            .map(|(&stride, spec)| (index / stride) % spec.size)
            .collect();
        Ok(CompositeAction {
            factor_values,
            index,
        })
    }

    /// Factor value `factor` of composite `index`, without allocating.
    #[inline]
    pub fn factor_value(&self, index: usize, factor: usize) -> usize {
        (index / self.strides[factor]) % self.factors[factor].size
    }

    pub fn action(&self, factor_values: &[usize]) -> Result<CompositeAction> {
        let index = self.compose_index(factor_values)?;
        Ok(CompositeAction {
            factor_values: factor_values.to_vec(),
            index,
        })
    }
}

/// Per-factor output vectors, one per factor set.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorLogits {
    pub per_factor: Vec<Vec<f64>>,
}

impl FactorLogits {
    pub fn new(per_factor: Vec<Vec<f64>>) -> Self {
        FactorLogits { per_factor }
    }

    pub fn zeros(space: &FactoredActionSpace) -> Self {
        FactorLogits {
            per_factor: space.factors.iter().map(|f| vec![0.0; f.size]).collect(),
        }
    }

    pub fn validate(&self, space: &FactoredActionSpace) -> Result<()> {
        if self.per_factor.len() != space.n_factors() {
            return Err(Error::Shape {
                context: "factor logits",
                expected: space.n_factors(),
                actual: self.per_factor.len(),
            });
        }
        for (v, spec) in self.per_factor.iter().zip(space.factors()) {
            if v.len() != spec.size {
                return Err(Error::Shape {
                    context: "factor logit vector",
                    expected: spec.size,
                    actual: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("factor logits"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CombinationRule {
    #[serde(rename = "sum")]
    Sum,
    #[serde(rename = "product")]
    Product,
    #[serde(rename = "amean")]
    ArithmeticMean,
    #[serde(rename = "hmean")]
    HarmonicMean,
    #[serde(rename = "gmean")]
    GeometricMean,
    #[serde(rename = "min")]
    Minimum,
}

impl CombinationRule {
    pub const ALL: [CombinationRule; 6] = [
        CombinationRule::Sum,
        CombinationRule::Product,
        CombinationRule::ArithmeticMean,
        CombinationRule::HarmonicMean,
        CombinationRule::GeometricMean,
        CombinationRule::Minimum,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CombinationRule::Sum => "sum",
            CombinationRule::Product => "product",
            CombinationRule::ArithmeticMean => "amean",
            CombinationRule::HarmonicMean => "hmean",
            CombinationRule::GeometricMean => "gmean",
            CombinationRule::Minimum => "min",
        }
    }

    fn uses_softplus(self) -> bool {
        matches!(
            self,
            CombinationRule::HarmonicMean | CombinationRule::GeometricMean
        )
    }
}

impl fmt::Display for CombinationRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CombinationRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CombinationRule::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| {
                Error::validation(
                    "combination",
                    format!("unknown rule {s:?}; expected one of sum, product, amean, hmean, gmean, min"),
                )
            })
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Factor outputs as seen by the rule: raw for most rules, softplus-mapped
/// for the geometric and harmonic means.
fn transformed_inputs(
    rule: CombinationRule,
    logits: &FactorLogits,
) -> Result<Vec<Vec<f64>>> {
    if !rule.uses_softplus() {
        return Ok(logits.per_factor.clone());
    }
    logits
        .per_factor
        .iter()
        .map(|v| {
            v.iter()
                .map(|&x| {
                    let y = softplus(x);
                    if y > 0.0 {
                        Ok(y)
                    } else {
                        Err(Error::Positivity {
                            rule: rule.name(),
                            value: y,
                        })
                    }
                })
                .collect()
        })
        .collect()
}

/// Composite scores `m(f_1(a_1), ..., f_n(a_n))`, one per composite index.
pub fn combine(
    rule: CombinationRule,
    logits: &FactorLogits,
    space: &FactoredActionSpace,
) -> Result<Vec<f64>> {
    logits.validate(space)?;
    let inputs = transformed_inputs(rule, logits)?;
    let n = space.n_factors() as f64;
    let mut out = Vec::with_capacity(space.total());
    for idx in 0..space.total() {
        let values = (0..space.n_factors()).map(|i| inputs[i][space.factor_value(idx, i)]);
        let score = match rule {
            CombinationRule::Sum => values.sum(),
            CombinationRule::Product => values.product(),
            CombinationRule::ArithmeticMean => values.sum::<f64>() / n,
            CombinationRule::GeometricMean => (values.map(f64::ln).sum::<f64>() / n).exp(),
            CombinationRule::HarmonicMean => n / values.map(f64::recip).sum::<f64>(),
            CombinationRule::Minimum => values.fold(f64::INFINITY, f64::min),
        };
        out.push(score);
    }
    if out.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("combined scores"));
    }
    Ok(out)
}

/// Pull a gradient on composite scores back onto the factor outputs.
///
/// For `Minimum` the subgradient goes to the first factor attaining the minimum.
pub fn combine_backward(
    rule: CombinationRule,
    logits: &FactorLogits,
    space: &FactoredActionSpace,
    score_grads: &[f64],
) -> Result<Vec<Vec<f64>>> {
    if score_grads.len() != space.total() {
        return Err(Error::Shape {
            context: "composite score gradient",
            expected: space.total(),
            actual: score_grads.len(),
        });
    }
    logits.validate(space)?;
    let k = space.n_factors();
    let mut grads: Vec<Vec<f64>> = space.factors().iter().map(|f| vec![0.0; f.size]).collect();

    if rule == CombinationRule::Sum || rule == CombinationRule::ArithmeticMean {
        let scale = if rule == CombinationRule::Sum { 1.0 } else { 1.0 / k as f64 };
        for (idx, &g) in score_grads.iter().enumerate() {
            for (i, gi) in grads.iter_mut().enumerate() {
                gi[space.factor_value(idx, i)] += g * scale;
            }
        }
        return Ok(grads);
    }

    let inputs = transformed_inputs(rule, logits)?;
    let mut vals = vec![0.0; k];
    for (idx, &g) in score_grads.iter().enumerate() {
        for i in 0..k {
            vals[i] = inputs[i][space.factor_value(idx, i)];
        }
        match rule {
            CombinationRule::Product => {
                for i in 0..k {
                    let others: f64 = (0..k).filter(|&j| j != i).map(|j| vals[j]).product();
                    grads[i][space.factor_value(idx, i)] += g * others;
                }
            }
            CombinationRule::GeometricMean => {
                let z = (vals.iter().map(|v| v.ln()).sum::<f64>() / k as f64).exp();
                for i in 0..k {
                    let a = space.factor_value(idx, i);
                    let dsp = sigmoid(logits.per_factor[i][a]);
                    grads[i][a] += g * z / (k as f64 * vals[i]) * dsp;
                }
            }
            CombinationRule::HarmonicMean => {
                let s: f64 = vals.iter().map(|v| v.recip()).sum();
                for i in 0..k {
                    let a = space.factor_value(idx, i);
                    let dsp = sigmoid(logits.per_factor[i][a]);
                    grads[i][a] += g * k as f64 / (s * s * vals[i] * vals[i]) * dsp;
                }
            }
            CombinationRule::Minimum => {
                let mut arg = 0;
                for i in 1..k {
                    if vals[i] < vals[arg] {
                        arg = i;
                    }
                }
                grads[arg][space.factor_value(idx, arg)] += g;
            }
            CombinationRule::Sum | CombinationRule::ArithmeticMean => unreachable!(),
        }
    }
    Ok(grads)
}

/// Max-subtracted softmax.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
    let z: f64 = out.iter().sum();
    for p in &mut out {
        *p /= z;
    }
    out
}

pub fn log_softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scores.iter().map(|&s| (s - max).exp()).sum::<f64>().ln();
    scores.iter().map(|&s| s - lse).collect()
}

pub fn entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// `softmax(combine(rule, logits))`.
pub fn composite_policy(
    rule: CombinationRule,
    logits: &FactorLogits,
    space: &FactoredActionSpace,
) -> Result<Vec<f64>> {
    Ok(softmax(&combine(rule, logits, space)?))
}

/// Draw each factor independently from its own softmax.
pub fn factorwise_sample<R: Rng + ?Sized>(
    logits: &FactorLogits,
    space: &FactoredActionSpace,
    rng: &mut R,
) -> Result<CompositeAction> {
    logits.validate(space)?;
    let values: Vec<usize> = logits
        .per_factor
        .iter()
        .map(|v| sample_categorical(&softmax(v), rng))
        .collect();
    space.action(&values)
}
