use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ForwardCache, HeadGrads, HeadsOutput, ParameterVector};
use crate::error::{Error, Result};
use crate::factored_actions::FactorLogits;
use crate::rng::{stream_rng, STREAM_INIT};

/// Shared rectified-linear torso feeding one affine head per factor, plus an
/// optional linear value head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkArch {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub head_sizes: Vec<usize>,
    pub value_head: bool,
}

impl NetworkArch {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::validation("input_dim", "must be at least 1"));
        }
        if let Some(i) = self.hidden.iter().position(|&w| w == 0) {
            return Err(Error::validation(format!("hidden[{i}]"), "width must be at least 1"));
        }
        if self.head_sizes.is_empty() {
            return Err(Error::validation("head_sizes", "at least one head is required"));
        }
        if let Some(i) = self.head_sizes.iter().position(|&w| w == 0) {
            return Err(Error::validation(format!("head_sizes[{i}]"), "width must be at least 1"));
        }
        Ok(())
    }
}

/// Offsets of one affine layer in the flat parameter vector. Weights are
/// row-major `[fan_out][fan_in]`, followed by `fan_out` biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dense {
    pub fan_in: usize,
    pub fan_out: usize,
    pub offset: usize,
}

impl Dense {
    pub fn weights(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.fan_in * self.fan_out
    }

    pub fn biases(&self) -> std::ops::Range<usize> {
        let w = self.offset + self.fan_in * self.fan_out;
        w..w + self.fan_out
    }

    fn len(&self) -> usize {
        self.fan_in * self.fan_out + self.fan_out
    }

    fn apply(&self, params: &[f64], input: &[f64], out: &mut Vec<f64>) {
        let w = &params[self.weights()];
        out.clear();
        out.extend_from_slice(&params[self.biases()]);
        for (o, z) in out.iter_mut().enumerate() {
            let row = &w[o * self.fan_in..(o + 1) * self.fan_in];
            let mut acc = 0.0;
            for (&wi, &xi) in row.iter().zip(input) {
                if xi != 0.0 {
                    acc += wi * xi;
                }
            }
            *z += acc;
        }
    }

    /// Accumulate parameter gradients for upstream `delta`; optionally
    /// propagate `W^T delta` into `input_grad`.
    fn backprop(
        &self,
        params: &[f64],
        input: &[f64],
        delta: &[f64],
        grad: &mut [f64],
        input_grad: Option<&mut [f64]>,
    ) {
        let w_range = self.weights();
        let b_range = self.biases();
        for (gb, &d) in grad[b_range].iter_mut().zip(delta) {
            *gb += d;
        }
        let gw = &mut grad[w_range.clone()];
        for (o, &d) in delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let row = &mut gw[o * self.fan_in..(o + 1) * self.fan_in];
            for (g, &x) in row.iter_mut().zip(input) {
                if x != 0.0 {
                    *g += d * x;
                }
            }
        }
        if let Some(ig) = input_grad {
            let w = &params[w_range];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &w[o * self.fan_in..(o + 1) * self.fan_in];
                for (g, &wi) in ig.iter_mut().zip(row) {
                    *g += d * wi;
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct FactorHeadNetwork {
    arch: NetworkArch,
    torso: Vec<Dense>,
    heads: Vec<Dense>,
    value: Option<Dense>,
    num_params: usize,
}

impl FactorHeadNetwork {
    pub fn new(arch: NetworkArch) -> Self {
        let mut offset = 0;
        let mut layer = |fan_in, fan_out| {
            let d = Dense {
                fan_in,
                fan_out,
                offset,
            };
            offset += d.len();
            d
        };
        let mut torso = Vec::with_capacity(arch.hidden.len());
        let mut width = arch.input_dim;
        for &h in &arch.hidden {
            torso.push(layer(width, h));
            width = h;
        }
        let heads = arch.head_sizes.iter().map(|&n| layer(width, n)).collect();
        let value = arch.value_head.then(|| layer(width, 1));
        FactorHeadNetwork {
            arch,
            torso,
            heads,
            value,
            num_params: offset,
        }
    }

    pub fn arch(&self) -> &NetworkArch {
        &self.arch
    }

    pub fn num_params(&self) -> usize {
        self.num_params
    }

    /// Every affine layer in parameter order: torso, factor heads, value head.
    pub fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.torso.iter().chain(&self.heads).chain(&self.value)
    }

    pub fn head_layer(&self, head: usize) -> &Dense {
        &self.heads[head]
    }

    pub fn torso_layers(&self) -> &[Dense] {
        &self.torso
    }

    pub fn forward(&self, params: &[f64], obs: &[f64]) -> Result<HeadsOutput> {
        if params.len() != self.num_params {
            return Err(Error::Shape {
                context: "network parameters",
                expected: self.num_params,
                actual: params.len(),
            });
        }
        if obs.len() != self.arch.input_dim {
            return Err(Error::Shape {
                context: "observation",
                expected: self.arch.input_dim,
                actual: obs.len(),
            });
        }
        if obs.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("observation"));
        }
        let mut activations = Vec::with_capacity(self.torso.len() + 1);
        activations.push(obs.to_vec());
        for layer in &self.torso {
            let mut z = Vec::with_capacity(layer.fan_out);
            layer.apply(params, activations.last().unwrap(), &mut z);
            for v in &mut z {
                *v = v.max(0.0);
            }
            activations.push(z);
        }
        let last = activations.last().unwrap();
        let per_factor = self
            .heads
            .iter()
            .map(|h| {
                let mut out = Vec::with_capacity(h.fan_out);
                h.apply(params, last, &mut out);
                out
            })
            .collect();
        let value = self.value.map(|v| {
            let mut out = Vec::with_capacity(1);
            v.apply(params, last, &mut out);
            out[0]
        });
        let factor_logits = FactorLogits::new(per_factor);
        if factor_logits.per_factor.iter().flatten().any(|x| !x.is_finite())
            || value.is_some_and(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("network output"));
        }
        Ok(HeadsOutput {
            factor_logits,
            value,
            cache: ForwardCache::Network { activations },
        })
    }

    pub fn backward_into(
        &self,
        params: &[f64],
        cached: &HeadsOutput,
        output_grads: &HeadGrads,
        grad: &mut [f64],
    ) -> Result<()> {
        let ForwardCache::Network { activations } = &cached.cache else {
            return Err(Error::validation("cache", "expected a network forward cache"));
        };
        if grad.len() != self.num_params {
            return Err(Error::Shape {
                context: "gradient buffer",
                expected: self.num_params,
                actual: grad.len(),
            });
        }
        if output_grads.heads.len() != self.heads.len() {
            return Err(Error::Shape {
                context: "head gradients",
                expected: self.heads.len(),
                actual: output_grads.heads.len(),
            });
        }
        for (g, h) in output_grads.heads.iter().zip(&self.heads) {
            if g.len() != h.fan_out {
                return Err(Error::Shape {
                    context: "head gradient",
                    expected: h.fan_out,
                    actual: g.len(),
                });
            }
        }
        if activations.len() != self.torso.len() + 1 {
            return Err(Error::Shape {
                context: "forward cache",
                expected: self.torso.len() + 1,
                actual: activations.len(),
            });
        }

        let last = activations.last().unwrap();
        let has_torso = !self.torso.is_empty();
        let mut delta = vec![0.0; last.len()];
        for (layer, g) in self.heads.iter().zip(&output_grads.heads) {
            layer.backprop(params, last, g, grad, has_torso.then_some(&mut delta[..]));
        }
        if let Some(v) = &self.value {
            let g = [output_grads.value];
            v.backprop(params, last, &g, grad, has_torso.then_some(&mut delta[..]));
        }
        for (l, layer) in self.torso.iter().enumerate().rev() {
            let post = &activations[l + 1];
            for (d, &a) in delta.iter_mut().zip(post) {
                if a <= 0.0 {
                    *d = 0.0;
                }
            }
            let input = &activations[l];
            let mut next = if l > 0 { vec![0.0; input.len()] } else { Vec::new() };
            layer.backprop(params, input, &delta, grad, (l > 0).then_some(&mut next[..]));
            delta = next;
        }
        Ok(())
    }
}

/// Uniform weights in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, zero biases.
pub fn init_network(arch: &NetworkArch, seed: u64) -> ParameterVector {
    let net = FactorHeadNetwork::new(arch.clone());
    let mut params = vec![0.0; net.num_params()];
    let mut rng = stream_rng(seed, STREAM_INIT);
    for layer in net.layers() {
        let bound = 1.0 / (layer.fan_in as f64).sqrt();
        for w in &mut params[layer.weights()] {
            *w = rng.gen_range(-bound..=bound);
        }
    }
    ParameterVector(params)
}
