use serde::{Deserialize, Serialize};

use super::{ForwardCache, HeadGrads, HeadsOutput};
use crate::error::{Error, Result};
use crate::factored_actions::FactorLogits;

/// One row per state; each row holds every head's entries followed by the
/// state value when `value_head` is set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TabularArch {
    pub n_states: usize,
    pub head_sizes: Vec<usize>,
    pub value_head: bool,
}

impl TabularArch {
    pub fn validate(&self) -> Result<()> {
        if self.n_states == 0 {
            return Err(Error::validation("n_states", "must be at least 1"));
        }
        if self.head_sizes.is_empty() || self.head_sizes.contains(&0) {
            return Err(Error::validation("head_sizes", "need at least one head, all widths >= 1"));
        }
        Ok(())
    }

    pub fn row_width(&self) -> usize {
        self.head_sizes.iter().sum::<usize>() + usize::from(self.value_head)
    }

    pub fn num_params(&self) -> usize {
        self.n_states * self.row_width()
    }

    fn row(&self, state: usize) -> Result<std::ops::Range<usize>> {
        if state >= self.n_states {
            return Err(Error::OutOfRange {
                what: "state index",
                value: state,
                bound: self.n_states,
            });
        }
        let w = self.row_width();
        Ok(state * w..(state + 1) * w)
    }

    pub(crate) fn backward_into(
        &self,
        cached: &HeadsOutput,
        output_grads: &HeadGrads,
        grad: &mut [f64],
    ) -> Result<()> {
        let ForwardCache::Tabular { state } = cached.cache else {
            return Err(Error::validation("cache", "expected a tabular forward cache"));
        };
        if grad.len() != self.num_params() {
            return Err(Error::Shape {
                context: "gradient buffer",
                expected: self.num_params(),
                actual: grad.len(),
            });
        }
        let row = self.flatten_grads(output_grads)?;
        for (g, r) in grad[self.row(state)?].iter_mut().zip(row) {
            *g += r;
        }
        Ok(())
    }

    fn flatten_grads(&self, output_grads: &HeadGrads) -> Result<Vec<f64>> {
        if output_grads.heads.len() != self.head_sizes.len() {
            return Err(Error::Shape {
                context: "head gradients",
                expected: self.head_sizes.len(),
                actual: output_grads.heads.len(),
            });
        }
        let mut row = Vec::with_capacity(self.row_width());
        for (g, &n) in output_grads.heads.iter().zip(&self.head_sizes) {
            if g.len() != n {
                return Err(Error::Shape {
                    context: "head gradient",
                    expected: n,
                    actual: g.len(),
                });
            }
            row.extend_from_slice(g);
        }
        if self.value_head {
            row.push(output_grads.value);
        }
        Ok(row)
    }
}

/// Read a state's row as head outputs.
pub fn tabular_forward(arch: &TabularArch, table: &[f64], state_index: usize) -> Result<HeadsOutput> {
    if table.len() != arch.num_params() {
        return Err(Error::Shape {
            context: "table",
            expected: arch.num_params(),
            actual: table.len(),
        });
    }
    let row = &table[arch.row(state_index)?];
    let mut off = 0;
    let per_factor = arch
        .head_sizes
        .iter()
        .map(|&n| {
            let v = row[off..off + n].to_vec();
            off += n;
            v
        })
        .collect();
    let value = arch.value_head.then(|| row[off]);
    Ok(HeadsOutput {
        factor_logits: FactorLogits::new(per_factor),
        value,
        cache: ForwardCache::Tabular { state: state_index },
    })
}

/// Plain gradient step `row -= lr * grads` on one state's row.
pub fn tabular_update(
    arch: &TabularArch,
    table: &mut [f64],
    state_index: usize,
    grads: &HeadGrads,
    lr: f64,
) -> Result<()> {
    let range = arch.row(state_index)?;
    let row = arch.flatten_grads(grads)?;
    for (t, g) in table[range].iter_mut().zip(row) {
        *t -= lr * g;
    }
    Ok(())
}
