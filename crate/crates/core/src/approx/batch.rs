use std::collections::HashMap;

use super::mlp::{MlpParams, Trace};

/// Batched evaluation that runs the network once per distinct input.
///
/// Gradients are linear in the upstream signal, so the upstream vectors of
/// repeated inputs are summed and back-propagated once. One-shot games feed
/// the same handful of inputs thousands of times per batch.
pub struct BatchEval<'a> {
    net: &'a MlpParams,
    index: HashMap<Vec<u64>, usize>,
    traces: Vec<Trace>,
    upstream: Vec<Vec<f64>>,
}

impl<'a> BatchEval<'a> {
    pub fn new(net: &'a MlpParams) -> Self {
        BatchEval {
            net,
            index: HashMap::new(),
            traces: Vec::new(),
            upstream: Vec::new(),
        }
    }

    /// Handle for `x`, evaluating the network if `x` is new.
    ///
    /// Panics if `x` has the wrong length; callers build inputs from a
    /// validated layout.
    pub fn eval(&mut self, x: &[f64]) -> usize {
        let key: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
        if let Some(&id) = self.index.get(&key) {
            return id;
        }
        let trace = self
            .net
            .forward_trace(x)
            .expect("batch input matches the network layout");
        let id = self.traces.len();
        self.traces.push(trace);
        self.upstream.push(vec![0.0; self.net.output_len()]);
        self.index.insert(key, id);
        id
    }

    pub fn output(&self, id: usize) -> &[f64] {
        self.traces[id].output()
    }

    pub fn num_unique(&self) -> usize {
        self.traces.len()
    }

    /// Add `scale * grad` to the upstream gradient of input `id`.
    pub fn accumulate(&mut self, id: usize, grad: &[f64], scale: f64) {
        for (u, g) in self.upstream[id].iter_mut().zip(grad) {
            *u += scale * g;
        }
    }

    pub fn accumulate_at(&mut self, id: usize, output: usize, value: f64) {
        self.upstream[id][output] += value;
    }

    /// Parameter gradient of `sum_inputs output . upstream`.
    pub fn gradient(&self) -> Vec<f64> {
        let mut grads = vec![0.0; self.net.len()];
        for (trace, up) in self.traces.iter().zip(&self.upstream) {
            if up.iter().any(|&u| u != 0.0) {
                self.net.backward_into(trace, up, &mut grads);
            }
        }
        grads
    }
}
