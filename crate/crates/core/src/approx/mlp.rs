use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};

/// Weights of a fully connected network stored in one flat buffer.
///
/// Layer `l` maps `dims[l]` inputs to `dims[l + 1]` outputs; its weight
/// matrix (row-major, one row per output) is followed by its bias. Hidden
/// layers use `tanh`, the output layer is linear.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    dims: Vec<usize>,
    data: Vec<f64>,
}

/// Activations recorded by a forward pass, input first, output last.
#[derive(Clone, Debug)]
pub struct Trace {
    acts: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("trace has an output")
    }
}

fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl MlpParams {
    /// `input -> hidden -> hidden -> output` with uniform
    /// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` initialization.
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, output: usize, rng: &mut R) -> Self {
        Self::with_dims(&[input, hidden, hidden, output], rng)
    }

    pub fn with_dims<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Self {
        assert!(dims.len() >= 2 && dims.iter().all(|&d| d > 0));
        let mut data = Vec::with_capacity(param_count(dims));
        for w in dims.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for _ in 0..w[0] * w[1] + w[1] {
                data.push(rng.gen_range(-bound..=bound));
            }
        }
        MlpParams {
            dims: dims.to_vec(),
            data,
        }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        assert!(dims.len() >= 2);
        MlpParams {
            dims: dims.to_vec(),
            data: vec![0.0; param_count(dims)],
        }
    }

    pub fn from_parts(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(contract("a network needs at least two non-empty layers"));
        }
        if data.len() != param_count(&dims) {
            return Err(contract(format!(
                "layout {:?} needs {} parameters, got {}",
                dims,
                param_count(&dims),
                data.len()
            )));
        }
        Ok(MlpParams { dims, data })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_len(&self) -> usize {
        self.dims[0]
    }

    pub fn output_len(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_len() {
            return Err(contract(format!(
                "network expects {} inputs, got {}",
                self.input_len(),
                x.len()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        let mut offset = 0;
        let last = self.dims.len() - 2;
        for (l, w) in self.dims.windows(2).enumerate() {
            let mut next = vec![0.0; w[1]];
            offset = self.affine(offset, w[0], w[1], &cur, &mut next);
            if l < last {
                next.iter_mut().for_each(|v| *v = v.tanh());
            }
            cur = next;
        }
        Ok(cur)
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<Trace> {
        self.check_input(x)?;
        let mut acts = Vec::with_capacity(self.dims.len());
        acts.push(x.to_vec());
        let mut offset = 0;
        let last = self.dims.len() - 2;
        for (l, w) in self.dims.windows(2).enumerate() {
            let mut next = vec![0.0; w[1]];
            offset = self.affine(offset, w[0], w[1], &acts[l], &mut next);
            if l < last {
                next.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(next);
        }
        Ok(Trace { acts })
    }

    fn affine(&self, offset: usize, n_in: usize, n_out: usize, x: &[f64], out: &mut [f64]) -> usize {
        let w = &self.data[offset..offset + n_in * n_out];
        let b = &self.data[offset + n_in * n_out..offset + n_in * n_out + n_out];
        for (o, (row, bias)) in out.iter_mut().zip(w.chunks_exact(n_in).zip(b)) {
            *o = bias + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
        offset + n_in * n_out + n_out
    }

    /// Add `d output . upstream` with respect to every parameter into
    /// `grads`, using activations from `trace`.
    pub fn backward_into(&self, trace: &Trace, upstream: &[f64], grads: &mut [f64]) {
        debug_assert_eq!(grads.len(), self.data.len());
        debug_assert_eq!(upstream.len(), self.output_len());
        let n_layers = self.dims.len() - 1;
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for w in self.dims.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }
        let mut delta = upstream.to_vec();
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let x = &trace.acts[l];
            let o = offsets[l];
            {
                let (gw, gb) = grads[o..o + n_in * n_out + n_out].split_at_mut(n_in * n_out);
                for (j, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    gb[j] += d;
                    for (g, &xi) in gw[j * n_in..(j + 1) * n_in].iter_mut().zip(x) {
                        *g += d * xi;
                    }
                }
            }
            if l == 0 {
                break;
            }
            let w = &self.data[o..o + n_in * n_out];
            let mut prev = vec![0.0; n_in];
            for (j, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (p, &wij) in prev.iter_mut().zip(&w[j * n_in..(j + 1) * n_in]) {
                    *p += d * wij;
                }
            }
            // hidden activations are tanh outputs: d tanh = 1 - a^2
            for (p, &a) in prev.iter_mut().zip(x) {
                *p *= 1.0 - a * a;
            }
            delta = prev;
        }
    }

    /// Gradient of `output . upstream` with respect to all parameters.
    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        if upstream.len() != self.output_len() {
            return Err(contract(format!(
                "upstream gradient has length {}, network outputs {}",
                upstream.len(),
                self.output_len()
            )));
        }
        let trace = self.forward_trace(x)?;
        let mut grads = vec![0.0; self.data.len()];
        self.backward_into(&trace, upstream, &mut grads);
        Ok(grads)
    }

    /// Checkpoint as structured text; the layer dims come first.
    pub fn to_text(&self) -> String {
        serde_json::to_string(self).expect("parameters serialize")
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let raw: MlpParams = serde_json::from_str(text)?;
        let params = MlpParams::from_parts(raw.dims, raw.data)?;
        if !params.is_finite() {
            return Err(Error::NonFinite("checkpoint holds non-finite weights".into()));
        }
        Ok(params)
    }
}
