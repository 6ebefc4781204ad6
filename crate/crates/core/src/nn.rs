//! Fully connected ReLU networks with hand-written backpropagation, Adam and
//! Polyak averaging. Parameters live in one flat `f64` buffer so optimizers and
//! checkpoints can treat every network the same way.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Multilayer perceptron: affine layers, ReLU on every hidden layer, linear output.
///
/// Layer `l` stores its `out × in` weight matrix row-major followed by its bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    pub params: Vec<f64>,
}

/// Activations recorded by [`Mlp::forward`] for the backward pass.
/// `acts[0]` is the input, `acts[l]` the output of layer `l`.
#[derive(Debug, Clone, Default)]
pub struct Cache {
    acts: Vec<Vec<f64>>,
}

impl Cache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map(|v| v.as_slice()).unwrap_or(&[])
    }

    /// Post-activation of hidden layer `l` (1-based).
    pub fn hidden(&self, l: usize) -> &[f64] {
        &self.acts[l]
    }
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    /// Uniform fan-in initialization: every weight and bias of a layer with
    /// `n` inputs is drawn from `U(-1/√n, 1/√n)`.
    pub fn new(sizes: &[usize], rng: &mut ChaCha8Rng) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least an input and an output size");
        let mut params = Vec::with_capacity(param_count(sizes));
        for w in sizes.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for _ in 0..(w[0] * w[1] + w[1]) {
                params.push(rng.gen_range(-bound..bound));
            }
        }
        Mlp {
            sizes: sizes.to_vec(),
            params,
        }
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Result<Self> {
        if sizes.len() < 2 || params.len() != param_count(sizes) {
            return Err(Error::Shape(format!(
                "layout {sizes:?} needs {} parameters, got {}",
                param_count(sizes),
                params.len()
            )));
        }
        Ok(Mlp {
            sizes: sizes.to_vec(),
            params,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn forward(&self, input: &[f64], cache: &mut Cache) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                input.len()
            )));
        }
        let layers = self.sizes.len() - 1;
        cache.acts.resize_with(layers + 1, Vec::new);
        cache.acts[0].clear();
        cache.acts[0].extend_from_slice(input);
        let mut off = 0;
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let (prev, rest) = cache.acts.split_at_mut(l + 1);
            let x = &prev[l];
            let y = &mut rest[0];
            y.clear();
            let hidden = l + 1 < layers;
            for o in 0..n_out {
                let row = &w[o * n_in..(o + 1) * n_in];
                let mut z = b[o];
                for (wi, xi) in row.iter().zip(x.iter()) {
                    z += wi * xi;
                }
                y.push(if hidden { z.max(0.0) } else { z });
            }
            off += n_in * n_out + n_out;
        }
        Ok(())
    }

    /// Forward pass returning only the output.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut cache = Cache::default();
        self.forward(input, &mut cache)?;
        Ok(cache.output().to_vec())
    }

    /// Backpropagates `dout` (gradient of the loss w.r.t. the output) through the
    /// pass recorded in `cache`. Parameter gradients are accumulated into `grad`,
    /// the input gradient is written to `dinput`; either may be skipped.
    pub fn backward(
        &self,
        cache: &Cache,
        dout: &[f64],
        mut grad: Option<&mut [f64]>,
        dinput: Option<&mut [f64]>,
    ) {
        let layers = self.sizes.len() - 1;
        debug_assert_eq!(dout.len(), self.output_dim());
        let mut delta = dout.to_vec();
        let mut offsets = Vec::with_capacity(layers);
        let mut off = 0;
        for l in 0..layers {
            offsets.push(off);
            off += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = offsets[l];
            let x = &cache.acts[l];
            if let Some(g) = grad.as_deref_mut() {
                let (gw, gb) = g[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
                for o in 0..n_out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    gb[o] += d;
                    for (gi, xi) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(x.iter()) {
                        *gi += d * xi;
                    }
                }
            }
            if l == 0 && dinput.is_none() {
                break;
            }
            let w = &self.params[off..off + n_in * n_out];
            let mut prev = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                for (p, wi) in prev.iter_mut().zip(w[o * n_in..(o + 1) * n_in].iter()) {
                    *p += d * wi;
                }
            }
            if l > 0 {
                // ReLU mask of the layer feeding this one
                for (p, a) in prev.iter_mut().zip(x.iter()) {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                }
            }
            delta = prev;
        }
        if let Some(di) = dinput {
            di.copy_from_slice(&delta);
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "Adam state holds {} moments, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// `target ← χ·online + (1 − χ)·target`.
pub fn polyak_update(target: &mut [f64], online: &[f64], chi: f64) -> Result<()> {
    if target.len() != online.len() {
        return Err(Error::Shape(format!(
            "polyak target has {} params, online has {}",
            target.len(),
            online.len()
        )));
    }
    for (t, o) in target.iter_mut().zip(online) {
        *t = chi * o + (1.0 - chi) * *t;
    }
    Ok(())
}
