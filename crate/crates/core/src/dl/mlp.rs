//! Fully connected network with ReLU hidden layers and a sigmoid output,
//! trained on the squared error between scores and 0/1 labels.

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Parameters stored flat: for each layer, the `out x in` weight matrix in
/// row-major order followed by the `out` biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    dims: Vec<usize>,
    params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub logits: Vec<f64>,
    pub scores: Vec<f64>,
}

fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[1] * (w[0] + 1)).sum()
}

impl Mlp {
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(invalid("dims", "need at least an input and an output layer, all non-empty"));
        }
        Ok(Self {
            dims: dims.to_vec(),
            params: vec![0.0; param_count(dims)],
        })
    }

    /// He-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self> {
        let mut m = Self::zeros(dims)?;
        let mut off = 0;
        for w in dims.windows(2) {
            let bound = (6.0 / w[0] as f64).sqrt();
            let u = Uniform::new_inclusive(-bound, bound);
            for p in &mut m.params[off..off + w[0] * w[1]] {
                *p = u.sample(rng);
            }
            off += w[1] * (w[0] + 1);
        }
        Ok(m)
    }

    pub fn from_params(dims: &[usize], params: Vec<f64>) -> Result<Self> {
        let mut m = Self::zeros(dims)?;
        if params.len() != m.params.len() {
            return Err(Error::Dimension(format!(
                "{} parameters for dims {dims:?}, expected {}",
                params.len(),
                m.params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(invalid("params", "all parameters must be finite"));
        }
        m.params = params;
        Ok(m)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("at least two layers")
    }

    /// Pre-activations of every layer; the last entry holds the logits.
    fn pre_activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(self.dims.len() - 1);
        let mut off = 0;
        let mut act = x.to_vec();
        let layers = self.dims.len() - 1;
        for (i, w) in self.dims.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &self.params[off..off + n_in * n_out];
            let bias = &self.params[off + n_in * n_out..off + n_out * (n_in + 1)];
            let z: Vec<f64> = (0..n_out)
                .map(|o| {
                    let row = &weights[o * n_in..(o + 1) * n_in];
                    bias[o] + row.iter().zip(&act).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect();
            if i + 1 < layers {
                act = z.iter().map(|v| v.max(0.0)).collect();
            }
            out.push(z);
            off += n_out * (n_in + 1);
        }
        out
    }

    pub fn forward(&self, x: &[f64]) -> Result<Forward> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension(format!("input has {} features, network expects {}", x.len(), self.input_dim())));
        }
        let logits = self.pre_activations(x).pop().expect("at least one layer");
        let scores = logits.iter().map(|&z| sigmoid(z)).collect();
        Ok(Forward { logits, scores })
    }

    /// `(1/|D|) sum_n ||y_n - f(x_n)||^2`.
    pub fn loss(&self, batch: &[(Vec<f64>, Vec<f64>)]) -> Result<f64> {
        check_batch(self, batch)?;
        let mut total = 0.0;
        for (x, y) in batch {
            let f = self.forward(x)?;
            total += f.scores.iter().zip(y).map(|(s, t)| (s - t).powi(2)).sum::<f64>();
        }
        Ok(total / batch.len() as f64)
    }

    /// Loss and its gradient with respect to the flat parameter vector.
    pub fn loss_and_grad(&self, batch: &[(Vec<f64>, Vec<f64>)]) -> Result<(f64, Vec<f64>)> {
        check_batch(self, batch)?;
        let n = batch.len() as f64;
        let layers = self.dims.len() - 1;
        let mut grad = vec![0.0; self.params.len()];
        let mut offsets = Vec::with_capacity(layers);
        let mut off = 0;
        for w in self.dims.windows(2) {
            offsets.push(off);
            off += w[1] * (w[0] + 1);
        }
        let mut loss = 0.0;
        for (x, y) in batch {
            let z = self.pre_activations(x);
            let scores: Vec<f64> = z[layers - 1].iter().map(|&v| sigmoid(v)).collect();
            loss += scores.iter().zip(y).map(|(s, t)| (s - t).powi(2)).sum::<f64>();
            let mut delta: Vec<f64> = scores
                .iter()
                .zip(y)
                .map(|(&s, &t)| 2.0 * (s - t) * s * (1.0 - s) / n)
                .collect();
            for i in (0..layers).rev() {
                let (n_in, n_out) = (self.dims[i], self.dims[i + 1]);
                let o = offsets[i];
                let input: Vec<f64> = if i == 0 {
                    x.clone()
                } else {
                    z[i - 1].iter().map(|v| v.max(0.0)).collect()
                };
                for r in 0..n_out {
                    let d = delta[r];
                    if d == 0.0 {
                        continue;
                    }
                    for (g, a) in grad[o + r * n_in..o + (r + 1) * n_in].iter_mut().zip(&input) {
                        *g += d * a;
                    }
                    grad[o + n_in * n_out + r] += d;
                }
                if i > 0 {
                    let weights = &self.params[o..o + n_in * n_out];
                    let mut prev = vec![0.0; n_in];
                    for r in 0..n_out {
                        let d = delta[r];
                        if d == 0.0 {
                            continue;
                        }
                        for (p, w) in prev.iter_mut().zip(&weights[r * n_in..(r + 1) * n_in]) {
                            *p += d * w;
                        }
                    }
                    for (p, &zz) in prev.iter_mut().zip(&z[i - 1]) {
                        if zz <= 0.0 {
                            *p = 0.0;
                        }
                    }
                    delta = prev;
                }
            }
        }
        Ok((loss / n, grad))
    }
}

fn check_batch(m: &Mlp, batch: &[(Vec<f64>, Vec<f64>)]) -> Result<()> {
    if batch.is_empty() {
        return Err(invalid("batch", "must not be empty"));
    }
    for (x, y) in batch {
        if x.len() != m.input_dim() || y.len() != m.output_dim() {
            return Err(Error::Dimension(format!(
                "sample of shape ({}, {}) for a {}->{} network",
                x.len(),
                y.len(),
                m.input_dim(),
                m.output_dim()
            )));
        }
    }
    Ok(())
}

/// Classical momentum: `v <- m v + g`, `theta <- theta - lr v`.
pub fn sgd_momentum_step(params: &mut [f64], grad: &[f64], velocity: &mut [f64], learning_rate: f64, momentum: f64) {
    assert_eq!(params.len(), grad.len(), "gradient shape");
    assert_eq!(params.len(), velocity.len(), "velocity shape");
    for ((p, g), v) in params.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        *v = momentum * *v + g;
        *p -= learning_rate * *v;
    }
}

/// Per-feature standardization fitted on training inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    /// Features with zero spread keep unit scale.
    pub fn fit(samples: &[Vec<f64>]) -> Result<Self> {
        let Some(first) = samples.first() else {
            return Err(invalid("samples", "need at least one sample to fit"));
        };
        let d = first.len();
        let n = samples.len() as f64;
        let mut mean = vec![0.0; d];
        for s in samples {
            if s.len() != d {
                return Err(Error::Dimension("samples of unequal length".into()));
            }
            for (m, v) in mean.iter_mut().zip(s) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; d];
        for s in samples {
            for ((q, v), m) in var.iter_mut().zip(s).zip(&mean) {
                *q += (v - m).powi(2) / n;
            }
        }
        let std = var
            .into_iter()
            .zip(&mean)
            .map(|(v, m)| {
                let sd = v.sqrt();
                if sd > 1e-12 * m.abs().max(1e-300) {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s).collect()
    }
}
