//! Minimal dense networks with hand-written backprop.
//!
//! Tanh hidden layers, linear outputs, parameters flattened into one
//! `Vec<f64>` so that finite-difference checks, EMA tracking and KL
//! anchoring can treat a network as a plain vector.

use crate::rng::Rng;
use alloc::vec;
use alloc::vec::Vec;

/// Fully connected network; `sizes = [in, h1, …, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Post-activation values kept from a forward pass for backprop.
#[derive(Debug, Clone)]
pub struct Cache {
    acts: Vec<Vec<f64>>, // acts[0] = input, acts[last] = linear output
}

impl Cache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("cache holds at least the input")
    }
}

pub fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    /// Glorot-uniform hidden layers; the output layer starts at zero so a
    /// fresh network emits exactly zero whatever the input.
    pub fn new(sizes: &[usize], rng: &mut Rng) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        let mut params = vec![0.0; param_count(sizes)];
        let mut offset = 0;
        let last = sizes.len() - 2;
        for (l, w) in sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            if l < last {
                let scale = libm::sqrt(6.0 / (n_in + n_out) as f64);
                for p in params[offset..offset + n_in * n_out].iter_mut() {
                    *p = rng.uniform_range(-scale, scale);
                }
            }
            offset += n_in * n_out + n_out;
        }
        Mlp {
            sizes: sizes.to_vec(),
            params,
        }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn n_inputs(&self) -> usize {
        self.sizes[0]
    }

    pub fn n_outputs(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.params.len());
        self.params.copy_from_slice(p);
    }

    pub fn from_parts(sizes: Vec<usize>, params: Vec<f64>) -> Self {
        assert_eq!(params.len(), param_count(&sizes));
        Mlp { sizes, params }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_cached(x).0
    }

    pub fn forward_cached(&self, x: &[f64]) -> (Vec<f64>, Cache) {
        assert_eq!(x.len(), self.n_inputs(), "input width mismatch");
        let mut acts = Vec::with_capacity(self.sizes.len());
        acts.push(x.to_vec());
        let mut offset = 0;
        let n_layers = self.sizes.len() - 1;
        for (l, w) in self.sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let prev = &acts[l];
            let mut next = vec![0.0; n_out];
            for (j, nj) in next.iter_mut().enumerate() {
                let row = &self.params[offset + j * n_in..offset + (j + 1) * n_in];
                let mut acc = self.params[offset + n_in * n_out + j]; // bias
                for (wij, xi) in row.iter().zip(prev.iter()) {
                    acc += wij * xi;
                }
                *nj = if l + 1 < n_layers { libm::tanh(acc) } else { acc };
            }
            offset += n_in * n_out + n_out;
            acts.push(next);
        }
        (acts.last().unwrap().clone(), Cache { acts })
    }

    /// Accumulates dL/dparams into `grad` given dL/doutput; `grad` must
    /// have the same length as `params`.
    pub fn backward(&self, cache: &Cache, dl_dy: &[f64], grad: &mut [f64]) {
        assert_eq!(grad.len(), self.params.len());
        assert_eq!(dl_dy.len(), self.n_outputs());
        // Per-layer parameter offsets, front to back.
        let mut offsets = Vec::with_capacity(self.sizes.len() - 1);
        let mut offset = 0;
        for w in self.sizes.windows(2) {
            offsets.push(offset);
            offset += w[0] * w[1] + w[1];
        }

        let mut delta = dl_dy.to_vec();
        for l in (0..self.sizes.len() - 1).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let base = offsets[l];
            let prev = &cache.acts[l];
            for (j, dj) in delta.iter().enumerate() {
                let row = &mut grad[base + j * n_in..base + (j + 1) * n_in];
                for (g, xi) in row.iter_mut().zip(prev.iter()) {
                    *g += dj * xi;
                }
                grad[base + n_in * n_out + j] += dj;
            }
            if l > 0 {
                let mut prev_delta = vec![0.0; n_in];
                for (j, dj) in delta.iter().enumerate() {
                    let row = &self.params[base + j * n_in..base + (j + 1) * n_in];
                    for (pd, wij) in prev_delta.iter_mut().zip(row.iter()) {
                        *pd += dj * wij;
                    }
                }
                // Through the tanh of layer l.
                for (pd, a) in prev_delta.iter_mut().zip(prev.iter()) {
                    *pd *= 1.0 - a * a;
                }
                delta = prev_delta;
            }
        }
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    libm::sqrt(v.iter().map(|x| x * x).sum())
}

/// Scales `grad` in place so its global L2 norm does not exceed `max_norm`.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) {
    let norm = l2_norm(grad);
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grad.iter_mut() {
            *g *= scale;
        }
    }
}

/// In-place gradient step `params -= lr * grad`.
pub fn sgd_step(params: &mut [f64], grad: &[f64], lr: f64) {
    for (p, g) in params.iter_mut().zip(grad.iter()) {
        *p -= lr * g;
    }
}

/// ema ← rho·ema + (1−rho)·new.
pub fn ema_update(ema: &mut [f64], new: &[f64], rho: f64) {
    for (e, n) in ema.iter_mut().zip(new.iter()) {
        *e = rho * *e + (1.0 - rho) * n;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_output_layer_emits_zero() {
        let mut rng = Rng::new(1);
        let net = Mlp::new(&[5, 8, 8, 3], &mut rng);
        let y = net.forward(&[0.3, -0.2, 0.9, 0.0, 1.0]);
        assert_eq!(y, alloc::vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = Rng::new(2);
        let mut net = Mlp::new(&[4, 6, 2], &mut rng);
        let p: Vec<f64> = (0..net.params().len()).map(|i| (i as f64 * 0.37).sin() * 0.5).collect();
        net.set_params(&p);
        let a = net.forward(&[0.1, 0.2, 0.3, 0.4]);
        let b = net.forward(&[0.1, 0.2, 0.3, 0.4]);
        assert_eq!(a, b);
    }

    /// Backprop vs central finite differences on a quadratic readout loss
    /// L = Σ cᵢ·yᵢ², which has a clean analytic dL/dy to feed backward.
    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..5u64 {
            let mut rng = Rng::new(seed);
            let mut net = Mlp::new(&[4, 6, 5, 2], &mut rng);
            // Randomize every parameter including the zero output layer.
            let n = net.params().len();
            let p: Vec<f64> = (0..n).map(|_| rng.uniform_range(-0.7, 0.7)).collect();
            net.set_params(&p);
            let x = [0.25, -0.5, 0.8, 0.1];
            let c = [0.7, -1.3];

            let loss_of = |net: &Mlp| -> f64 {
                let y = net.forward(&x);
                c.iter().zip(y.iter()).map(|(ci, yi)| ci * yi * yi).sum()
            };

            let (y, cache) = net.forward_cached(&x);
            let dl_dy: Vec<f64> = c.iter().zip(y.iter()).map(|(ci, yi)| 2.0 * ci * yi).collect();
            let mut grad = alloc::vec![0.0; n];
            net.backward(&cache, &dl_dy, &mut grad);

            let mut probe = net.clone();
            for i in 0..n {
                let h = 1e-6 * (1.0 + p[i].abs());
                let mut plus = p.clone();
                plus[i] += h;
                probe.set_params(&plus);
                let lp = loss_of(&probe);
                let mut minus = p.clone();
                minus[i] -= h;
                probe.set_params(&minus);
                let lm = loss_of(&probe);
                let fd = (lp - lm) / (2.0 * h);
                let denom = fd.abs().max(grad[i].abs()).max(1e-8);
                assert!(
                    (fd - grad[i]).abs() / denom < 1e-6,
                    "seed {seed} param {i}: fd {fd} vs analytic {}",
                    grad[i]
                );
            }
        }
    }

    #[test]
    fn grad_clip_and_ema() {
        let mut g = alloc::vec![3.0, 4.0];
        clip_grad_norm(&mut g, 5.0);
        assert_eq!(g, alloc::vec![3.0, 4.0]);
        clip_grad_norm(&mut g, 1.0);
        assert!((l2_norm(&g) - 1.0).abs() < 1e-12);

        let mut ema = alloc::vec![1.0, 0.0];
        ema_update(&mut ema, &[0.0, 1.0], 0.9);
        assert!((ema[0] - 0.9).abs() < 1e-12);
        assert!((ema[1] - 0.1).abs() < 1e-12);
    }
}
