//! Small fully connected tanh network with hand-written backpropagation.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Expands normalized time into `[2t - 1, sin(kπt), cos(kπt)]` for `k = 1..=harmonics`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeFeatures {
    pub harmonics: usize,
}

impl TimeFeatures {
    pub fn dim(&self) -> usize {
        1 + 2 * self.harmonics
    }

    pub fn expand_into(&self, t: f64, out: &mut [f64]) {
        out[0] = 2.0 * t - 1.0;
        for k in 1..=self.harmonics {
            let (s, c) = (k as f64 * PI * t).sin_cos();
            out[2 * k - 1] = s;
            out[2 * k] = c;
        }
    }

    /// Row-major `times.len() × dim` feature matrix.
    pub fn expand(&self, times: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; times.len() * d];
        for (row, &t) in out.chunks_exact_mut(d).zip(times) {
            self.expand_into(t, row);
        }
        out
    }
}

/// Multilayer perceptron; tanh on hidden layers, identity on the output.
///
/// Parameters live in one flat vector, layer by layer, each layer as its
/// row-major `out × in` weight matrix followed by its `out` biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Per-layer outputs kept for the backward pass.
pub struct Activations {
    rows: usize,
    layers: Vec<Vec<f64>>,
}

impl Activations {
    pub fn output(&self) -> &[f64] {
        self.layers.last().expect("at least the input layer")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
}

impl Mlp {
    /// Weights drawn from N(0, 1/fan_in); the output layer is scaled by
    /// `output_scale` so a fresh network starts near its output bias.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], output_scale: f64, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2 && sizes.iter().all(|&s| s > 0), "bad layer sizes {sizes:?}");
        let mut params = Vec::with_capacity(Self::count_params(sizes));
        let last = sizes.len() - 2;
        for (l, w) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let scale = (1.0 / fan_in as f64).sqrt() * if l == last { output_scale } else { 1.0 };
            for _ in 0..fan_in * fan_out {
                let z: f64 = StandardNormal.sample(rng);
                params.push(z * scale);
            }
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Self { sizes: sizes.to_vec(), params }
    }

    pub fn from_parts(sizes: Vec<usize>, params: Vec<f64>) -> Option<Self> {
        (sizes.len() >= 2 && sizes.iter().all(|&s| s > 0) && params.len() == Self::count_params(&sizes))
            .then_some(Self { sizes, params })
    }

    fn count_params(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn inputs(&self) -> usize {
        self.sizes[0]
    }

    pub fn outputs(&self) -> usize {
        *self.sizes.last().expect("sizes non-empty")
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Mutable view of the output-layer biases.
    pub fn output_bias_mut(&mut self) -> &mut [f64] {
        let n = self.outputs();
        let len = self.params.len();
        &mut self.params[len - n..]
    }

    /// Forward pass over `rows` inputs stored row-major.
    pub fn forward(&self, inputs: &[f64], rows: usize) -> Activations {
        debug_assert_eq!(inputs.len(), rows * self.inputs());
        let mut layers = Vec::with_capacity(self.sizes.len());
        layers.push(inputs.to_vec());
        let n_layers = self.sizes.len() - 1;
        let mut offset = 0;
        for l in 0..n_layers {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let weights = &self.params[offset..offset + fan_in * fan_out];
            let bias = &self.params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            offset += fan_in * fan_out + fan_out;

            let x = &layers[l];
            let mut y = vec![0.0; rows * fan_out];
            for (xr, yr) in x.chunks_exact(fan_in).zip(y.chunks_exact_mut(fan_out)) {
                for ((yo, wrow), b) in yr.iter_mut().zip(weights.chunks_exact(fan_in)).zip(bias) {
                    *yo = b + dot(wrow, xr);
                }
            }
            if l + 1 < n_layers {
                y.iter_mut().for_each(|v| *v = v.tanh());
            }
            layers.push(y);
        }
        Activations { rows, layers }
    }

    /// Accumulates ∂L/∂θ into `grad` given ∂L/∂output (row-major, `rows × outputs`).
    pub fn backward(&self, acts: &Activations, d_output: &[f64], grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), self.params.len());
        let rows = acts.rows;
        let n_layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for w in self.sizes.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }

        let mut delta = d_output.to_vec();
        for l in (0..n_layers).rev() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let base = offsets[l];
            let x = &acts.layers[l];
            {
                let (gw, gb) = grad[base..base + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
                for (xr, dr) in x.chunks_exact(fan_in).zip(delta.chunks_exact(fan_out)) {
                    for ((gwrow, gbo), &d) in gw.chunks_exact_mut(fan_in).zip(gb.iter_mut()).zip(dr) {
                        *gbo += d;
                        axpy(d, xr, gwrow);
                    }
                }
            }
            if l == 0 {
                break;
            }
            let weights = &self.params[base..base + fan_in * fan_out];
            let mut prev = vec![0.0; rows * fan_in];
            for ((pr, dr), xr) in prev.chunks_exact_mut(fan_in).zip(delta.chunks_exact(fan_out)).zip(x.chunks_exact(fan_in)) {
                for (wrow, &d) in weights.chunks_exact(fan_in).zip(dr) {
                    axpy(d, wrow, pr);
                }
                // tanh'(z) = 1 - tanh(z)^2, and x holds tanh(z).
                for (p, &h) in pr.iter_mut().zip(xr) {
                    *p *= 1.0 - h * h;
                }
            }
            delta = prev;
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net() -> Mlp {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        Mlp::new(&[3, 5, 4, 2], 1.0, &mut rng)
    }

    fn loss(m: &Mlp, x: &[f64], rows: usize) -> f64 {
        // Arbitrary smooth scalar of the outputs.
        m.forward(x, rows).output().iter().enumerate().map(|(i, y)| (i as f64 + 1.0) * y * y * 0.5 + y).sum()
    }

    #[test]
    fn backward_matches_differences() {
        let m = net();
        let x = [0.1, -0.4, 0.9, 0.7, 0.2, -0.3];
        let acts = m.forward(&x, 2);
        let d_out: Vec<f64> = acts.output().iter().enumerate().map(|(i, y)| (i as f64 + 1.0) * y + 1.0).collect();
        let mut grad = vec![0.0; m.params().len()];
        m.backward(&acts, &d_out, &mut grad);

        let h = 1e-6;
        for i in 0..m.params().len() {
            let mut p = m.clone();
            p.params_mut()[i] += h;
            let up = loss(&p, &x, 2);
            p.params_mut()[i] -= 2.0 * h;
            let down = loss(&p, &x, 2);
            let fd = (up - down) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-7 * fd.abs().max(1.0), "param {i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn fresh_output_scale_zero_gives_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut m = Mlp::new(&[3, 8, 2], 0.0, &mut rng);
        m.output_bias_mut().copy_from_slice(&[1.5, -2.0]);
        let out = m.forward(&[0.3, 0.2, 0.1], 1);
        assert_eq!(out.output(), &[1.5, -2.0]);
    }

    #[test]
    fn features() {
        let f = TimeFeatures { harmonics: 2 };
        let v = f.expand(&[0.0, 0.5]);
        assert_eq!(v.len(), 10);
        assert_eq!(&v[..5], &[-1.0, 0.0, 1.0, 0.0, 1.0]);
        assert!((v[5] - 0.0).abs() < 1e-15 && (v[6] - 1.0).abs() < 1e-15 && v[7].abs() < 1e-15);
    }

    #[test]
    fn from_parts_checks_length() {
        let m = net();
        assert!(Mlp::from_parts(m.sizes().to_vec(), m.params().to_vec()).is_some());
        assert!(Mlp::from_parts(m.sizes().to_vec(), vec![0.0; 3]).is_none());
    }
}
