//! Minimal fully-connected network with analytic backpropagation and
//! SGD-with-momentum, small enough to keep every gradient exact and
//! checkable against finite differences.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation output.
    #[inline]
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `out_dim x in_dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        debug_assert_eq!(x.len(), self.in_dim);
        out.clear();
        for o in 0..self.out_dim {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.bias[o];
            for (w, v) in row.iter().zip(x.iter()) {
                acc += w * v;
            }
            out.push(acc);
        }
    }
}

/// Multi-layer perceptron: tanh hidden layers, identity output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activations: Vec<Activation>,
}

/// Cached activations of one forward pass, consumed by `backward`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `outputs[l]` is the activation output of layer `l`; `outputs` is
    /// prefixed with the network input.
    outputs: Vec<Vec<f64>>,
}

/// Per-layer parameter gradients plus the gradient w.r.t. the input.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub input: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            weights: net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: net.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
            input: vec![0.0; net.layers[0].in_dim],
        }
    }

    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.weights.iter_mut().zip(other.weights.iter()) {
            for (x, y) in a.iter_mut().zip(b.iter()) {
                *x += scale * y;
            }
        }
        for (a, b) in self.biases.iter_mut().zip(other.biases.iter()) {
            for (x, y) in a.iter_mut().zip(b.iter()) {
                *x += scale * y;
            }
        }
    }
}

impl Mlp {
    /// Build a network with the given layer widths (`dims[0]` is the input
    /// dimension); hidden layers use tanh, the final layer is linear.
    /// Weights draw from the scaled uniform init, biases start at zero.
    pub fn new(dims: &[usize], rng: &mut ChaCha8Rng) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let mut layers = Vec::with_capacity(dims.len() - 1);
        let mut activations = Vec::with_capacity(dims.len() - 1);
        for l in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let weights = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            layers.push(Linear { in_dim: fan_in, out_dim: fan_out, weights, bias: vec![0.0; fan_out] });
            activations.push(if l + 2 == dims.len() {
                Activation::Identity
            } else {
                Activation::Tanh
            });
        }
        Self { layers, activations }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let (out, _) = self.forward_cached(x);
        out
    }

    pub fn forward_cached(&self, x: &[f64]) -> (Vec<f64>, ForwardCache) {
        let mut outputs = Vec::with_capacity(self.layers.len() + 1);
        outputs.push(x.to_vec());
        let mut pre = Vec::new();
        for (layer, act) in self.layers.iter().zip(self.activations.iter()) {
            layer.forward(outputs.last().unwrap(), &mut pre);
            outputs.push(pre.iter().map(|&z| act.apply(z)).collect());
        }
        (outputs.last().unwrap().clone(), ForwardCache { outputs })
    }

    /// Backpropagate `dL/dy` through the cached pass.
    pub fn backward(&self, cache: &ForwardCache, grad_output: &[f64]) -> Gradients {
        let mut grads = Gradients::zeros_like(self);
        let mut delta: Vec<f64> = grad_output.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let act = self.activations[l];
            let output = &cache.outputs[l + 1];
            let input = &cache.outputs[l];
            // dL/dz through the activation derivative.
            for (d, &a) in delta.iter_mut().zip(output.iter()) {
                *d *= act.derivative_from_output(a);
            }
            for o in 0..layer.out_dim {
                grads.biases[l][o] = delta[o];
                let row = &mut grads.weights[l][o * layer.in_dim..(o + 1) * layer.in_dim];
                for (g, &v) in row.iter_mut().zip(input.iter()) {
                    *g = delta[o] * v;
                }
            }
            // Propagate to the previous layer.
            let mut next_delta = vec![0.0; layer.in_dim];
            for o in 0..layer.out_dim {
                let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (nd, &w) in next_delta.iter_mut().zip(row.iter()) {
                    *nd += delta[o] * w;
                }
            }
            delta = next_delta;
        }
        grads.input = delta;
        grads
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }
}

/// Plain SGD with classical momentum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdMomentum {
    pub learning_rate: f64,
    pub momentum: f64,
    vel_weights: Vec<Vec<f64>>,
    vel_biases: Vec<Vec<f64>>,
}

impl SgdMomentum {
    pub fn new(net: &Mlp, learning_rate: f64, momentum: f64) -> Self {
        Self {
            learning_rate,
            momentum,
            vel_weights: net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            vel_biases: net.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients) {
        for (l, layer) in net.layers.iter_mut().enumerate() {
            for (i, g) in grads.weights[l].iter().enumerate() {
                let v = &mut self.vel_weights[l][i];
                *v = self.momentum * *v - self.learning_rate * g;
                layer.weights[i] += *v;
            }
            for (i, g) in grads.biases[l].iter().enumerate() {
                let v = &mut self.vel_biases[l][i];
                *v = self.momentum * *v - self.learning_rate * g;
                layer.bias[i] += *v;
            }
        }
    }
}
