//! Feed-forward alignment heads with hand-written reverse mode and Adam.
//!
//! A head maps one domain's fixed feature vector into the shared space:
//! `in_dim -> in_dim -> in_dim -> out_dim`, ReLU on the two hidden layers and
//! identity on the output. Weights are stored `(fan_in x fan_out)` and applied
//! as `y = W^T x + b`.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DenseLayer {
    /// Shape `(fan_in, fan_out)`.
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_nalgebra::matrix"))]
    pub weights: DMatrix<f64>,
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_nalgebra::vector"))]
    pub bias: DVector<f64>,
}

impl DenseLayer {
    fn zeros_like(&self) -> Self {
        Self {
            weights: DMatrix::zeros(self.weights.nrows(), self.weights.ncols()),
            bias: DVector::zeros(self.bias.len()),
        }
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        self.weights.tr_mul(x) + &self.bias
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AlignmentHead {
    pub in_dim: usize,
    pub out_dim: usize,
    pub layers: Vec<DenseLayer>,
}

/// Gradients shaped like an [`AlignmentHead`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HeadGradients {
    pub layers: Vec<DenseLayer>,
}

impl HeadGradients {
    pub fn zeros_for(head: &AlignmentHead) -> Self {
        Self {
            layers: head.layers.iter().map(DenseLayer::zeros_like).collect(),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights *= factor;
            l.bias *= factor;
        }
    }

    pub fn add_assign(&mut self, other: &HeadGradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights += &b.weights;
            a.bias += &b.bias;
        }
    }

    fn same_shape(&self, head: &AlignmentHead) -> bool {
        self.layers.len() == head.layers.len()
            && self.layers.iter().zip(&head.layers).all(|(g, p)| {
                g.weights.shape() == p.weights.shape() && g.bias.len() == p.bias.len()
            })
    }

    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().all(|&v| v == 0.0) && l.bias.iter().all(|&v| v == 0.0))
    }
}

/// Activations recorded by a forward pass, consumed by backward.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Input to each layer; `inputs[0]` is the head input.
    inputs: Vec<DVector<f64>>,
    /// Pre-activation of each hidden layer.
    pre: Vec<DVector<f64>>,
    pub output: DVector<f64>,
}

impl AlignmentHead {
    /// Glorot-uniform weights, zero biases, deterministic given `seed`.
    pub fn init(in_dim: usize, out_dim: usize, seed: u64) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::InvalidArgument(alloc::format!(
                "head dimensions must be positive, got ({in_dim}, {out_dim})"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let widths = [in_dim, in_dim, in_dim, out_dim];
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
                DenseLayer {
                    weights: DMatrix::from_fn(fan_in, fan_out, |_, _| {
                        rng.random_range(-limit..limit)
                    }),
                    bias: DVector::zeros(fan_out),
                }
            })
            .collect();
        Ok(Self {
            in_dim,
            out_dim,
            layers,
        })
    }

    /// Builds a head from explicit layers, checking that shapes chain.
    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::InvalidArgument("head needs at least one layer".into()))?;
        let in_dim = first.weights.nrows();
        let mut width = in_dim;
        for l in &layers {
            if l.weights.nrows() != width || l.bias.len() != l.weights.ncols() {
                return Err(Error::DimensionMismatch {
                    expected: width,
                    actual: l.weights.nrows(),
                });
            }
            if !l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()) {
                return Err(Error::NonFinite("head parameters"));
            }
            width = l.weights.ncols();
        }
        Ok(Self {
            in_dim,
            out_dim: width,
            layers,
        })
    }

    /// Number of trainable scalars.
    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.in_dim {
            return Err(Error::DimensionMismatch {
                expected: self.in_dim,
                actual: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_trace(x)?.output.as_slice().to_vec())
    }

    /// Forward pass that keeps the activations needed by [`Self::backward_trace`].
    pub fn forward_trace(&self, x: &[f64]) -> Result<ForwardTrace> {
        self.check_input(x)?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(last);
        let mut h = DVector::from_column_slice(x);
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.apply(&h);
            inputs.push(h);
            if i == last {
                return Ok(ForwardTrace {
                    inputs,
                    pre,
                    output: z,
                });
            }
            h = z.map(|v| v.max(0.0));
            pre.push(z);
        }
        unreachable!("head has at least one layer")
    }

    /// Gradients of `<grad_output, forward(x)>` with respect to every parameter and to `x`.
    pub fn backward(&self, x: &[f64], grad_output: &[f64]) -> Result<(HeadGradients, Vec<f64>)> {
        let trace = self.forward_trace(x)?;
        let mut grads = HeadGradients::zeros_for(self);
        let gx = self.backward_trace(&trace, grad_output, &mut grads)?;
        Ok((grads, gx))
    }

    /// Accumulates parameter gradients into `grads` and returns the input gradient.
    pub fn backward_trace(
        &self,
        trace: &ForwardTrace,
        grad_output: &[f64],
        grads: &mut HeadGradients,
    ) -> Result<Vec<f64>> {
        if grad_output.len() != self.out_dim {
            return Err(Error::DimensionMismatch {
                expected: self.out_dim,
                actual: grad_output.len(),
            });
        }
        if !grads.same_shape(self) {
            return Err(Error::InvalidArgument(
                "gradient buffer shape does not match head".into(),
            ));
        }
        let mut delta = DVector::from_column_slice(grad_output);
        for i in (0..self.layers.len()).rev() {
            let g = &mut grads.layers[i];
            // dW += x_i delta^T
            g.weights.ger(1.0, &trace.inputs[i], &delta, 1.0);
            g.bias += &delta;
            let mut upstream = &self.layers[i].weights * &delta;
            if i > 0 {
                for (u, z) in upstream.iter_mut().zip(trace.pre[i - 1].iter()) {
                    if *z <= 0.0 {
                        *u = 0.0;
                    }
                }
            }
            delta = upstream;
        }
        Ok(delta.as_slice().to_vec())
    }
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first_moment: HeadGradients,
    second_moment: HeadGradients,
}

impl AdamState {
    pub fn new(head: &AlignmentHead, config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first_moment: HeadGradients::zeros_for(head),
            second_moment: HeadGradients::zeros_for(head),
        }
    }

    /// One bias-corrected Adam update of `head` in place.
    pub fn step(&mut self, head: &mut AlignmentHead, grads: &HeadGradients) -> Result<()> {
        if !grads.same_shape(head) || !self.first_moment.same_shape(head) {
            return Err(Error::InvalidArgument(
                "Adam state/gradient shape does not match head".into(),
            ));
        }
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as f64;
        let correct1 = 1.0 - libm::pow(beta1, t);
        let correct2 = 1.0 - libm::pow(beta2, t);
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / correct1;
            let v_hat = *v / correct2;
            *p -= learning_rate * m_hat / (libm::sqrt(v_hat) + epsilon);
        };
        for (((layer, g), m), v) in head
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut self.first_moment.layers)
            .zip(&mut self.second_moment.layers)
        {
            for (((p, &g), m), v) in layer
                .weights
                .iter_mut()
                .zip(g.weights.iter())
                .zip(m.weights.iter_mut())
                .zip(v.weights.iter_mut())
            {
                update(p, g, m, v);
            }
            for (((p, &g), m), v) in layer
                .bias
                .iter_mut()
                .zip(g.bias.iter())
                .zip(m.bias.iter_mut())
                .zip(v.bias.iter_mut())
            {
                update(p, g, m, v);
            }
        }
        Ok(())
    }
}

/// Free-function form of [`AdamState::step`].
pub fn adam_step(
    head: &mut AlignmentHead,
    grads: &HeadGradients,
    state: &mut AdamState,
) -> Result<()> {
    state.step(head, grads)
}
