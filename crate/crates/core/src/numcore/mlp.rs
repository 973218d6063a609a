//! Fully connected encoder with hand-written backpropagation.
//!
//! All parameters of an [`Mlp`] live in one flat buffer. Layer `l` owns a
//! row-major `(out, in)` weight block followed by its `out` biases. Gradients
//! use the same layout, so optimizers and EMA updates work on plain slices.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::linalg::{axpy, dot, Matrix};
use crate::error::{Error, Result};

static GENERATION: AtomicU64 = AtomicU64::new(1);

fn next_generation() -> u64 {
    GENERATION.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    #[inline]
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl LayerShape {
    pub fn param_count(&self) -> usize {
        self.in_dim * self.out_dim + self.out_dim
    }
}

/// Activation record of one forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    generation: u64,
    /// Input to every layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of every layer.
    pre: Vec<Vec<f64>>,
}

impl Tape {
    pub fn input(&self) -> &[f64] {
        &self.inputs[0]
    }
}

#[derive(Debug, Clone)]
pub struct Mlp {
    shapes: Vec<LayerShape>,
    offsets: Vec<usize>,
    params: Vec<f64>,
    generation: u64,
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.shapes == other.shapes && self.params == other.params
    }
}

impl Mlp {
    /// Creates an MLP with the given layer shapes and zero parameters.
    pub fn zeros(shapes: Vec<LayerShape>) -> Result<Self> {
        if shapes.is_empty() {
            return Err(Error::config("layers", "an MLP needs at least one layer"));
        }
        for pair in shapes.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::shape("Mlp layer chain", pair[0].out_dim, pair[1].in_dim));
            }
        }
        if shapes.iter().any(|s| s.in_dim == 0 || s.out_dim == 0) {
            return Err(Error::config("layers", "layer widths must be positive"));
        }
        let mut offsets = Vec::with_capacity(shapes.len());
        let mut total = 0;
        for s in &shapes {
            offsets.push(total);
            total += s.param_count();
        }
        Ok(Self {
            shapes,
            offsets,
            params: vec![0.0; total],
            generation: next_generation(),
        })
    }

    /// `dims = [in, h1, ..., out]`; hidden layers use ReLU, the last layer is linear.
    /// Weights and biases are drawn from `U[-1/√fan_in, 1/√fan_in]`.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::config("layers", "need at least input and output widths"));
        }
        let shapes = dims
            .windows(2)
            .enumerate()
            .map(|(l, w)| LayerShape {
                in_dim: w[0],
                out_dim: w[1],
                activation: if l + 2 == dims.len() {
                    Activation::Identity
                } else {
                    Activation::Relu
                },
            })
            .collect();
        let mut mlp = Self::zeros(shapes)?;
        mlp.init_uniform(rng);
        Ok(mlp)
    }

    pub fn init_uniform<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for l in 0..self.shapes.len() {
            let bound = 1.0 / (self.shapes[l].in_dim as f64).sqrt();
            let start = self.offsets[l];
            let end = start + self.shapes[l].param_count();
            for p in &mut self.params[start..end] {
                *p = rng.gen_range(-bound..=bound);
            }
        }
        self.generation = next_generation();
    }

    /// Single linear layer with the given weight matrix and bias.
    pub fn from_layers(layers: Vec<(Matrix, Vec<f64>, Activation)>) -> Result<Self> {
        let shapes = layers
            .iter()
            .map(|(w, _, a)| LayerShape {
                in_dim: w.cols(),
                out_dim: w.rows(),
                activation: *a,
            })
            .collect();
        let mut mlp = Self::zeros(shapes)?;
        for (l, (w, b, _)) in layers.into_iter().enumerate() {
            if b.len() != w.rows() {
                return Err(Error::shape("Mlp bias", w.rows(), b.len()));
            }
            let (wdst, bdst) = mlp.layer_params_mut(l);
            wdst.copy_from_slice(w.as_slice());
            bdst.copy_from_slice(&b);
        }
        Ok(mlp)
    }

    pub fn shapes(&self) -> &[LayerShape] {
        &self.shapes
    }

    pub fn in_dim(&self) -> usize {
        self.shapes[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.shapes[self.shapes.len() - 1].out_dim
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable access to the parameters. Invalidates outstanding tapes.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.generation = next_generation();
        &mut self.params
    }

    /// Weight block and bias of layer `l`.
    pub fn layer_params(&self, l: usize) -> (&[f64], &[f64]) {
        let s = self.shapes[l];
        let start = self.offsets[l];
        let wend = start + s.in_dim * s.out_dim;
        (&self.params[start..wend], &self.params[wend..wend + s.out_dim])
    }

    pub fn layer_params_mut(&mut self, l: usize) -> (&mut [f64], &mut [f64]) {
        self.generation = next_generation();
        let s = self.shapes[l];
        let start = self.offsets[l];
        let wend = start + s.in_dim * s.out_dim;
        let (w, rest) = self.params[start..wend + s.out_dim].split_at_mut(wend - start);
        (w, rest)
    }

    pub fn zero_grads(&self) -> Vec<f64> {
        vec![0.0; self.params.len()]
    }

    /// Output only; no tape is recorded.
    pub fn infer(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        for (l, s) in self.shapes.iter().enumerate() {
            let (w, b) = self.layer_params(l);
            cur = (0..s.out_dim)
                .map(|o| s.activation.apply(b[o] + dot(&w[o * s.in_dim..(o + 1) * s.in_dim], &cur)))
                .collect();
        }
        Ok(cur)
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, Tape)> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.shapes.len());
        let mut pre = Vec::with_capacity(self.shapes.len());
        let mut cur = x.to_vec();
        for (l, s) in self.shapes.iter().enumerate() {
            let (w, b) = self.layer_params(l);
            let z: Vec<f64> = (0..s.out_dim)
                .map(|o| b[o] + dot(&w[o * s.in_dim..(o + 1) * s.in_dim], &cur))
                .collect();
            let next = z.iter().map(|&v| s.activation.apply(v)).collect();
            inputs.push(std::mem::replace(&mut cur, next));
            pre.push(z);
        }
        Ok((
            cur,
            Tape {
                generation: self.generation,
                inputs,
                pre,
            },
        ))
    }

    /// Accumulates `dL/dθ` into `grads` and returns `dL/dx`.
    pub fn backward_into(&self, tape: &Tape, dy: &[f64], grads: &mut [f64]) -> Result<Vec<f64>> {
        if tape.generation != self.generation || tape.pre.len() != self.shapes.len() {
            return Err(Error::StaleTape);
        }
        if dy.len() != self.out_dim() {
            return Err(Error::shape("Mlp::backward upstream gradient", self.out_dim(), dy.len()));
        }
        if grads.len() != self.params.len() {
            return Err(Error::shape("Mlp::backward gradient buffer", self.params.len(), grads.len()));
        }
        let mut upstream = dy.to_vec();
        for l in (0..self.shapes.len()).rev() {
            let s = self.shapes[l];
            let delta: Vec<f64> = upstream
                .iter()
                .zip(&tape.pre[l])
                .map(|(g, &z)| g * s.activation.derivative(z))
                .collect();
            let input = &tape.inputs[l];
            let start = self.offsets[l];
            let wlen = s.in_dim * s.out_dim;
            {
                let (gw, gb) = grads[start..start + wlen + s.out_dim].split_at_mut(wlen);
                for (o, &d) in delta.iter().enumerate() {
                    if d != 0.0 {
                        axpy(d, input, &mut gw[o * s.in_dim..(o + 1) * s.in_dim]);
                    }
                    gb[o] += d;
                }
            }
            let (w, _) = self.layer_params(l);
            let mut dx = vec![0.0; s.in_dim];
            for (o, &d) in delta.iter().enumerate() {
                if d != 0.0 {
                    axpy(d, &w[o * s.in_dim..(o + 1) * s.in_dim], &mut dx);
                }
            }
            upstream = dx;
        }
        Ok(upstream)
    }

    /// Returns `(dL/dθ, dL/dx)`.
    pub fn backward(&self, tape: &Tape, dy: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut grads = self.zero_grads();
        let dx = self.backward_into(tape, dy, &mut grads)?;
        Ok((grads, dx))
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.in_dim() {
            return Err(Error::shape("Mlp input", self.in_dim(), x.len()));
        }
        Ok(())
    }
}
