//! Dense layers with hand-written backprop, generic over the float type so the
//! gradient checks can run the training code paths in 64-bit.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::AddAssign;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + AddAssign + Sum + Default + Debug + Send + Sync + 'static
{
    fn lit(v: f64) -> Self {
        Self::from_f64(v).unwrap()
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Flat views over every trainable tensor, in a fixed order.
pub trait Parameters<T> {
    fn tensors(&self) -> Vec<&[T]>;
    fn tensors_mut(&mut self) -> Vec<&mut [T]>;

    fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn is_finite(&self) -> bool
    where
        T: Scalar,
    {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    fn fill_zero(&mut self)
    where
        T: Scalar,
    {
        for t in self.tensors_mut() {
            t.fill(T::zero());
        }
    }

    fn scale(&mut self, s: T)
    where
        T: Scalar,
    {
        for t in self.tensors_mut() {
            for v in t.iter_mut() {
                *v = *v * s;
            }
        }
    }

    fn flatten(&self) -> Vec<T>
    where
        T: Copy,
    {
        self.tensors().concat()
    }
}

/// `y = W x + b` with `W` stored row-major as `out_dim × in_dim`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear<T> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Linear {
            in_dim,
            out_dim,
            weight: vec![T::zero(); in_dim * out_dim],
            bias: vec![T::zero(); out_dim],
        }
    }

    /// Glorot-uniform weights in ±sqrt(6 / (fan_in + fan_out)), zero biases.
    pub fn xavier<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weight = (0..in_dim * out_dim)
            .map(|_| T::lit(rng.gen_range(-bound..bound)))
            .collect();
        Linear {
            in_dim,
            out_dim,
            weight,
            bias: vec![T::zero(); out_dim],
        }
    }

    pub fn forward(&self, x: &[T]) -> Vec<T> {
        debug_assert_eq!(x.len(), self.in_dim);
        self.weight
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, &b)| row.iter().zip(x).fold(b, |acc, (&w, &xi)| acc + w * xi))
            .collect()
    }

    /// Accumulates parameter gradients for upstream gradient `grad_out` at
    /// input `x` into `grads`, and returns the gradient w.r.t. `x`.
    pub fn backward(&self, x: &[T], grad_out: &[T], grads: &mut Linear<T>) -> Vec<T> {
        let mut grad_in = vec![T::zero(); self.in_dim];
        for (o, &g) in grad_out.iter().enumerate() {
            if g == T::zero() {
                continue;
            }
            grads.bias[o] += g;
            let row = o * self.in_dim;
            for i in 0..self.in_dim {
                grads.weight[row + i] += g * x[i];
                grad_in[i] += self.weight[row + i] * g;
            }
        }
        grad_in
    }

    /// Parameter gradients only.
    pub fn backward_params(&self, x: &[T], grad_out: &[T], grads: &mut Linear<T>) {
        for (o, &g) in grad_out.iter().enumerate() {
            if g == T::zero() {
                continue;
            }
            grads.bias[o] += g;
            let row = o * self.in_dim;
            for (w, &xi) in grads.weight[row..row + self.in_dim].iter_mut().zip(x) {
                *w += g * xi;
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> Linear<U> {
        Linear {
            in_dim: self.in_dim,
            out_dim: self.out_dim,
            weight: self.weight.iter().map(|v| U::lit(v.to_f64().unwrap())).collect(),
            bias: self.bias.iter().map(|v| U::lit(v.to_f64().unwrap())).collect(),
        }
    }
}

impl<T> Parameters<T> for Linear<T> {
    fn tensors(&self) -> Vec<&[T]> {
        vec![&self.weight, &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Two affine layers with a ReLU between: `W2 · relu(W1 x + b1) + b2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionParams<T = f32> {
    pub layer1: Linear<T>,
    pub layer2: Linear<T>,
}

/// Intermediate values of one forward pass, kept for backprop.
#[derive(Clone, Debug)]
pub struct ProjectionCache<T> {
    pub input: Vec<T>,
    pub pre: Vec<T>,
    pub hidden: Vec<T>,
    pub output: Vec<T>,
}

impl<T: Scalar> ProjectionParams<T> {
    pub fn zeros(in_dim: usize, hidden: usize, out_dim: usize) -> Self {
        ProjectionParams {
            layer1: Linear::zeros(in_dim, hidden),
            layer2: Linear::zeros(hidden, out_dim),
        }
    }

    pub fn xavier<R: Rng + ?Sized>(in_dim: usize, hidden: usize, out_dim: usize, rng: &mut R) -> Self {
        let layer1 = Linear::xavier(in_dim, hidden, rng);
        let layer2 = Linear::xavier(hidden, out_dim, rng);
        ProjectionParams { layer1, layer2 }
    }

    pub fn in_dim(&self) -> usize {
        self.layer1.in_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.layer1.out_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layer2.out_dim
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.in_dim(), self.hidden_dim(), self.out_dim())
    }

    fn check_input(&self, x: &[T]) -> Result<()> {
        if x.len() != self.in_dim() {
            return Err(Error::DimMismatch {
                expected: self.in_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward_cached(&self, x: &[T]) -> Result<ProjectionCache<T>> {
        self.check_input(x)?;
        let pre = self.layer1.forward(x);
        let hidden: Vec<T> = pre.iter().map(|&v| v.max(T::zero())).collect();
        let output = self.layer2.forward(&hidden);
        if output.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged("projection output".into()));
        }
        Ok(ProjectionCache {
            input: x.to_vec(),
            pre,
            hidden,
            output,
        })
    }

    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        Ok(self.forward_cached(x)?.output)
    }

    /// Accumulates gradients for upstream `grad_out` into `grads`. The ReLU
    /// derivative is taken as 0 at 0.
    pub fn backward(&self, cache: &ProjectionCache<T>, grad_out: &[T], grads: &mut ProjectionParams<T>) {
        let mut grad_hidden = self.layer2.backward(&cache.hidden, grad_out, &mut grads.layer2);
        for (g, &p) in grad_hidden.iter_mut().zip(&cache.pre) {
            if p <= T::zero() {
                *g = T::zero();
            }
        }
        self.layer1.backward_params(&cache.input, &grad_hidden, &mut grads.layer1);
    }

    pub fn cast<U: Scalar>(&self) -> ProjectionParams<U> {
        ProjectionParams {
            layer1: self.layer1.cast(),
            layer2: self.layer2.cast(),
        }
    }
}

impl<T> Parameters<T> for ProjectionParams<T> {
    fn tensors(&self) -> Vec<&[T]> {
        let mut v = self.layer1.tensors();
        v.extend(self.layer2.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut v = self.layer1.tensors_mut();
        v.extend(self.layer2.tensors_mut());
        v
    }
}

/// Converts an `f32` slice into the working float type.
pub fn to_scalar<T: Scalar>(x: &[f32]) -> Vec<T> {
    x.iter().map(|&v| T::lit(v as f64)).collect()
}

/// Numerically stable softmax, computed in 64-bit.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<f64> {
    let max = logits
        .iter()
        .map(|v| v.to_f64().unwrap())
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v.to_f64().unwrap() - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn argmax<T: PartialOrd + Copy>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}
