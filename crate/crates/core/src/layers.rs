//! Parameter containers shared by the backbone and the attention head.

use rand::Rng;

use crate::error::Result;
use crate::numcore::{Mode, NormRef, Scalar, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Trainable,
    /// Carried state that is saved and restored but never optimized.
    Buffer,
}

/// Named tensors owned by a module, in a fixed order.
///
/// Trainable entries appear in the same order as the variables returned by
/// the module's `bind`, which is what lets gradients be matched back to
/// parameters by position.
pub trait Params<T> {
    fn tensors(&self) -> Vec<(String, &Tensor<T>, ParamKind)>;
    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>, ParamKind)>;

    fn trainable_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        self.tensors()
            .into_iter()
            .filter(|(_, _, k)| *k == ParamKind::Trainable)
            .map(|(n, t, _)| (n, t))
            .collect()
    }

    fn trainable_tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        self.tensors_mut()
            .into_iter()
            .filter(|(_, _, k)| *k == ParamKind::Trainable)
            .map(|(n, t, _)| (n, t))
            .collect()
    }
}

pub(crate) fn prefixed(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Tensor with entries drawn from `uniform(-bound, bound)`.
pub fn uniform<T: Scalar>(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::of(rng.gen_range(-bound..=bound))).collect();
    Tensor::new(shape, data).expect("shape product")
}

/// Batch normalization over axis 1 with running statistics for evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct BatchNormVars {
    pub gamma: Var,
    pub beta: Var,
}

impl<T: Scalar> BatchNorm<T> {
    pub const DEFAULT_EPS: f64 = 1e-5;
    pub const DEFAULT_MOMENTUM: f64 = 0.1;

    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: Tensor::ones(&[channels]),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::ones(&[channels]),
            momentum: Self::DEFAULT_MOMENTUM,
            eps: Self::DEFAULT_EPS,
        }
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> BatchNormVars {
        BatchNormVars {
            gamma: tape.param(self.gamma.clone()),
            beta: tape.param(self.beta.clone()),
        }
    }

    /// Normalizes `x`; in training mode the running statistics move toward
    /// the batch statistics by `momentum`.
    pub fn forward(&mut self, tape: &mut Tape<T>, x: Var, vars: BatchNormVars, mode: Mode) -> Result<Var> {
        let norm = NormRef {
            running_mean: self.running_mean.data(),
            running_var: self.running_var.data(),
            eps: self.eps,
        };
        let (y, stats) = tape.batch_norm(x, vars.gamma, vars.beta, norm, mode)?;
        if let Some(stats) = stats {
            let m = self.momentum;
            for (r, s) in self.running_mean.data_mut().iter_mut().zip(&stats.mean) {
                *r = T::of((1.0 - m) * r.f64() + m * s);
            }
            for (r, s) in self.running_var.data_mut().iter_mut().zip(&stats.var) {
                *r = T::of((1.0 - m) * r.f64() + m * s);
            }
        }
        Ok(y)
    }

    pub fn tensors_with<'a>(&'a self, prefix: &str) -> Vec<(String, &'a Tensor<T>, ParamKind)> {
        vec![
            (prefixed(prefix, "gamma"), &self.gamma, ParamKind::Trainable),
            (prefixed(prefix, "beta"), &self.beta, ParamKind::Trainable),
            (prefixed(prefix, "running_mean"), &self.running_mean, ParamKind::Buffer),
            (prefixed(prefix, "running_var"), &self.running_var, ParamKind::Buffer),
        ]
    }

    pub fn tensors_mut_with<'a>(&'a mut self, prefix: &str) -> Vec<(String, &'a mut Tensor<T>, ParamKind)> {
        vec![
            (prefixed(prefix, "gamma"), &mut self.gamma, ParamKind::Trainable),
            (prefixed(prefix, "beta"), &mut self.beta, ParamKind::Trainable),
            (prefixed(prefix, "running_mean"), &mut self.running_mean, ParamKind::Buffer),
            (prefixed(prefix, "running_var"), &mut self.running_var, ParamKind::Buffer),
        ]
    }

    pub fn cast<U: Scalar>(&self) -> BatchNorm<U> {
        BatchNorm {
            gamma: self.gamma.cast(),
            beta: self.beta.cast(),
            running_mean: self.running_mean.cast(),
            running_var: self.running_var.cast(),
            momentum: self.momentum,
            eps: self.eps,
        }
    }
}

/// Affine map `x W + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Clone, Copy, Debug)]
pub struct LinearVars {
    pub weight: Var,
    pub bias: Var,
}

impl<T: Scalar> Linear<T> {
    /// Weight and bias from `uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn init(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Linear {
            weight: uniform(&[fan_in, fan_out], bound, rng),
            bias: uniform(&[fan_out], bound, rng),
        }
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> LinearVars {
        LinearVars {
            weight: tape.param(self.weight.clone()),
            bias: tape.param(self.bias.clone()),
        }
    }

    pub fn forward(tape: &mut Tape<T>, x: Var, vars: LinearVars) -> Result<Var> {
        let y = tape.matmul(x, vars.weight)?;
        tape.add_bias(y, vars.bias)
    }

    pub fn tensors_with<'a>(&'a self, prefix: &str) -> Vec<(String, &'a Tensor<T>, ParamKind)> {
        vec![
            (prefixed(prefix, "weight"), &self.weight, ParamKind::Trainable),
            (prefixed(prefix, "bias"), &self.bias, ParamKind::Trainable),
        ]
    }

    pub fn tensors_mut_with<'a>(&'a mut self, prefix: &str) -> Vec<(String, &'a mut Tensor<T>, ParamKind)> {
        vec![
            (prefixed(prefix, "weight"), &mut self.weight, ParamKind::Trainable),
            (prefixed(prefix, "bias"), &mut self.bias, ParamKind::Trainable),
        ]
    }

    pub fn cast<U: Scalar>(&self) -> Linear<U> {
        Linear {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
        }
    }
}
