//! Eager reverse-mode differentiation.
//!
//! Every operation computes its value immediately and appends a node to the
//! tape, so node order is forward execution order. `backward` walks the tape
//! in reverse and accumulates vector-Jacobian products into each input.

use crate::error::{Error, Result};
use crate::numcore::kernels;
use crate::numcore::tensor::{Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EwOp {
    Add,
    Sub,
    Mul,
}

/// Per-channel statistics observed by a training-mode batch norm.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased when more than one element per channel, zero otherwise.
    pub var: Vec<f64>,
}

/// Running statistics and hyperparameters consumed by [`Tape::batch_norm`].
#[derive(Clone, Copy, Debug)]
pub struct NormRef<'a, T> {
    pub running_mean: &'a [T],
    pub running_var: &'a [T],
    pub eps: f64,
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Ew {
        op: EwOp,
        a: Var,
        b: Var,
        broadcast: bool,
    },
    Scale(Var, T),
    Sum {
        input: Var,
        axis: usize,
    },
    Expand {
        input: Var,
        axis: usize,
    },
    Softmax {
        input: Var,
        axis: usize,
    },
    Sigmoid(Var),
    Relu(Var),
    Concat(Vec<Var>),
    Conv2d {
        x: Var,
        w: Var,
        stride: usize,
        pad: usize,
    },
    AvgPool2(Var),
    GlobalAvgPool(Var),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        training: bool,
    },
    AddBias {
        x: Var,
        b: Var,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    trainable: bool,
}

/// Record of one forward computation.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value,
            op,
            trainable: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        let v = self.push(value, Op::Leaf);
        self.nodes[v.0].trainable = true;
        v
    }

    /// Leaf that never receives a gradient of interest.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Trainable leaves in registration order.
    pub fn trainable(&self) -> Vec<Var> {
        (0..self.nodes.len())
            .filter(|&i| self.nodes[i].trainable)
            .map(Var)
            .collect()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// Elementwise `a op b`. Shapes must be equal, or `a` is `B×B×D` and `b`
    /// is `B×B`, in which case `b` is repeated along the last axis.
    pub fn ew(&mut self, op: EwOp, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let broadcast = if sa == sb {
            false
        } else if sa.len() == 3 && sb.len() == 2 && sa[0] == sb[0] && sa[1] == sb[1] {
            true
        } else {
            return Err(Error::Shape {
                op: "ew",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        };
        let f = |x: T, y: T| match op {
            EwOp::Add => x + y,
            EwOp::Sub => x - y,
            EwOp::Mul => x * y,
        };
        let av = self.value(a);
        let bv = self.value(b).data();
        let data: Vec<T> = if broadcast {
            let d = av.shape()[2];
            av.data()
                .chunks(d.max(1))
                .zip(bv)
                .flat_map(|(row, &s)| row.iter().map(move |&x| f(x, s)))
                .collect()
        } else {
            av.data().iter().zip(bv).map(|(&x, &y)| f(x, y)).collect()
        };
        let out = Tensor::new(av.shape(), data)?;
        Ok(self.push(
            out,
            Op::Ew {
                op,
                a,
                b,
                broadcast,
            },
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.ew(EwOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.ew(EwOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.ew(EwOp::Mul, a, b)
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        let out = self.value(a).map(|x| x * factor);
        self.push(out, Op::Scale(a, factor))
    }

    pub fn reduce_sum(&mut self, a: Var, axis: usize) -> Result<Var> {
        let out = kernels::sum_axis(self.value(a), axis)?;
        Ok(self.push(out, Op::Sum { input: a, axis }))
    }

    /// Inserts a new axis at `axis` holding `count` copies of the input.
    pub fn expand(&mut self, a: Var, axis: usize, count: usize) -> Result<Var> {
        let out = kernels::expand_axis(self.value(a), axis, count)?;
        Ok(self.push(out, Op::Expand { input: a, axis }))
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let out = kernels::softmax(self.value(a), axis)?;
        Ok(self.push(out, Op::Softmax { input: a, axis }))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(kernels::sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        self.push(out, Op::Relu(a))
    }

    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = kernels::concat_last(&values)?;
        Ok(self.push(out, Op::Concat(parts.to_vec())))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let out = kernels::conv2d(self.value(x), self.value(w), stride, pad)?;
        Ok(self.push(out, Op::Conv2d { x, w, stride, pad }))
    }

    /// 2×2 average pooling with stride 2; odd trailing rows/columns are dropped.
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let out = kernels::avg_pool2(self.value(x))?;
        Ok(self.push(out, Op::AvgPool2(x)))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let out = kernels::global_avg_pool(self.value(x))?;
        Ok(self.push(out, Op::GlobalAvgPool(x)))
    }

    /// Batch normalization over every axis except axis 1.
    ///
    /// Training mode normalizes with the batch statistics and returns them so
    /// the caller can update its running averages. With a single element per
    /// channel the variance is zero and the output collapses to `beta`.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        norm: NormRef<'_, T>,
        mode: Mode,
    ) -> Result<(Var, Option<BatchStats>)> {
        let xv = self.value(x);
        if xv.rank() < 2 {
            return Err(Error::Rank {
                op: "batch_norm",
                expected: 2,
                shape: xv.shape().to_vec(),
            });
        }
        let channels = xv.shape()[1];
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(v) != [channels] {
                return Err(Error::Shape {
                    op: if name == "gamma" { "batch_norm gamma" } else { "batch_norm beta" },
                    lhs: xv.shape().to_vec(),
                    rhs: self.shape(v).to_vec(),
                });
            }
        }
        if norm.running_mean.len() != channels || norm.running_var.len() != channels {
            return Err(Error::Shape {
                op: "batch_norm running stats",
                lhs: xv.shape().to_vec(),
                rhs: vec![norm.running_mean.len()],
            });
        }
        let training = mode == Mode::Train;
        let fwd = kernels::batch_norm(
            xv,
            self.value(gamma).data(),
            self.value(beta).data(),
            norm,
            training,
        )?;
        let stats = fwd.stats;
        let v = self.push(
            fwd.out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat: fwd.xhat,
                inv_std: fwd.inv_std,
                training,
            },
        );
        Ok((v, stats))
    }

    /// `x[B×C] + b[C]` row-wise.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        let (_, c) = xv.dims2("add_bias")?;
        if bv.shape() != [c] {
            return Err(Error::Shape {
                op: "add_bias",
                lhs: xv.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let data = xv
            .data()
            .chunks(c.max(1))
            .flat_map(|row| row.iter().zip(bv.data()).map(|(&x, &b)| x + b))
            .collect();
        let out = Tensor::new(xv.shape(), data)?;
        Ok(self.push(out, Op::AddBias { x, b }))
    }

    /// Mean negative log-likelihood of `labels` under `softmax(logits)`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (loss, probs) = kernels::cross_entropy(self.value(logits), labels)?;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// Reverse accumulation from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let ga = kernels::matmul(g, &val(*b).transpose2()?)?;
                let gb = kernels::matmul(&val(*a).transpose2()?, g)?;
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::Ew {
                op,
                a,
                b,
                broadcast,
            } => {
                let (av, bv) = (val(*a), val(*b));
                let (ga, gb) = kernels::ew_backward(*op, g, av, bv, *broadcast)?;
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::Scale(a, f) => {
                let f = *f;
                accumulate(grads, *a, g.map(|x| x * f));
            }
            Op::Sum { input, axis } => {
                let count = val(*input).shape()[*axis];
                accumulate(grads, *input, kernels::expand_axis(g, *axis, count)?);
            }
            Op::Expand { input, axis } => {
                accumulate(grads, *input, kernels::sum_axis(g, *axis)?);
            }
            Op::Softmax { input, axis } => {
                accumulate(grads, *input, kernels::softmax_backward(&node.value, g, *axis));
            }
            Op::Sigmoid(a) => {
                let data = node
                    .value
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&y, &d)| d * y * (T::one() - y))
                    .collect();
                accumulate(grads, *a, Tensor::new(g.shape(), data)?);
            }
            Op::Relu(a) => {
                let data = val(*a)
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&x, &d)| if x > T::zero() { d } else { T::zero() })
                    .collect();
                accumulate(grads, *a, Tensor::new(g.shape(), data)?);
            }
            Op::Concat(parts) => {
                let widths: Vec<usize> = parts
                    .iter()
                    .map(|p| *val(*p).shape().last().unwrap_or(&1))
                    .collect();
                for (p, piece) in parts.iter().zip(kernels::split_last(g, &widths)?) {
                    accumulate(grads, *p, piece);
                }
            }
            Op::Conv2d { x, w, stride, pad } => {
                let (gx, gw) = kernels::conv2d_backward(val(*x), val(*w), g, *stride, *pad)?;
                accumulate(grads, *x, gx);
                accumulate(grads, *w, gw);
            }
            Op::AvgPool2(x) => {
                accumulate(grads, *x, kernels::avg_pool2_backward(val(*x).shape(), g));
            }
            Op::GlobalAvgPool(x) => {
                accumulate(grads, *x, kernels::global_avg_pool_backward(val(*x).shape(), g));
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                training,
            } => {
                let (gx, ggamma, gbeta) = kernels::batch_norm_backward(
                    g,
                    val(*gamma).data(),
                    xhat,
                    inv_std,
                    *training,
                )?;
                accumulate(grads, *x, gx);
                accumulate(grads, *gamma, ggamma);
                accumulate(grads, *beta, gbeta);
            }
            Op::AddBias { x, b } => {
                accumulate(grads, *x, g.clone());
                accumulate(grads, *b, kernels::sum_axis(g, 0)?);
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let shape = val(*logits).shape();
                let gl = kernels::cross_entropy_backward(shape, labels, probs, g.item());
                accumulate(grads, *logits, gl);
            }
        }
        Ok(())
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a = *a + *b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss with respect to `v`; zeros when `v` does not
    /// influence the loss.
    pub fn get(&self, v: Var) -> Tensor<T> {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }

    pub fn reached(&self, v: Var) -> bool {
        self.grads[v.0].is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, data).unwrap()
    }

    #[test]
    fn sum_of_param_has_unit_gradient() {
        let mut tape = Tape::new();
        let w = tape.param(t(&[2, 3], &[1., -2., 3., 0.5, 0., 7.]));
        let s0 = tape.reduce_sum(w, 1).unwrap();
        let loss = tape.reduce_sum(s0, 0).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(w), Tensor::ones(&[2, 3]));
    }

    #[test]
    fn square_sum_gradient_is_twice_input() {
        let mut tape = Tape::new();
        let w = tape.param(t(&[3], &[1.5, -2.0, 0.25]));
        let sq = tape.mul(w, w).unwrap();
        let loss = tape.reduce_sum(sq, 0).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(w).data(), &[3.0, -4.0, 0.5]);
    }

    #[test]
    fn unreachable_leaf_gets_zero_gradient() {
        let mut tape = Tape::new();
        let w = tape.param(t(&[2], &[1., 2.]));
        let unused = tape.param(t(&[2, 2], &[1., 2., 3., 4.]));
        let loss = tape.reduce_sum(w, 0).unwrap();
        let g = tape.backward(loss).unwrap();
        assert!(!g.reached(unused));
        assert_eq!(g.get(unused), Tensor::zeros(&[2, 2]));
        assert_eq!(tape.trainable(), vec![w, unused]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::<f64>::new();
        let w = tape.param(t(&[2], &[1., 2.]));
        assert!(matches!(tape.backward(w), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn ew_rejects_other_broadcasts() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::ones(&[2, 3]));
        let b = tape.constant(Tensor::ones(&[3]));
        assert!(matches!(tape.add(a, b), Err(Error::Shape { .. })));
        let c = tape.constant(Tensor::ones(&[2, 2, 3]));
        let d = tape.constant(Tensor::ones(&[2, 3]));
        assert!(tape.mul(c, d).is_err());
    }

    #[test]
    fn ew_basic_and_broadcast() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(t(&[2], &[1., 2.]));
        let b = tape.constant(t(&[2], &[3., 4.]));
        let s = tape.add(a, b).unwrap();
        assert_eq!(tape.value(s).data(), &[4., 6.]);

        let ones = tape.constant(Tensor::ones(&[2, 2, 3]));
        let sim = tape.constant(t(&[2, 2], &[1., 2., 3., 4.]));
        let m = tape.mul(ones, sim).unwrap();
        let mv = tape.value(m);
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..3 {
                    assert_eq!(mv.at(&[i, j, k]), (i * 2 + j + 1) as f64);
                }
            }
        }
    }

    #[test]
    fn batch_norm_single_sample_training_collapses_to_shift() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[1, 2], &[3.0, -1.0]));
        let gamma = tape.param(t(&[2], &[2.0, 2.0]));
        let beta = tape.param(t(&[2], &[0.5, -0.5]));
        let (y, stats) = tape
            .batch_norm(
                x,
                gamma,
                beta,
                NormRef {
                    running_mean: &[0.0, 0.0],
                    running_var: &[1.0, 1.0],
                    eps: 1e-5,
                },
                Mode::Train,
            )
            .unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, -0.5]);
        assert_eq!(stats.unwrap().var, vec![0.0, 0.0]);
    }
}
