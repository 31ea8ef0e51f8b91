//! Residual relationship attention.
//!
//! Every image in a batch attends to every other image. Duplication operators
//! lift the `B×D` embeddings to `B×B×D` so that entry `[i][j]` pairs image `i`
//! (queries, values) with image `j` (keys), and the similarity matrix is added
//! to keys and values along the feature axis. A sigmoid gate then blends the
//! attended features with a residual projection of the original embeddings.

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{prefixed, uniform, BatchNorm, BatchNormVars, Linear, LinearVars, ParamKind, Params};
use crate::numcore::{Mode, Scalar, Tape, Tensor, Var};

/// `out[i][j][:] = n[j][:]`
pub fn dup_vertical<T: Scalar>(tape: &mut Tape<T>, n: Var) -> Result<Var> {
    let b = rank2(tape, n, "dup_vertical")?.0;
    tape.expand(n, 0, b)
}

/// `out[i][j][:] = n[i][:]`
pub fn dup_horizontal<T: Scalar>(tape: &mut Tape<T>, n: Var) -> Result<Var> {
    let b = rank2(tape, n, "dup_horizontal")?.0;
    tape.expand(n, 1, b)
}

/// `out[i][j] = sum_k f[i][j][k]`
pub fn depth_sum<T: Scalar>(tape: &mut Tape<T>, f: Var) -> Result<Var> {
    rank3(tape, f, "depth_sum")?;
    tape.reduce_sum(f, 2)
}

/// `out[j][k] = sum_i f[i][j][k]`
pub fn vertical_sum<T: Scalar>(tape: &mut Tape<T>, f: Var) -> Result<Var> {
    rank3(tape, f, "vertical_sum")?;
    tape.reduce_sum(f, 0)
}

fn rank2<T: Scalar>(tape: &Tape<T>, v: Var, op: &'static str) -> Result<(usize, usize)> {
    tape.value(v).dims2(op)
}

fn rank3<T: Scalar>(tape: &Tape<T>, v: Var, op: &'static str) -> Result<(usize, usize, usize)> {
    tape.value(v).dims3(op)
}

/// Learnable state of the attention head, including the classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct RraParams<T> {
    pub w_q: Tensor<T>,
    pub w_k: Tensor<T>,
    pub w_v: Tensor<T>,
    pub w_s: Tensor<T>,
    /// `3D×D`: one gate value per sample and feature.
    pub w_beta: Tensor<T>,
    pub bn: BatchNorm<T>,
    pub head: Linear<T>,
    /// Axis of the attention softmax; 0 normalizes each column.
    pub softmax_axis: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct RraVars {
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
    pub w_s: Var,
    pub w_beta: Var,
    pub bn: BatchNormVars,
    pub head: LinearVars,
}

/// Handles to the intermediate results of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct RraOutput {
    pub c: Var,
    pub logits: Var,
    pub a: Var,
    pub z: Var,
    pub beta: Var,
}

impl<T: Scalar> RraParams<T> {
    /// Projections and classifier from `uniform(-1/sqrt(D), 1/sqrt(D))`; the
    /// gate weights start at zero so every gate opens at 0.5.
    pub fn init(dim: usize, classes: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (dim as f64).sqrt();
        RraParams {
            w_q: uniform(&[dim, dim], bound, rng),
            w_k: uniform(&[dim, dim], bound, rng),
            w_v: uniform(&[dim, dim], bound, rng),
            w_s: uniform(&[dim, dim], bound, rng),
            w_beta: Tensor::zeros(&[3 * dim, dim]),
            bn: BatchNorm::new(dim),
            head: Linear {
                weight: uniform(&[dim, classes], bound, rng),
                bias: uniform(&[classes], bound, rng),
            },
            softmax_axis: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.w_q.shape()[0]
    }

    pub fn classes(&self) -> usize {
        self.head.weight.shape()[1]
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> RraVars {
        RraVars {
            w_q: tape.param(self.w_q.clone()),
            w_k: tape.param(self.w_k.clone()),
            w_v: tape.param(self.w_v.clone()),
            w_s: tape.param(self.w_s.clone()),
            w_beta: tape.param(self.w_beta.clone()),
            bn: self.bn.bind(tape),
            head: self.head.bind(tape),
        }
    }

    pub fn cast<U: Scalar>(&self) -> RraParams<U> {
        RraParams {
            w_q: self.w_q.cast(),
            w_k: self.w_k.cast(),
            w_v: self.w_v.cast(),
            w_s: self.w_s.cast(),
            w_beta: self.w_beta.cast(),
            bn: self.bn.cast(),
            head: self.head.cast(),
            softmax_axis: self.softmax_axis,
        }
    }

    pub(crate) fn tensors_with<'a>(&'a self, prefix: &str) -> Vec<(String, &'a Tensor<T>, ParamKind)> {
        let p = |n: &str| prefixed(prefix, n);
        let mut out = vec![
            (p("w_q"), &self.w_q, ParamKind::Trainable),
            (p("w_k"), &self.w_k, ParamKind::Trainable),
            (p("w_v"), &self.w_v, ParamKind::Trainable),
            (p("w_s"), &self.w_s, ParamKind::Trainable),
            (p("w_beta"), &self.w_beta, ParamKind::Trainable),
        ];
        out.extend(self.bn.tensors_with(&p("bn")));
        out.extend(self.head.tensors_with(&p("head")));
        out
    }

    pub(crate) fn tensors_mut_with<'a>(&'a mut self, prefix: &str) -> Vec<(String, &'a mut Tensor<T>, ParamKind)> {
        let p = |n: &str| prefixed(prefix, n);
        let mut out = vec![
            (p("w_q"), &mut self.w_q, ParamKind::Trainable),
            (p("w_k"), &mut self.w_k, ParamKind::Trainable),
            (p("w_v"), &mut self.w_v, ParamKind::Trainable),
            (p("w_s"), &mut self.w_s, ParamKind::Trainable),
            (p("w_beta"), &mut self.w_beta, ParamKind::Trainable),
        ];
        out.extend(self.bn.tensors_mut_with(&p("bn")));
        out.extend(self.head.tensors_mut_with(&p("head")));
        out
    }
}

impl RraVars {
    /// Trainable variables in the order of [`Params::trainable_tensors`].
    pub fn all(&self) -> Vec<Var> {
        vec![
            self.w_q,
            self.w_k,
            self.w_v,
            self.w_s,
            self.w_beta,
            self.bn.gamma,
            self.bn.beta,
            self.head.weight,
            self.head.bias,
        ]
    }
}

impl<T: Scalar> Params<T> for RraParams<T> {
    fn tensors(&self) -> Vec<(String, &Tensor<T>, ParamKind)> {
        self.tensors_with("")
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>, ParamKind)> {
        self.tensors_mut_with("")
    }
}

/// `K = D_v(N W_K)`, `Q = D_h(N W_Q)`, `V = D_h(N W_V)`.
pub fn projections<T: Scalar>(tape: &mut Tape<T>, n: Var, vars: &RraVars) -> Result<(Var, Var, Var)> {
    let nq = tape.matmul(n, vars.w_q)?;
    let nk = tape.matmul(n, vars.w_k)?;
    let nv = tape.matmul(n, vars.w_v)?;
    let q = dup_horizontal(tape, nq)?;
    let k = dup_vertical(tape, nk)?;
    let v = dup_horizontal(tape, nv)?;
    Ok((q, k, v))
}

/// `A = softmax(depth_sum(Q ⊙ (K + S)) / sqrt(D))` along `axis`.
pub fn attention_matrix<T: Scalar>(tape: &mut Tape<T>, q: Var, k: Var, s: Var, axis: usize) -> Result<Var> {
    let (_, _, d) = rank3(tape, q, "attention_matrix")?;
    let ks = tape.add(k, s)?;
    let prod = tape.mul(q, ks)?;
    let raw = depth_sum(tape, prod)?;
    let scaled = tape.scale(raw, T::of(1.0 / (d as f64).sqrt()));
    if !tape.value(scaled).is_finite() {
        return Err(Error::NonFinite("attention scores"));
    }
    tape.softmax(scaled, axis)
}

/// `Z = vertical_sum(A ⊙ (V + S))`, i.e. `Z[j] = sum_i A[i][j] (V[i][j] + S[i][j])`.
pub fn attention_embeddings<T: Scalar>(tape: &mut Tape<T>, a: Var, v: Var, s: Var) -> Result<Var> {
    let vs = tape.add(v, s)?;
    let weighted = tape.mul(vs, a)?;
    let z = vertical_sum(tape, weighted)?;
    if !tape.value(z).is_finite() {
        return Err(Error::NonFinite("attention embeddings"));
    }
    Ok(z)
}

/// Gated residual fusion followed by batch norm. Returns `(C, beta)`.
pub fn gated_output<T: Scalar>(
    tape: &mut Tape<T>,
    z: Var,
    n: Var,
    params: &mut RraParams<T>,
    vars: &RraVars,
    mode: Mode,
) -> Result<(Var, Var)> {
    let fused = gate(tape, z, n, vars)?;
    let c = params.bn.forward(tape, fused.0, vars.bn, mode)?;
    Ok((c, fused.1))
}

/// Pre-normalization blend `(1 - beta) Z + beta (N W_S)` and the gate `beta`.
pub fn gate<T: Scalar>(tape: &mut Tape<T>, z: Var, n: Var, vars: &RraVars) -> Result<(Var, Var)> {
    let r = tape.matmul(n, vars.w_s)?;
    let diff = tape.sub(z, r)?;
    let cat = tape.concat_last(&[z, r, diff])?;
    let logits = tape.matmul(cat, vars.w_beta)?;
    let beta = tape.sigmoid(logits);
    // (1 - beta) z + beta r == z + beta (r - z)
    let r_minus_z = tape.sub(r, z)?;
    let shift = tape.mul(beta, r_minus_z)?;
    let fused = tape.add(z, shift)?;
    Ok((fused, beta))
}

/// Full attention head on embeddings `n[B×D]` with similarity `s[B×B]`
/// (already scaled and recorded on the tape).
pub fn rra_forward<T: Scalar>(
    tape: &mut Tape<T>,
    n: Var,
    s: Var,
    params: &mut RraParams<T>,
    vars: &RraVars,
    mode: Mode,
) -> Result<RraOutput> {
    let (b, d) = rank2(tape, n, "rra_forward")?;
    if d != params.dim() {
        return Err(Error::Shape {
            op: "rra_forward embeddings",
            lhs: vec![b, d],
            rhs: params.w_q.shape().to_vec(),
        });
    }
    if tape.shape(s) != [b, b] {
        return Err(Error::Shape {
            op: "rra_forward similarity",
            lhs: vec![b, b],
            rhs: tape.shape(s).to_vec(),
        });
    }
    if params.softmax_axis > 1 {
        return Err(Error::Invalid(format!("softmax axis {} (expected 0 or 1)", params.softmax_axis)));
    }
    let (q, k, v) = projections(tape, n, vars)?;
    let a = attention_matrix(tape, q, k, s, params.softmax_axis)?;
    let z = attention_embeddings(tape, a, v, s)?;
    let (c, beta) = gated_output(tape, z, n, params, vars, mode)?;
    let logits = Linear::forward(tape, c, vars.head)?;
    Ok(RraOutput {
        c,
        logits,
        a,
        z,
        beta,
    })
}
