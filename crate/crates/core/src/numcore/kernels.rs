//! Raw forward and backward kernels behind the tape operations.
//!
//! Every kernel is sequential with a fixed reduction order, so results are
//! bit-reproducible. Reductions that run across the batch axis accumulate in
//! f64 so that reordering a batch perturbs f32 results as little as possible.

use num_traits::{Float, One, ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::numcore::tape::{BatchStats, EwOp, NormRef};
use crate::numcore::tensor::{Scalar, Tensor};

pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = a.dims2("matmul")?;
    let (k2, p) = b.dims2("matmul")?;
    if k != k2 {
        return Err(Error::Shape {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![T::zero(); m * p];
    for i in 0..m {
        let row = &mut out[i * p..(i + 1) * p];
        for kk in 0..k {
            let av = ad[i * k + kk];
            for (o, &bv) in row.iter_mut().zip(&bd[kk * p..(kk + 1) * p]) {
                *o = *o + av * bv;
            }
        }
    }
    Tensor::new(&[m, p], out)
}

/// Splits a shape at `axis` into (outer, extent, inner) element counts.
fn around(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn check_axis(op: &'static str, rank: usize, axis: usize) -> Result<()> {
    if axis >= rank {
        return Err(Error::Axis { op, axis, rank });
    }
    Ok(())
}

pub fn sum_axis<T: Scalar>(a: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    check_axis("reduce_sum", a.rank(), axis)?;
    let (outer, n, inner) = around(a.shape(), axis);
    let d = a.data();
    let mut acc = vec![T::Wide::zero(); outer * inner];
    for o in 0..outer {
        for j in 0..n {
            let src = &d[(o * n + j) * inner..(o * n + j + 1) * inner];
            for (s, &v) in acc[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                *s += v.wide();
            }
        }
    }
    let mut shape = a.shape().to_vec();
    shape.remove(axis);
    Tensor::new(&shape, acc.into_iter().map(T::narrow).collect())
}

pub fn expand_axis<T: Scalar>(a: &Tensor<T>, axis: usize, count: usize) -> Result<Tensor<T>> {
    check_axis("expand", a.rank() + 1, axis)?;
    let outer: usize = a.shape()[..axis].iter().product();
    let inner: usize = a.shape()[axis..].iter().product();
    let d = a.data();
    let mut data = Vec::with_capacity(outer * count * inner);
    for o in 0..outer {
        for _ in 0..count {
            data.extend_from_slice(&d[o * inner..(o + 1) * inner]);
        }
    }
    let mut shape = a.shape().to_vec();
    shape.insert(axis, count);
    Tensor::new(&shape, data)
}

pub fn softmax<T: Scalar>(a: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    check_axis("softmax", a.rank(), axis)?;
    if !a.is_finite() {
        return Err(Error::NonFinite("softmax input"));
    }
    let (outer, n, inner) = around(a.shape(), axis);
    let d = a.data();
    let mut out = vec![T::zero(); d.len()];
    for o in 0..outer {
        for r in 0..inner {
            let idx = |j: usize| (o * n + j) * inner + r;
            let max = (0..n).map(|j| d[idx(j)].wide()).fold(T::Wide::neg_infinity(), T::Wide::max);
            let mut total = T::Wide::zero();
            for j in 0..n {
                total += T::wide_exp(d[idx(j)].wide() - max);
            }
            for j in 0..n {
                out[idx(j)] = T::narrow(T::wide_exp(d[idx(j)].wide() - max) / total);
            }
        }
    }
    Tensor::new(a.shape(), out)
}

pub fn softmax_backward<T: Scalar>(y: &Tensor<T>, g: &Tensor<T>, axis: usize) -> Tensor<T> {
    let (outer, n, inner) = around(y.shape(), axis);
    let (yd, gd) = (y.data(), g.data());
    let mut out = vec![T::zero(); yd.len()];
    for o in 0..outer {
        for r in 0..inner {
            let idx = |j: usize| (o * n + j) * inner + r;
            let dot = (0..n).fold(T::Wide::zero(), |acc, j| acc + yd[idx(j)].wide() * gd[idx(j)].wide());
            for j in 0..n {
                let i = idx(j);
                out[i] = T::narrow(yd[i].wide() * (gd[i].wide() - dot));
            }
        }
    }
    Tensor::new(y.shape(), out).expect("same shape")
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    // Branches keep exp() from overflowing for large |x|.
    let (x, one) = (x.wide(), T::Wide::one());
    T::narrow(if x >= T::Wide::zero() {
        one / (one + T::wide_exp(-x))
    } else {
        let e = T::wide_exp(x);
        e / (one + e)
    })
}

pub fn concat_last<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts.first().ok_or(Error::Empty("concat_last"))?;
    if first.rank() == 0 {
        return Err(Error::Rank {
            op: "concat_last",
            expected: 1,
            shape: vec![],
        });
    }
    let lead = &first.shape()[..first.rank() - 1];
    let mut widths = Vec::with_capacity(parts.len());
    for p in parts {
        if p.rank() != first.rank() || &p.shape()[..p.rank() - 1] != lead {
            return Err(Error::Shape {
                op: "concat_last",
                lhs: first.shape().to_vec(),
                rhs: p.shape().to_vec(),
            });
        }
        widths.push(p.shape()[p.rank() - 1]);
    }
    let rows: usize = lead.iter().product();
    let total: usize = widths.iter().sum();
    let mut data = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for (p, &w) in parts.iter().zip(&widths) {
            data.extend_from_slice(&p.data()[r * w..(r + 1) * w]);
        }
    }
    let mut shape = lead.to_vec();
    shape.push(total);
    Tensor::new(&shape, data)
}

/// Inverse of [`concat_last`] for the given last-axis widths.
pub fn split_last<T: Scalar>(t: &Tensor<T>, widths: &[usize]) -> Result<Vec<Tensor<T>>> {
    let total: usize = widths.iter().sum();
    let last = *t.shape().last().ok_or(Error::Rank {
        op: "split_last",
        expected: 1,
        shape: vec![],
    })?;
    if last != total {
        return Err(Error::Shape {
            op: "split_last",
            lhs: t.shape().to_vec(),
            rhs: widths.to_vec(),
        });
    }
    let lead = &t.shape()[..t.rank() - 1];
    let rows: usize = lead.iter().product();
    let mut out: Vec<Vec<T>> = widths.iter().map(|w| Vec::with_capacity(rows * w)).collect();
    for r in 0..rows {
        let mut off = r * total;
        for (buf, &w) in out.iter_mut().zip(widths) {
            buf.extend_from_slice(&t.data()[off..off + w]);
            off += w;
        }
    }
    out.into_iter()
        .zip(widths)
        .map(|(d, &w)| {
            let mut shape = lead.to_vec();
            shape.push(w);
            Tensor::new(&shape, d)
        })
        .collect()
}

pub fn ew_backward<T: Scalar>(
    op: EwOp,
    g: &Tensor<T>,
    a: &Tensor<T>,
    b: &Tensor<T>,
    broadcast: bool,
) -> Result<(Tensor<T>, Tensor<T>)> {
    if !broadcast {
        let (ga, gb): (Vec<T>, Vec<T>) = match op {
            EwOp::Add => (g.data().to_vec(), g.data().to_vec()),
            EwOp::Sub => (g.data().to_vec(), g.data().iter().map(|&x| -x).collect()),
            EwOp::Mul => (
                g.data().iter().zip(b.data()).map(|(&d, &y)| d * y).collect(),
                g.data().iter().zip(a.data()).map(|(&d, &x)| d * x).collect(),
            ),
        };
        return Ok((Tensor::new(a.shape(), ga)?, Tensor::new(b.shape(), gb)?));
    }
    let d = a.shape()[2].max(1);
    let mut ga = Vec::with_capacity(a.numel());
    let mut gb = Vec::with_capacity(b.numel());
    for ((grow, arow), &s) in g.data().chunks(d).zip(a.data().chunks(d)).zip(b.data()) {
        match op {
            EwOp::Add | EwOp::Sub => {
                ga.extend_from_slice(grow);
                let total = grow.iter().fold(T::Wide::zero(), |acc, v| acc + v.wide());
                gb.push(T::narrow(if op == EwOp::Sub { -total } else { total }));
            }
            EwOp::Mul => {
                ga.extend(grow.iter().map(|&v| v * s));
                let total = grow
                    .iter()
                    .zip(arow)
                    .fold(T::Wide::zero(), |acc, (v, x)| acc + v.wide() * x.wide());
                gb.push(T::narrow(total));
            }
        }
    }
    Ok((Tensor::new(a.shape(), ga)?, Tensor::new(b.shape(), gb)?))
}

fn conv_out(size: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    (size + 2 * pad).checked_sub(k).map(|v| v / stride + 1)
}


struct ConvGeom {
    b: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    ho: usize,
    wo: usize,
}

fn conv_geom<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, stride: usize, pad: usize) -> Result<ConvGeom> {
    let (b, cin, h, wd) = x.dims4("conv2d input")?;
    let (cout, cin2, kh, kw) = w.dims4("conv2d weight")?;
    if cin != cin2 || kh != kw {
        return Err(Error::Shape {
            op: "conv2d",
            lhs: x.shape().to_vec(),
            rhs: w.shape().to_vec(),
        });
    }
    if stride == 0 {
        return Err(Error::Invalid("conv2d stride must be positive".into()));
    }
    let (Some(ho), Some(wo)) = (conv_out(h, kh, stride, pad), conv_out(wd, kw, stride, pad)) else {
        return Err(Error::Shape {
            op: "conv2d kernel larger than padded input",
            lhs: x.shape().to_vec(),
            rhs: w.shape().to_vec(),
        });
    };
    Ok(ConvGeom {
        b,
        cin,
        h,
        w: wd,
        cout,
        k: kh,
        ho,
        wo,
    })
}

impl ConvGeom {
    /// Length of one im2col row: `Cin·k·k`.
    fn patch(&self) -> usize {
        self.cin * self.k * self.k
    }

    /// Output positions per image.
    fn positions(&self) -> usize {
        self.ho * self.wo
    }

    /// Source offset within image `bi` for position `p` and patch slot `q`,
    /// or `None` when the tap falls in the zero padding.
    fn tap(&self, p: usize, q: usize, stride: usize, pad: usize) -> Option<usize> {
        let (oy, ox) = (p / self.wo, p % self.wo);
        let (ci, kk) = (q / (self.k * self.k), q % (self.k * self.k));
        let (ky, kx) = (kk / self.k, kk % self.k);
        let iy = (oy * stride + ky).checked_sub(pad).filter(|&v| v < self.h)?;
        let ix = (ox * stride + kx).checked_sub(pad).filter(|&v| v < self.w)?;
        Some((ci * self.h + iy) * self.w + ix)
    }
}

/// `[positions × patch]` matrix of input taps for one image.
fn im2col<T: Scalar>(g: &ConvGeom, image: &[T], stride: usize, pad: usize) -> Vec<T> {
    let kk = g.patch();
    let mut cols = vec![T::zero(); g.positions() * kk];
    for p in 0..g.positions() {
        for q in 0..kk {
            if let Some(i) = g.tap(p, q, stride, pad) {
                cols[p * kk + q] = image[i];
            }
        }
    }
    cols
}

/// `w[Cout × patch]` transposed to `[patch × Cout]`.
fn transpose<T: Scalar>(m: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = m[r * cols + c];
        }
    }
    out
}

/// Cross-correlation of `x[B×Cin×H×W]` with `w[Cout×Cin×k×k]`.
pub fn conv2d<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, stride: usize, pad: usize) -> Result<Tensor<T>> {
    let g = conv_geom(x, w, stride, pad)?;
    let (kk, np) = (g.patch(), g.positions());
    let wt = transpose(w.data(), g.cout, kk);
    let mut out = vec![T::zero(); g.b * g.cout * np];
    let mut acc = vec![T::zero(); np * g.cout];
    for (image, oimg) in x.data().chunks_exact(g.cin * g.h * g.w).zip(out.chunks_exact_mut(g.cout * np)) {
        let cols = im2col(&g, image, stride, pad);
        acc.iter_mut().for_each(|v| *v = T::zero());
        for (crow, arow) in cols.chunks_exact(kk).zip(acc.chunks_exact_mut(g.cout)) {
            for (&v, wrow) in crow.iter().zip(wt.chunks_exact(g.cout)) {
                for (a, &wv) in arow.iter_mut().zip(wrow) {
                    *a = *a + v * wv;
                }
            }
        }
        for (p, arow) in acc.chunks_exact(g.cout).enumerate() {
            for (co, &v) in arow.iter().enumerate() {
                oimg[co * np + p] = v;
            }
        }
    }
    Tensor::new(&[g.b, g.cout, g.ho, g.wo], out)
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gy: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let g = conv_geom(x, w, stride, pad)?;
    let (kk, np) = (g.patch(), g.positions());
    let wt = transpose(w.data(), g.cout, kk);
    let mut gx = vec![T::zero(); x.numel()];
    let mut gwt = vec![T::zero(); kk * g.cout];
    let in_size = g.cin * g.h * g.w;
    for (bi, gimg) in gy.data().chunks_exact(g.cout * np).enumerate() {
        let cols = im2col(&g, &x.data()[bi * in_size..(bi + 1) * in_size], stride, pad);
        let gyt = transpose(gimg, g.cout, np);
        let gximg = &mut gx[bi * in_size..(bi + 1) * in_size];
        for (p, (crow, grow)) in cols.chunks_exact(kk).zip(gyt.chunks_exact(g.cout)).enumerate() {
            for (q, (&v, (gwrow, wrow))) in crow
                .iter()
                .zip(gwt.chunks_exact_mut(g.cout).zip(wt.chunks_exact(g.cout)))
                .enumerate()
            {
                let mut dcol = T::zero();
                for ((gw, &wv), &gv) in gwrow.iter_mut().zip(wrow).zip(grow) {
                    *gw = *gw + v * gv;
                    dcol = dcol + gv * wv;
                }
                if let Some(i) = g.tap(p, q, stride, pad) {
                    gximg[i] = gximg[i] + dcol;
                }
            }
        }
    }
    Ok((Tensor::new(x.shape(), gx)?, Tensor::new(w.shape(), transpose(&gwt, kk, g.cout))?))
}

pub fn avg_pool2<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, c, h, w) = x.dims4("avg_pool2")?;
    let (ho, wo) = (h / 2, w / 2);
    let d = x.data();
    let quarter = T::of(0.25);
    let mut out = Vec::with_capacity(b * c * ho * wo);
    for plane in d.chunks(h * w).take(b * c) {
        for oy in 0..ho {
            for ox in 0..wo {
                let at = |y: usize, xx: usize| plane[(2 * oy + y) * w + 2 * ox + xx];
                out.push((at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1)) * quarter);
            }
        }
    }
    Tensor::new(&[b, c, ho, wo], out)
}

pub fn avg_pool2_backward<T: Scalar>(xshape: &[usize], g: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (xshape[2], xshape[3]);
    let (ho, wo) = (h / 2, w / 2);
    let quarter = T::of(0.25);
    let mut out = Tensor::zeros(xshape);
    let od = out.data_mut();
    for (p, gplane) in g.data().chunks(ho * wo).enumerate() {
        let base = p * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let v = gplane[oy * wo + ox] * quarter;
                for (y, xx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    od[base + (2 * oy + y) * w + 2 * ox + xx] = v;
                }
            }
        }
    }
    out
}

pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, c, h, w) = x.dims4("global_avg_pool")?;
    let n = T::wide_usize(h * w);
    let data = x
        .data()
        .chunks(h * w)
        .map(|plane| T::narrow(plane.iter().fold(T::Wide::zero(), |acc, v| acc + v.wide()) / n))
        .collect();
    Tensor::new(&[b, c], data)
}

pub fn global_avg_pool_backward<T: Scalar>(xshape: &[usize], g: &Tensor<T>) -> Tensor<T> {
    let hw = xshape[2] * xshape[3];
    let inv = T::of(1.0 / hw as f64);
    let data = g
        .data()
        .iter()
        .flat_map(|&v| std::iter::repeat_n(v * inv, hw))
        .collect();
    Tensor::new(xshape, data).expect("pool shape")
}

pub struct BnForward<T> {
    pub out: Tensor<T>,
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    pub stats: Option<BatchStats>,
}

pub fn batch_norm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    norm: NormRef<'_, T>,
    training: bool,
) -> Result<BnForward<T>> {
    let shape = x.shape();
    let (b, c) = (shape[0], shape[1]);
    let inner: usize = shape[2..].iter().product();
    let count = b * inner;
    let d = x.data();
    let at = |bi: usize, ci: usize, r: usize| (bi * c + ci) * inner + r;

    let (mean, var, stats) = if training {
        if count == 0 {
            return Err(Error::Empty("batch_norm"));
        }
        let n = T::wide_usize(count);
        let mut mean = vec![T::Wide::zero(); c];
        let mut var = vec![T::Wide::zero(); c];
        for ci in 0..c {
            let mut s = T::Wide::zero();
            for bi in 0..b {
                for r in 0..inner {
                    s += d[at(bi, ci, r)].wide();
                }
            }
            let mu = s / n;
            let mut sq = T::Wide::zero();
            for bi in 0..b {
                for r in 0..inner {
                    let dv = d[at(bi, ci, r)].wide() - mu;
                    sq += dv * dv;
                }
            }
            mean[ci] = mu;
            var[ci] = sq / n;
        }
        let unbiased = var
            .iter()
            .map(|&v| {
                if count > 1 {
                    (v * n / T::wide_usize(count - 1)).to_f64().expect("finite variance")
                } else {
                    0.0
                }
            })
            .collect();
        let stats = BatchStats {
            mean: mean.iter().map(|m| m.to_f64().expect("finite mean")).collect(),
            var: unbiased,
        };
        (mean, var, Some(stats))
    } else {
        (
            norm.running_mean.iter().map(|v| v.wide()).collect(),
            norm.running_var.iter().map(|v| v.wide()).collect(),
            None,
        )
    };

    let eps = T::wide_of(norm.eps);
    let inv_std_w: Vec<T::Wide> = var.iter().map(|&v| T::Wide::one() / (v + eps).sqrt()).collect();
    let mut out = vec![T::zero(); d.len()];
    let mut xhat = vec![T::zero(); d.len()];
    for bi in 0..b {
        for ci in 0..c {
            for r in 0..inner {
                let i = at(bi, ci, r);
                let xh = (d[i].wide() - mean[ci]) * inv_std_w[ci];
                xhat[i] = T::narrow(xh);
                out[i] = T::narrow(gamma[ci].wide() * xh + beta[ci].wide());
            }
        }
    }
    Ok(BnForward {
        out: Tensor::new(shape, out)?,
        xhat,
        inv_std: inv_std_w.into_iter().map(T::narrow).collect(),
        stats,
    })
}

pub fn batch_norm_backward<T: Scalar>(
    g: &Tensor<T>,
    gamma: &[T],
    xhat: &[T],
    inv_std: &[T],
    training: bool,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let shape = g.shape();
    let (b, c) = (shape[0], shape[1]);
    let inner: usize = shape[2..].iter().product();
    let count = T::wide_usize(b * inner);
    let gd = g.data();
    let at = |bi: usize, ci: usize, r: usize| (bi * c + ci) * inner + r;

    let mut ggamma = vec![T::Wide::zero(); c];
    let mut gbeta = vec![T::Wide::zero(); c];
    for bi in 0..b {
        for ci in 0..c {
            for r in 0..inner {
                let i = at(bi, ci, r);
                ggamma[ci] += gd[i].wide() * xhat[i].wide();
                gbeta[ci] += gd[i].wide();
            }
        }
    }
    let mut gx = vec![T::zero(); gd.len()];
    for bi in 0..b {
        for ci in 0..c {
            let scale = gamma[ci].wide() * inv_std[ci].wide();
            for r in 0..inner {
                let i = at(bi, ci, r);
                let v = if training {
                    // d/dx of gamma * (x - mean) / std with batch mean and variance
                    scale * (gd[i].wide() - gbeta[ci] / count - xhat[i].wide() * ggamma[ci] / count)
                } else {
                    scale * gd[i].wide()
                };
                gx[i] = T::narrow(v);
            }
        }
    }
    Ok((
        Tensor::new(shape, gx)?,
        Tensor::new(&[c], ggamma.into_iter().map(T::narrow).collect())?,
        Tensor::new(&[c], gbeta.into_iter().map(T::narrow).collect())?,
    ))
}

/// Returns the mean loss and the row softmax probabilities.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Vec<T>)> {
    let (b, c) = logits.dims2("cross_entropy")?;
    if labels.len() != b {
        return Err(Error::Shape {
            op: "cross_entropy labels",
            lhs: logits.shape().to_vec(),
            rhs: vec![labels.len()],
        });
    }
    if b == 0 {
        return Err(Error::Empty("cross_entropy"));
    }
    if !logits.is_finite() {
        return Err(Error::NonFinite("cross_entropy logits"));
    }
    let mut total = T::Wide::zero();
    let mut probs = Vec::with_capacity(b * c);
    for (row, &label) in logits.data().chunks(c).zip(labels) {
        if label >= c {
            return Err(Error::Label { label, classes: c });
        }
        let max = row.iter().map(|v| v.wide()).fold(T::Wide::neg_infinity(), T::Wide::max);
        let sum = row.iter().fold(T::Wide::zero(), |acc, v| acc + T::wide_exp(v.wide() - max));
        let lse = max + T::wide_ln(sum);
        total += lse - row[label].wide();
        probs.extend(row.iter().map(|v| T::narrow(T::wide_exp(v.wide() - lse))));
    }
    Ok((T::narrow(total / T::wide_usize(b)), probs))
}

pub fn cross_entropy_backward<T: Scalar>(shape: &[usize], labels: &[usize], probs: &[T], g: T) -> Tensor<T> {
    let (b, c) = (shape[0], shape[1]);
    let scale = g.wide() / T::wide_usize(b);
    let mut out = Vec::with_capacity(b * c);
    for (row, &label) in probs.chunks(c).zip(labels) {
        for (j, p) in row.iter().enumerate() {
            let onehot = if j == label { T::Wide::one() } else { T::Wide::zero() };
            out.push(T::narrow((p.wide() - onehot) * scale));
        }
    }
    Tensor::new(shape, out).expect("logit shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, data).unwrap()
    }

    #[test]
    fn matmul_small_cases() {
        let id = t(&[2, 2], &[1., 0., 0., 1.]);
        let m = t(&[2, 2], &[3., 4., 5., 6.]);
        assert_eq!(matmul(&id, &m).unwrap(), m);
        let r = matmul(&t(&[1, 2], &[1., 2.]), &t(&[2, 1], &[3., 4.])).unwrap();
        assert_eq!(r.data(), &[11.0]);
    }

    #[test]
    fn matmul_mismatch_reports_both_shapes() {
        let err = matmul(&Tensor::<f64>::zeros(&[2, 3]), &Tensor::zeros(&[2, 3])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("matmul"), "{msg}");
    }

    #[test]
    fn sum_axis_cases() {
        let m = t(&[2, 2], &[1., 2., 3., 4.]);
        assert_eq!(sum_axis(&m, 0).unwrap().data(), &[4., 6.]);
        assert_eq!(sum_axis(&m, 1).unwrap().data(), &[3., 7.]);
        assert!(matches!(sum_axis(&m, 2), Err(Error::Axis { .. })));
    }

    #[test]
    fn softmax_values() {
        let s = softmax(&t(&[2], &[0., 0.]), 0).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax(&t(&[2], &[1., 2.]), 0).unwrap();
        assert!((s.data()[0] - 0.268_941_421_369_995_1).abs() < 1e-12);
        assert!((s.data()[1] - 0.731_058_578_630_004_9).abs() < 1e-12);
        let s = softmax(&t(&[1], &[123.0]), 0).unwrap();
        assert_eq!(s.data(), &[1.0]);
        assert!(matches!(
            softmax(&t(&[2], &[f64::NAN, 0.]), 0),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn softmax_survives_large_f32_logits() {
        let s = softmax(&Tensor::<f32>::from_f64(&[3], &[160.0, 5000.0, 0.0]).unwrap(), 0).unwrap();
        assert!(s.is_finite());
        assert_eq!(s.data()[1], 1.0);
    }

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!((sigmoid(50.0f64) - 1.0).abs() < 1e-15);
        assert!(sigmoid(-800.0f64) >= 0.0);
    }

    #[test]
    fn concat_and_split() {
        let a = t(&[1, 1], &[1.]);
        let b = t(&[1, 1], &[2.]);
        let c = t(&[1, 1], &[3.]);
        assert_eq!(concat_last(&[&a, &b, &c]).unwrap().data(), &[1., 2., 3.]);
        let x = Tensor::<f64>::zeros(&[2, 3]);
        let y = Tensor::<f64>::ones(&[2, 5]);
        let cat = concat_last(&[&x, &y]).unwrap();
        assert_eq!(cat.shape(), &[2, 8]);
        let parts = split_last(&cat, &[3, 5]).unwrap();
        assert_eq!(parts[0], x);
        assert_eq!(parts[1], y);
        assert!(concat_last(&[&x, &Tensor::zeros(&[3, 3])]).is_err());
    }

    #[test]
    fn conv_identity_and_counting() {
        let x = t(&[1, 1, 2, 2], &[1., 2., 3., 4.]);
        let w = t(&[1, 1, 1, 1], &[1.]);
        assert_eq!(conv2d(&x, &w, 1, 0).unwrap(), x);

        let ones = Tensor::<f64>::ones(&[1, 1, 3, 3]);
        let k = Tensor::<f64>::ones(&[1, 1, 3, 3]);
        let y = conv2d(&ones, &k, 1, 1).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert_eq!(y.at(&[0, 0, 1, 1]), 9.0);
        assert_eq!(y.at(&[0, 0, 0, 0]), 4.0);
        assert_eq!(y.at(&[0, 0, 0, 1]), 6.0);
    }

    #[test]
    fn conv_channel_mismatch() {
        let x = Tensor::<f64>::zeros(&[1, 2, 4, 4]);
        let w = Tensor::<f64>::zeros(&[1, 3, 3, 3]);
        assert!(matches!(conv2d(&x, &w, 1, 1), Err(Error::Shape { .. })));
    }

    #[test]
    fn batch_norm_two_rows() {
        let x = t(&[2, 1], &[1., 3.]);
        let f = batch_norm(
            &x,
            &[1.0],
            &[0.0],
            NormRef {
                running_mean: &[0.0],
                running_var: &[1.0],
                eps: 1e-5,
            },
            true,
        )
        .unwrap();
        let expected = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!((f.out.data()[0] + expected).abs() < 1e-12);
        assert!((f.out.data()[1] - expected).abs() < 1e-12);
        assert!((f.out.data()[1] - 0.999_995).abs() < 1e-6);
        let stats = f.stats.unwrap();
        assert_eq!(stats.mean, vec![2.0]);
        assert_eq!(stats.var, vec![2.0]);
    }

    #[test]
    fn batch_norm_eval_is_affine() {
        let x = t(&[2, 2], &[1., -2., 3., 0.5]);
        let f = batch_norm(
            &x,
            &[2.0, 1.0],
            &[0.5, 0.0],
            NormRef {
                running_mean: &[0.0, 0.0],
                running_var: &[1.0, 1.0],
                eps: 0.0,
            },
            false,
        )
        .unwrap();
        assert_eq!(f.out.data(), &[2.5, -2.0, 6.5, 0.5]);
        assert!(f.stats.is_none());
    }

    #[test]
    fn cross_entropy_values() {
        let (l, _) = cross_entropy(&Tensor::<f64>::zeros(&[3, 4]), &[0, 1, 3]).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
        let (l, _) = cross_entropy(&t(&[1, 3], &[10., 0., 0.]), &[0]).unwrap();
        // -ln(e^10 / (e^10 + 2))
        assert!((l - 9.079_573_746_728_087e-5).abs() < 1e-15);
        assert!(matches!(
            cross_entropy(&t(&[1, 3], &[0., 0., 0.]), &[3]),
            Err(Error::Label { label: 3, classes: 3 })
        ));
    }
}
