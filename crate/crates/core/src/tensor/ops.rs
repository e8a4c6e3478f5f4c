//! Differentiable primitives.
//!
//! Binary elementwise ops broadcast the smaller operand over the larger one
//! when its shape (ignoring leading unit extents) is a trailing suffix of the
//! larger shape, or when it holds a single element. In row-major order that
//! makes element `i` of the larger operand pair with element `i % len` of the
//! smaller one.

use rand::Rng;

use super::kernels::{matmul_into, matmul_nt, matmul_tn, transpose};
use super::{numel_of, Result, Tensor, TensorError};

fn strip_leading_ones(shape: &[usize]) -> &[usize] {
    let first = shape.iter().position(|&e| e != 1).unwrap_or(shape.len());
    &shape[first..]
}

fn broadcasts_into(small: &[usize], big: &[usize]) -> bool {
    if numel_of(small) == 1 {
        return true;
    }
    let s = strip_leading_ones(small);
    s.len() <= big.len() && big[big.len() - s.len()..] == *s
}

/// Sum a gradient over the repeated blocks of a broadcast operand.
fn reduce_broadcast(grad: &[f64], small_len: usize) -> Vec<f64> {
    if grad.len() == small_len {
        return grad.to_vec();
    }
    let mut out = vec![0.0; small_len];
    for (i, g) in grad.iter().enumerate() {
        out[i % small_len] += g;
    }
    out
}

/// Decompose `shape` around `axis` into (outer, extent, inner).
fn split_axis(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(TensorError::Axis {
            axis,
            rank: shape.len(),
        });
    }
    Ok((
        numel_of(&shape[..axis]),
        shape[axis],
        numel_of(&shape[axis + 1..]),
    ))
}

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

impl Binary {
    fn name(self) -> &'static str {
        match self {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
        }
    }

    fn apply(self, x: f64, y: f64) -> f64 {
        match self {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
            Binary::Div => x / y,
        }
    }
}

fn unary(
    x: &Tensor,
    name: &'static str,
    f: impl Fn(f64) -> f64,
    // derivative given (input, output)
    df: impl Fn(f64, f64) -> f64 + 'static,
) -> Tensor {
    let data: Vec<f64> = x.data().iter().map(|&v| f(v)).collect();
    let input = x.clone();
    Tensor::from_op(
        data,
        x.shape().to_vec(),
        name,
        vec![x.clone()],
        Box::new(move |g, out| {
            let xin = input.data();
            let dx = g
                .iter()
                .zip(xin.iter().zip(out))
                .map(|(g, (&xv, &yv))| g * df(xv, yv))
                .collect();
            vec![Some(dx)]
        }),
    )
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub(crate) fn gelu_value(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_derivative(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

pub fn sigmoid_value(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tensor {
    fn binary(&self, other: &Tensor, kind: Binary) -> Result<Tensor> {
        let (big, small) = if self.numel() >= other.numel() {
            (self, other)
        } else {
            (other, self)
        };
        if big.shape() != small.shape() && !broadcasts_into(small.shape(), big.shape()) {
            return Err(TensorError::Shape {
                op: kind.name(),
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        }
        let out_shape = big.shape().to_vec();
        let n = big.numel();
        let (la, lb) = (self.numel(), other.numel());
        let data: Vec<f64> = {
            let a = self.data();
            let b = other.data();
            (0..n).map(|i| kind.apply(a[i % la], b[i % lb])).collect()
        };
        let (a_t, b_t) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            data,
            out_shape,
            kind.name(),
            vec![self.clone(), other.clone()],
            Box::new(move |g, _| {
                let (ga, gb): (Vec<f64>, Vec<f64>) = match kind {
                    Binary::Add => (g.to_vec(), g.to_vec()),
                    Binary::Sub => (g.to_vec(), g.iter().map(|v| -v).collect()),
                    Binary::Mul => {
                        let a = a_t.data();
                        let b = b_t.data();
                        (
                            g.iter().enumerate().map(|(i, g)| g * b[i % lb]).collect(),
                            g.iter().enumerate().map(|(i, g)| g * a[i % la]).collect(),
                        )
                    }
                    Binary::Div => {
                        let a = a_t.data();
                        let b = b_t.data();
                        (
                            g.iter().enumerate().map(|(i, g)| g / b[i % lb]).collect(),
                            g.iter()
                                .enumerate()
                                .map(|(i, g)| {
                                    let bv = b[i % lb];
                                    -g * a[i % la] / (bv * bv)
                                })
                                .collect(),
                        )
                    }
                };
                let da = a_t.requires_grad().then(|| reduce_broadcast(&ga, la));
                let db = b_t.requires_grad().then(|| reduce_broadcast(&gb, lb));
                vec![da, db]
            }),
        ))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Binary::Add)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Binary::Sub)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Binary::Mul)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Binary::Div)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        unary(self, "scale", |v| v * c, move |_, _| c)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        unary(self, "add_scalar", |v| v + c, |_, _| 1.0)
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    pub fn square(&self) -> Tensor {
        unary(self, "square", |v| v * v, |x, _| 2.0 * x)
    }

    pub fn exp(&self) -> Tensor {
        unary(self, "exp", f64::exp, |_, y| y)
    }

    pub fn log(&self) -> Tensor {
        unary(self, "log", f64::ln, |x, _| 1.0 / x)
    }

    pub fn tanh(&self) -> Tensor {
        unary(self, "tanh", f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn sigmoid(&self) -> Tensor {
        unary(self, "sigmoid", sigmoid_value, |_, y| y * (1.0 - y))
    }

    pub fn relu(&self) -> Tensor {
        unary(
            self,
            "relu",
            |v| v.max(0.0),
            |x, _| if x > 0.0 { 1.0 } else { 0.0 },
        )
    }

    /// Tanh approximation of GELU.
    pub fn gelu(&self) -> Tensor {
        unary(self, "gelu", gelu_value, |x, _| gelu_derivative(x))
    }

    /// Inverted dropout: in training each element survives with
    /// probability `1 - p` and is scaled by `1 / (1 - p)`. With `rng = None`
    /// (evaluation) or `p == 0` it is the identity.
    pub fn dropout<R: Rng + ?Sized>(&self, p: f64, rng: Option<&mut R>) -> Result<Tensor> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::Unsupported(format!(
                "dropout probability {p} outside [0, 1)"
            )));
        }
        let Some(rng) = rng else {
            return Ok(self.clone());
        };
        if p == 0.0 {
            return Ok(self.clone());
        }
        let keep = 1.0 - p;
        let mask: Vec<f64> = (0..self.numel())
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let data = self.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        Ok(Tensor::from_op(
            data,
            self.shape().to_vec(),
            "dropout",
            vec![self.clone()],
            Box::new(move |g, _| vec![Some(g.iter().zip(&mask).map(|(g, m)| g * m).collect())]),
        ))
    }

    /// Matrix product of `[m×k]` and `[k×n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let err = || TensorError::Shape {
            op: "matmul",
            lhs: self.shape().to_vec(),
            rhs: other.shape().to_vec(),
        };
        let (&[m, k], &[k2, n]) = (self.shape(), other.shape()) else {
            return Err(err());
        };
        if k != k2 {
            return Err(err());
        }
        let mut out = vec![0.0; m * n];
        matmul_into(&self.data(), &other.data(), &mut out, m, k, n);
        let (a, b) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            out,
            vec![m, n],
            "matmul",
            vec![self.clone(), other.clone()],
            Box::new(move |g, _| {
                // dA = dC·Bᵀ, dB = Aᵀ·dC
                let da = a.requires_grad().then(|| matmul_nt(g, &b.data(), m, n, k));
                let db = b.requires_grad().then(|| matmul_tn(&a.data(), g, m, k, n));
                vec![da, db]
            }),
        ))
    }

    /// Transpose of a rank-2 tensor.
    pub fn t(&self) -> Result<Tensor> {
        let &[r, c] = self.shape() else {
            return Err(TensorError::Unsupported(format!(
                "transpose needs rank 2, got {:?}",
                self.shape()
            )));
        };
        let data = transpose(&self.data(), r, c);
        Ok(Tensor::from_op(
            data,
            vec![c, r],
            "transpose",
            vec![self.clone()],
            Box::new(move |g, _| vec![Some(transpose(g, c, r))]),
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel_of(shape) != self.numel() || shape.contains(&0) {
            return Err(TensorError::Shape {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Tensor::from_op(
            self.to_vec(),
            shape.to_vec(),
            "reshape",
            vec![self.clone()],
            Box::new(|g, _| vec![Some(g.to_vec())]),
        ))
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&self) -> Tensor {
        let n = self.numel();
        let total = self.data().iter().sum();
        Tensor::from_op(
            vec![total],
            Vec::new(),
            "sum",
            vec![self.clone()],
            Box::new(move |g, _| vec![Some(vec![g[0]; n])]),
        )
    }

    pub fn mean(&self) -> Tensor {
        self.sum().scale(1.0 / self.numel() as f64)
    }

    /// Sum over one axis (the axis is removed).
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        let (outer, len, inner) = split_axis(self.shape(), axis)?;
        let mut shape = self.shape().to_vec();
        shape.remove(axis);
        let mut out = vec![0.0; outer * inner];
        {
            let x = self.data();
            for o in 0..outer {
                for j in 0..len {
                    let base = (o * len + j) * inner;
                    for i in 0..inner {
                        out[o * inner + i] += x[base + i];
                    }
                }
            }
        }
        Ok(Tensor::from_op(
            out,
            shape,
            "sum_axis",
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut dx = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for j in 0..len {
                        let base = (o * len + j) * inner;
                        dx[base..base + inner].copy_from_slice(&g[o * inner..(o + 1) * inner]);
                    }
                }
                vec![Some(dx)]
            }),
        ))
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Tensor> {
        let len = *self.shape().get(axis).ok_or(TensorError::Axis {
            axis,
            rank: self.rank(),
        })?;
        Ok(self.sum_axis(axis)?.scale(1.0 / len as f64))
    }

    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        let (outer, len, inner) = split_axis(self.shape(), axis)?;
        let mut out = self.to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * len + j) * inner + i;
                let max = (0..len).map(|j| out[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for j in 0..len {
                    let e = (out[idx(j)] - max).exp();
                    out[idx(j)] = e;
                    z += e;
                }
                for j in 0..len {
                    out[idx(j)] /= z;
                }
            }
        }
        Ok(Tensor::from_op(
            out,
            self.shape().to_vec(),
            "softmax",
            vec![self.clone()],
            Box::new(move |g, y| {
                let mut dx = vec![0.0; g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |j: usize| (o * len + j) * inner + i;
                        let dot: f64 = (0..len).map(|j| g[idx(j)] * y[idx(j)]).sum();
                        for j in 0..len {
                            dx[idx(j)] = y[idx(j)] * (g[idx(j)] - dot);
                        }
                    }
                }
                vec![Some(dx)]
            }),
        ))
    }

    /// `x - logsumexp(x)` along `axis`.
    pub fn log_softmax(&self, axis: usize) -> Result<Tensor> {
        let (outer, len, inner) = split_axis(self.shape(), axis)?;
        let mut out = self.to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * len + j) * inner + i;
                let max = (0..len).map(|j| out[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
                let lse = max + (0..len).map(|j| (out[idx(j)] - max).exp()).sum::<f64>().ln();
                for j in 0..len {
                    out[idx(j)] -= lse;
                }
            }
        }
        Ok(Tensor::from_op(
            out,
            self.shape().to_vec(),
            "log_softmax",
            vec![self.clone()],
            Box::new(move |g, y| {
                let mut dx = vec![0.0; g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |j: usize| (o * len + j) * inner + i;
                        let gsum: f64 = (0..len).map(|j| g[idx(j)]).sum();
                        for j in 0..len {
                            dx[idx(j)] = g[idx(j)] - y[idx(j)].exp() * gsum;
                        }
                    }
                }
                vec![Some(dx)]
            }),
        ))
    }

    /// Normalise each row over the last axis (population variance), then
    /// apply `gain` and `bias` (both of the last-axis extent).
    pub fn layer_norm(&self, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
        let d = *self.shape().last().ok_or(TensorError::Axis { axis: 0, rank: 0 })?;
        for p in [gain, bias] {
            if p.numel() != d {
                return Err(TensorError::Shape {
                    op: "layer_norm",
                    lhs: self.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
        }
        let rows = self.numel() / d;
        let mut xhat = vec![0.0; self.numel()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; self.numel()];
        {
            let x = self.data();
            let (ga, be) = (gain.data(), bias.data());
            for r in 0..rows {
                let row = &x[r * d..(r + 1) * d];
                let mean = row.iter().sum::<f64>() / d as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                let is = 1.0 / (var + eps).sqrt();
                inv_std[r] = is;
                for j in 0..d {
                    let h = (row[j] - mean) * is;
                    xhat[r * d + j] = h;
                    out[r * d + j] = h * ga[j] + be[j];
                }
            }
        }
        let (gain_t, bias_t) = (gain.clone(), bias.clone());
        Ok(Tensor::from_op(
            out,
            self.shape().to_vec(),
            "layer_norm",
            vec![self.clone(), gain.clone(), bias.clone()],
            Box::new(move |g, _| {
                let ga = gain_t.data();
                let mut dx = vec![0.0; g.len()];
                let mut dgain = vec![0.0; d];
                let mut dbias = vec![0.0; d];
                for r in 0..rows {
                    let gr = &g[r * d..(r + 1) * d];
                    let hr = &xhat[r * d..(r + 1) * d];
                    let mut mean_dh = 0.0;
                    let mut mean_dh_h = 0.0;
                    for j in 0..d {
                        let dh = gr[j] * ga[j];
                        mean_dh += dh;
                        mean_dh_h += dh * hr[j];
                        dgain[j] += gr[j] * hr[j];
                        dbias[j] += gr[j];
                    }
                    mean_dh /= d as f64;
                    mean_dh_h /= d as f64;
                    for j in 0..d {
                        let dh = gr[j] * ga[j];
                        dx[r * d + j] = inv_std[r] * (dh - mean_dh - hr[j] * mean_dh_h);
                    }
                }
                let dg = gain_t.requires_grad().then_some(dgain);
                let db = bias_t.requires_grad().then_some(dbias);
                vec![Some(dx), dg, db]
            }),
        ))
    }

    /// Same-length dilated 1-D cross-correlation.
    ///
    /// `self` is `[c_in×l]`, `weights` is `[c_out×c_in×k]` with odd `k`, and
    /// `bias` (if any) is `[c_out]`. Each side is zero padded by
    /// `(k-1)·dilation/2`, so tap `j` reads input position
    /// `t + (j - (k-1)/2)·dilation`.
    pub fn conv1d_dilated(
        &self,
        weights: &Tensor,
        bias: Option<&Tensor>,
        dilation: usize,
    ) -> Result<Tensor> {
        let (&[c_in, l], &[c_out, wc_in, k]) = (self.shape(), weights.shape()) else {
            return Err(TensorError::Shape {
                op: "conv1d_dilated",
                lhs: self.shape().to_vec(),
                rhs: weights.shape().to_vec(),
            });
        };
        if wc_in != c_in {
            return Err(TensorError::Shape {
                op: "conv1d_dilated",
                lhs: self.shape().to_vec(),
                rhs: weights.shape().to_vec(),
            });
        }
        if k % 2 == 0 {
            return Err(TensorError::Unsupported(format!(
                "even kernel size {k} cannot give symmetric same-length padding"
            )));
        }
        if dilation == 0 {
            return Err(TensorError::Unsupported("dilation must be >= 1".into()));
        }
        if let Some(b) = bias {
            if b.numel() != c_out {
                return Err(TensorError::Shape {
                    op: "conv1d_dilated bias",
                    lhs: vec![c_out],
                    rhs: b.shape().to_vec(),
                });
            }
        }
        let half = (k - 1) / 2;
        // im2col: cols[(c·k + j) × l]
        let cols = {
            let x = self.data();
            let mut cols = vec![0.0; c_in * k * l];
            for c in 0..c_in {
                for j in 0..k {
                    let offset = (j as isize - half as isize) * dilation as isize;
                    let row = &mut cols[(c * k + j) * l..(c * k + j + 1) * l];
                    for (t, v) in row.iter_mut().enumerate() {
                        let src = t as isize + offset;
                        if src >= 0 && (src as usize) < l {
                            *v = x[c * l + src as usize];
                        }
                    }
                }
            }
            cols
        };
        let mut out = vec![0.0; c_out * l];
        matmul_into(&weights.data(), &cols, &mut out, c_out, c_in * k, l);
        if let Some(b) = bias {
            let b = b.data();
            for o in 0..c_out {
                out[o * l..(o + 1) * l].iter_mut().for_each(|v| *v += b[o]);
            }
        }
        let mut inputs = vec![self.clone(), weights.clone()];
        if let Some(b) = bias {
            inputs.push(b.clone());
        }
        let (x_t, w_t, b_t) = (self.clone(), weights.clone(), bias.cloned());
        Ok(Tensor::from_op(
            out,
            vec![c_out, l],
            "conv1d_dilated",
            inputs,
            Box::new(move |g, _| {
                let ck = c_in * k;
                let dw = w_t.requires_grad().then(|| matmul_nt(g, &cols, c_out, l, ck));
                let dx = x_t.requires_grad().then(|| {
                    let dcols = matmul_tn(&w_t.data(), g, c_out, ck, l);
                    let mut dx = vec![0.0; c_in * l];
                    for c in 0..c_in {
                        for j in 0..k {
                            let offset = (j as isize - half as isize) * dilation as isize;
                            let row = &dcols[(c * k + j) * l..(c * k + j + 1) * l];
                            for (t, v) in row.iter().enumerate() {
                                let src = t as isize + offset;
                                if src >= 0 && (src as usize) < l {
                                    dx[c * l + src as usize] += v;
                                }
                            }
                        }
                    }
                    dx
                });
                let mut grads = vec![dx, dw];
                if let Some(b) = &b_t {
                    grads.push(b.requires_grad().then(|| {
                        (0..c_out).map(|o| g[o * l..(o + 1) * l].iter().sum()).collect()
                    }));
                }
                grads
            }),
        ))
    }

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat(tensors: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = tensors
            .first()
            .ok_or_else(|| TensorError::Unsupported("concat of zero tensors".into()))?;
        let (outer, _, inner) = split_axis(first.shape(), axis)?;
        let mut total = 0;
        for t in tensors {
            let same_rank = t.rank() == first.rank();
            let same_other = same_rank
                && t.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !same_other {
                return Err(TensorError::Shape {
                    op: "concat",
                    lhs: first.shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            total += t.shape()[axis];
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        let lens: Vec<usize> = tensors.iter().map(|t| t.shape()[axis]).collect();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (t, &len) in tensors.iter().zip(&lens) {
                let d = t.data();
                out.extend_from_slice(&d[o * len * inner..(o + 1) * len * inner]);
            }
        }
        Ok(Tensor::from_op(
            out,
            shape,
            "concat",
            tensors.to_vec(),
            Box::new(move |g, _| {
                let mut grads: Vec<Vec<f64>> =
                    lens.iter().map(|&len| Vec::with_capacity(outer * len * inner)).collect();
                let mut pos = 0;
                for _ in 0..outer {
                    for (gr, &len) in grads.iter_mut().zip(&lens) {
                        gr.extend_from_slice(&g[pos..pos + len * inner]);
                        pos += len * inner;
                    }
                }
                grads.into_iter().map(Some).collect()
            }),
        ))
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        let (outer, extent, inner) = split_axis(self.shape(), axis)?;
        if len == 0 || start + len > extent {
            return Err(TensorError::Index {
                index: start + len,
                extent,
            });
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        let mut out = Vec::with_capacity(outer * len * inner);
        {
            let x = self.data();
            for o in 0..outer {
                let base = (o * extent + start) * inner;
                out.extend_from_slice(&x[base..base + len * inner]);
            }
        }
        Ok(Tensor::from_op(
            out,
            shape,
            "narrow",
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut dx = vec![0.0; outer * extent * inner];
                for o in 0..outer {
                    let base = (o * extent + start) * inner;
                    dx[base..base + len * inner]
                        .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(dx)]
            }),
        ))
    }

    /// Select rows (axis 0) by index; rows may repeat. This is also the
    /// embedding lookup.
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Tensor> {
        let rows = *self.shape().first().ok_or(TensorError::Axis { axis: 0, rank: 0 })?;
        if indices.is_empty() {
            return Err(TensorError::Unsupported("gather of zero rows".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(TensorError::Index {
                index: bad,
                extent: rows,
            });
        }
        let width = self.numel() / rows;
        let mut out = Vec::with_capacity(indices.len() * width);
        {
            let x = self.data();
            for &i in indices {
                out.extend_from_slice(&x[i * width..(i + 1) * width]);
            }
        }
        let mut shape = self.shape().to_vec();
        shape[0] = indices.len();
        let idx = indices.to_vec();
        Ok(Tensor::from_op(
            out,
            shape,
            "gather_rows",
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut dx = vec![0.0; rows * width];
                for (k, &i) in idx.iter().enumerate() {
                    for c in 0..width {
                        dx[i * width + c] += g[k * width + c];
                    }
                }
                vec![Some(dx)]
            }),
        ))
    }

    /// Elementwise binary cross-entropy on logits against constant targets,
    /// in the overflow-free form `max(x,0) − x·y + ln(1 + e^{−|x|})`.
    pub fn bce_with_logits(&self, targets: &[f64]) -> Result<Tensor> {
        if targets.len() != self.numel() {
            return Err(TensorError::Shape {
                op: "bce_with_logits",
                lhs: self.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let data = self
            .data()
            .iter()
            .zip(targets)
            .map(|(&x, &y)| x.max(0.0) - x * y + (-x.abs()).exp().ln_1p())
            .collect();
        let (x_t, y) = (self.clone(), targets.to_vec());
        Ok(Tensor::from_op(
            data,
            self.shape().to_vec(),
            "bce_with_logits",
            vec![self.clone()],
            Box::new(move |g, _| {
                let x = x_t.data();
                vec![Some(
                    g.iter()
                        .zip(x.iter().zip(&y))
                        .map(|(g, (&x, &y))| g * (sigmoid_value(x) - y))
                        .collect(),
                )]
            }),
        ))
    }
}
