//! Dense row-major f64 tensors.
//!
//! The universal numeric carrier for the crate: flat storage plus an explicit
//! shape. Shape arithmetic (broadcasting, strides) lives here; differentiable
//! operations are built on top in [`crate::autodiff`].

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidShape {
                op: "new",
                msg: format!("zero dimension in {shape:?}"),
            });
        }
        if n != data.len() {
            return Err(Error::InvalidShape {
                op: "new",
                msg: format!("shape {shape:?} implies {n} elements, got {}", data.len()),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![1], data: vec![v] }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; n] }
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![v; n] }
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// True when the tensor holds exactly one element.
    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn item(&self) -> Result<f64> {
        if self.is_scalar() {
            Ok(self.data[0])
        } else {
            Err(Error::InvalidShape {
                op: "item",
                msg: format!("expected scalar, shape is {:?}", self.shape),
            })
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::InvalidShape {
                op: "reshape",
                msg: format!("cannot reshape {:?} into {shape:?}", self.shape),
            });
        }
        Ok(Tensor { shape: shape.to_vec(), data: self.data.clone() })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Row-major strides for this shape.
    pub fn strides(&self) -> Vec<usize> {
        strides_of(&self.shape)
    }

    /// Broadcast this tensor to `shape` (numpy semantics, trailing alignment).
    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Tensor> {
        if self.shape == shape {
            return Ok(self.clone());
        }
        let rank = shape.len();
        if self.shape.len() > rank {
            return Err(Error::ShapeMismatch {
                op: "broadcast",
                lhs: self.shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        // pad self.shape with leading 1s
        let mut src = vec![1usize; rank - self.shape.len()];
        src.extend_from_slice(&self.shape);
        for (s, d) in src.iter().zip(shape.iter()) {
            if *s != *d && *s != 1 {
                return Err(Error::ShapeMismatch {
                    op: "broadcast",
                    lhs: self.shape.clone(),
                    rhs: shape.to_vec(),
                });
            }
        }
        let src_strides = strides_of(&src);
        let n: usize = shape.iter().product();
        let mut out = vec![0.0; n];
        let dst_strides = strides_of(shape);
        for (i, o) in out.iter_mut().enumerate() {
            let mut src_idx = 0usize;
            for d in 0..rank {
                let coord = (i / dst_strides[d]) % shape[d];
                if src[d] != 1 {
                    src_idx += coord * src_strides[d];
                }
            }
            *o = self.data[src_idx];
        }
        Ok(Tensor { shape: shape.to_vec(), data: out })
    }

    /// Sum this tensor down to `shape` (adjoint of `broadcast_to`).
    pub fn reduce_to(&self, shape: &[usize]) -> Result<Tensor> {
        if self.shape == shape {
            return Ok(self.clone());
        }
        let rank = self.shape.len();
        if shape.len() > rank {
            return Err(Error::ShapeMismatch {
                op: "reduce",
                lhs: self.shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        let mut dst = vec![1usize; rank - shape.len()];
        dst.extend_from_slice(shape);
        for (s, d) in self.shape.iter().zip(dst.iter()) {
            if *s != *d && *d != 1 {
                return Err(Error::ShapeMismatch {
                    op: "reduce",
                    lhs: self.shape.clone(),
                    rhs: shape.to_vec(),
                });
            }
        }
        let n: usize = dst.iter().product();
        let mut out = vec![0.0; n];
        let src_strides = self.strides();
        let dst_strides = strides_of(&dst);
        for (i, v) in self.data.iter().enumerate() {
            let mut dst_idx = 0usize;
            for d in 0..rank {
                let coord = (i / src_strides[d]) % self.shape[d];
                if dst[d] != 1 {
                    dst_idx += coord * dst_strides[d];
                }
            }
            out[dst_idx] += v;
        }
        Tensor::new(shape.to_vec(), out)
    }

    /// Elementwise binary op with broadcasting.
    pub fn zip(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let shape = broadcast_shape(&self.shape, &other.shape).ok_or(Error::ShapeMismatch {
            op,
            lhs: self.shape.clone(),
            rhs: other.shape.clone(),
        })?;
        let a = self.broadcast_to(&shape)?;
        let b = other.broadcast_to(&shape)?;
        let data = a.data.iter().zip(b.data.iter()).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor { shape, data })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, k: f64) -> Tensor {
        self.map(|v| v * k)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    /// Sum over one axis, removing it from the shape (scalar shape `[1]` when
    /// reducing a rank-1 tensor).
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        self.fold_axis(axis, 0.0, |acc, v| acc + v)
    }

    /// Max over one axis together with the flat argmax offsets (first max wins).
    pub fn max_axis(&self, axis: usize) -> Result<(Tensor, Vec<usize>)> {
        if axis >= self.shape.len() {
            return Err(Error::InvalidShape {
                op: "max_axis",
                msg: format!("axis {axis} out of range for {:?}", self.shape),
            });
        }
        let out_shape = removed_axis_shape(&self.shape, axis);
        let n_out: usize = out_shape.iter().product();
        let mut best = vec![f64::NEG_INFINITY; n_out];
        let mut arg = vec![0usize; n_out];
        let strides = self.strides();
        for (i, &v) in self.data.iter().enumerate() {
            let o = out_offset(i, &self.shape, &strides, axis, &out_shape);
            if v > best[o] {
                best[o] = v;
                arg[o] = i;
            }
        }
        Ok((Tensor { shape: out_shape, data: best }, arg))
    }

    fn fold_axis(&self, axis: usize, init: f64, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if axis >= self.shape.len() {
            return Err(Error::InvalidShape {
                op: "fold_axis",
                msg: format!("axis {axis} out of range for {:?}", self.shape),
            });
        }
        let out_shape = removed_axis_shape(&self.shape, axis);
        let n_out: usize = out_shape.iter().product();
        let mut out = vec![init; n_out];
        let strides = self.strides();
        for (i, &v) in self.data.iter().enumerate() {
            let o = out_offset(i, &self.shape, &strides, axis, &out_shape);
            out[o] = f(out[o], v);
        }
        Ok(Tensor { shape: out_shape, data: out })
    }

    /// 2-D matrix multiply.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (a, b) = (&self.shape, &other.shape);
        if a.len() != 2 || b.len() != 2 || a[1] != b[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: a.clone(),
                rhs: b.clone(),
            });
        }
        let (m, k, n) = (a[0], a[1], b[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let av = self.data[i * k + p];
                if av == 0.0 {
                    continue;
                }
                let brow = &other.data[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        Ok(Tensor { shape: vec![m, n], data: out })
    }

    pub fn transpose2d(&self) -> Result<Tensor> {
        if self.shape.len() != 2 {
            return Err(Error::InvalidShape {
                op: "transpose",
                msg: format!("expected rank 2, got {:?}", self.shape),
            });
        }
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(Tensor { shape: vec![n, m], data: out })
    }

    /// Contiguous slice `[start, end)` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Tensor> {
        if axis >= self.shape.len() || start >= end || end > self.shape[axis] {
            return Err(Error::InvalidShape {
                op: "slice",
                msg: format!("slice [{start},{end}) on axis {axis} of {:?}", self.shape),
            });
        }
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let len = self.shape[axis];
        let mut out = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            let base = o * len * inner;
            out.extend_from_slice(&self.data[base + start * inner..base + end * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = end - start;
        Ok(Tensor { shape, data: out })
    }

    /// Embed this tensor as the `[start, start+len)` slice along `axis` of a
    /// zero tensor shaped like `full_shape` (adjoint of `slice`).
    pub fn pad_slice(&self, axis: usize, start: usize, full_shape: &[usize]) -> Result<Tensor> {
        if axis >= full_shape.len()
            || self.shape.len() != full_shape.len()
            || start + self.shape[axis] > full_shape[axis]
        {
            return Err(Error::InvalidShape {
                op: "pad_slice",
                msg: format!("cannot embed {:?} into {full_shape:?} at axis {axis}", self.shape),
            });
        }
        let outer: usize = full_shape[..axis].iter().product();
        let inner: usize = full_shape[axis + 1..].iter().product();
        let src_len = self.shape[axis];
        let dst_len = full_shape[axis];
        let mut out = Tensor::zeros(full_shape);
        for o in 0..outer {
            let src_base = o * src_len * inner;
            let dst_base = o * dst_len * inner + start * inner;
            out.data[dst_base..dst_base + src_len * inner]
                .copy_from_slice(&self.data[src_base..src_base + src_len * inner]);
        }
        Ok(out)
    }

    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::InvalidShape { op: "concat", msg: "no parts".into() });
        }
        let rank = parts[0].shape.len();
        if axis >= rank {
            return Err(Error::InvalidShape {
                op: "concat",
                msg: format!("axis {axis} out of range"),
            });
        }
        let mut total = 0usize;
        for p in parts {
            if p.shape.len() != rank {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: parts[0].shape.clone(),
                    rhs: p.shape.clone(),
                });
            }
            for d in 0..rank {
                if d != axis && p.shape[d] != parts[0].shape[d] {
                    return Err(Error::ShapeMismatch {
                        op: "concat",
                        lhs: parts[0].shape.clone(),
                        rhs: p.shape.clone(),
                    });
                }
            }
            total += p.shape[axis];
        }
        let mut shape = parts[0].shape.clone();
        shape[axis] = total;
        let mut out = Tensor::zeros(&shape);
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let mut offset = 0usize;
        for p in parts {
            let plen = p.shape[axis];
            for o in 0..outer {
                let src = o * plen * inner;
                let dst = (o * total + offset) * inner;
                out.data[dst..dst + plen * inner].copy_from_slice(&p.data[src..src + plen * inner]);
            }
            offset += plen;
        }
        Ok(out)
    }
}

fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1usize; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * shape[d + 1];
    }
    strides
}

fn removed_axis_shape(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut out: Vec<usize> = shape
        .iter()
        .enumerate()
        .filter(|(d, _)| *d != axis)
        .map(|(_, &s)| s)
        .collect();
    if out.is_empty() {
        out.push(1);
    }
    out
}

fn out_offset(i: usize, shape: &[usize], strides: &[usize], axis: usize, out_shape: &[usize]) -> usize {
    let out_strides = strides_of(out_shape);
    let mut o = 0usize;
    let mut od = 0usize;
    for d in 0..shape.len() {
        if d == axis {
            continue;
        }
        let coord = (i / strides[d]) % shape[d];
        if od < out_strides.len() && !(out_shape.len() == 1 && shape.len() == 1) {
            o += coord * out_strides[od];
        }
        od += 1;
    }
    o
}

/// Broadcast result shape of two shapes, numpy trailing-alignment rules.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for d in 0..rank {
        let av = if d < rank - a.len() { 1 } else { a[d - (rank - a.len())] };
        let bv = if d < rank - b.len() { 1 } else { b[d - (rank - b.len())] };
        if av == bv || bv == 1 {
            out[d] = av.max(bv);
        } else if av == 1 {
            out[d] = bv;
        } else {
            return None;
        }
    }
    Some(out)
}
