//! Dense row-major `f64` tensors and the handful of kernels the sampler needs.
//!
//! Every kernel is a plain loop over contiguous memory. There are no strided
//! views: operations that change layout (`permute`, `stack`) copy.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("shape {shape:?} holds {expected} elements but {actual} were given")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("shape {0:?} contains a zero-sized dimension")]
    ZeroDim(Vec<usize>),
    #[error("cannot stack an empty list of tensors")]
    EmptyStack,
    #[error("part {index} has shape {found:?}, expected {expected:?}")]
    StackShape {
        index: usize,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("axis {axis} is out of range for rank {rank}")]
    Axis { axis: usize, rank: usize },
    #[error("cannot reshape {from:?} into {to:?}")]
    Reshape { from: Vec<usize>, to: Vec<isize> },
    #[error("{order:?} is not a permutation of 0..{rank}")]
    Permutation { order: Vec<usize>, rank: usize },
    #[error("softmax scale must be positive and finite, got {0}")]
    NonPositiveScale(f64),
    #[error("index {value} at flat position {position} is out of range for {choices} choices")]
    IndexRange {
        position: usize,
        value: usize,
        choices: usize,
    },
    #[error("expected shape {expected:?}, got {found:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("expected a rank-{expected} tensor, got shape {found:?}")]
    Rank { expected: usize, found: Vec<usize> },
    #[error("pool factor {factor} does not divide spatial size {height}x{width}")]
    PoolFactor {
        factor: usize,
        height: usize,
        width: usize,
    },
    #[error("cannot multiply {left:?} by {right:?}")]
    MatMul { left: Vec<usize>, right: Vec<usize> },
}

pub type Result<T> = std::result::Result<T, TensorError>;

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.contains(&0) {
        return Err(TensorError::ZeroDim(shape.to_vec()));
    }
    let expected = numel(shape);
    if expected != len {
        return Err(TensorError::DataLength {
            shape: shape.to_vec(),
            expected,
            actual: len,
        });
    }
    Ok(())
}

/// Row-major strides for `shape`.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut out = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        out[i] = out[i + 1] * shape[i + 1];
    }
    out
}

/// Splits `shape` around `axis` into (outer, axis length, inner) extents.
fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = numel(&shape[..axis]);
    let inner = numel(&shape[axis + 1..]);
    (outer, shape[axis], inner)
}

/// Dense N-dimensional array of `f64` in row-major order.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Dense N-dimensional array of indices, produced by `argmax_axis`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexTensor {
    shape: Vec<usize>,
    data: Vec<usize>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const PREVIEW: usize = 8;
        let head: Vec<f64> = self.data.iter().take(PREVIEW).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &head)
            .field("len", &self.data.len())
            .finish()
    }
}

impl IndexTensor {
    pub fn new(shape: Vec<usize>, data: Vec<usize>) -> Result<Self> {
        check_shape(&shape, data.len())?;
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[usize] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        check_shape(&shape, data.len())?;
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        assert!(!shape.contains(&0), "zero-sized dimension in {shape:?}");
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel(shape)],
        }
    }

    /// Builds a tensor by evaluating `f` at every multi-index in row-major order.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let mut out = Self::zeros(shape);
        let mut idx = vec![0usize; shape.len()];
        for slot in out.data.iter_mut() {
            *slot = f(&idx);
            for d in (0..shape.len()).rev() {
                idx[d] += 1;
                if idx[d] < shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        out
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access to the elements; the shape cannot change through this.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.rank());
        index
            .iter()
            .zip(strides(&self.shape))
            .map(|(i, s)| i * s)
            .sum()
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let o = self.offset(index);
        self.data[o] = value;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Element-wise combination of two equally shaped tensors.
    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.expect_shape(other.shape())?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn expect_shape(&self, expected: &[usize]) -> Result<()> {
        if self.shape != expected {
            return Err(TensorError::ShapeMismatch {
                expected: expected.to_vec(),
                found: self.shape.clone(),
            });
        }
        Ok(())
    }

    pub fn expect_rank(&self, rank: usize) -> Result<()> {
        if self.rank() != rank {
            return Err(TensorError::Rank {
                expected: rank,
                found: self.shape.clone(),
            });
        }
        Ok(())
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        self.expect_shape(other.shape())?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Stacks equally shaped `parts` along a new axis inserted at `axis`.
    pub fn stack(parts: &[&Tensor], axis: usize) -> Result<Self> {
        let first = parts.first().ok_or(TensorError::EmptyStack)?;
        if axis > first.rank() {
            return Err(TensorError::Axis {
                axis,
                rank: first.rank() + 1,
            });
        }
        for (index, part) in parts.iter().enumerate() {
            if part.shape != first.shape {
                return Err(TensorError::StackShape {
                    index,
                    expected: first.shape.clone(),
                    found: part.shape.clone(),
                });
            }
        }
        let outer = numel(&first.shape[..axis]);
        let inner = numel(&first.shape[axis..]);
        let mut data = Vec::with_capacity(first.len() * parts.len());
        for o in 0..outer {
            for part in parts {
                data.extend_from_slice(&part.data[o * inner..(o + 1) * inner]);
            }
        }
        let mut shape = first.shape.clone();
        shape.insert(axis, parts.len());
        Ok(Self { shape, data })
    }

    /// Slice at position `index` along `axis`, removing that axis.
    pub fn index_axis(&self, axis: usize, index: usize) -> Result<Self> {
        self.check_axis(axis)?;
        let (outer, len, inner) = split_at_axis(&self.shape, axis);
        if index >= len {
            return Err(TensorError::IndexRange {
                position: 0,
                value: index,
                choices: len,
            });
        }
        let mut data = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            let start = (o * len + index) * inner;
            data.extend_from_slice(&self.data[start..start + inner]);
        }
        let mut shape = self.shape.clone();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        Ok(Self { shape, data })
    }

    pub fn abs(&self) -> Self {
        self.map(f64::abs)
    }

    /// Row-major reinterpretation. At most one entry of `new_shape` may be -1,
    /// in which case it is inferred from the element count.
    pub fn reshape(&self, new_shape: &[isize]) -> Result<Self> {
        let err = || TensorError::Reshape {
            from: self.shape.clone(),
            to: new_shape.to_vec(),
        };
        let mut inferred = None;
        let mut known = 1usize;
        for (i, &d) in new_shape.iter().enumerate() {
            match d {
                -1 if inferred.is_none() => inferred = Some(i),
                d if d > 0 => known *= d as usize,
                _ => return Err(err()),
            }
        }
        let mut shape: Vec<usize> = new_shape.iter().map(|&d| d.max(0) as usize).collect();
        if let Some(i) = inferred {
            if !self.len().is_multiple_of(known) {
                return Err(err());
            }
            shape[i] = self.len() / known;
        }
        if numel(&shape) != self.len() || shape.contains(&0) {
            return Err(err());
        }
        Ok(Self {
            shape,
            data: self.data.clone(),
        })
    }

    /// Convenience wrapper over [`Tensor::reshape`] for fully known shapes.
    pub fn reshaped(&self, new_shape: &[usize]) -> Result<Self> {
        let dims: Vec<isize> = new_shape.iter().map(|&d| d as isize).collect();
        self.reshape(&dims)
    }

    /// Reorders axes so that output axis `i` is input axis `order[i]`.
    pub fn permute(&self, order: &[usize]) -> Result<Self> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        let valid = order.len() == rank
            && order
                .iter()
                .all(|&a| a < rank && !std::mem::replace(&mut seen[a], true));
        if !valid {
            return Err(TensorError::Permutation {
                order: order.to_vec(),
                rank,
            });
        }
        let in_strides = strides(&self.shape);
        let shape: Vec<usize> = order.iter().map(|&a| self.shape[a]).collect();
        let walk: Vec<usize> = order.iter().map(|&a| in_strides[a]).collect();
        let mut data = Vec::with_capacity(self.len());
        let mut idx = vec![0usize; rank];
        let mut src = 0usize;
        for _ in 0..self.len() {
            data.push(self.data[src]);
            for d in (0..rank).rev() {
                idx[d] += 1;
                src += walk[d];
                if idx[d] < shape[d] {
                    break;
                }
                src -= walk[d] * shape[d];
                idx[d] = 0;
            }
        }
        Ok(Self { shape, data })
    }

    fn check_axis(&self, axis: usize) -> Result<()> {
        if axis >= self.rank() {
            return Err(TensorError::Axis {
                axis,
                rank: self.rank(),
            });
        }
        Ok(())
    }

    /// Arithmetic mean along `axis`; the axis is removed from the shape.
    pub fn mean_axis(&self, axis: usize) -> Result<Self> {
        self.check_axis(axis)?;
        let (outer, len, inner) = split_at_axis(&self.shape, axis);
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            let out = &mut data[o * inner..(o + 1) * inner];
            for j in 0..len {
                let row = &self.data[(o * len + j) * inner..(o * len + j + 1) * inner];
                for (acc, v) in out.iter_mut().zip(row) {
                    *acc += v;
                }
            }
            for acc in out.iter_mut() {
                *acc /= len as f64;
            }
        }
        let mut shape = self.shape.clone();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        Ok(Self { shape, data })
    }

    /// Softmax of `scale * x` along each row of a rank-2 tensor, with the row
    /// maximum subtracted before exponentiation.
    pub fn scaled_softmax_rows(&self, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(TensorError::NonPositiveScale(scale));
        }
        self.expect_rank(2)?;
        let cols = self.shape[1];
        let mut data = Vec::with_capacity(self.len());
        for row in self.data.chunks_exact(cols) {
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let shift = scale * max;
            let start = data.len();
            let mut total = 0.0;
            for &v in row {
                let e = (scale * v - shift).exp();
                total += e;
                data.push(e);
            }
            for e in &mut data[start..] {
                *e /= total;
            }
        }
        Ok(Self {
            shape: self.shape.clone(),
            data,
        })
    }

    /// Position of the maximum along `axis`. Ties resolve to the lowest index.
    pub fn argmax_axis(&self, axis: usize) -> Result<IndexTensor> {
        self.check_axis(axis)?;
        let (outer, len, inner) = split_at_axis(&self.shape, axis);
        let mut data = vec![0usize; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let mut best = self.data[o * len * inner + i];
                for j in 1..len {
                    let v = self.data[(o * len + j) * inner + i];
                    if v > best {
                        best = v;
                        data[o * inner + i] = j;
                    }
                }
            }
        }
        let mut shape = self.shape.clone();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        Ok(IndexTensor { shape, data })
    }

    /// Selects `candidates[indices[i], i]` for every position `i`, where the
    /// candidates' leading axis enumerates the choices.
    pub fn gather_axis(candidates: &Tensor, indices: &IndexTensor) -> Result<Self> {
        let choices = candidates.shape[0];
        let rest: Vec<usize> = if candidates.rank() == 1 {
            vec![1]
        } else {
            candidates.shape[1..].to_vec()
        };
        if indices.shape != rest {
            return Err(TensorError::ShapeMismatch {
                expected: rest,
                found: indices.shape.clone(),
            });
        }
        let inner = indices.len();
        let mut data = Vec::with_capacity(inner);
        for (position, &value) in indices.data.iter().enumerate() {
            if value >= choices {
                return Err(TensorError::IndexRange {
                    position,
                    value,
                    choices,
                });
            }
            data.push(candidates.data[value * inner + position]);
        }
        Ok(Self { shape: rest, data })
    }

    /// Average-pools each `(H, W)` plane of an `(R, H, W)` tensor over
    /// non-overlapping `factor x factor` blocks, then upsamples back by
    /// nearest neighbour so every block holds its mean.
    pub fn spatial_smooth(&self, factor: usize) -> Result<Self> {
        self.expect_rank(3)?;
        let (rows, h, w) = (self.shape[0], self.shape[1], self.shape[2]);
        if factor == 0 || h % factor != 0 || w % factor != 0 {
            return Err(TensorError::PoolFactor {
                factor,
                height: h,
                width: w,
            });
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let area = (factor * factor) as f64;
        let mut out = vec![0.0; self.len()];
        for r in 0..rows {
            let plane = &self.data[r * h * w..(r + 1) * h * w];
            let dst = &mut out[r * h * w..(r + 1) * h * w];
            for by in (0..h).step_by(factor) {
                for bx in (0..w).step_by(factor) {
                    let mut total = 0.0;
                    for y in by..by + factor {
                        for x in bx..bx + factor {
                            total += plane[y * w + x];
                        }
                    }
                    let mean = total / area;
                    for y in by..by + factor {
                        dst[y * w + bx..y * w + bx + factor].fill(mean);
                    }
                }
            }
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: out,
        })
    }

    /// Batched matrix product of `(B, M, K)` with `(B, K, P)` or with a shared
    /// `(K, P)` right factor.
    pub fn matmul_batched(&self, rhs: &Tensor) -> Result<Self> {
        let err = || TensorError::MatMul {
            left: self.shape.clone(),
            right: rhs.shape.clone(),
        };
        if self.rank() != 3 {
            return Err(err());
        }
        let (batch, m, k) = (self.shape[0], self.shape[1], self.shape[2]);
        let (rhs_batched, p) = match rhs.shape.as_slice() {
            [b, kk, p] if *b == batch && *kk == k => (true, *p),
            [kk, p] if *kk == k => (false, *p),
            _ => return Err(err()),
        };
        let mut data = vec![0.0; batch * m * p];
        for b in 0..batch {
            let lhs = &self.data[b * m * k..(b + 1) * m * k];
            let right = if rhs_batched {
                &rhs.data[b * k * p..(b + 1) * k * p]
            } else {
                &rhs.data[..]
            };
            for i in 0..m {
                for j in 0..p {
                    let mut acc = 0.0;
                    for t in 0..k {
                        acc += lhs[i * k + t] * right[t * p + j];
                    }
                    data[(b * m + i) * p + j] = acc;
                }
            }
        }
        Ok(Self {
            shape: vec![batch, m, p],
            data,
        })
    }
}
