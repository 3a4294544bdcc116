//! Dense row-major tensors with the forward kernels used by the tape.
//!
//! Tensors are immutable once built; the backing buffer is shared, so cloning
//! a tensor (for example when a parameter is placed on a tape) is O(1).

use std::fmt;
use std::sync::Arc;

use super::NumericError;

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<[f64]>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", &self.data[..])?;
        }
        Ok(())
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, NumericError> {
        let expected: usize = shape.iter().product();
        if shape.is_empty() || expected != data.len() {
            return Err(NumericError::BadData {
                shape,
                len: data.len(),
            });
        }
        Ok(Self {
            shape,
            data: data.into(),
        })
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            shape,
            data: data.into(),
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        let n = data.len();
        Self::from_parts(vec![n], data)
    }

    /// Single-row matrix `[1, n]`.
    pub fn row(data: Vec<f64>) -> Self {
        let n = data.len();
        Self::from_parts(vec![1, n], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumericError> {
        Self::new(vec![rows, cols], data)
    }

    pub fn from_rows(rows: &[Vec<f64>], cols: usize) -> Result<Self, NumericError> {
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(NumericError::ShapeMismatch {
                    op: "from_rows",
                    left: vec![cols],
                    right: vec![r.len()],
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self::from_parts(vec![rows.len(), cols], data))
    }

    pub fn scalar(v: f64) -> Self {
        Self::from_parts(vec![1], vec![v])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![0.0; n])
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![v; n])
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self::from_parts(vec![n, n], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data.to_vec()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn rows(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[0]
        } else {
            1
        }
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self, NumericError> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(NumericError::BadData {
                shape,
                len: self.data.len(),
            });
        }
        Ok(Self {
            shape,
            data: self.data.clone(),
        })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn as_matrix(&self, op: &'static str) -> Result<(usize, usize), NumericError> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            _ => Err(NumericError::NotMatrix {
                op,
                shape: self.shape.clone(),
            }),
        }
    }

    fn same_shape(&self, other: &Tensor, op: &'static str) -> Result<(), NumericError> {
        if self.shape != other.shape {
            return Err(NumericError::ShapeMismatch {
                op,
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    /// Element-wise binary op. A single-element operand acts as a scalar.
    pub fn zip_with(
        &self,
        other: &Tensor,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor, NumericError> {
        if self.shape == other.shape {
            let data = self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect();
            return Ok(Tensor::from_parts(self.shape.clone(), data));
        }
        if other.is_scalar() {
            let b = other.item();
            return Ok(self.map(|a| f(a, b)));
        }
        if self.is_scalar() {
            let a = self.item();
            return Ok(other.map(|b| f(a, b)));
        }
        Err(NumericError::ShapeMismatch {
            op,
            left: self.shape.clone(),
            right: other.shape.clone(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor, NumericError> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor, NumericError> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor, NumericError> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, k: f64) -> Tensor {
        self.map(|v| v * k)
    }

    pub fn relu(&self) -> Tensor {
        self.map(|v| if v > 0.0 { v } else { 0.0 })
    }

    pub fn sigmoid(&self) -> Tensor {
        self.map(sigmoid)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor, NumericError> {
        let (m, k) = self.as_matrix("matmul")?;
        let (k2, n) = other.as_matrix("matmul")?;
        if k != k2 {
            return Err(NumericError::ShapeMismatch {
                op: "matmul",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let a = &self.data;
        let b = &other.data;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let av = a[i * k + p];
                if av == 0.0 {
                    continue;
                }
                let brow = &b[p * n..(p + 1) * n];
                for (o, &bv) in row.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        Ok(Tensor::from_parts(vec![m, n], out))
    }

    /// `W · v` for a matrix `W` and a rank-1 vector `v`.
    pub fn matvec(&self, v: &Tensor) -> Result<Tensor, NumericError> {
        let (m, k) = self.as_matrix("matvec")?;
        if v.shape != [k] {
            return Err(NumericError::ShapeMismatch {
                op: "matvec",
                left: self.shape.clone(),
                right: v.shape.clone(),
            });
        }
        let out = (0..m)
            .map(|i| {
                self.data[i * k..(i + 1) * k]
                    .iter()
                    .zip(v.data.iter())
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        Ok(Tensor::vector(out))
    }

    pub fn transpose(&self) -> Result<Tensor, NumericError> {
        let (m, n) = self.as_matrix("transpose")?;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(Tensor::from_parts(vec![n, m], out))
    }

    /// Element-wise maximum over a list of same-shape tensors, plus the index
    /// of the winning input per element (earliest input wins ties).
    pub fn max_list(inputs: &[&Tensor]) -> Result<(Tensor, Vec<usize>), NumericError> {
        let first = inputs.first().ok_or(NumericError::EmptyInput { op: "max_list" })?;
        for t in &inputs[1..] {
            first.same_shape(t, "max_list")?;
        }
        let mut out = first.data.to_vec();
        let mut arg = vec![0usize; out.len()];
        for (k, t) in inputs.iter().enumerate().skip(1) {
            for (idx, &v) in t.data.iter().enumerate() {
                if v > out[idx] {
                    out[idx] = v;
                    arg[idx] = k;
                }
            }
        }
        Ok((Tensor::from_parts(first.shape.clone(), out), arg))
    }

    pub fn gather_rows(&self, index: &[usize]) -> Result<Tensor, NumericError> {
        let (m, n) = self.as_matrix("gather_rows")?;
        let mut out = Vec::with_capacity(index.len() * n);
        for &r in index {
            if r >= m {
                return Err(NumericError::IndexOutOfRange {
                    op: "gather_rows",
                    index: r,
                    bound: m,
                });
            }
            out.extend_from_slice(&self.data[r * n..(r + 1) * n]);
        }
        Ok(Tensor::from_parts(vec![index.len(), n], out))
    }

    /// Adds row `k` of `self` into row `index[k]` of an `out_rows × n` zero matrix.
    pub fn scatter_add_rows(&self, index: &[usize], out_rows: usize) -> Result<Tensor, NumericError> {
        let (m, n) = self.as_matrix("scatter_add_rows")?;
        if m != index.len() {
            return Err(NumericError::ShapeMismatch {
                op: "scatter_add_rows",
                left: self.shape.clone(),
                right: vec![index.len()],
            });
        }
        let mut out = vec![0.0; out_rows * n];
        for (k, &r) in index.iter().enumerate() {
            if r >= out_rows {
                return Err(NumericError::IndexOutOfRange {
                    op: "scatter_add_rows",
                    index: r,
                    bound: out_rows,
                });
            }
            let dst = &mut out[r * n..(r + 1) * n];
            for (d, s) in dst.iter_mut().zip(&self.data[k * n..(k + 1) * n]) {
                *d += s;
            }
        }
        Ok(Tensor::from_parts(vec![out_rows, n], out))
    }

    pub fn concat_cols(parts: &[&Tensor]) -> Result<Tensor, NumericError> {
        let first = parts.first().ok_or(NumericError::EmptyInput { op: "concat_cols" })?;
        let (m, _) = first.as_matrix("concat_cols")?;
        let mut width = 0;
        for p in parts {
            let (r, c) = p.as_matrix("concat_cols")?;
            if r != m {
                return Err(NumericError::ShapeMismatch {
                    op: "concat_cols",
                    left: first.shape.clone(),
                    right: p.shape.clone(),
                });
            }
            width += c;
        }
        let mut out = Vec::with_capacity(m * width);
        for i in 0..m {
            for p in parts {
                out.extend_from_slice(p.row_slice(i));
            }
        }
        Ok(Tensor::from_parts(vec![m, width], out))
    }

    pub fn concat_rows(parts: &[&Tensor]) -> Result<Tensor, NumericError> {
        let first = parts.first().ok_or(NumericError::EmptyInput { op: "concat_rows" })?;
        let (_, n) = first.as_matrix("concat_rows")?;
        let mut rows = 0;
        let mut out = Vec::new();
        for p in parts {
            let (r, c) = p.as_matrix("concat_rows")?;
            if c != n {
                return Err(NumericError::ShapeMismatch {
                    op: "concat_rows",
                    left: first.shape.clone(),
                    right: p.shape.clone(),
                });
            }
            rows += r;
            out.extend_from_slice(&p.data);
        }
        Ok(Tensor::from_parts(vec![rows, n], out))
    }

    /// Column range `[start, start + width)` of a matrix.
    pub fn slice_cols(&self, start: usize, width: usize) -> Result<Tensor, NumericError> {
        let (m, n) = self.as_matrix("slice_cols")?;
        if start + width > n {
            return Err(NumericError::IndexOutOfRange {
                op: "slice_cols",
                index: start + width,
                bound: n,
            });
        }
        let mut out = Vec::with_capacity(m * width);
        for i in 0..m {
            out.extend_from_slice(&self.data[i * n + start..i * n + start + width]);
        }
        Ok(Tensor::from_parts(vec![m, width], out))
    }

    /// Per-row sums of a matrix, as an `m × 1` column.
    pub fn row_sums(&self) -> Result<Tensor, NumericError> {
        let (m, _) = self.as_matrix("row_sums")?;
        let out = (0..m).map(|i| self.row_slice(i).iter().sum()).collect();
        Ok(Tensor::from_parts(vec![m, 1], out))
    }

    /// Row-wise softmax, max-shifted.
    pub fn softmax_rows(&self) -> Result<Tensor, NumericError> {
        let (m, n) = self.as_matrix("softmax_rows")?;
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            out.extend(softmax(self.row_slice(i)));
        }
        Ok(Tensor::from_parts(vec![m, n], out))
    }

    /// Round every element through `f32`.
    pub fn round_f32(&self) -> Tensor {
        self.map(|v| v as f32 as f64)
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&v| v - lse).collect()
}
