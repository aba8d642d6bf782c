//! Dense row-major `f32` tensors and the handful of kernels the quantization
//! pipeline needs.
//!
//! Storage is `f32`; reductions (matmul inner products, norms) accumulate in
//! `f64` in a fixed ascending order so results are reproducible bit-for-bit
//! regardless of thread count.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

/// Which side of a `C_i x C_o` weight matrix a per-channel reduction runs over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelAxis {
    /// One value per row (in-channel).
    In,
    /// One value per column (out-channel).
    Out,
}

impl Tensor {
    /// Builds a tensor, rejecting length mismatches and non-finite values.
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::invalid(format!(
                "tensor shape must be non-empty with positive dims, got {shape:?}"
            )));
        }
        if numel != data.len() {
            return Err(Error::ShapeMismatch {
                op: "Tensor::new",
                left: shape,
                right: vec![data.len()],
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput { index });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    /// Rank-2 tensor from nested rows. Panics on ragged input.
    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self::new(vec![rows.len(), cols], data).expect("valid rows")
    }

    /// Rank-1 tensor.
    pub fn from_vec(data: Vec<f32>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    /// Internal constructor for kernels whose output is finite by construction.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f32>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// `(rows, cols)` of a rank-2 tensor.
    pub fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::Rank {
                op,
                expected: 2,
                shape: self.shape.clone(),
            }),
        }
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[f32] {
        let c = self.shape[1];
        &self.data[i * c..(i + 1) * c]
    }

    pub fn get2(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.shape[1] + j]
    }

    /// Column `j` of a rank-2 tensor, copied out.
    pub fn column(&self, j: usize) -> Vec<f32> {
        let (r, c) = (self.shape[0], self.shape[1]);
        (0..r).map(|i| self.data[i * c + j]).collect()
    }

    /// Rows selected by `idx`, in that order.
    pub fn select_rows(&self, idx: &[usize]) -> Tensor {
        let c = self.shape[1];
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Tensor::from_parts(vec![idx.len(), c], data)
    }

    /// Stacks rank-2 tensors with equal column counts.
    pub fn vstack(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("vstack of zero tensors"))?;
        let (_, c) = first.dims2("vstack")?;
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            let (r, pc) = p.dims2("vstack")?;
            if pc != c {
                return Err(Error::ShapeMismatch {
                    op: "vstack",
                    left: first.shape.clone(),
                    right: p.shape.clone(),
                });
            }
            rows += r;
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor::from_parts(vec![rows, c], data))
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    /// Elementwise `self - other`.
    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn zip_with(
        &self,
        other: &Tensor,
        op: &'static str,
        f: impl Fn(f32, f32) -> f32,
    ) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor::from_parts(self.shape.clone(), data))
    }

    /// Largest absolute value.
    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Mean of squared entries, accumulated in f64.
    pub fn mean_square(&self) -> f64 {
        let s: f64 = self.data.iter().map(|&v| (v as f64) * (v as f64)).sum();
        s / self.data.len() as f64
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data
            .iter()
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>()
            .sqrt()
    }
}

/// `x · w` for `x: N x C_i`, `w: C_i x C_o`.
///
/// Each output entry is an f64 dot product summed over ascending `k`.
pub fn matmul(x: &Tensor, w: &Tensor) -> Result<Tensor> {
    let (n, ci, co) = matmul_dims(x, w)?;
    let mut out = vec![0.0f32; n * co];
    par::for_each_chunk_mut(&mut out, co, |i, row| matmul_row(x, w, ci, co, i, row));
    Ok(Tensor::from_parts(vec![n, co], out))
}

/// Single-threaded [`matmul`]; bit-identical output.
pub fn matmul_seq(x: &Tensor, w: &Tensor) -> Result<Tensor> {
    let (n, ci, co) = matmul_dims(x, w)?;
    let mut out = vec![0.0f32; n * co];
    par::for_each_chunk_mut_seq(&mut out, co, |i, row| matmul_row(x, w, ci, co, i, row));
    Ok(Tensor::from_parts(vec![n, co], out))
}

fn matmul_dims(x: &Tensor, w: &Tensor) -> Result<(usize, usize, usize)> {
    let mismatch = || Error::ShapeMismatch {
        op: "matmul",
        left: x.shape.clone(),
        right: w.shape.clone(),
    };
    let (n, ci) = x.dims2("matmul").map_err(|_| mismatch())?;
    let (wi, co) = w.dims2("matmul").map_err(|_| mismatch())?;
    if ci != wi {
        return Err(mismatch());
    }
    Ok((n, ci, co))
}

fn matmul_row(x: &Tensor, w: &Tensor, ci: usize, co: usize, i: usize, row: &mut [f32]) {
    let xr = &x.data[i * ci..(i + 1) * ci];
    let mut acc = vec![0.0f64; co];
    for (k, &xv) in xr.iter().enumerate() {
        let xv = xv as f64;
        let wr = &w.data[k * co..(k + 1) * co];
        for (a, &wv) in acc.iter_mut().zip(wr) {
            *a += xv * wv as f64;
        }
    }
    for (o, a) in row.iter_mut().zip(acc) {
        *o = a as f32;
    }
}

/// Sum of absolute values, accumulated in f64 in storage order.
pub fn l1_norm(x: &Tensor) -> f64 {
    x.data.iter().map(|&v| (v as f64).abs()).sum()
}

/// Per-row (`In`) or per-column (`Out`) minima and maxima of a rank-2 tensor.
pub fn channel_minmax(w: &Tensor, axis: ChannelAxis) -> Result<(Vec<f32>, Vec<f32>)> {
    let (r, c) = w.dims2("channel_minmax")?;
    let lanes = match axis {
        ChannelAxis::In => r,
        ChannelAxis::Out => c,
    };
    let mut lo = vec![f32::INFINITY; lanes];
    let mut hi = vec![f32::NEG_INFINITY; lanes];
    for i in 0..r {
        for j in 0..c {
            let v = w.data[i * c + j];
            let lane = match axis {
                ChannelAxis::In => i,
                ChannelAxis::Out => j,
            };
            lo[lane] = lo[lane].min(v);
            hi[lane] = hi[lane].max(v);
        }
    }
    Ok((lo, hi))
}

/// Per-row maximum absolute value of a rank-2 tensor.
pub fn row_max_abs(w: &Tensor) -> Result<Vec<f32>> {
    let (lo, hi) = channel_minmax(w, ChannelAxis::In)?;
    Ok(lo.iter().zip(&hi).map(|(a, b)| a.abs().max(b.abs())).collect())
}

/// Per-column maximum absolute value of a rank-2 tensor.
pub fn col_max_abs(x: &Tensor) -> Result<Vec<f32>> {
    let (lo, hi) = channel_minmax(x, ChannelAxis::Out)?;
    Ok(lo.iter().zip(&hi).map(|(a, b)| a.abs().max(b.abs())).collect())
}

/// Multiplies column `j` of `x` by `v[j]`.
pub fn scale_cols(x: &Tensor, v: &[f32]) -> Result<Tensor> {
    let (_, c) = x.dims2("scale_cols")?;
    if v.len() != c {
        return Err(Error::ShapeMismatch {
            op: "scale_cols",
            left: x.shape.clone(),
            right: vec![v.len()],
        });
    }
    let data = x
        .data
        .chunks(c)
        .flat_map(|row| row.iter().zip(v).map(|(&a, &s)| a * s))
        .collect();
    Ok(Tensor::from_parts(x.shape.clone(), data))
}

/// Divides column `j` of `x` by `v[j]`.
pub fn div_cols(x: &Tensor, v: &[f32]) -> Result<Tensor> {
    let (_, c) = x.dims2("div_cols")?;
    if v.len() != c {
        return Err(Error::ShapeMismatch {
            op: "div_cols",
            left: x.shape.clone(),
            right: vec![v.len()],
        });
    }
    let data = x
        .data
        .chunks(c)
        .flat_map(|row| row.iter().zip(v).map(|(&a, &s)| a / s))
        .collect();
    Ok(Tensor::from_parts(x.shape.clone(), data))
}

/// Multiplies row `i` of `w` by `v[i]`.
pub fn scale_rows(w: &Tensor, v: &[f32]) -> Result<Tensor> {
    let (r, c) = w.dims2("scale_rows")?;
    if v.len() != r {
        return Err(Error::ShapeMismatch {
            op: "scale_rows",
            left: w.shape.clone(),
            right: vec![v.len()],
        });
    }
    let data = w
        .data
        .chunks(c)
        .zip(v)
        .flat_map(|(row, &s)| row.iter().map(move |&a| a * s))
        .collect();
    Ok(Tensor::from_parts(w.shape.clone(), data))
}

/// `‖a − b‖_F / ‖b‖_F`, or the absolute norm when `b` is zero.
pub fn rel_frobenius_error(a: &Tensor, b: &Tensor) -> Result<f64> {
    let diff: f64 = a
        .zip_with(b, "rel_frobenius_error", |x, y| x - y)?
        .frobenius_norm();
    let denom = b.frobenius_norm();
    Ok(if denom > 0.0 { diff / denom } else { diff })
}
