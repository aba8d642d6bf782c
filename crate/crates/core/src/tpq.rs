//! Timestep-indexed activation quantizer.
//!
//! One activation quantizer holds `T` parameter pairs `(Δ^t, z^t)`. A batch
//! whose rows come from different timesteps is quantized in a single pass by
//! looking up each row's pair through its timestep index, which is what lets
//! one backward pass update every timestep present in the batch.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::quant::{
    self, calibrate, check_bits, fake_quant, qmax, quant_trace, CalibMethod, ErrorSplit, Granularity,
    QuantParams,
};
use crate::tensor::Tensor;

/// Per-timestep activation quantizer parameters. Zero-points are real-valued
/// while training and rounded on export.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalQuantParams {
    pub bits: u32,
    pub delta: Vec<f32>,
    pub zero_point: Vec<f32>,
}

/// JSON form: `{"T", "bits", "delta", "zero_point"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalQuantParamsJson {
    #[serde(rename = "T")]
    pub t: usize,
    pub bits: u32,
    pub delta: Vec<f32>,
    pub zero_point: Vec<i64>,
}

impl TemporalQuantParams {
    pub fn new(bits: u32, delta: Vec<f32>, zero_point: Vec<f32>) -> Result<Self> {
        check_bits(bits)?;
        if delta.is_empty() || delta.len() != zero_point.len() {
            return Err(Error::invalid(format!(
                "need T >= 1 matching delta/zero_point, got {} and {}",
                delta.len(),
                zero_point.len()
            )));
        }
        if let Some(d) = delta.iter().find(|d| !(**d > 0.0) || !d.is_finite()) {
            return Err(Error::invalid(format!("delta must be positive, got {d}")));
        }
        if zero_point.iter().any(|z| !z.is_finite()) {
            return Err(Error::invalid("zero-point must be finite"));
        }
        Ok(Self {
            bits,
            delta,
            zero_point,
        })
    }

    pub fn timesteps(&self) -> usize {
        self.delta.len()
    }

    /// Frozen per-tensor parameters of timestep `t` (1-indexed).
    pub fn lane(&self, t: usize) -> Result<QuantParams> {
        if t == 0 || t > self.timesteps() {
            return Err(Error::invalid(format!(
                "timestep {t} outside 1..={}",
                self.timesteps()
            )));
        }
        QuantParams::per_tensor(
            self.bits,
            self.delta[t - 1],
            self.zero_point[t - 1].round_ties_even(),
        )
    }

    pub fn to_export(&self) -> TemporalQuantParamsJson {
        TemporalQuantParamsJson {
            t: self.timesteps(),
            bits: self.bits,
            delta: self.delta.clone(),
            zero_point: self
                .zero_point
                .iter()
                .map(|z| z.round_ties_even() as i64)
                .collect(),
        }
    }

    pub fn from_export(j: &TemporalQuantParamsJson) -> Result<Self> {
        if j.t != j.delta.len() {
            return Err(Error::invalid(format!(
                "T = {} but {} deltas",
                j.t,
                j.delta.len()
            )));
        }
        Self::new(
            j.bits,
            j.delta.clone(),
            j.zero_point.iter().map(|&z| z as f32).collect(),
        )
    }
}

/// Timesteps of the rows of a batch, 1-indexed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimestepIndex(Vec<usize>);

impl TimestepIndex {
    pub fn new(idx: Vec<usize>, timesteps: usize) -> Result<Self> {
        if let Some(&bad) = idx.iter().find(|&&t| t == 0 || t > timesteps) {
            return Err(Error::invalid(format!(
                "timestep index {bad} outside 1..={timesteps}"
            )));
        }
        Ok(Self(idx))
    }

    /// Every row at the same timestep.
    pub fn uniform(t: usize, rows: usize, timesteps: usize) -> Result<Self> {
        Self::new(vec![t; rows], timesteps)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Zero-based lane of row `n`.
    #[inline]
    pub fn lane(&self, n: usize) -> usize {
        self.0[n] - 1
    }

    /// Sorted distinct timesteps present.
    pub fn distinct(&self) -> Vec<usize> {
        let mut v = self.0.clone();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn select(&self, rows: &[usize]) -> TimestepIndex {
        TimestepIndex(rows.iter().map(|&r| self.0[r]).collect())
    }
}

/// Calibrates each timestep independently from its own tensor.
pub fn tpq_init(
    x_per_step: &[Tensor],
    bits: u32,
    method: CalibMethod,
    grid_points: usize,
) -> Result<TemporalQuantParams> {
    if x_per_step.is_empty() {
        return Err(Error::invalid("tpq_init needs at least one timestep"));
    }
    let lanes = par::map_range(x_per_step.len(), |t| {
        calibrate(&x_per_step[t], bits, Granularity::PerTensor, method, grid_points)
    });
    let mut delta = Vec::with_capacity(lanes.len());
    let mut zero_point = Vec::with_capacity(lanes.len());
    for q in lanes {
        let q = q?;
        delta.push(q.delta()[0]);
        zero_point.push(q.zero_point()[0]);
    }
    TemporalQuantParams::new(bits, delta, zero_point)
}

/// Quantizes row `n` of `x` with the parameters of timestep `idx[n]`.
pub fn tpq_quantize(x: &Tensor, idx: &TimestepIndex, q: &TemporalQuantParams) -> Result<Tensor> {
    let (n, c) = x.dims2("tpq_quantize")?;
    if idx.len() != n {
        return Err(Error::ShapeMismatch {
            op: "tpq_quantize",
            left: x.shape().to_vec(),
            right: vec![idx.len()],
        });
    }
    if let Some(&bad) = idx.as_slice().iter().find(|&&t| t > q.timesteps()) {
        return Err(Error::invalid(format!(
            "timestep index {bad} outside 1..={}",
            q.timesteps()
        )));
    }
    let qm = qmax(q.bits);
    let src = x.data();
    let mut out = vec![0.0f32; src.len()];
    par::for_each_chunk_mut(&mut out, c, |row, chunk| {
        let lane = idx.lane(row);
        let (d, z) = (q.delta[lane], q.zero_point[lane]);
        for (o, &v) in chunk.iter_mut().zip(&src[row * c..(row + 1) * c]) {
            *o = fake_quant(v, d, z, qm);
        }
    });
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

/// Reference path: partition rows by timestep and quantize each group with
/// the plain per-tensor quantizer.
pub fn tpq_quantize_grouped(
    x: &Tensor,
    idx: &TimestepIndex,
    q: &TemporalQuantParams,
) -> Result<Tensor> {
    let (n, c) = x.dims2("tpq_quantize_grouped")?;
    if idx.len() != n {
        return Err(Error::ShapeMismatch {
            op: "tpq_quantize_grouped",
            left: x.shape().to_vec(),
            right: vec![idx.len()],
        });
    }
    let mut out = vec![0.0f32; x.numel()];
    for t in idx.distinct() {
        let rows: Vec<usize> = (0..n).filter(|&r| idx.as_slice()[r] == t).collect();
        let group = quant::quantize(&x.select_rows(&rows), &q.lane(t)?)?;
        for (g, &r) in rows.iter().enumerate() {
            out[r * c..(r + 1) * c].copy_from_slice(group.row(g));
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

/// Round/clip split of `‖x − Q(x)‖₁` with each row quantized by its own
/// timestep's parameters.
pub fn tpq_error_split(x: &Tensor, idx: &TimestepIndex, q: &TemporalQuantParams) -> Result<ErrorSplit> {
    let x_hat = tpq_quantize(x, idx, q)?;
    let c = x.shape()[1];
    let qm = qmax(q.bits);
    let mut split = ErrorSplit::default();
    for (i, (&v, &vq)) in x.data().iter().zip(x_hat.data()).enumerate() {
        let lane = idx.lane(i / c);
        let e = (v as f64 - vq as f64).abs();
        if quant_trace(v, q.delta[lane], q.zero_point[lane], qm).clipped {
            split.clip_error += e;
        } else {
            split.round_error += e;
        }
    }
    Ok(split)
}
