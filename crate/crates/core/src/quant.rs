//! Uniform asymmetric fake quantization.
//!
//! `Q(x) = Δ · (clip(round(x / Δ) + z, 0, 2^b − 1) − z)` with round-half-to-even.
//! The quantizer arithmetic runs in f64 and the dequantized value is rounded
//! once back to f32, so the per-element error is at most `Δ/2` plus half an
//! ulp of the output.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::tensor::{channel_minmax, l1_norm, ChannelAxis, Tensor};

pub const MAX_BITS: u32 = 30;
pub const DEFAULT_MSE_GRID: usize = 100;
pub const MSE_ALPHA_MIN: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Granularity {
    PerTensor,
    /// One lane per column of a `C_i x C_o` tensor.
    PerOutChannel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CalibMethod {
    MaxMin,
    Mse,
}

/// Frozen quantizer parameters. Zero-points hold integer values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    bits: u32,
    delta: Vec<f32>,
    zero_point: Vec<f32>,
    granularity: Granularity,
}

impl QuantParams {
    pub fn per_tensor(bits: u32, delta: f32, zero_point: f32) -> Result<Self> {
        Self::new(bits, vec![delta], vec![zero_point], Granularity::PerTensor)
    }

    pub fn per_out_channel(bits: u32, delta: Vec<f32>, zero_point: Vec<f32>) -> Result<Self> {
        Self::new(bits, delta, zero_point, Granularity::PerOutChannel)
    }

    pub fn new(
        bits: u32,
        delta: Vec<f32>,
        zero_point: Vec<f32>,
        granularity: Granularity,
    ) -> Result<Self> {
        check_bits(bits)?;
        if delta.is_empty() || delta.len() != zero_point.len() {
            return Err(Error::invalid(format!(
                "delta/zero_point lengths {} and {} must match and be non-zero",
                delta.len(),
                zero_point.len()
            )));
        }
        if granularity == Granularity::PerTensor && delta.len() != 1 {
            return Err(Error::invalid("per-tensor params need exactly one lane"));
        }
        if let Some(d) = delta.iter().find(|d| !(**d > 0.0) || !d.is_finite()) {
            return Err(Error::invalid(format!("delta must be positive, got {d}")));
        }
        if let Some(z) = zero_point.iter().find(|z| z.fract() != 0.0 || !z.is_finite()) {
            return Err(Error::invalid(format!("zero-point must be an integer, got {z}")));
        }
        Ok(Self {
            bits,
            delta,
            zero_point,
            granularity,
        })
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn delta(&self) -> &[f32] {
        &self.delta
    }

    pub fn zero_point(&self) -> &[f32] {
        &self.zero_point
    }

    pub fn granularity(&self) -> Granularity {
        self.granularity
    }

    pub fn lanes(&self) -> usize {
        self.delta.len()
    }

    /// Largest integer level, `2^b − 1`.
    pub fn qmax(&self) -> f64 {
        qmax(self.bits)
    }

    fn check_shape(&self, x: &Tensor) -> Result<()> {
        if self.granularity == Granularity::PerOutChannel {
            let (_, c) = x.dims2("quantize per-out-channel")?;
            if c != self.lanes() {
                return Err(Error::ShapeMismatch {
                    op: "quantize per-out-channel",
                    left: x.shape().to_vec(),
                    right: vec![self.lanes()],
                });
            }
        }
        Ok(())
    }

    /// `(Δ, z)` for flat element `i` of a tensor with `cols` columns.
    #[inline]
    fn lane_for(&self, i: usize, cols: usize) -> (f32, f32) {
        match self.granularity {
            Granularity::PerTensor => (self.delta[0], self.zero_point[0]),
            Granularity::PerOutChannel => {
                let j = i % cols;
                (self.delta[j], self.zero_point[j])
            }
        }
    }
}

pub(crate) fn check_bits(bits: u32) -> Result<()> {
    if bits == 0 || bits > MAX_BITS {
        return Err(Error::invalid(format!(
            "bit-width must be in 1..={MAX_BITS}, got {bits}"
        )));
    }
    Ok(())
}

#[inline]
pub fn qmax(bits: u32) -> f64 {
    ((1u64 << bits) - 1) as f64
}

/// One element through the quantizer, with the intermediate values the
/// error split and the gradient rules need.
#[derive(Debug, Clone, Copy)]
pub struct QuantTrace {
    /// Dequantized output.
    pub q: f32,
    /// `x / Δ` before rounding.
    pub scaled: f64,
    /// `round(x / Δ)`.
    pub rounded: f64,
    /// The integer level after clipping.
    pub level: f64,
    /// Whether `round(x/Δ) + z` fell outside `[0, 2^b − 1]`.
    pub clipped: bool,
}

#[inline]
pub fn quant_trace(x: f32, delta: f32, zero_point: f32, qmax: f64) -> QuantTrace {
    let d = delta as f64;
    let z = zero_point as f64;
    let scaled = x as f64 / d;
    let rounded = scaled.round_ties_even();
    let v = rounded + z;
    let level = v.clamp(0.0, qmax);
    QuantTrace {
        q: (d * (level - z)) as f32,
        scaled,
        rounded,
        level,
        clipped: v < 0.0 || v > qmax,
    }
}

#[inline]
pub fn fake_quant(x: f32, delta: f32, zero_point: f32, qmax: f64) -> f32 {
    quant_trace(x, delta, zero_point, qmax).q
}

/// `(Δ, z)` from a value range, with the constant-range convention
/// `Δ = 1, z = round(−c)`.
pub fn range_params(lo: f32, hi: f32, bits: u32) -> (f32, f32) {
    if !(hi > lo) {
        return (1.0, (-(lo as f64)).round_ties_even() as f32);
    }
    let d = ((hi as f64 - lo as f64) / qmax(bits)) as f32;
    let d = d.max(f32::MIN_POSITIVE);
    let z = (-(lo as f64) / d as f64).round_ties_even() as f32;
    (d, z)
}

/// Max-Min calibration: `Δ = (max − min)/(2^b − 1)`, `z = round(−min/Δ)`.
/// `z` is not clipped to the integer range.
pub fn calibrate_maxmin(x: &Tensor, bits: u32, granularity: Granularity) -> Result<QuantParams> {
    check_bits(bits)?;
    let (lo, hi) = lane_ranges(x, granularity)?;
    let (delta, zp) = lo
        .iter()
        .zip(&hi)
        .map(|(&l, &h)| range_params(l, h, bits))
        .unzip();
    QuantParams::new(bits, delta, zp, granularity)
}

fn lane_ranges(x: &Tensor, granularity: Granularity) -> Result<(Vec<f32>, Vec<f32>)> {
    match granularity {
        Granularity::PerTensor => {
            let (lo, hi) = x.min_max();
            Ok((vec![lo], vec![hi]))
        }
        Granularity::PerOutChannel => channel_minmax(x, ChannelAxis::Out),
    }
}

/// Linear shrink grid `α ∈ [0.01, 1]`, largest first.
pub fn mse_alphas(grid_points: usize) -> Vec<f64> {
    let step = (1.0 - MSE_ALPHA_MIN) / (grid_points - 1) as f64;
    (0..grid_points)
        .rev()
        .map(|k| MSE_ALPHA_MIN + step * k as f64)
        .collect()
}

/// MSE calibration: searches `[α·min, α·max]` over a linear α grid and keeps
/// the range with the lowest squared error. `α = 1` (Max-Min) is always on the
/// grid and ties go to the larger α.
pub fn calibrate_mse(
    x: &Tensor,
    bits: u32,
    granularity: Granularity,
    grid_points: usize,
) -> Result<QuantParams> {
    check_bits(bits)?;
    if grid_points < 2 {
        return Err(Error::invalid(format!(
            "MSE grid needs at least 2 points, got {grid_points}"
        )));
    }
    let alphas = mse_alphas(grid_points);
    let lanes: Vec<Vec<f32>> = match granularity {
        Granularity::PerTensor => vec![x.data().to_vec()],
        Granularity::PerOutChannel => {
            let (_, c) = x.dims2("calibrate_mse")?;
            (0..c).map(|j| x.column(j)).collect()
        }
    };
    let picked = par::map_range(lanes.len(), |j| mse_search(&lanes[j], bits, &alphas));
    let (delta, zp) = picked.into_iter().unzip();
    QuantParams::new(bits, delta, zp, granularity)
}

fn mse_search(values: &[f32], bits: u32, alphas: &[f64]) -> (f32, f32) {
    let (lo, hi) = values
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let qm = qmax(bits);
    let mut best = range_params(lo, hi, bits);
    let mut best_err = f64::INFINITY;
    for &a in alphas {
        let (d, z) = if a == 1.0 {
            range_params(lo, hi, bits)
        } else {
            range_params((lo as f64 * a) as f32, (hi as f64 * a) as f32, bits)
        };
        let err = squared_error(values, d, z, qm);
        if err < best_err {
            best_err = err;
            best = (d, z);
        }
    }
    best
}

fn squared_error(values: &[f32], delta: f32, zp: f32, qm: f64) -> f64 {
    values
        .iter()
        .map(|&v| {
            let e = v as f64 - fake_quant(v, delta, zp, qm) as f64;
            e * e
        })
        .sum()
}

/// Dispatches on a calibration method.
pub fn calibrate(
    x: &Tensor,
    bits: u32,
    granularity: Granularity,
    method: CalibMethod,
    grid_points: usize,
) -> Result<QuantParams> {
    match method {
        CalibMethod::MaxMin => calibrate_maxmin(x, bits, granularity),
        CalibMethod::Mse => calibrate_mse(x, bits, granularity, grid_points),
    }
}

/// Fake-quantizes `x` (quantize then dequantize).
pub fn quantize(x: &Tensor, q: &QuantParams) -> Result<Tensor> {
    q.check_shape(x)?;
    let cols = *x.shape().last().unwrap();
    let qm = q.qmax();
    let src = x.data();
    let mut out = vec![0.0f32; src.len()];
    par::for_each_chunk_mut(&mut out, cols.max(1024), |ci, chunk| {
        let base = ci * cols.max(1024);
        for (k, o) in chunk.iter_mut().enumerate() {
            let i = base + k;
            let (d, z) = q.lane_for(i, cols);
            *o = fake_quant(src[i], d, z, qm);
        }
    });
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

/// Mean squared quantization error of `x` under `q`.
pub fn quant_mse(x: &Tensor, q: &QuantParams) -> Result<f64> {
    let qx = quantize(x, q)?;
    Ok(qx.sub(x)?.mean_square())
}

/// L1 error of a fake-quantized tensor split by source.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorSplit {
    /// `Σ |x − Q(x)|` over elements that were not clipped (`Δ · E_round`).
    pub round_error: f64,
    /// `Σ |x − Q(x)|` over clipped elements (`E_clip`).
    pub clip_error: f64,
}

impl ErrorSplit {
    pub fn total(&self) -> f64 {
        self.round_error + self.clip_error
    }

    pub fn clip_share(&self) -> f64 {
        let t = self.total();
        if t > 0.0 {
            self.clip_error / t
        } else {
            0.0
        }
    }
}

/// Quantization error report for one tensor or one layer.
///
/// For [`error_decompose`], `total_error` is `‖x − Q(x)‖₁`. For
/// [`error_bound`] it is `E(X, W) = ‖XW − Q(X)Q(W)‖₁`, `bound_terms` holds
/// `‖X‖₁‖W−Q(W)‖₁`, `‖X−Q(X)‖₁‖W‖₁` and `‖X−Q(X)‖₁‖W−Q(W)‖₁`, and the
/// round/clip split describes the activation side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub total_error: f64,
    pub bound_terms: Option<[f64; 3]>,
    pub round_error: f64,
    pub clip_error: f64,
    pub clip_share: f64,
    /// Weight-side split, when the report covers a layer.
    pub weight_split: Option<ErrorSplit>,
}

impl ErrorReport {
    pub fn bound_rhs(&self) -> Option<f64> {
        self.bound_terms.map(|t| t.iter().sum())
    }

    pub const CSV_HEADER: &'static str = "layer,total_error,bound_rhs,round_error,clip_error,clip_share";

    pub fn csv_row(&self, layer: &str) -> String {
        let rhs = self.bound_rhs().map(|v| v.to_string()).unwrap_or_default();
        format!(
            "{layer},{},{rhs},{},{},{}",
            self.total_error, self.round_error, self.clip_error, self.clip_share
        )
    }
}

/// Splits `‖x − Q(x)‖₁` into its rounding and clipping parts.
pub fn error_split(x: &Tensor, q: &QuantParams) -> Result<ErrorSplit> {
    q.check_shape(x)?;
    let cols = *x.shape().last().unwrap();
    let qm = q.qmax();
    let mut split = ErrorSplit::default();
    for (i, &v) in x.data().iter().enumerate() {
        let (d, z) = q.lane_for(i, cols);
        let t = quant_trace(v, d, z, qm);
        let e = (v as f64 - t.q as f64).abs();
        if t.clipped {
            split.clip_error += e;
        } else {
            split.round_error += e;
        }
    }
    Ok(split)
}

pub fn error_decompose(x: &Tensor, q: &QuantParams) -> Result<ErrorReport> {
    let split = error_split(x, q)?;
    Ok(ErrorReport {
        total_error: split.total(),
        bound_terms: None,
        round_error: split.round_error,
        clip_error: split.clip_error,
        clip_share: split.clip_share(),
        weight_split: None,
    })
}

/// `E(X, W)` together with its three-term upper bound
/// `‖X‖₁‖W−Q(W)‖₁ + ‖X−Q(X)‖₁(‖W‖₁ + ‖W−Q(W)‖₁)`.
pub fn error_bound(
    x: &Tensor,
    w: &Tensor,
    qx: &QuantParams,
    qw: &QuantParams,
) -> Result<ErrorReport> {
    let x_hat = quantize(x, qx)?;
    let w_hat = quantize(w, qw)?;
    let lhs = product_error_l1(x, w, &x_hat, &w_hat)?;

    let x_err = l1_norm(&x.sub(&x_hat)?);
    let w_err = l1_norm(&w.sub(&w_hat)?);
    let terms = [
        l1_norm(x) * w_err,
        x_err * l1_norm(w),
        x_err * w_err,
    ];
    let xs = error_split(x, qx)?;
    let ws = error_split(w, qw)?;
    Ok(ErrorReport {
        total_error: lhs,
        bound_terms: Some(terms),
        round_error: xs.round_error,
        clip_error: xs.clip_error,
        clip_share: xs.clip_share(),
        weight_split: Some(ws),
    })
}

/// `Σ_ij |(XW)_ij − (X̂Ŵ)_ij|` with both products formed in f64.
pub fn product_error_l1(x: &Tensor, w: &Tensor, x_hat: &Tensor, w_hat: &Tensor) -> Result<f64> {
    let (n, ci) = x.dims2("error_bound")?;
    let (wi, co) = w.dims2("error_bound")?;
    if ci != wi {
        return Err(Error::ShapeMismatch {
            op: "error_bound",
            left: x.shape().to_vec(),
            right: w.shape().to_vec(),
        });
    }
    let (xd, wd, xh, wh) = (x.data(), w.data(), x_hat.data(), w_hat.data());
    let rows = par::map_range(n, |i| {
        let mut exact = vec![0.0f64; co];
        let mut approx = vec![0.0f64; co];
        for k in 0..ci {
            let (a, ah) = (xd[i * ci + k] as f64, xh[i * ci + k] as f64);
            for j in 0..co {
                exact[j] += a * wd[k * co + j] as f64;
                approx[j] += ah * wh[k * co + j] as f64;
            }
        }
        exact
            .iter()
            .zip(&approx)
            .map(|(e, a)| (e - a).abs())
            .sum::<f64>()
    });
    Ok(rows.iter().sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rng_normal, RngStream};

    fn t(v: &[f32]) -> Tensor {
        Tensor::from_vec(v.to_vec()).unwrap()
    }

    #[test]
    fn maxmin_hand_cases() {
        let q = calibrate_maxmin(&t(&[-1.0, 0.0, 1.0, 2.0]), 2, Granularity::PerTensor).unwrap();
        assert_eq!((q.delta()[0], q.zero_point()[0]), (1.0, 1.0));

        for b in [1, 4, 8] {
            let q = calibrate_maxmin(&t(&[5.0, 5.0, 5.0]), b, Granularity::PerTensor).unwrap();
            assert_eq!((q.delta()[0], q.zero_point()[0]), (1.0, -5.0));
        }

        let w = Tensor::from_rows(&[[1.0, -2.0], [0.5, -1.0], [-0.25, 0.5]]);
        let q = calibrate_maxmin(&w, 4, Granularity::PerOutChannel).unwrap();
        assert_eq!(q.delta(), &[1.25f32 / 15.0, 2.5f32 / 15.0]);
        assert_eq!(q.zero_point(), &[3.0, 12.0]);
    }

    #[test]
    fn zero_point_is_not_clipped() {
        let q = calibrate_maxmin(&t(&[10.0, 13.0]), 2, Granularity::PerTensor).unwrap();
        assert_eq!(q.zero_point()[0], -10.0);
        let out = quantize(&t(&[10.0, 13.0]), &q).unwrap();
        assert_eq!(out.data(), &[10.0, 13.0]);
    }

    #[test]
    fn quantize_hand_cases() {
        let q = QuantParams::per_tensor(2, 1.0, 1.0).unwrap();
        let x = t(&[-1.0, 0.0, 1.0, 2.0]);
        assert_eq!(quantize(&x, &q).unwrap(), x);

        let q = QuantParams::per_tensor(1, 1.0, 0.0).unwrap();
        assert_eq!(quantize(&t(&[0.0, 0.4, 1.0]), &q).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn rounding_is_half_to_even() {
        let q = QuantParams::per_tensor(4, 1.0, 0.0).unwrap();
        assert_eq!(quantize(&t(&[0.5, 1.5, 2.5]), &q).unwrap().data(), &[0.0, 2.0, 2.0]);
    }

    #[test]
    fn high_bit_error_within_half_step() {
        let x = rng_normal(RngStream::new(2, 0), &[500], 0.0, 3.0).unwrap();
        let q = calibrate_maxmin(&x, 16, Granularity::PerTensor).unwrap();
        let d = q.delta()[0];
        let out = quantize(&x, &q).unwrap();
        for (a, b) in x.data().iter().zip(out.data()) {
            let ulp = f32::EPSILON * a.abs().max(b.abs());
            assert!((a - b).abs() <= d / 2.0 + ulp, "{a} {b}");
        }
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(QuantParams::per_tensor(0, 1.0, 0.0).is_err());
        assert!(QuantParams::per_tensor(4, 0.0, 0.0).is_err());
        assert!(QuantParams::per_tensor(4, 1.0, 0.5).is_err());
        assert!(QuantParams::per_out_channel(4, vec![1.0, 1.0], vec![0.0]).is_err());
        let q = QuantParams::per_out_channel(4, vec![1.0; 3], vec![0.0; 3]).unwrap();
        assert!(quantize(&Tensor::zeros(&[2, 2]), &q).is_err());
    }

    #[test]
    fn mse_grid_endpoints() {
        let a = mse_alphas(DEFAULT_MSE_GRID);
        assert_eq!(a.len(), 100);
        assert_eq!(a[0], 1.0);
        assert!((a[99] - 0.01).abs() < 1e-12);
        assert!(calibrate_mse(&t(&[1.0, 2.0]), 4, Granularity::PerTensor, 1).is_err());
    }

    #[test]
    fn mse_exact_grid_keeps_maxmin() {
        let x = t(&[0.0, 1.0, 2.0, 3.0]);
        let q = calibrate_mse(&x, 2, Granularity::PerTensor, DEFAULT_MSE_GRID).unwrap();
        assert_eq!((q.delta()[0], q.zero_point()[0]), (1.0, 0.0));
        assert_eq!(quant_mse(&x, &q).unwrap(), 0.0);
        // Every other grid point loses: brute-force over the same grid.
        for a in mse_alphas(DEFAULT_MSE_GRID).into_iter().skip(1) {
            let (d, z) = range_params(0.0, (3.0 * a) as f32, 2);
            let qa = QuantParams::per_tensor(2, d, z).unwrap();
            assert!(quant_mse(&x, &qa).unwrap() > 0.0);
        }

        let c = t(&[2.0, 2.0, 2.0]);
        let q = calibrate_mse(&c, 3, Granularity::PerTensor, DEFAULT_MSE_GRID).unwrap();
        assert_eq!((q.delta()[0], q.zero_point()[0]), (1.0, -2.0));
        assert_eq!(quant_mse(&c, &q).unwrap(), 0.0);
    }

    #[test]
    fn mse_beats_maxmin_with_outlier() {
        let mut v = rng_normal(RngStream::new(7, 0), &[1000], 0.0, 1.0)
            .unwrap()
            .into_data();
        v.push(50.0);
        let x = t(&v);
        let mm = calibrate_maxmin(&x, 4, Granularity::PerTensor).unwrap();
        let ms = calibrate_mse(&x, 4, Granularity::PerTensor, DEFAULT_MSE_GRID).unwrap();
        assert!(quant_mse(&x, &ms).unwrap() <= quant_mse(&x, &mm).unwrap());
        assert!(ms.delta()[0] < mm.delta()[0]);
    }

    #[test]
    fn decompose_hand_case() {
        let q = QuantParams::per_tensor(2, 1.0, 0.0).unwrap();
        let r = error_decompose(&t(&[0.0, 1.0, 2.0, 10.0]), &q).unwrap();
        assert_eq!(r.clip_error, 7.0);
        assert_eq!(r.round_error, 0.0);
        assert_eq!(r.clip_share, 1.0);
        assert_eq!(r.total_error, 7.0);
    }

    #[test]
    fn maxmin_never_clips() {
        let x = rng_normal(RngStream::new(8, 0), &[40, 7], 1.0, 4.0).unwrap();
        for g in [Granularity::PerTensor, Granularity::PerOutChannel] {
            let q = calibrate_maxmin(&x, 3, g).unwrap();
            let r = error_decompose(&x, &q).unwrap();
            assert_eq!(r.clip_share, 0.0);
            assert_eq!(r.clip_error, 0.0);
        }
    }

    #[test]
    fn bound_trivial_and_tight() {
        let one = Tensor::from_rows(&[[1.0]]);
        let q = QuantParams::per_tensor(2, 1.0, 0.0).unwrap();
        let r = error_bound(&one, &one, &q, &q).unwrap();
        assert_eq!(r.total_error, 0.0);
        assert_eq!(r.bound_rhs(), Some(0.0));

        // Q(X) = 2, Q(W) = 2.5 (W clipped at the top level).
        let x = Tensor::from_rows(&[[2.0]]);
        let w = Tensor::from_rows(&[[3.0]]);
        let qx = QuantParams::per_tensor(2, 1.0, 0.0).unwrap();
        let qw = QuantParams::per_tensor(3, 0.5, 2.0).unwrap();
        assert_eq!(quantize(&w, &qw).unwrap().data(), &[2.5]);
        let r = error_bound(&x, &w, &qx, &qw).unwrap();
        assert_eq!(r.total_error, 1.0);
        assert_eq!(r.bound_rhs(), Some(1.0));
        assert_eq!(r.weight_split.unwrap().clip_error, 0.5);
    }

    #[test]
    fn bound_shape_mismatch() {
        let q = QuantParams::per_tensor(4, 1.0, 0.0).unwrap();
        assert!(matches!(
            error_bound(&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[2, 3]), &q, &q),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn csv_row_format() {
        let q = QuantParams::per_tensor(2, 1.0, 0.0).unwrap();
        let r = error_decompose(&t(&[0.0, 1.0, 2.0, 10.0]), &q).unwrap();
        assert_eq!(r.csv_row("l0"), "l0,7,,0,7,1");
    }
}
