//! Equivalent per-in-channel scaling: `Y = (X / s)(s · W)`.
//!
//! Three policies produce a [`ScalingPlan`]:
//!
//! * identity (no scaling),
//! * the SmoothQuant rule `s_i = max|X_i|^α / max|W_i|^(1−α)`, optionally
//!   floored at 1,
//! * weight dilation ([`wd_plan`]): rows of `W` that do not hold any
//!   per-column extreme are stretched until they touch the column range, so
//!   the per-out-channel weight range (and `Δ_w`) is unchanged while the
//!   matching activation channels shrink.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quant::{calibrate_maxmin, Granularity};
use crate::tensor::{channel_minmax, col_max_abs, div_cols, row_max_abs, scale_rows, ChannelAxis, Tensor};

/// Magnitude floor applied to weights inside the dilation ratio.
pub const WD_CLAMP: f64 = 1e-5;
/// Magnitude floor for SmoothQuant statistics.
pub const SQ_CLAMP: f32 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scaler {
    None,
    SmoothQuant,
    Wd,
}

impl std::str::FromStr for Scaler {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Scaler::None),
            "smoothquant" | "sq" => Ok(Scaler::SmoothQuant),
            "wd" => Ok(Scaler::Wd),
            other => Err(Error::invalid(format!("unknown scaler '{other}'"))),
        }
    }
}

impl std::fmt::Display for Scaler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scaler::None => "none",
            Scaler::SmoothQuant => "smoothquant",
            Scaler::Wd => "wd",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingPlan {
    pub s: Vec<f32>,
    /// In-channels holding a per-column max or min.
    pub saturated: Vec<usize>,
    pub w_max: Vec<f32>,
    pub w_min: Vec<f32>,
    /// Candidate bounded by the column maxima; `+inf` when unconstrained.
    #[serde(skip)]
    pub s1: Vec<f64>,
    /// Candidate bounded by the column minima; `+inf` when unconstrained.
    #[serde(skip)]
    pub s2: Vec<f64>,
}

impl ScalingPlan {
    pub fn identity(w: &Tensor) -> Result<Self> {
        let (ci, _) = w.dims2("identity plan")?;
        let (w_min, w_max) = channel_minmax(w, ChannelAxis::Out)?;
        Ok(Self {
            s: vec![1.0; ci],
            saturated: Vec::new(),
            w_max,
            w_min,
            s1: Vec::new(),
            s2: Vec::new(),
        })
    }

    pub fn in_channels(&self) -> usize {
        self.s.len()
    }

    /// Fraction of in-channels with `s > 1`.
    pub fn proportion_scaled(&self) -> f64 {
        self.s.iter().filter(|&&v| v > 1.0).count() as f64 / self.s.len() as f64
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }
}

/// Weight-dilation plan for `w: C_i x C_o`.
pub fn wd_plan(w: &Tensor) -> Result<ScalingPlan> {
    let (ci, co) = w.dims2("wd_plan")?;
    let (w_min, w_max) = channel_minmax(w, ChannelAxis::Out)?;

    let mut saturated = BTreeSet::new();
    for i in 0..ci {
        let row = w.row(i);
        if (0..co).any(|j| row[j] == w_max[j] || row[j] == w_min[j]) {
            saturated.insert(i);
        }
    }

    let mut s = vec![1.0f32; ci];
    let mut s1 = vec![f64::INFINITY; ci];
    let mut s2 = vec![f64::INFINITY; ci];
    for i in 0..ci {
        if saturated.contains(&i) {
            continue;
        }
        let row = w.row(i);
        for j in 0..co {
            let v = row[j] as f64;
            if v > 0.0 {
                s1[i] = s1[i].min(w_max[j] as f64 / v.max(WD_CLAMP));
            } else if v < 0.0 {
                s2[i] = s2[i].min(w_min[j] as f64 / v.min(-WD_CLAMP));
            }
        }
        let best = s1[i].min(s2[i]);
        if best.is_finite() && best > 1.0 {
            s[i] = snap_into_range(best as f32, row, &w_min, &w_max);
        }
    }

    Ok(ScalingPlan {
        s,
        saturated: saturated.into_iter().collect(),
        w_max,
        w_min,
        s1,
        s2,
    })
}

/// Largest f32 not above `s` for which every `s * row[j]` (in f32) stays
/// inside `[lo_j, hi_j]`; never below 1.
fn snap_into_range(mut s: f32, row: &[f32], lo: &[f32], hi: &[f32]) -> f32 {
    let fits = |s: f32| {
        row.iter()
            .zip(lo.iter().zip(hi))
            .all(|(&v, (&l, &h))| {
                let d = s * v;
                d >= l && d <= h
            })
    };
    while s > 1.0 && !fits(s) {
        s = s.next_down();
    }
    s.max(1.0)
}

/// SmoothQuant plan: `s_i = max|X_i|^α / max|W_i|^(1−α)`, floored at 1 when
/// `floor` is set. Both statistics are clamped at [`SQ_CLAMP`].
pub fn smoothquant_plan(x_stats: &[f32], w: &Tensor, alpha: f32, floor: bool) -> Result<ScalingPlan> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha must be in [0, 1], got {alpha}")));
    }
    let (ci, _) = w.dims2("smoothquant_plan")?;
    if x_stats.len() != ci {
        return Err(Error::ShapeMismatch {
            op: "smoothquant_plan",
            left: vec![x_stats.len()],
            right: w.shape().to_vec(),
        });
    }
    if let Some(v) = x_stats.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::invalid(format!("activation stats must be finite and >= 0, got {v}")));
    }
    let w_abs = row_max_abs(w)?;
    let a = alpha as f64;
    let s = x_stats
        .iter()
        .zip(&w_abs)
        .map(|(&xm, &wm)| {
            let xm = xm.max(SQ_CLAMP) as f64;
            let wm = wm.max(SQ_CLAMP) as f64;
            let v = (xm.powf(a) / wm.powf(1.0 - a)) as f32;
            if floor {
                v.max(1.0)
            } else {
                v
            }
        })
        .collect();
    let (w_min, w_max) = channel_minmax(w, ChannelAxis::Out)?;
    Ok(ScalingPlan {
        s,
        saturated: Vec::new(),
        w_max,
        w_min,
        s1: Vec::new(),
        s2: Vec::new(),
    })
}

/// Per-channel max-abs activation statistics for SmoothQuant.
pub fn activation_stats(x: &Tensor) -> Result<Vec<f32>> {
    col_max_abs(x)
}

fn check_s(s: &[f32], ci: usize) -> Result<()> {
    if s.len() != ci {
        return Err(Error::ShapeMismatch {
            op: "apply_scaling",
            left: vec![s.len()],
            right: vec![ci],
        });
    }
    if let Some(v) = s.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::invalid(format!("scaling factors must be positive and finite, got {v}")));
    }
    Ok(())
}

/// `(X / s, s · W)`.
pub fn apply_scaling(x: &Tensor, w: &Tensor, plan: &ScalingPlan) -> Result<(Tensor, Tensor)> {
    let (_, xc) = x.dims2("apply_scaling")?;
    let (wr, _) = w.dims2("apply_scaling")?;
    if xc != wr {
        return Err(Error::ShapeMismatch {
            op: "apply_scaling",
            left: x.shape().to_vec(),
            right: w.shape().to_vec(),
        });
    }
    check_s(&plan.s, wr)?;
    Ok((div_cols(x, &plan.s)?, scale_rows(w, &plan.s)?))
}

/// `s · W` alone.
pub fn scale_weight(w: &Tensor, plan: &ScalingPlan) -> Result<Tensor> {
    let (wr, _) = w.dims2("scale_weight")?;
    check_s(&plan.s, wr)?;
    scale_rows(w, &plan.s)
}

/// What a plan does to the quantizer step sizes of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WdEffect {
    pub prop_s_gt_1: f64,
    /// Layer-wise Max-Min `Δ'_x / Δ_x`.
    pub dx_ratio: f64,
    /// Per-out-channel Max-Min `Δ'_w / Δ_w`.
    pub dw_ratio: Vec<f64>,
}

impl WdEffect {
    pub const CSV_HEADER: &'static str = "layer,prop_s_gt_1,dx_ratio,dw_ratio";

    pub fn mean_dw_ratio(&self) -> f64 {
        self.dw_ratio.iter().sum::<f64>() / self.dw_ratio.len() as f64
    }

    pub fn csv_row(&self, layer: &str) -> String {
        format!(
            "{layer},{},{},{}",
            self.prop_s_gt_1,
            self.dx_ratio,
            self.mean_dw_ratio()
        )
    }
}

pub fn wd_effect_stats(x: &Tensor, w: &Tensor, plan: &ScalingPlan, bits: u32) -> Result<WdEffect> {
    let (xs, ws) = apply_scaling(x, w, plan)?;
    let dx = calibrate_maxmin(x, bits, Granularity::PerTensor)?.delta()[0] as f64;
    let dxs = calibrate_maxmin(&xs, bits, Granularity::PerTensor)?.delta()[0] as f64;
    let dw = calibrate_maxmin(w, bits, Granularity::PerOutChannel)?;
    let dws = calibrate_maxmin(&ws, bits, Granularity::PerOutChannel)?;
    Ok(WdEffect {
        prop_s_gt_1: plan.proportion_scaled(),
        dx_ratio: dxs / dx,
        dw_ratio: dws
            .delta()
            .iter()
            .zip(dw.delta())
            .map(|(&a, &b)| a as f64 / b as f64)
            .collect(),
    })
}
