//! Quantization simulation toolkit.
//!
//! * [`tensor`], [`rng`], [`tns`]: dense f32 tensors, counter-based random
//!   streams and the TNS binary tensor format.
//! * [`quant`]: uniform asymmetric fake quantization, Max-Min / MSE
//!   calibration and error analysis.
//! * [`scaling`]: equivalent per-in-channel scaling (identity, SmoothQuant,
//!   weight dilation).
//! * [`tpq`]: timestep-indexed activation quantizer.
//! * [`bkd`]: block-wise distillation of quantized toy networks.
//! * [`harness`]: synthetic data, end-to-end pipeline and scaler comparison.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bkd;
pub mod error;
pub mod harness;
pub mod par;
pub mod quant;
pub mod rng;
pub mod scaling;
pub mod tensor;
pub mod tns;
pub mod tpq;

pub use error::{Error, Result};
pub use quant::{CalibMethod, ErrorReport, Granularity, QuantParams};
pub use rng::RngStream;
pub use scaling::{Scaler, ScalingPlan};
pub use tensor::Tensor;
pub use tpq::{TemporalQuantParams, TimestepIndex};
