//! Quantized linear layers and blocks with straight-through gradients.
//!
//! Forward: `act(Q_x(x / s) · Q_w(s · W) + b)`, with the activation quantizer
//! indexed by timestep and the weight quantizer per out-channel.
//!
//! Gradient rules, per element with `u = v/Δ` and level `q = clip(round(u) + z)`:
//!
//! | quantity | inside the clip range | clipped          |
//! |----------|-----------------------|------------------|
//! | `∂Q/∂v`  | 1                     | 0                |
//! | `∂Q/∂Δ`  | `round(u) − u`        | `q − z`          |
//! | `∂Q/∂z`  | 0                     | `−Δ`             |

use crate::error::{Error, Result};
use crate::quant::{
    calibrate, error_split, product_error_l1, qmax, quant_trace, quantize, CalibMethod, ErrorReport,
    Granularity, QuantParams,
};
use crate::scaling::ScalingPlan;
use crate::tensor::{div_cols, l1_norm, scale_rows, Tensor};
use crate::tpq::{tpq_error_split, tpq_init, tpq_quantize, TemporalQuantParams, TimestepIndex};

use super::model::{linear_forward, Block, LayerSpec, Linear};

/// One quantized layer. The trainables are `w`, `b`, `w_delta`,
/// `act_q.delta` and `act_q.zero_point`; `in_scale` and `w_zero` are frozen.
#[derive(Debug, Clone, PartialEq)]
pub struct QLayer {
    pub spec: LayerSpec,
    /// Per-in-channel scaling `s`; the layer divides its input by it.
    pub in_scale: Vec<f32>,
    /// Scaled weight `s · W`.
    pub w: Tensor,
    pub b: Option<Vec<f32>>,
    pub w_bits: u32,
    pub w_delta: Vec<f32>,
    pub w_zero: Vec<f32>,
    pub act_q: TemporalQuantParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QBlock {
    pub layers: Vec<QLayer>,
}

/// Settings for turning a full-precision layer into a [`QLayer`].
#[derive(Debug, Clone, Copy)]
pub struct QuantSetup {
    pub bits_w: u32,
    pub bits_a: u32,
    pub act_method: CalibMethod,
    pub weight_method: CalibMethod,
    pub grid_points: usize,
}

impl QLayer {
    /// Applies `plan`, calibrates the weight quantizer on `s · W` and one
    /// activation quantizer per timestep on `x_t / s`.
    pub fn calibrate(
        spec: &LayerSpec,
        lin: &Linear,
        plan: &ScalingPlan,
        inputs_per_step: &[Tensor],
        setup: &QuantSetup,
    ) -> Result<Self> {
        let w = scale_rows(&lin.w, &plan.s)?;
        let wq = calibrate(
            &w,
            setup.bits_w,
            Granularity::PerOutChannel,
            setup.weight_method,
            setup.grid_points,
        )?;
        let scaled: Vec<Tensor> = inputs_per_step
            .iter()
            .map(|x| div_cols(x, &plan.s))
            .collect::<Result<_>>()?;
        let act_q = tpq_init(&scaled, setup.bits_a, setup.act_method, setup.grid_points)?;
        Ok(Self {
            spec: spec.clone(),
            in_scale: plan.s.clone(),
            w,
            b: lin.b.clone(),
            w_bits: setup.bits_w,
            w_delta: wq.delta().to_vec(),
            w_zero: wq.zero_point().to_vec(),
            act_q,
        })
    }

    /// Frozen weight quantizer.
    pub fn weight_params(&self) -> Result<QuantParams> {
        QuantParams::per_out_channel(self.w_bits, self.w_delta.clone(), self.w_zero.clone())
    }

    pub fn forward(&self, x: &Tensor, idx: &TimestepIndex) -> Result<Tensor> {
        Ok(self.forward_traced(x, idx)?.0)
    }

    /// `E(X', W')` of the linear part on raw layer input `x`, with its bound
    /// terms and the activation / weight round-clip splits.
    pub fn error_report(&self, x: &Tensor, idx: &TimestepIndex) -> Result<ErrorReport> {
        let xs = div_cols(x, &self.in_scale)?;
        let qw = self.weight_params()?;
        let x_hat = tpq_quantize(&xs, idx, &self.act_q)?;
        let w_hat = quantize(&self.w, &qw)?;
        let lhs = product_error_l1(&xs, &self.w, &x_hat, &w_hat)?;
        let x_err = l1_norm(&xs.sub(&x_hat)?);
        let w_err = l1_norm(&self.w.sub(&w_hat)?);
        let split = tpq_error_split(&xs, idx, &self.act_q)?;
        Ok(ErrorReport {
            total_error: lhs,
            bound_terms: Some([
                l1_norm(&xs) * w_err,
                x_err * l1_norm(&self.w),
                x_err * w_err,
            ]),
            round_error: split.round_error,
            clip_error: split.clip_error,
            clip_share: split.clip_share(),
            weight_split: Some(error_split(&self.w, &qw)?),
        })
    }

    pub(crate) fn forward_traced(&self, x: &Tensor, idx: &TimestepIndex) -> Result<(Tensor, LayerTrace)> {
        let (n, ci) = x.dims2("qlayer forward")?;
        if ci != self.spec.in_dim || idx.len() != n {
            return Err(Error::ShapeMismatch {
                op: "qlayer forward",
                left: x.shape().to_vec(),
                right: vec![idx.len(), self.spec.in_dim],
            });
        }
        if idx.as_slice().iter().any(|&t| t > self.act_q.timesteps()) {
            return Err(Error::invalid("timestep index beyond quantizer T"));
        }
        let co = self.spec.out_dim;

        let xs = div_cols(x, &self.in_scale)?;
        let qa = qmax(self.act_q.bits);
        let mut xq = vec![0.0f32; n * ci];
        let mut x_pass = vec![false; n * ci];
        let mut x_dd = vec![0.0f64; n * ci];
        let mut x_dz = vec![0.0f64; n * ci];
        for r in 0..n {
            let lane = idx.lane(r);
            let (d, z) = (self.act_q.delta[lane], self.act_q.zero_point[lane]);
            for c in 0..ci {
                let k = r * ci + c;
                let t = quant_trace(xs.data()[k], d, z, qa);
                xq[k] = t.q;
                x_pass[k] = !t.clipped;
                if t.clipped {
                    x_dd[k] = t.level - z as f64;
                    x_dz[k] = -(d as f64);
                } else {
                    x_dd[k] = t.rounded - t.scaled;
                }
            }
        }

        let qw = qmax(self.w_bits);
        let mut wq = vec![0.0f32; ci * co];
        let mut w_pass = vec![false; ci * co];
        let mut w_dd = vec![0.0f64; ci * co];
        for i in 0..ci {
            for j in 0..co {
                let k = i * co + j;
                let (d, z) = (self.w_delta[j], self.w_zero[j]);
                let t = quant_trace(self.w.data()[k], d, z, qw);
                wq[k] = t.q;
                w_pass[k] = !t.clipped;
                w_dd[k] = if t.clipped {
                    t.level - z as f64
                } else {
                    t.rounded - t.scaled
                };
            }
        }

        let xq = Tensor::from_parts(vec![n, ci], xq);
        let wq = Tensor::from_parts(vec![ci, co], wq);
        let pre = linear_forward(&xq, &wq, self.b.as_deref())?;
        let act = self.spec.act;
        let out = pre.map(|v| act.apply(v));
        Ok((
            out,
            LayerTrace {
                lanes: idx.as_slice().iter().map(|t| t - 1).collect(),
                xq,
                x_pass,
                x_dd,
                x_dz,
                wq,
                w_pass,
                w_dd,
                pre,
            },
        ))
    }

    /// Reverse pass given `∂L/∂out`; returns `∂L/∂input` and parameter grads.
    pub(crate) fn backward(&self, tr: &LayerTrace, g_out: &[f64]) -> (Vec<f64>, LayerGrads) {
        let (n, ci) = (tr.xq.shape()[0], self.spec.in_dim);
        let co = self.spec.out_dim;
        let act = self.spec.act;
        let g_pre: Vec<f64> = g_out
            .iter()
            .zip(tr.pre.data())
            .map(|(&g, &p)| if g == 0.0 { 0.0 } else { g * act.grad(p) })
            .collect();

        let mut grads = LayerGrads::zeros(self);
        if let Some(gb) = grads.b.as_mut() {
            for r in 0..n {
                for j in 0..co {
                    gb[j] += g_pre[r * co + j];
                }
            }
        }

        // dL/dWq = Xq^T G, dL/dXq = G Wq^T
        let xq = tr.xq.data();
        let wq = tr.wq.data();
        let mut g_wq = vec![0.0f64; ci * co];
        let mut g_xq = vec![0.0f64; n * ci];
        for r in 0..n {
            let gr = &g_pre[r * co..(r + 1) * co];
            for i in 0..ci {
                let xv = xq[r * ci + i] as f64;
                let wr = &wq[i * co..(i + 1) * co];
                let mut acc = 0.0;
                for j in 0..co {
                    g_wq[i * co + j] += xv * gr[j];
                    acc += gr[j] * wr[j] as f64;
                }
                g_xq[r * ci + i] = acc;
            }
        }

        for i in 0..ci {
            for j in 0..co {
                let k = i * co + j;
                if tr.w_pass[k] {
                    grads.w[k] = g_wq[k];
                }
                grads.w_delta[j] += g_wq[k] * tr.w_dd[k];
            }
        }

        let mut g_in = vec![0.0f64; n * ci];
        for r in 0..n {
            let lane = tr.lanes[r];
            grads.act_touched[lane] = true;
            for i in 0..ci {
                let k = r * ci + i;
                let g = g_xq[k];
                grads.act_delta[lane] += g * tr.x_dd[k];
                grads.act_zero[lane] += g * tr.x_dz[k];
                if tr.x_pass[k] {
                    g_in[k] = g / self.in_scale[i] as f64;
                }
            }
        }
        (g_in, grads)
    }
}

pub(crate) struct LayerTrace {
    lanes: Vec<usize>,
    xq: Tensor,
    x_pass: Vec<bool>,
    x_dd: Vec<f64>,
    x_dz: Vec<f64>,
    wq: Tensor,
    w_pass: Vec<bool>,
    w_dd: Vec<f64>,
    pre: Tensor,
}

/// Gradients for every trainable of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub w: Vec<f64>,
    pub b: Option<Vec<f64>>,
    pub w_delta: Vec<f64>,
    pub act_delta: Vec<f64>,
    pub act_zero: Vec<f64>,
    /// Timestep lanes that appeared in the batch.
    pub act_touched: Vec<bool>,
}

impl LayerGrads {
    fn zeros(l: &QLayer) -> Self {
        let t = l.act_q.timesteps();
        Self {
            w: vec![0.0; l.w.numel()],
            b: l.b.as_ref().map(|b| vec![0.0; b.len()]),
            w_delta: vec![0.0; l.w_delta.len()],
            act_delta: vec![0.0; t],
            act_zero: vec![0.0; t],
            act_touched: vec![false; t],
        }
    }
}

impl QBlock {
    pub fn calibrate(
        block: &Block,
        plans: &[ScalingPlan],
        layer_inputs_per_step: &[Vec<Tensor>],
        setup: &QuantSetup,
    ) -> Result<Self> {
        if plans.len() != block.layers.len() || layer_inputs_per_step.len() != block.layers.len() {
            return Err(Error::invalid("need one plan and one input set per layer"));
        }
        let layers = block
            .layers
            .iter()
            .zip(&block.weights)
            .zip(plans.iter().zip(layer_inputs_per_step))
            .map(|((spec, lin), (plan, inputs))| QLayer::calibrate(spec, lin, plan, inputs, setup))
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn forward(&self, x: &Tensor, idx: &TimestepIndex) -> Result<Tensor> {
        let mut a = x.clone();
        for l in &self.layers {
            a = l.forward(&a, idx)?;
        }
        Ok(a)
    }

    /// Quantized forward with every layer's input recorded.
    pub fn layer_inputs(&self, x: &Tensor, idx: &TimestepIndex) -> Result<(Vec<Tensor>, Tensor)> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut a = x.clone();
        for l in &self.layers {
            inputs.push(a.clone());
            a = l.forward(&a, idx)?;
        }
        Ok((inputs, a))
    }

    /// MSE against `target` and the gradient of that loss for every trainable.
    pub fn loss_and_grads(
        &self,
        x: &Tensor,
        idx: &TimestepIndex,
        target: &Tensor,
    ) -> Result<(f64, Vec<LayerGrads>)> {
        let mut a = x.clone();
        let mut traces = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let (out, tr) = l.forward_traced(&a, idx)?;
            traces.push(tr);
            a = out;
        }
        if a.shape() != target.shape() {
            return Err(Error::ShapeMismatch {
                op: "bkd loss",
                left: a.shape().to_vec(),
                right: target.shape().to_vec(),
            });
        }
        let numel = a.numel() as f64;
        let mut loss = 0.0;
        let mut g: Vec<f64> = a
            .data()
            .iter()
            .zip(target.data())
            .map(|(&o, &t)| {
                let d = o as f64 - t as f64;
                loss += d * d;
                2.0 * d / numel
            })
            .collect();
        loss /= numel;

        let mut grads = Vec::with_capacity(self.layers.len());
        for (l, tr) in self.layers.iter().zip(&traces).rev() {
            let (g_in, lg) = l.backward(tr, &g);
            grads.push(lg);
            g = g_in;
        }
        grads.reverse();
        Ok((loss, grads))
    }
}

/// Mean over all elements of `(a − b)²`.
pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    Ok(a.sub(b)?.mean_square())
}

/// Distillation loss between a full-precision block and its quantized copy
/// on the same batch.
pub fn bkd_loss(block_fp: &Block, block_q: &QBlock, x: &Tensor, idx: &TimestepIndex) -> Result<f64> {
    let target = super::model::block_forward_fp(block_fp, x)?;
    mse(&target, &block_q.forward(x, idx)?)
}

/// Gradients of the distillation loss for every trainable of `block_q`.
pub fn bkd_backward(
    block_fp: &Block,
    block_q: &QBlock,
    x: &Tensor,
    idx: &TimestepIndex,
) -> Result<Vec<LayerGrads>> {
    let target = super::model::block_forward_fp(block_fp, x)?;
    Ok(block_q.loss_and_grads(x, idx, &target)?.1)
}
