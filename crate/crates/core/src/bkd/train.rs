//! Block-by-block distillation of a quantized model against its
//! full-precision original.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;
use crate::tpq::TimestepIndex;

use super::adam::{AdamConfig, AdamState};
use super::model::{block_forward_fp, Model};
use super::qlayer::{mse, QBlock};

/// Lower bound that keeps step sizes positive after each update.
pub const DELTA_FLOOR: f32 = 1e-8;

/// Where block `k` takes its training input from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputSource {
    /// Output of the already-trained quantized blocks `1..k-1`.
    Quantized,
    /// Output of the full-precision blocks `1..k-1`.
    Fp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BkdConfig {
    pub iters: usize,
    pub batch_size: usize,
    pub lr_qparams: f64,
    pub lr_weights: f64,
    pub adam: AdamConfig,
    pub input_source: InputSource,
}

impl Default for BkdConfig {
    fn default() -> Self {
        Self {
            iters: 500,
            batch_size: 32,
            lr_qparams: 1e-4,
            lr_weights: 1e-2,
            adam: AdamConfig::default(),
            input_source: InputSource::Quantized,
        }
    }
}

/// Calibration rows with their timesteps.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Tensor,
    pub idx: TimestepIndex,
    pub timesteps: usize,
}

impl Dataset {
    /// Stacks per-timestep tensors; rows of `steps[t-1]` get timestep `t`.
    pub fn from_steps(steps: &[Tensor]) -> Result<Self> {
        let x = Tensor::vstack(steps)?;
        let idx = steps
            .iter()
            .enumerate()
            .flat_map(|(t, s)| std::iter::repeat_n(t + 1, s.shape()[0]))
            .collect();
        Ok(Self {
            x,
            idx: TimestepIndex::new(idx, steps.len())?,
            timesteps: steps.len(),
        })
    }

    pub fn rows(&self) -> usize {
        self.x.shape()[0]
    }

    /// Rows of timestep `t` as their own tensor.
    pub fn step(&self, t: usize) -> Tensor {
        let rows: Vec<usize> = (0..self.rows())
            .filter(|&r| self.idx.as_slice()[r] == t)
            .collect();
        self.x.select_rows(&rows)
    }

    /// Splits a tensor aligned with this dataset back into per-timestep parts.
    pub fn split_steps(&self, x: &Tensor) -> Vec<Tensor> {
        (1..=self.timesteps)
            .map(|t| {
                let rows: Vec<usize> = (0..self.rows())
                    .filter(|&r| self.idx.as_slice()[r] == t)
                    .collect();
                x.select_rows(&rows)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct LayerOpt {
    w: AdamState,
    b: Option<AdamState>,
    w_delta: AdamState,
    act_delta: AdamState,
    act_zero: AdamState,
}

/// Trainable block plus its optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub block: QBlock,
    opt: Vec<LayerOpt>,
    pub step: usize,
    pub lr_qparams: f64,
    pub lr_weights: f64,
    pub adam: AdamConfig,
    pub losses: Vec<f64>,
}

impl TrainState {
    pub fn new(block: QBlock, cfg: &BkdConfig) -> Self {
        let opt = block
            .layers
            .iter()
            .map(|l| LayerOpt {
                w: AdamState::new(l.w.numel()),
                b: l.b.as_ref().map(|b| AdamState::new(b.len())),
                w_delta: AdamState::new(l.w_delta.len()),
                act_delta: AdamState::new(l.act_q.timesteps()),
                act_zero: AdamState::new(l.act_q.timesteps()),
            })
            .collect();
        Self {
            block,
            opt,
            step: 0,
            lr_qparams: cfg.lr_qparams,
            lr_weights: cfg.lr_weights,
            adam: cfg.adam,
            losses: Vec::new(),
        }
    }

    /// One Adam step on a batch; returns the pre-update loss.
    /// `block_no` only labels a non-finite loss.
    pub fn train_step(&mut self, x: &Tensor, idx: &TimestepIndex, target: &Tensor, block_no: usize) -> Result<f64> {
        let (loss, grads) = self.block.loss_and_grads(x, idx, target)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                block: block_no,
                step: self.step,
            });
        }
        let (lq, lw, cfg) = (self.lr_qparams, self.lr_weights, self.adam);
        for ((layer, opt), g) in self.block.layers.iter_mut().zip(&mut self.opt).zip(&grads) {
            // Weights are stored as a Tensor; update through a scratch copy.
            let mut w = layer.w.data().to_vec();
            opt.w.step(&mut w, &g.w, None, lw, &cfg);
            layer.w = Tensor::from_parts(layer.w.shape().to_vec(), w);
            if let (Some(b), Some(ob), Some(gb)) = (layer.b.as_mut(), opt.b.as_mut(), g.b.as_ref()) {
                ob.step(b, gb, None, lw, &cfg);
            }
            opt.w_delta.step(&mut layer.w_delta, &g.w_delta, None, lq, &cfg);
            floor_deltas(&mut layer.w_delta);
            let touched = Some(g.act_touched.as_slice());
            opt.act_delta
                .step(&mut layer.act_q.delta, &g.act_delta, touched, lq, &cfg);
            floor_deltas(&mut layer.act_q.delta);
            opt.act_zero
                .step(&mut layer.act_q.zero_point, &g.act_zero, touched, lq, &cfg);
        }
        self.step += 1;
        self.losses.push(loss);
        Ok(loss)
    }
}

fn floor_deltas(d: &mut [f32]) {
    for v in d {
        if *v < DELTA_FLOOR {
            *v = DELTA_FLOOR;
        }
    }
}

/// Quantized copy of every block of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct QModel {
    pub blocks: Vec<QBlock>,
}

impl QModel {
    pub fn forward(&self, x: &Tensor, idx: &TimestepIndex) -> Result<Tensor> {
        let mut a = x.clone();
        for b in &self.blocks {
            a = b.forward(&a, idx)?;
        }
        Ok(a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockReport {
    /// 1-indexed.
    pub block: usize,
    /// Block MSE on the full dataset right before this block trains.
    pub mse_calibrated: f64,
    /// Block MSE on the full dataset after training.
    pub mse_trained: f64,
    /// Mean square of the full-precision block output.
    pub target_second_moment: f64,
    #[serde(skip)]
    pub losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub blocks: Vec<BlockReport>,
}

impl TrainReport {
    pub const LOSS_CSV_HEADER: &'static str = "step,block,loss";

    /// `step,block,loss` rows, steps 1-indexed within each block.
    pub fn loss_csv(&self) -> String {
        let mut s = String::from(Self::LOSS_CSV_HEADER);
        s.push('\n');
        for b in &self.blocks {
            for (i, l) in b.losses.iter().enumerate() {
                s.push_str(&format!("{},{},{}\n", i + 1, b.block, l));
            }
        }
        s
    }
}

fn sample_batch(rng: &mut impl Rng, rows: usize, batch: usize) -> Option<Vec<usize>> {
    if batch >= rows {
        return None;
    }
    Some((0..batch).map(|_| rng.random_range(0..rows)).collect())
}

/// Trains `qmodel` block by block.
///
/// Block `k` is distilled against `B_k` applied to the full-precision output of
/// blocks `1..k-1`; its own input is the output of the already trained
/// quantized blocks (or the full-precision one, per `input_source`). Only
/// `qmodel.blocks[k]` changes while block `k` trains.
pub fn bkd_train(
    fp: &Model,
    qmodel: &mut QModel,
    data: &Dataset,
    cfg: &BkdConfig,
    stream: RngStream,
) -> Result<TrainReport> {
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    if fp.blocks.len() != qmodel.blocks.len() {
        return Err(Error::invalid("quantized model does not match block count"));
    }
    let present = data.idx.distinct();
    if present.len() != data.timesteps {
        return Err(Error::invalid(format!(
            "data covers timesteps {present:?}, expected all of 1..={}",
            data.timesteps
        )));
    }

    let mut rng = stream.rng();
    let mut fp_in = data.x.clone();
    let mut q_in = data.x.clone();
    let mut report = TrainReport::default();

    for (k, fp_block) in fp.blocks.iter().enumerate() {
        let block_no = k + 1;
        let input = match cfg.input_source {
            InputSource::Quantized => &q_in,
            InputSource::Fp => &fp_in,
        };
        let target = block_forward_fp(fp_block, &fp_in)?;
        let before = mse(&qmodel.blocks[k].forward(input, &data.idx)?, &target)?;

        let mut state = TrainState::new(qmodel.blocks[k].clone(), cfg);
        for _ in 0..cfg.iters {
            match sample_batch(&mut rng, data.rows(), cfg.batch_size) {
                Some(rows) => {
                    let xb = input.select_rows(&rows);
                    let tb = target.select_rows(&rows);
                    let ib = data.idx.select(&rows);
                    state.train_step(&xb, &ib, &tb, block_no)?;
                }
                None => {
                    state.train_step(input, &data.idx, &target, block_no)?;
                }
            }
        }
        let trained_out = state.block.forward(input, &data.idx)?;
        let after = mse(&trained_out, &target)?;
        if !after.is_finite() {
            return Err(Error::NonFiniteLoss {
                block: block_no,
                step: state.step,
            });
        }
        report.blocks.push(BlockReport {
            block: block_no,
            mse_calibrated: before,
            mse_trained: after,
            target_second_moment: target.mean_square(),
            losses: std::mem::take(&mut state.losses),
        });
        qmodel.blocks[k] = state.block;

        q_in = match cfg.input_source {
            InputSource::Quantized => trained_out,
            InputSource::Fp => qmodel.blocks[k].forward(&q_in, &data.idx)?,
        };
        fp_in = target;
    }
    Ok(report)
}
