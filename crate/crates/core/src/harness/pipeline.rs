//! scale → calibrate → train → analyze.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bkd::model::weight_file;
use crate::bkd::{
    bkd_train, block_layer_inputs, BkdConfig, BlockReport, Dataset, Model, QBlock, QModel,
    QuantSetup, TrainReport,
};
use crate::error::{Error, Result, StageExt};
use crate::quant::{ErrorReport, QuantParams};
use crate::rng::{streams, RngStream};
use crate::scaling::{
    activation_stats, smoothquant_plan, wd_effect_stats, wd_plan, Scaler, ScalingPlan, WdEffect,
};
use crate::tensor::Tensor;
use crate::tpq::{TemporalQuantParamsJson, TimestepIndex};
use crate::tns;

use super::config::ExperimentConfig;
use super::gen::{gen_data, GenConfig, GenData};
use super::{fresh_dir, layer_label, write_json, write_text};

/// How far [`run_until`] goes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Until {
    /// Scaling plans and their effect statistics only.
    Scale,
    /// Plus quantizer calibration and the post-calibration error analysis.
    Calibrate,
    /// Plus block-wise distillation and the post-training analysis.
    Train,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSummary {
    pub layer: String,
    pub prop_s_gt_1: f64,
    pub dx_ratio: f64,
    pub dw_ratio: f64,
    pub post_calib_error: Option<f64>,
    pub post_train_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub seed: u64,
    pub scaler: Scaler,
    pub bits_w: u32,
    pub bits_a: u32,
    pub iters: usize,
    pub blocks: Vec<BlockReport>,
    pub layers: Vec<LayerSummary>,
}

/// Everything one run produced, in memory.
#[derive(Debug, Clone)]
pub struct PipelineReport {
    pub config: ExperimentConfig,
    pub labels: Vec<String>,
    pub plans: Vec<ScalingPlan>,
    pub effects: Vec<WdEffect>,
    pub calib_errors: Vec<ErrorReport>,
    pub trained_errors: Vec<ErrorReport>,
    pub train: TrainReport,
    pub qmodel: Option<QModel>,
}

#[derive(Serialize)]
struct LayerQParams<'a> {
    weight: &'a QuantParams,
    act: TemporalQuantParamsJson,
}

impl PipelineReport {
    pub fn summary(&self) -> Summary {
        let layers = self
            .labels
            .iter()
            .enumerate()
            .map(|(i, l)| LayerSummary {
                layer: l.clone(),
                prop_s_gt_1: self.effects[i].prop_s_gt_1,
                dx_ratio: self.effects[i].dx_ratio,
                dw_ratio: self.effects[i].mean_dw_ratio(),
                post_calib_error: self.calib_errors.get(i).map(|r| r.total_error),
                post_train_error: self.trained_errors.get(i).map(|r| r.total_error),
            })
            .collect();
        Summary {
            seed: self.config.seed,
            scaler: self.config.scaler,
            bits_w: self.config.bits_w,
            bits_a: self.config.bits_a,
            iters: if self.trained_errors.is_empty() { 0 } else { self.config.bkd.iters },
            blocks: self.train.blocks.clone(),
            layers,
        }
    }

    pub fn wd_effect_csv(&self) -> String {
        csv(WdEffect::CSV_HEADER, self.labels.iter().zip(&self.effects).map(|(l, e)| e.csv_row(l)))
    }

    pub fn error_csv(reports: &[ErrorReport], labels: &[String]) -> String {
        csv(ErrorReport::CSV_HEADER, labels.iter().zip(reports).map(|(l, r)| r.csv_row(l)))
    }

    /// Writes the run's reports into `dir`, which must be new or empty.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fresh_dir(dir)?;
        write_json(&dir.join("config.json"), &self.config)?;
        write_text(&dir.join("wd_effect.csv"), &self.wd_effect_csv())?;
        for (l, p) in self.labels.iter().zip(&self.plans) {
            write_json(&dir.join(format!("plan_{l}.json")), p)?;
        }
        if !self.calib_errors.is_empty() {
            write_text(
                &dir.join("error_report.csv"),
                &Self::error_csv(&self.calib_errors, &self.labels),
            )?;
        }
        if !self.trained_errors.is_empty() {
            write_text(
                &dir.join("error_report_trained.csv"),
                &Self::error_csv(&self.trained_errors, &self.labels),
            )?;
            write_text(&dir.join("loss_history.csv"), &self.train.loss_csv())?;
        }
        if let Some(q) = &self.qmodel {
            let wdir = dir.join("weights");
            std::fs::create_dir(&wdir).map_err(|e| Error::io(&wdir, e))?;
            for (k, b) in q.blocks.iter().enumerate() {
                for (j, l) in b.layers.iter().enumerate() {
                    let label = layer_label(k + 1, j + 1);
                    let qp = LayerQParams {
                        weight: &l.weight_params()?,
                        act: l.act_q.to_export(),
                    };
                    write_json(&dir.join(format!("qparams_{label}.json")), &qp)?;
                    tns::write(&wdir.join(weight_file(k + 1, j + 1)), &l.w)?;
                }
            }
        }
        write_json(&dir.join("summary.json"), &self.summary())
    }
}

fn csv(header: &str, rows: impl Iterator<Item = String>) -> String {
    let mut s = String::from(header);
    s.push('\n');
    for r in rows {
        s.push_str(&r);
        s.push('\n');
    }
    s
}

/// Input data for a run: read from `data_dir`, or generated with the run seed.
pub fn load_data(cfg: &ExperimentConfig) -> Result<GenData> {
    match &cfg.data_dir {
        Some(d) => GenData::read(d),
        None => gen_data(&GenConfig {
            seed: cfg.seed,
            ..cfg.data.clone()
        }),
    }
}

pub fn build_model(cfg: &ExperimentConfig, data: &GenData) -> Result<Model> {
    let spec = cfg.model.resolve_spec(data.config.timesteps, data.config.channels)?;
    match &cfg.model.weights_dir {
        Some(d) => Model::load(spec, d),
        None => Model::init_balanced(
            spec,
            RngStream::new(cfg.seed, streams::INIT),
            Some(&data.channel_gain),
            cfg.model.channel_spread,
        ),
    }
}

/// Full-precision input of every layer, `[block][layer]`, over all rows.
pub fn fp_layer_inputs(model: &Model, x: &Tensor) -> Result<Vec<Vec<Tensor>>> {
    let mut a = x.clone();
    let mut out = Vec::with_capacity(model.blocks.len());
    for b in &model.blocks {
        let (inputs, next) = block_layer_inputs(b, &a)?;
        out.push(inputs);
        a = next;
    }
    Ok(out)
}

/// One plan per layer, `[block][layer]`.
pub fn scaling_plans(
    model: &Model,
    inputs: &[Vec<Tensor>],
    scaler: Scaler,
    alpha: f32,
    sq_floor: bool,
) -> Result<Vec<Vec<ScalingPlan>>> {
    model
        .blocks
        .iter()
        .zip(inputs)
        .map(|(b, xs)| {
            b.weights
                .iter()
                .zip(xs)
                .map(|(lin, x)| match scaler {
                    Scaler::None => ScalingPlan::identity(&lin.w),
                    Scaler::Wd => wd_plan(&lin.w),
                    Scaler::SmoothQuant => {
                        smoothquant_plan(&activation_stats(x)?, &lin.w, alpha, sq_floor)
                    }
                })
                .collect()
        })
        .collect()
}

/// Quantized copy of `model`: every layer calibrated per timestep on its
/// full-precision input `inputs[block][layer]` (rows aligned with `data`).
pub fn calibrate_model(
    model: &Model,
    plans: &[Vec<ScalingPlan>],
    inputs: &[Vec<Tensor>],
    data: &Dataset,
    setup: &QuantSetup,
) -> Result<QModel> {
    let blocks = model
        .blocks
        .iter()
        .zip(plans)
        .zip(inputs)
        .map(|((b, p), xs)| {
            let per_step: Vec<Vec<Tensor>> = xs.iter().map(|x| data.split_steps(x)).collect();
            QBlock::calibrate(b, p, &per_step, setup)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(QModel { blocks })
}

/// Post-calibration (or post-training) `E(X', W')` per layer on the
/// full-precision layer inputs.
pub fn layer_errors(
    qmodel: &QModel,
    inputs: &[Vec<Tensor>],
    idx: &TimestepIndex,
) -> Result<Vec<ErrorReport>> {
    let mut out = Vec::new();
    for (b, xs) in qmodel.blocks.iter().zip(inputs) {
        for (l, x) in b.layers.iter().zip(xs) {
            out.push(l.error_report(x, idx)?);
        }
    }
    Ok(out)
}

pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<PipelineReport> {
    run_until(cfg, Until::Train)
}

pub fn run_until(cfg: &ExperimentConfig, until: Until) -> Result<PipelineReport> {
    cfg.validate().stage("config")?;
    let gen = load_data(cfg).stage("data")?;
    let data = Dataset::from_steps(&gen.steps).stage("data")?;
    let model = build_model(cfg, &gen).stage("model")?;
    let inputs = fp_layer_inputs(&model, &data.x).stage("model")?;

    let plans = scaling_plans(&model, &inputs, cfg.scaler, cfg.alpha, cfg.sq_floor).stage("scale")?;
    let mut labels = Vec::new();
    let mut effects = Vec::new();
    for (k, (b, xs)) in model.blocks.iter().zip(&inputs).enumerate() {
        for (j, (lin, x)) in b.weights.iter().zip(xs).enumerate() {
            labels.push(layer_label(k + 1, j + 1));
            effects.push(wd_effect_stats(x, &lin.w, &plans[k][j], cfg.bits_a).stage("scale")?);
        }
    }
    let mut report = PipelineReport {
        config: cfg.clone(),
        labels,
        plans: plans.iter().flatten().cloned().collect(),
        effects,
        calib_errors: Vec::new(),
        trained_errors: Vec::new(),
        train: TrainReport::default(),
        qmodel: None,
    };
    if until == Until::Scale {
        return Ok(report);
    }

    let setup = QuantSetup {
        bits_w: cfg.bits_w,
        bits_a: cfg.bits_a,
        act_method: cfg.act_calib,
        weight_method: cfg.weight_calib,
        grid_points: cfg.grid_points,
    };
    let mut qmodel = calibrate_model(&model, &plans, &inputs, &data, &setup).stage("calibrate")?;
    report.calib_errors = layer_errors(&qmodel, &inputs, &data.idx).stage("analyze")?;

    // With zero iterations training only measures the calibrated blocks.
    let bkd = if until == Until::Train {
        cfg.bkd.clone()
    } else {
        BkdConfig {
            iters: 0,
            ..cfg.bkd.clone()
        }
    };
    report.train = bkd_train(
        &model,
        &mut qmodel,
        &data,
        &bkd,
        RngStream::new(cfg.seed, streams::TRAINING),
    )
    .stage("train")?;
    if until == Until::Train {
        report.trained_errors = layer_errors(&qmodel, &inputs, &data.idx).stage("analyze")?;
    }
    report.qmodel = Some(qmodel);
    Ok(report)
}
