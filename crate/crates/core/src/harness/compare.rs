//! None vs SmoothQuant vs weight dilation on identical inputs.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::par;
use crate::rng::{streams, RngStream};
use crate::scaling::Scaler;

use super::config::ExperimentConfig;
use super::pipeline::run_pipeline;

pub const ARMS: [Scaler; 3] = [Scaler::None, Scaler::SmoothQuant, Scaler::Wd];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub seed: u64,
    pub arm: Scaler,
    pub layer: String,
    pub post_calib_error: f64,
    pub block: usize,
    pub post_train_block_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Comparison {
    pub rows: Vec<CompareRow>,
}

/// Run seed of trial `i`, drawn from the trial's own stream of the root seed.
pub fn trial_seed(root: u64, i: usize) -> u64 {
    RngStream::new(root, streams::TRIALS_BASE + i as u64)
        .rng()
        .next_u64()
}

/// Runs every arm of [`ARMS`] for `cfg.trials` seeds. SmoothQuant runs
/// unfloored with `cfg.alpha`. Arms of one trial share data and weights.
pub fn compare_scalers(cfg: &ExperimentConfig) -> Result<Comparison> {
    cfg.validate()?;
    let jobs: Vec<(u64, Scaler)> = (0..cfg.trials)
        .flat_map(|i| ARMS.map(|a| (trial_seed(cfg.seed, i), a)))
        .collect();
    let runs = par::map_range(jobs.len(), |k| {
        let (seed, arm) = jobs[k];
        let c = ExperimentConfig {
            seed,
            scaler: arm,
            sq_floor: false,
            ..cfg.clone()
        };
        run_pipeline(&c).map(|r| (seed, arm, r))
    });
    let mut rows = Vec::new();
    for run in runs {
        let (seed, arm, r) = run?;
        let mut i = 0;
        for (k, b) in r.train.blocks.iter().enumerate() {
            let layers = r.qmodel.as_ref().map_or(0, |q| q.blocks[k].layers.len());
            for _ in 0..layers {
                rows.push(CompareRow {
                    seed,
                    arm,
                    layer: r.labels[i].clone(),
                    post_calib_error: r.calib_errors[i].total_error,
                    block: b.block,
                    post_train_block_mse: b.mse_trained,
                });
                i += 1;
            }
        }
    }
    Ok(Comparison { rows })
}

impl Comparison {
    pub const CSV_HEADER: &'static str = "seed,arm,layer,post_calib_error,block,post_train_block_mse";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.seed, r.arm, r.layer, r.post_calib_error, r.block, r.post_train_block_mse
            ));
        }
        s
    }

    fn arm(&self, arm: Scaler) -> impl Iterator<Item = &CompareRow> {
        self.rows.iter().filter(move |r| r.arm == arm)
    }

    /// Summed post-calibration error of `arm` over that of the no-scaling arm.
    pub fn aggregate_ratio(&self, arm: Scaler) -> f64 {
        let num: f64 = self.arm(arm).map(|r| r.post_calib_error).sum();
        let den: f64 = self.arm(Scaler::None).map(|r| r.post_calib_error).sum();
        num / den
    }

    /// Fraction of (seed, layer) cells where `arm` is strictly below no scaling.
    pub fn win_fraction(&self, arm: Scaler) -> f64 {
        let base: Vec<&CompareRow> = self.arm(Scaler::None).collect();
        let other: Vec<&CompareRow> = self.arm(arm).collect();
        let wins = base
            .iter()
            .zip(&other)
            .filter(|(b, o)| {
                debug_assert!(b.seed == o.seed && b.layer == o.layer);
                o.post_calib_error < b.post_calib_error
            })
            .count();
        wins as f64 / base.len() as f64
    }
}
