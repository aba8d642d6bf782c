use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bkd::{BkdConfig, ModelSpec};
use crate::error::{Error, Result};
use crate::quant::{check_bits, CalibMethod, DEFAULT_MSE_GRID};
use crate::scaling::Scaler;

use super::gen::GenConfig;

/// Toy network to build when no weights are supplied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Explicit architecture; `None` means `blocks` blocks of
    /// `layers_per_block` square layers of width `width`.
    pub spec: Option<ModelSpec>,
    pub blocks: usize,
    pub width: usize,
    pub layers_per_block: usize,
    /// Log-normal spread of the hidden channel gains at init.
    pub channel_spread: f32,
    /// Directory holding `w_b{k}_l{j}.tns` (and bias files); overrides init.
    pub weights_dir: Option<PathBuf>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            spec: None,
            blocks: 2,
            width: 32,
            layers_per_block: 2,
            channel_spread: 1.0,
            weights_dir: None,
        }
    }
}

impl ModelConfig {
    pub fn resolve_spec(&self, timesteps: usize, input_dim: usize) -> Result<ModelSpec> {
        let spec = match &self.spec {
            Some(s) => s.clone(),
            None => {
                if self.width != input_dim {
                    return Err(Error::invalid(format!(
                        "model width {} does not match data channels {input_dim}",
                        self.width
                    )));
                }
                ModelSpec::uniform(timesteps, self.blocks, self.width, self.layers_per_block)
            }
        };
        spec.validate()?;
        if spec.timesteps != timesteps {
            return Err(Error::invalid(format!(
                "model T={} but data has T={timesteps}",
                spec.timesteps
            )));
        }
        if spec.input_dim() != input_dim {
            return Err(Error::invalid(format!(
                "model input width {} but data has {input_dim} channels",
                spec.input_dim()
            )));
        }
        Ok(spec)
    }
}

/// One pipeline run.
///
/// All randomness derives from `seed`: the generator seed is overridden by
/// it, and init / training use its fixed stream ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub bits_w: u32,
    pub bits_a: u32,
    pub scaler: Scaler,
    /// SmoothQuant migration strength.
    pub alpha: f32,
    /// Floor SmoothQuant factors at 1.
    pub sq_floor: bool,
    pub act_calib: CalibMethod,
    pub weight_calib: CalibMethod,
    pub grid_points: usize,
    pub bkd: BkdConfig,
    pub data: GenConfig,
    /// Read `act_t{t}.tns` + manifest from here instead of generating.
    pub data_dir: Option<PathBuf>,
    pub model: ModelConfig,
    /// Number of seeds in a scaler comparison.
    pub trials: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            bits_w: 4,
            bits_a: 4,
            scaler: Scaler::Wd,
            alpha: 0.5,
            sq_floor: true,
            act_calib: CalibMethod::Mse,
            weight_calib: CalibMethod::MaxMin,
            grid_points: DEFAULT_MSE_GRID,
            bkd: BkdConfig::default(),
            data: GenConfig::standard(42),
            data_dir: None,
            model: ModelConfig::default(),
            trials: 20,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = super::read_json(path)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        check_bits(self.bits_w)?;
        check_bits(self.bits_a)?;
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid("alpha must lie in [0, 1]"));
        }
        if self.grid_points < 2 {
            return Err(Error::invalid("grid_points must be at least 2"));
        }
        if self.bkd.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        for (name, lr) in [("lr_qparams", self.bkd.lr_qparams), ("lr_weights", self.bkd.lr_weights)] {
            if !(lr >= 0.0 && lr.is_finite()) {
                return Err(Error::invalid(format!("{name} must be finite and >= 0")));
            }
        }
        if self.trials == 0 {
            return Err(Error::invalid("trials must be positive"));
        }
        if let Some(d) = &self.data_dir {
            if !d.is_dir() {
                return Err(Error::invalid(format!("data_dir {} does not exist", d.display())));
            }
        }
        if let Some(d) = &self.model.weights_dir {
            if !d.is_dir() {
                return Err(Error::invalid(format!("weights_dir {} does not exist", d.display())));
            }
        }
        self.data.validate()
    }
}
