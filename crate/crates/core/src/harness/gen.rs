//! Synthetic timestep-conditioned activations.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{std_normal, streams, RngStream};
use crate::tensor::Tensor;
use crate::tns;

pub const MANIFEST: &str = "manifest.json";

/// Generator settings.
///
/// Step `t` (1-indexed) has per-element standard deviation
/// `sigma_base · (1 + gamma · t / T) · m_c`, where `m_c = exp(channel_spread · g_c)`
/// is a fixed per-channel gain (`channel_spread = 0` makes every channel
/// identically distributed). Each element is then multiplied by
/// `outlier_scale` with probability `outlier_prob`, in every channel alike.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    #[serde(rename = "T")]
    pub timesteps: usize,
    #[serde(rename = "N")]
    pub samples: usize,
    #[serde(rename = "C")]
    pub channels: usize,
    pub sigma_base: f32,
    pub gamma: f32,
    pub outlier_prob: f64,
    pub outlier_scale: f32,
    pub channel_spread: f32,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            timesteps: 10,
            samples: 256,
            channels: 32,
            sigma_base: 1.0,
            gamma: 1.0,
            outlier_prob: 0.0,
            outlier_scale: 1.0,
            channel_spread: 0.0,
            seed: 0,
        }
    }
}

impl GenConfig {
    /// The workload used for the training and dilation experiments:
    /// desk-scale shape with log-normal channel gains.
    pub fn standard(seed: u64) -> Self {
        Self {
            channel_spread: 1.0,
            seed,
            ..Self::default()
        }
    }

    /// The standard workload with heavy outliers present in all channels.
    pub fn all_channel_outliers(seed: u64) -> Self {
        Self {
            outlier_prob: 0.01,
            outlier_scale: 8.0,
            ..Self::standard(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.timesteps == 0 || self.samples == 0 || self.channels == 0 {
            return Err(Error::invalid("T, N and C must be positive"));
        }
        if !(self.sigma_base > 0.0 && self.sigma_base.is_finite()) {
            return Err(Error::invalid("sigma_base must be positive"));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid("gamma must be nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.outlier_prob) {
            return Err(Error::invalid("outlier_prob must lie in [0, 1]"));
        }
        if !(self.outlier_scale >= 1.0 && self.outlier_scale.is_finite()) {
            return Err(Error::invalid("outlier_scale must be >= 1"));
        }
        if !(self.channel_spread >= 0.0 && self.channel_spread.is_finite()) {
            return Err(Error::invalid("channel_spread must be nonnegative"));
        }
        Ok(())
    }

    /// Standard deviation of step `t` before channel gains and outliers.
    pub fn step_sigma(&self, t: usize) -> f32 {
        self.sigma_base * (1.0 + self.gamma * t as f32 / self.timesteps as f32)
    }
}

/// Generated activations, one `N x C` tensor per timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct GenData {
    pub config: GenConfig,
    pub channel_gain: Vec<f32>,
    pub steps: Vec<Tensor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: GenConfig,
    pub channel_gain: Vec<f32>,
    pub files: Vec<String>,
}

pub fn step_file(t: usize) -> String {
    format!("act_t{t}.tns")
}

pub fn gen_data(cfg: &GenConfig) -> Result<GenData> {
    cfg.validate()?;
    let mut rng = RngStream::new(cfg.seed, streams::DATA).rng();
    let channel_gain: Vec<f32> = (0..cfg.channels)
        .map(|_| {
            let g = std_normal(&mut rng);
            if cfg.channel_spread == 0.0 {
                1.0
            } else {
                (cfg.channel_spread as f64 * g).exp() as f32
            }
        })
        .collect();
    let mut steps = Vec::with_capacity(cfg.timesteps);
    for t in 1..=cfg.timesteps {
        let sigma = cfg.step_sigma(t) as f64;
        let mut data = Vec::with_capacity(cfg.samples * cfg.channels);
        for _ in 0..cfg.samples {
            for &m in &channel_gain {
                // Both draws happen for every element so that the outlier
                // settings never shift the underlying Gaussian stream.
                let z = std_normal(&mut rng);
                let u: f64 = rng.random();
                let mut v = sigma * m as f64 * z;
                if u < cfg.outlier_prob {
                    v *= cfg.outlier_scale as f64;
                }
                data.push(v as f32);
            }
        }
        steps.push(Tensor::new(vec![cfg.samples, cfg.channels], data)?);
    }
    Ok(GenData {
        config: cfg.clone(),
        channel_gain,
        steps,
    })
}

impl GenData {
    /// Writes `act_t{t}.tns` for every step plus `manifest.json` into `dir`,
    /// which must not exist yet or be empty.
    pub fn write(&self, dir: &Path) -> Result<()> {
        super::fresh_dir(dir)?;
        let mut files = Vec::with_capacity(self.steps.len());
        for (i, x) in self.steps.iter().enumerate() {
            let name = step_file(i + 1);
            tns::write(&dir.join(&name), x)?;
            files.push(name);
        }
        let manifest = Manifest {
            config: self.config.clone(),
            channel_gain: self.channel_gain.clone(),
            files,
        };
        super::write_json(&dir.join(MANIFEST), &manifest)
    }

    /// Reads a directory written by [`GenData::write`].
    pub fn read(dir: &Path) -> Result<Self> {
        let manifest: Manifest = super::read_json(&dir.join(MANIFEST))?;
        manifest.config.validate()?;
        let steps = manifest
            .files
            .iter()
            .map(|f| tns::read(&dir.join(f)))
            .collect::<Result<Vec<_>>>()?;
        if steps.len() != manifest.config.timesteps {
            return Err(Error::invalid(format!(
                "manifest lists {} files for T={}",
                steps.len(),
                manifest.config.timesteps
            )));
        }
        if manifest.channel_gain.len() != manifest.config.channels {
            return Err(Error::invalid("manifest channel gains do not match C"));
        }
        for x in &steps {
            let (_, c) = x.dims2("act file")?;
            if c != manifest.config.channels {
                return Err(Error::ShapeMismatch {
                    op: "act file",
                    left: x.shape().to_vec(),
                    right: vec![manifest.config.channels],
                });
            }
        }
        Ok(Self {
            config: manifest.config,
            channel_gain: manifest.channel_gain,
            steps,
        })
    }
}
