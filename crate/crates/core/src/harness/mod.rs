//! Experiment front-end: synthetic data, the scale → calibrate → train →
//! analyze pipeline, and the three-arm scaler comparison.

pub mod compare;
pub mod config;
pub mod gen;
pub mod pipeline;

use std::fs;
use std::io::ErrorKind;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub use compare::{compare_scalers, trial_seed, CompareRow, Comparison};
pub use config::{ExperimentConfig, ModelConfig};
pub use gen::{gen_data, GenConfig, GenData};
pub use pipeline::{calibrate_model, run_pipeline, run_until, LayerSummary, PipelineReport, Summary, Until};

/// Creates `dir`, or accepts it if it exists and is empty. Anything else is
/// refused so that reports never mix with earlier output.
pub fn fresh_dir(dir: &Path) -> Result<()> {
    match fs::read_dir(dir) {
        Ok(mut entries) => {
            if entries.next().is_some() {
                return Err(Error::io(
                    dir,
                    std::io::Error::new(ErrorKind::AlreadyExists, "output directory is not empty"),
                ));
            }
            Ok(())
        }
        Err(e) if e.kind() == ErrorKind::NotFound => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
        }
        Err(e) => Err(Error::io(dir, e)),
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Row label of layer `j` in block `k`, both 1-indexed.
pub fn layer_label(block: usize, layer: usize) -> String {
    format!("b{block}_l{layer}")
}
