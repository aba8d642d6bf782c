//! Block-wise knowledge distillation: quantized toy blocks trained against
//! their full-precision counterparts, updating weights and quantizer step
//! sizes / zero-points together.

pub mod adam;
pub mod model;
pub mod qlayer;
pub mod train;

pub use adam::{AdamConfig, AdamState};
pub use model::{
    block_forward_fp, block_layer_inputs, Activation, Block, BlockArch, LayerSpec, Linear, Model,
    ModelSpec,
};
pub use qlayer::{bkd_backward, bkd_loss, mse, LayerGrads, QBlock, QLayer, QuantSetup};
pub use train::{
    bkd_train, BkdConfig, BlockReport, Dataset, InputSource, QModel, TrainReport, TrainState,
};
