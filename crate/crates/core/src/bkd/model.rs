//! Full-precision toy networks: stacks of linear layers with pointwise
//! activations, grouped into blocks.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{normal_from, std_normal, RngStream};
use crate::tensor::{matmul, Tensor};
use crate::tns;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Silu,
    None,
}

impl Activation {
    #[inline]
    pub fn apply(self, v: f32) -> f32 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Silu => v / (1.0 + (-v).exp()),
            Activation::None => v,
        }
    }

    /// Derivative at pre-activation `v`.
    #[inline]
    pub fn grad(self, v: f32) -> f64 {
        match self {
            Activation::Relu => {
                if v > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Silu => {
                let v = v as f64;
                let sig = 1.0 / (1.0 + (-v).exp());
                sig * (1.0 + v * (1.0 - sig))
            }
            Activation::None => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    #[serde(rename = "in")]
    pub in_dim: usize,
    #[serde(rename = "out")]
    pub out_dim: usize,
    pub bias: bool,
    pub act: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockArch {
    pub layers: Vec<LayerSpec>,
}

/// Architecture JSON: `{"T": …, "blocks": [{"layers": [{"in", "out", "bias", "act"}]}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(rename = "T")]
    pub timesteps: usize,
    pub blocks: Vec<BlockArch>,
}

impl ModelSpec {
    /// `blocks` blocks of `layers_per_block` square layers; the last layer of
    /// every block has no activation, the others use ReLU.
    pub fn uniform(timesteps: usize, blocks: usize, width: usize, layers_per_block: usize) -> Self {
        let block = BlockArch {
            layers: (0..layers_per_block)
                .map(|l| LayerSpec {
                    in_dim: width,
                    out_dim: width,
                    bias: true,
                    act: if l + 1 == layers_per_block {
                        Activation::None
                    } else {
                        Activation::Relu
                    },
                })
                .collect(),
        };
        Self {
            timesteps,
            blocks: vec![block; blocks],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.timesteps == 0 {
            return Err(Error::invalid("model needs T >= 1"));
        }
        if self.blocks.is_empty() {
            return Err(Error::invalid("model needs at least one block"));
        }
        let mut prev: Option<usize> = None;
        for (k, b) in self.blocks.iter().enumerate() {
            if b.layers.is_empty() {
                return Err(Error::invalid(format!("block {} has no layers", k + 1)));
            }
            for (j, l) in b.layers.iter().enumerate() {
                if l.in_dim == 0 || l.out_dim == 0 {
                    return Err(Error::invalid(format!(
                        "block {} layer {} has a zero dimension",
                        k + 1,
                        j + 1
                    )));
                }
                if let Some(p) = prev {
                    if p != l.in_dim {
                        return Err(Error::invalid(format!(
                            "block {} layer {}: input {} does not chain from {}",
                            k + 1,
                            j + 1,
                            l.in_dim,
                            p
                        )));
                    }
                }
                prev = Some(l.out_dim);
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.blocks[0].layers[0].in_dim
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `in x out`.
    pub w: Tensor,
    pub b: Option<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub layers: Vec<LayerSpec>,
    pub weights: Vec<Linear>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub blocks: Vec<Block>,
}

/// `x · w + b`.
pub fn linear_forward(x: &Tensor, w: &Tensor, b: Option<&[f32]>) -> Result<Tensor> {
    let y = matmul(x, w)?;
    Ok(match b {
        None => y,
        Some(b) => {
            let (_, c) = y.dims2("linear")?;
            let mut data = y.into_data();
            for row in data.chunks_mut(c) {
                for (v, &bb) in row.iter_mut().zip(b) {
                    *v += bb;
                }
            }
            Tensor::from_parts(vec![data.len() / c, c], data)
        }
    })
}

impl Block {
    pub fn check(&self) -> Result<()> {
        if self.layers.len() != self.weights.len() {
            return Err(Error::invalid("block layer/weight count mismatch"));
        }
        for (l, lin) in self.layers.iter().zip(&self.weights) {
            if lin.w.shape() != [l.in_dim, l.out_dim] {
                return Err(Error::ShapeMismatch {
                    op: "block weights",
                    left: lin.w.shape().to_vec(),
                    right: vec![l.in_dim, l.out_dim],
                });
            }
            if lin.b.as_ref().map(|b| b.len() != l.out_dim).unwrap_or(l.bias) {
                return Err(Error::invalid("bias missing or of the wrong length"));
            }
        }
        Ok(())
    }
}

/// Full-precision forward through one block.
pub fn block_forward_fp(block: &Block, x: &Tensor) -> Result<Tensor> {
    let mut a = x.clone();
    for (l, lin) in block.layers.iter().zip(&block.weights) {
        let (_, c) = a.dims2("block_forward_fp")?;
        if c != l.in_dim {
            return Err(Error::ShapeMismatch {
                op: "block_forward_fp",
                left: a.shape().to_vec(),
                right: lin.w.shape().to_vec(),
            });
        }
        let act = l.act;
        a = linear_forward(&a, &lin.w, lin.b.as_deref())?.map(|v| act.apply(v));
    }
    Ok(a)
}

/// Inputs seen by each layer of `block` plus the block output.
pub fn block_layer_inputs(block: &Block, x: &Tensor) -> Result<(Vec<Tensor>, Tensor)> {
    let mut inputs = Vec::with_capacity(block.layers.len());
    let mut a = x.clone();
    for (l, lin) in block.layers.iter().zip(&block.weights) {
        inputs.push(a.clone());
        let act = l.act;
        a = linear_forward(&a, &lin.w, lin.b.as_deref())?.map(|v| act.apply(v));
    }
    Ok((inputs, a))
}

impl Model {
    /// Random weights `N(0, 1/in)`, zero biases.
    pub fn init(spec: ModelSpec, stream: RngStream) -> Result<Self> {
        spec.validate()?;
        let mut rng = stream.rng();
        Self::draw(spec, &mut rng)
    }

    /// [`Model::init`] followed by a channel-gain rebalance.
    ///
    /// Row `i` of the first layer is divided by `input_scale[i]`, and every
    /// hidden channel gets a gain `exp(spread · g)`, `g ~ N(0, 1)`, on the
    /// column that produces it and the inverse gain on the row that consumes
    /// it. ReLU and identity commute with positive gains, so for such
    /// networks the function is that of the plain init applied to normalized
    /// input; what changes is that wide activation channels meet small
    /// weight rows, the pairing found in trained networks.
    pub fn init_balanced(
        spec: ModelSpec,
        stream: RngStream,
        input_scale: Option<&[f32]>,
        spread: f32,
    ) -> Result<Self> {
        spec.validate()?;
        if !(spread.is_finite() && spread >= 0.0) {
            return Err(Error::invalid("channel spread must be finite and nonnegative"));
        }
        let mut rng = stream.rng();
        let mut model = Self::draw(spec, &mut rng)?;
        let mut row_gain: Vec<f32> = match input_scale {
            Some(s) => {
                if s.len() != model.spec.input_dim() || s.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                    return Err(Error::invalid("input scale must be positive, one per input channel"));
                }
                s.iter().map(|&v| 1.0 / v).collect()
            }
            None => vec![1.0; model.spec.input_dim()],
        };
        let total: usize = model.blocks.iter().map(|b| b.weights.len()).sum();
        let mut seen = 0;
        for block in &mut model.blocks {
            for lin in &mut block.weights {
                seen += 1;
                let (ci, co) = lin.w.dims2("init_balanced")?;
                let col_gain: Vec<f32> = if seen == total || spread == 0.0 {
                    vec![1.0; co]
                } else {
                    (0..co)
                        .map(|_| (spread as f64 * std_normal(&mut rng)).exp() as f32)
                        .collect()
                };
                let mut w = lin.w.data().to_vec();
                for i in 0..ci {
                    for j in 0..co {
                        w[i * co + j] *= row_gain[i] * col_gain[j];
                    }
                }
                lin.w = Tensor::new(vec![ci, co], w)?;
                if let Some(b) = &mut lin.b {
                    for (v, g) in b.iter_mut().zip(&col_gain) {
                        *v *= g;
                    }
                }
                row_gain = col_gain.iter().map(|g| 1.0 / g).collect();
            }
        }
        Ok(model)
    }

    fn draw(spec: ModelSpec, rng: &mut impl Rng) -> Result<Self> {
        let mut blocks = Vec::with_capacity(spec.blocks.len());
        for arch in &spec.blocks {
            let mut weights = Vec::with_capacity(arch.layers.len());
            for l in &arch.layers {
                let std = (1.0 / l.in_dim as f32).sqrt();
                let w = normal_from(rng, &[l.in_dim, l.out_dim], 0.0, std)?;
                weights.push(Linear {
                    w,
                    b: l.bias.then(|| vec![0.0; l.out_dim]),
                });
            }
            blocks.push(Block {
                layers: arch.layers.clone(),
                weights,
            });
        }
        Ok(Self { spec, blocks })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut a = x.clone();
        for b in &self.blocks {
            a = block_forward_fp(b, &a)?;
        }
        Ok(a)
    }

    /// Writes `w_b{k}_l{j}.tns` (and `b_b{k}_l{j}.tns` for biases), 1-indexed.
    pub fn save_weights(&self, dir: &Path) -> Result<()> {
        for (k, b) in self.blocks.iter().enumerate() {
            for (j, lin) in b.weights.iter().enumerate() {
                tns::write(&dir.join(weight_file(k + 1, j + 1)), &lin.w)?;
                if let Some(bias) = &lin.b {
                    let t = Tensor::from_vec(bias.clone())?;
                    tns::write(&dir.join(bias_file(k + 1, j + 1)), &t)?;
                }
            }
        }
        Ok(())
    }

    pub fn load(spec: ModelSpec, dir: &Path) -> Result<Self> {
        spec.validate()?;
        let mut blocks = Vec::new();
        for (k, arch) in spec.blocks.iter().enumerate() {
            let mut weights = Vec::new();
            for (j, l) in arch.layers.iter().enumerate() {
                let w = tns::read(&dir.join(weight_file(k + 1, j + 1)))?;
                let b = if l.bias {
                    Some(tns::read(&dir.join(bias_file(k + 1, j + 1)))?.into_data())
                } else {
                    None
                };
                weights.push(Linear { w, b });
            }
            let block = Block {
                layers: arch.layers.clone(),
                weights,
            };
            block.check()?;
            blocks.push(block);
        }
        Ok(Self { spec, blocks })
    }
}

pub fn weight_file(block: usize, layer: usize) -> String {
    format!("w_b{block}_l{layer}.tns")
}

pub fn bias_file(block: usize, layer: usize) -> String {
    format!("b_b{block}_l{layer}.tns")
}
