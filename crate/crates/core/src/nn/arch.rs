//! The concrete model families: the two baselines and the residual /
//! inception backbones with the pooled concatenation head.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{GraphBuilder, Init, Network, NodeId};
use crate::tensor::{Padding, PoolMode};

/// Patch geometry: RGB, 96×96.
pub const IMAGE_SHAPE: [usize; 3] = [3, 96, 96];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    MlpBaseline,
    ConvBaseline,
    MiniResnet,
    MiniInception,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [
        Architecture::MlpBaseline,
        Architecture::ConvBaseline,
        Architecture::MiniResnet,
        Architecture::MiniInception,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Architecture::MlpBaseline => "mlp_baseline",
            Architecture::ConvBaseline => "conv_baseline",
            Architecture::MiniResnet => "mini_resnet",
            Architecture::MiniInception => "mini_inception",
        }
    }

    /// Row label used in reports.
    pub fn display_name(self) -> &'static str {
        match self {
            Architecture::MlpBaseline => "Baseline MLP",
            Architecture::ConvBaseline => "Baseline Convolution",
            Architecture::MiniResnet => "Mini ResNet",
            Architecture::MiniInception => "Mini Inception",
        }
    }

    /// Adam learning rate of the reference training recipe.
    pub fn default_learning_rate(self) -> f64 {
        match self {
            Architecture::MlpBaseline => 0.0005,
            Architecture::ConvBaseline => 0.001,
            Architecture::MiniResnet | Architecture::MiniInception => 0.00003,
        }
    }

    /// Build with the default configuration for the given input geometry.
    pub fn build(self, input_shape: [usize; 3], seed: u64) -> Result<Network> {
        match self {
            Architecture::MlpBaseline => build_mlp(input_shape, 768, seed),
            Architecture::ConvBaseline => build_conv(input_shape, 32, seed),
            Architecture::MiniResnet => build_backbone_with_head(
                BackboneKind::Residual,
                &BackboneConfig {
                    input_shape,
                    ..BackboneConfig::default()
                },
                seed,
            ),
            Architecture::MiniInception => build_backbone_with_head(
                BackboneKind::Inception,
                &BackboneConfig {
                    input_shape,
                    ..BackboneConfig::default()
                },
                seed,
            ),
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| {
                Error::param(format!(
                    "unknown architecture {s:?} (expected one of mlp_baseline, conv_baseline, mini_resnet, mini_inception)"
                ))
            })
    }
}

/// Default-configuration network on 3×96×96 patches.
pub fn build(arch: Architecture, seed: u64) -> Result<Network> {
    arch.build(IMAGE_SHAPE, seed)
}

/// flatten → dense(hidden) → relu → dense(1) → sigmoid.
pub fn build_mlp(input_shape: [usize; 3], hidden: usize, seed: u64) -> Result<Network> {
    let mut b = GraphBuilder::new(Architecture::MlpBaseline.as_str(), input_shape, seed);
    let x = b.flatten("flatten", b.input())?;
    let x = b.dense("hidden", x, hidden, Init::He)?;
    let features = b.relu("hidden_relu", x)?;
    b.binary_head("out_", features, 0.0)?;
    b.finish(features)
}

pub fn build_mlp_baseline(seed: u64) -> Result<Network> {
    build_mlp(IMAGE_SHAPE, 768, seed)
}

/// conv(filters, 3×3, valid) → relu → maxpool(2×2) → flatten → dense(1) → sigmoid.
pub fn build_conv(input_shape: [usize; 3], filters: usize, seed: u64) -> Result<Network> {
    let mut b = GraphBuilder::new(Architecture::ConvBaseline.as_str(), input_shape, seed);
    let x = b.conv("conv", b.input(), filters, 3, Padding::Valid)?;
    let x = b.relu("conv_relu", x)?;
    let x = b.maxpool("pool", x, 2, 2, Padding::Valid)?;
    let features = b.flatten("flatten", x)?;
    b.binary_head("out_", features, 0.0)?;
    b.finish(features)
}

pub fn build_conv_baseline(seed: u64) -> Result<Network> {
    build_conv(IMAGE_SHAPE, 32, seed)
}

/// conv(3×3, same) → relu → conv(3×3, same) → + input → relu.
pub fn residual_block(b: &mut GraphBuilder, prefix: &str, input: NodeId, channels: usize) -> Result<NodeId> {
    let have = b.channels(input);
    if have != channels {
        return Err(Error::dim(format!(
            "{prefix}: residual block over {channels} channels got a {have}-channel input"
        )));
    }
    let x = b.conv(format!("{prefix}.conv1"), input, channels, 3, Padding::Same)?;
    let x = b.relu(format!("{prefix}.relu1"), x)?;
    let x = b.conv(format!("{prefix}.conv2"), x, channels, 3, Padding::Same)?;
    let x = b.add(format!("{prefix}.add"), &[x, input])?;
    b.relu(format!("{prefix}.relu2"), x)
}

/// One parallel path of an inception block; the value is its output channel count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// 1×1 convolution.
    Conv1x1(usize),
    /// 1×1 reduction then 3×3, both at the branch width.
    Conv3x3(usize),
    /// 1×1 reduction then 5×5, both at the branch width.
    Conv5x5(usize),
    /// 3×3 stride-1 max pool then 1×1 projection.
    PoolProj(usize),
}

impl Branch {
    pub fn channels(self) -> usize {
        match self {
            Branch::Conv1x1(c) | Branch::Conv3x3(c) | Branch::Conv5x5(c) | Branch::PoolProj(c) => c,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InceptionSpec {
    pub branches: Vec<Branch>,
}

impl InceptionSpec {
    /// The classic four-branch layout.
    pub fn new(c1: usize, c3: usize, c5: usize, pool: usize) -> Self {
        InceptionSpec {
            branches: vec![
                Branch::Conv1x1(c1),
                Branch::Conv3x3(c3),
                Branch::Conv5x5(c5),
                Branch::PoolProj(pool),
            ],
        }
    }

    /// Four branches splitting `channels` as evenly as possible.
    pub fn even(channels: usize) -> Result<Self> {
        if channels < 4 {
            return Err(Error::param(format!(
                "an inception stage needs at least 4 channels, got {channels}"
            )));
        }
        let q = channels / 4;
        Ok(InceptionSpec::new(channels - 3 * q, q, q, q))
    }

    pub fn out_channels(&self) -> usize {
        self.branches.iter().map(|b| b.channels()).sum()
    }
}

/// Parallel branches with same padding, channel-concatenated. Every conv is followed by relu.
pub fn inception_block(b: &mut GraphBuilder, prefix: &str, input: NodeId, spec: &InceptionSpec) -> Result<NodeId> {
    if spec.branches.is_empty() {
        return Err(Error::param(format!("{prefix}: inception block needs at least one branch")));
    }
    if let Some(bad) = spec.branches.iter().find(|br| br.channels() == 0) {
        return Err(Error::param(format!("{prefix}: branch {bad:?} has zero output channels")));
    }
    let mut outs = Vec::with_capacity(spec.branches.len());
    for (i, branch) in spec.branches.iter().enumerate() {
        let p = format!("{prefix}.b{i}");
        let conv_relu = |b: &mut GraphBuilder, name: &str, from: NodeId, c: usize, k: usize| -> Result<NodeId> {
            let x = b.conv(format!("{p}.{name}"), from, c, k, Padding::Same)?;
            b.relu(format!("{p}.{name}_relu"), x)
        };
        let out = match *branch {
            Branch::Conv1x1(c) => conv_relu(b, "1x1", input, c, 1)?,
            Branch::Conv3x3(c) => {
                let r = conv_relu(b, "reduce", input, c, 1)?;
                conv_relu(b, "3x3", r, c, 3)?
            }
            Branch::Conv5x5(c) => {
                let r = conv_relu(b, "reduce", input, c, 1)?;
                conv_relu(b, "5x5", r, c, 5)?
            }
            Branch::PoolProj(c) => {
                let pooled = b.maxpool(format!("{p}.pool"), input, 3, 1, Padding::Same)?;
                conv_relu(b, "proj", pooled, c, 1)?
            }
        };
        outs.push(out);
    }
    b.concat(format!("{prefix}.concat"), &outs)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    Residual,
    Inception,
}

impl BackboneKind {
    pub fn architecture(self) -> Architecture {
        match self {
            BackboneKind::Residual => Architecture::MiniResnet,
            BackboneKind::Inception => Architecture::MiniInception,
        }
    }
}

/// Stem conv, then per stage: blocks at the stage width followed by a 2×2 max pool.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub input_shape: [usize; 3],
    pub stem_channels: usize,
    pub stage_channels: Vec<usize>,
    pub blocks_per_stage: usize,
    pub dropout: f64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            input_shape: IMAGE_SHAPE,
            stem_channels: 16,
            stage_channels: vec![16, 32, 64],
            blocks_per_stage: 1,
            dropout: 0.2,
        }
    }
}

/// Backbone plus the head `concat[flatten(F), global_avg(F), global_max(F)] → dropout → dense(1) → sigmoid`.
pub fn build_backbone_with_head(kind: BackboneKind, cfg: &BackboneConfig, seed: u64) -> Result<Network> {
    if cfg.blocks_per_stage == 0 {
        return Err(Error::param("blocks_per_stage must be at least 1"));
    }
    let mut b = GraphBuilder::new(kind.architecture().as_str(), cfg.input_shape, seed);
    let x = b.conv("stem.conv", b.input(), cfg.stem_channels, 3, Padding::Same)?;
    let mut x = b.relu("stem.relu", x)?;
    for (s, &channels) in cfg.stage_channels.iter().enumerate() {
        let stage = format!("stage{}", s + 1);
        match kind {
            BackboneKind::Residual => {
                if b.channels(x) != channels {
                    let p = b.conv(format!("{stage}.proj"), x, channels, 1, Padding::Same)?;
                    x = b.relu(format!("{stage}.proj_relu"), p)?;
                }
                for k in 0..cfg.blocks_per_stage {
                    x = residual_block(&mut b, &format!("{stage}.block{}", k + 1), x, channels)?;
                }
            }
            BackboneKind::Inception => {
                let spec = InceptionSpec::even(channels)?;
                for k in 0..cfg.blocks_per_stage {
                    x = inception_block(&mut b, &format!("{stage}.block{}", k + 1), x, &spec)?;
                }
            }
        }
        let [_, _, h, w] = b.shape(x)[..] else { unreachable!("feature maps are rank 4") };
        if h < 2 || w < 2 {
            return Err(Error::param(format!(
                "{stage}: a {h}x{w} feature map cannot be pooled further; use fewer stages or a larger input"
            )));
        }
        x = b.maxpool(format!("{stage}.pool"), x, 2, 2, Padding::Valid)?;
    }
    let flat = b.flatten("head.flatten", x)?;
    let avg = b.global_pool("head.global_avg", x, PoolMode::Avg)?;
    let max = b.global_pool("head.global_max", x, PoolMode::Max)?;
    let features = b.concat("head.concat", &[flat, avg, max])?;
    b.binary_head("head.", features, cfg.dropout)?;
    b.finish(features)
}
