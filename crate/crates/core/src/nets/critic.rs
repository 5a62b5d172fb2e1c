//! Conditional Wasserstein critics.
//!
//! A critic scores the channel concatenation of media and its motion
//! condition with one unbounded scalar per sample. Strided convolutions are
//! followed by global average pooling and a linear head, so any input size
//! is accepted.

use std::path::Path;

use serde::{Deserialize, Serialize};
use tch::{nn, nn::Module, Kind, Tensor};

use super::{conv2d, conv3d, init_params, lrelu};
use crate::checkpoint::{CheckpointFile, ModelMeta};
use crate::error::{Error, Result};

/// Anything that maps a concatenated `[B, C+J, ...]` input to `[B]` scores.
pub trait Critic {
    fn score(&self, input: &Tensor) -> Tensor;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriticKind {
    /// 2D critic over single frames.
    Image,
    /// 3D critic over clips.
    Video,
}

impl CriticKind {
    pub fn tag(self) -> &'static str {
        match self {
            CriticKind::Image => "d_i",
            CriticKind::Video => "d_v",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticArch {
    pub kind: CriticKind,
    /// Media channels plus condition channels.
    pub in_channels: i64,
    pub widths: Vec<i64>,
}

impl CriticArch {
    /// Four strided 2D stages.
    pub fn image(channels: i64, joints: i64) -> Self {
        Self {
            kind: CriticKind::Image,
            in_channels: channels + joints,
            widths: vec![16, 32, 64, 64],
        }
    }

    /// Three strided spatiotemporal stages.
    pub fn video(channels: i64, joints: i64) -> Self {
        Self {
            kind: CriticKind::Video,
            in_channels: channels + joints,
            widths: vec![16, 32, 64],
        }
    }
}

enum Stages {
    Image(Vec<nn::Conv2D>),
    Video(Vec<nn::Conv3D>),
}

pub struct ConvCritic {
    stages: Stages,
    head: nn::Linear,
}

impl ConvCritic {
    pub fn new(p: &nn::Path, arch: &CriticArch) -> Result<Self> {
        if arch.widths.is_empty() || arch.widths.iter().any(|&w| w < 1) || arch.in_channels < 1 {
            return Err(Error::Argument(format!("invalid critic architecture {arch:?}")));
        }
        let mut c = arch.in_channels;
        let mut chans = Vec::new();
        for &w in &arch.widths {
            chans.push((c, w));
            c = w;
        }
        let stages = match arch.kind {
            CriticKind::Image => Stages::Image(
                chans.iter().enumerate().map(|(i, &(a, b))| conv2d(p / format!("stage{i}"), a, b, 3, 2, 1)).collect(),
            ),
            CriticKind::Video => Stages::Video(
                chans.iter().enumerate().map(|(i, &(a, b))| conv3d(p / format!("stage{i}"), a, b, 3, 2, 1)).collect(),
            ),
        };
        Ok(Self {
            stages,
            head: nn::linear(p / "head", c, 1, Default::default()),
        })
    }
}

impl Critic for ConvCritic {
    fn score(&self, input: &Tensor) -> Tensor {
        let mut h = input.shallow_clone();
        let pooled = match &self.stages {
            Stages::Image(s) => {
                for conv in s {
                    h = lrelu(&conv.forward(&h));
                }
                h.mean_dim([2, 3].as_slice(), false, h.kind())
            }
            Stages::Video(s) => {
                for conv in s {
                    h = lrelu(&conv.forward(&h));
                }
                h.mean_dim([2, 3, 4].as_slice(), false, h.kind())
            }
        };
        self.head.forward(&pooled).squeeze_dim(1)
    }
}

pub struct CriticCheckpoint {
    vs: nn::VarStore,
    net: ConvCritic,
    arch: CriticArch,
    pub meta: ModelMeta,
}

impl std::fmt::Debug for CriticCheckpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CriticCheckpoint").field("arch", &self.arch).field("meta", &self.meta).finish()
    }
}

impl CriticCheckpoint {
    pub fn new(arch: CriticArch, seed: u64) -> Result<Self> {
        let vs = nn::VarStore::new(tch::Device::Cpu);
        let net = ConvCritic::new(&vs.root(), &arch)?;
        init_params(&vs, seed);
        Ok(Self {
            vs,
            net,
            arch,
            meta: ModelMeta {
                seed,
                ..Default::default()
            },
        })
    }

    pub fn arch(&self) -> &CriticArch {
        &self.arch
    }

    pub fn kind(&self) -> CriticKind {
        self.arch.kind
    }

    pub fn var_store(&self) -> &nn::VarStore {
        &self.vs
    }

    pub fn var_store_mut(&mut self) -> &mut nn::VarStore {
        &mut self.vs
    }

    pub fn to_double(&mut self) {
        self.vs.double();
    }

    pub fn float_kind(&self) -> Kind {
        super::float_kind(&self.vs)
    }

    pub fn to_file(&self) -> Result<CheckpointFile> {
        CheckpointFile::from_var_store(self.arch.kind.tag(), &self.arch, &self.meta, &self.vs)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_file()?.write(path)
    }

    pub fn from_file(file: &CheckpointFile) -> Result<Self> {
        let arch: CriticArch = file.descriptor()?;
        file.expect_stage(arch.kind.tag())?;
        let mut ck = Self::new(arch, 0)?;
        file.load_into(&ck.vs)?;
        ck.meta = file.meta()?;
        Ok(ck)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_file(&CheckpointFile::read(path)?)
    }
}

impl Critic for CriticCheckpoint {
    fn score(&self, input: &Tensor) -> Tensor {
        self.net.score(input)
    }
}

/// Analytic critic `D(x) = scale · Σx` per sample.
#[derive(Debug, Clone, Copy)]
pub struct LinearStubCritic {
    pub scale: f64,
}

impl LinearStubCritic {
    pub fn sum() -> Self {
        Self { scale: 1.0 }
    }

    /// Input-gradient norm of exactly one for inputs of `numel` elements.
    pub fn unit_gradient(numel: i64) -> Self {
        Self {
            scale: 1.0 / (numel as f64).sqrt(),
        }
    }
}

impl Critic for LinearStubCritic {
    fn score(&self, input: &Tensor) -> Tensor {
        input.flatten(1, -1).sum_dim_intlist([1].as_slice(), false, input.kind()) * self.scale
    }
}

/// Critic returning a fixed score for every sample; its input gradient is zero.
#[derive(Debug, Clone, Copy)]
pub struct ConstantStubCritic {
    pub value: f64,
}

impl Critic for ConstantStubCritic {
    fn score(&self, input: &Tensor) -> Tensor {
        // Multiply by zero so the score stays attached to the input graph.
        input.flatten(1, -1).sum_dim_intlist([1].as_slice(), false, input.kind()) * 0.0 + self.value
    }
}
