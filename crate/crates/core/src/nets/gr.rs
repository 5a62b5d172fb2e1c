//! Spatiotemporal refinement generator.
//!
//! Input is the coarse clip channel-concatenated with its motion maps,
//! `[B, C+J, K, H, W]`. Two strided 3D convolutions halve time and space,
//! a bottleneck convolution follows, and two fractionally strided 3D
//! convolutions restore the input size. Encoder features (and the input
//! itself) are concatenated back in as skips. No pooling anywhere.

use std::path::Path;

use serde::{Deserialize, Serialize};
use tch::{nn, nn::Module, Kind, Tensor};

use super::{conv3d, conv_t3d, fill_bias, init_params, lrelu};
use crate::checkpoint::{CheckpointFile, ModelMeta};
use crate::error::{arg_err, shape_err, Error, Result};
use crate::residual::{compose_tensor, MotionMapSequence, SpatiotemporalResidual, VideoClip};

pub const STAGE_TAG: &str = "gr";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrArch {
    pub height: i64,
    pub width: i64,
    pub channels: i64,
    pub joints: i64,
    pub clip_len: i64,
    /// Widths of the two strided encoder stages.
    pub widths: [i64; 2],
    pub mask_bias: f64,
}

impl GrArch {
    pub fn new(height: i64, width: i64, joints: i64, clip_len: i64) -> Self {
        Self {
            height,
            width,
            channels: 3,
            joints,
            clip_len,
            widths: [16, 32],
            mask_bias: -3.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (what, v) in [("clip length", self.clip_len), ("height", self.height), ("width", self.width)] {
            if v < 4 || v % 4 != 0 {
                return Err(Error::Argument(format!("refiner {what} must be a positive multiple of 4, got {v}")));
            }
        }
        if self.widths.iter().any(|&w| w < 1) || self.channels < 1 || self.joints < 1 {
            return Err(Error::Argument(format!("invalid refiner architecture {self:?}")));
        }
        Ok(())
    }

    fn in_channels(&self) -> i64 {
        self.channels + self.joints
    }
}

#[derive(Debug)]
pub struct RefineNet {
    arch: GrArch,
    enc1: nn::Conv3D,
    enc2: nn::Conv3D,
    mid: nn::Conv3D,
    dec1: nn::ConvTranspose3D,
    dec2: nn::ConvTranspose3D,
    mask_head: nn::Conv3D,
    content_head: nn::Conv3D,
}

/// Batched refiner output, all `[B, ·, K, H, W]`.
#[derive(Debug)]
pub struct GrOutput {
    pub clip: Tensor,
    pub mask: Tensor,
    pub content: Tensor,
}

impl RefineNet {
    pub fn new(p: &nn::Path, arch: &GrArch) -> Result<Self> {
        arch.validate()?;
        let c0 = arch.in_channels();
        let [w1, w2] = arch.widths;
        Ok(Self {
            arch: arch.clone(),
            enc1: conv3d(p / "enc1", c0, w1, 4, 2, 1),
            enc2: conv3d(p / "enc2", w1, w2, 4, 2, 1),
            mid: conv3d(p / "mid", w2, w2, 3, 1, 1),
            dec1: conv_t3d(p / "dec1", w2, w1, 4, 2, 1),
            dec2: conv_t3d(p / "dec2", 2 * w1, w1, 4, 2, 1),
            mask_head: conv3d(p / "mask_head", w1 + c0, 1, 3, 1, 1),
            content_head: conv3d(p / "content_head", w1 + c0, arch.channels, 3, 1, 1),
        })
    }

    /// `coarse [B,C,K,H,W]`, `conds [B,J,K,H,W]`.
    pub fn forward(&self, coarse: &Tensor, conds: &Tensor) -> Result<GrOutput> {
        let a = &self.arch;
        let check = |t: &Tensor, c: i64, what: &str| -> Result<()> {
            let s = t.size();
            if s.len() != 5 || s[1] != c || s[3] != a.height || s[4] != a.width {
                return Err(shape_err!("{what} has shape {s:?}, expected [B, {c}, K, {}, {}]", a.height, a.width));
            }
            if s[2] != a.clip_len {
                return Err(arg_err!("{what} has {} timesteps, refiner expects {}", s[2], a.clip_len));
            }
            Ok(())
        };
        check(coarse, a.channels, "coarse clip")?;
        check(conds, a.joints, "condition maps")?;
        if coarse.size()[0] != conds.size()[0] {
            return Err(shape_err!("batch sizes differ"));
        }
        let x0 = Tensor::cat(&[coarse, conds], 1);
        let e1 = lrelu(&self.enc1.forward(&x0));
        let e2 = lrelu(&self.enc2.forward(&e1));
        let m = lrelu(&self.mid.forward(&e2));
        let d1 = lrelu(&self.dec1.forward(&m));
        let d2 = lrelu(&self.dec2.forward(&Tensor::cat(&[&d1, &e1], 1)));
        let feat = Tensor::cat(&[&d2, &x0], 1);
        let mask = self.mask_head.forward(&feat).sigmoid();
        let content = self.content_head.forward(&feat).tanh();
        Ok(GrOutput {
            clip: compose_tensor(coarse, &mask, &content),
            mask,
            content,
        })
    }
}

pub struct GrCheckpoint {
    vs: nn::VarStore,
    net: RefineNet,
    arch: GrArch,
    pub meta: ModelMeta,
}

impl std::fmt::Debug for GrCheckpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GrCheckpoint").field("arch", &self.arch).field("meta", &self.meta).finish()
    }
}

impl GrCheckpoint {
    pub fn new(arch: GrArch, seed: u64) -> Result<Self> {
        let vs = nn::VarStore::new(tch::Device::Cpu);
        let mut net = RefineNet::new(&vs.root(), &arch)?;
        init_params(&vs, seed);
        fill_bias(&mut net.mask_head, arch.mask_bias);
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

    pub fn arch(&self) -> &GrArch {
        &self.arch
    }

    pub fn clip_len(&self) -> usize {
        self.arch.clip_len as usize
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

    pub fn forward(&self, coarse: &Tensor, conds: &Tensor) -> Result<GrOutput> {
        self.net.forward(coarse, conds)
    }

    /// Refines one clip of exactly `clip_len` frames.
    pub fn refine_clip(&self, coarse: &VideoClip, conds: &MotionMapSequence) -> Result<(VideoClip, SpatiotemporalResidual)> {
        if coarse.len() != self.clip_len() || conds.len() != self.clip_len() {
            return Err(arg_err!(
                "refiner expects {} frames and maps, got {} and {}",
                self.clip_len(),
                coarse.len(),
                conds.len()
            ));
        }
        let kind = super::float_kind(&self.vs);
        let out = tch::no_grad(|| {
            self.net.forward(
                &coarse.to_tensor().unsqueeze(0).to_kind(kind),
                &conds.to_tensor().unsqueeze(0).to_kind(kind),
            )
        })?;
        let dec = SpatiotemporalResidual::from_tensors(&out.mask.get(0), &out.content.get(0))?;
        Ok((VideoClip::from_tensor(&out.clip.get(0).to_kind(Kind::Float))?, dec))
    }

    pub fn to_file(&self) -> Result<CheckpointFile> {
        CheckpointFile::from_var_store(STAGE_TAG, &self.arch, &self.meta, &self.vs)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_file()?.write(path)
    }

    pub fn from_file(file: &CheckpointFile) -> Result<Self> {
        file.expect_stage(STAGE_TAG)?;
        let arch: GrArch = file.descriptor()?;
        let mut ck = Self::new(arch, 0)?;
        file.load_into(&ck.vs)?;
        ck.meta = file.meta()?;
        Ok(ck)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_file(&CheckpointFile::read(path)?)
    }
}
