//! Motion forecasting generator.
//!
//! A motion encoder and an image encoder map into a shared bottleneck space;
//! the decoder input is `f_M(M_target) − f_M(M_src) + f_I(I)`. The decoder is
//! a stack of dense blocks, one per resolution, each fed by the bottleneck,
//! every earlier block (nearest-upsampled to its resolution) and the image
//! encoder skip at that resolution. Two sibling heads produce the residual
//! mask (logistic) and content (tanh).

use std::path::Path;

use serde::{Deserialize, Serialize};
use tch::{nn, nn::Module, Kind, Tensor};

use super::{conv2d, fill_bias, init_params, lrelu};
use crate::checkpoint::{CheckpointFile, ModelMeta};
use crate::error::{shape_err, Error, Result};
use crate::residual::{compose_tensor, Frame, MotionMap, ResidualDecomposition};

pub const STAGE_TAG: &str = "gm";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmArch {
    pub height: i64,
    pub width: i64,
    pub channels: i64,
    pub joints: i64,
    /// Output width of each stride-2 encoder stage; the last is the bottleneck.
    pub encoder_widths: Vec<i64>,
    /// Output width of each dense block, lowest resolution first.
    pub decoder_widths: Vec<i64>,
    /// Route every block's output into all later blocks. When false each
    /// block only sees its predecessor (the no-dense ablation).
    pub dense: bool,
    /// Initial bias of the mask head's pre-activation.
    pub mask_bias: f64,
}

impl GmArch {
    /// Four downsampling stages and four dense blocks.
    pub fn new(height: i64, width: i64, joints: i64) -> Self {
        Self {
            height,
            width,
            channels: 3,
            joints,
            encoder_widths: vec![16, 32, 64, 64],
            decoder_widths: vec![64, 32, 16, 8],
            dense: true,
            mask_bias: 0.0,
        }
    }

    pub fn with_dense(mut self, dense: bool) -> Self {
        self.dense = dense;
        self
    }

    pub fn bottleneck_channels(&self) -> i64 {
        *self.encoder_widths.last().expect("validated non-empty")
    }

    /// Spatial size after each encoder stage (3×3, stride 2, padding 1).
    pub fn stage_sizes(&self) -> Vec<(i64, i64)> {
        let mut size = (self.height, self.width);
        self.encoder_widths
            .iter()
            .map(|_| {
                size = ((size.0 + 1) / 2, (size.1 + 1) / 2);
                size
            })
            .collect()
    }

    /// Resolution of each dense block: matching encoder stages, then full size.
    pub fn block_sizes(&self) -> Vec<(i64, i64)> {
        let stages = self.stage_sizes();
        let n = self.decoder_widths.len();
        (0..n)
            .map(|b| if b + 1 < n { stages[n - 2 - b] } else { (self.height, self.width) })
            .collect()
    }

    /// Encoder stage feeding block `b` as a skip connection, if any.
    pub fn skip_stage(&self, block: usize) -> Option<usize> {
        let n = self.decoder_widths.len();
        (block + 1 < n).then(|| n - 2 - block)
    }

    /// Channels of each dense source entering block `b`, in concatenation order.
    pub fn source_channels(&self, block: usize) -> Vec<i64> {
        if self.dense {
            std::iter::once(self.bottleneck_channels()).chain(self.decoder_widths[..block].iter().copied()).collect()
        } else if block == 0 {
            vec![self.bottleneck_channels()]
        } else {
            vec![self.decoder_widths[block - 1]]
        }
    }

    pub fn block_in_channels(&self, block: usize) -> i64 {
        let skip = self.skip_stage(block).map_or(0, |s| self.encoder_widths[s]);
        self.source_channels(block).iter().sum::<i64>() + skip
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.encoder_widths.len();
        if n < 2 || self.decoder_widths.len() != n {
            return Err(Error::Argument(format!(
                "need matching encoder/decoder depths of at least 2, got {} and {}",
                n,
                self.decoder_widths.len()
            )));
        }
        if self.height < 8 || self.width < 8 || self.channels < 1 || self.joints < 1 {
            return Err(Error::Argument(format!("invalid generator dimensions {self:?}")));
        }
        if self.encoder_widths.iter().chain(&self.decoder_widths).any(|&w| w < 1) {
            return Err(Error::Argument("layer widths must be positive".into()));
        }
        Ok(())
    }
}

/// Stride-2 convolution stack; the final stage is linear.
#[derive(Debug)]
struct Encoder {
    stages: Vec<nn::Conv2D>,
}

impl Encoder {
    fn new(p: &nn::Path, c_in: i64, widths: &[i64]) -> Self {
        let mut c = c_in;
        let stages = widths
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let conv = conv2d(p / format!("stage{i}"), c, w, 3, 2, 1);
                c = w;
                conv
            })
            .collect();
        Self { stages }
    }

    /// Returns the activated intermediate stages and the linear bottleneck.
    fn forward(&self, x: &Tensor) -> (Vec<Tensor>, Tensor) {
        let mut skips = Vec::with_capacity(self.stages.len() - 1);
        let mut h = x.shallow_clone();
        let last = self.stages.len() - 1;
        for (i, stage) in self.stages.iter().enumerate() {
            h = stage.forward(&h);
            if i < last {
                h = lrelu(&h);
                skips.push(h.shallow_clone());
            }
        }
        (skips, h)
    }
}

/// Bottleneck features of a motion map, `[B, D, h, w]`.
#[derive(Debug)]
pub struct MotionEmbedding(pub Tensor);

/// Image bottleneck plus the intermediate stage outputs used as skips,
/// ordered from highest to lowest resolution.
#[derive(Debug)]
pub struct ImageEmbedding {
    pub bottleneck: Tensor,
    pub skips: Vec<Tensor>,
}

#[derive(Debug)]
struct DenseBlock {
    conv1: nn::Conv2D,
    conv2: nn::Conv2D,
}

/// What one dense block consumed during a traced forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockTrace {
    pub resolution: (i64, i64),
    /// Dense sources in concatenation order: `(label, channels, size before resize)`.
    pub sources: Vec<(String, i64, (i64, i64))>,
    pub skip: Option<(i64, (i64, i64))>,
    /// Channels of the concatenated input.
    pub input_channels: i64,
    /// Input channels declared by the block's first convolution weight.
    pub conv_in_channels: i64,
}

#[derive(Debug)]
pub struct DenseDecoder {
    arch: GmArch,
    blocks: Vec<DenseBlock>,
    mask_head: nn::Conv2D,
    content_head: nn::Conv2D,
}

fn spatial(t: &Tensor) -> (i64, i64) {
    let s = t.size();
    (s[s.len() - 2], s[s.len() - 1])
}

fn resize(t: &Tensor, size: (i64, i64)) -> Tensor {
    if spatial(t) == size {
        t.shallow_clone()
    } else {
        t.upsample_nearest2d([size.0, size.1], None, None)
    }
}

impl DenseDecoder {
    fn new(p: &nn::Path, arch: &GmArch) -> Self {
        let blocks = arch
            .decoder_widths
            .iter()
            .enumerate()
            .map(|(b, &w)| DenseBlock {
                conv1: conv2d(p / format!("block{b}") / "conv1", arch.block_in_channels(b), w, 3, 1, 1),
                conv2: conv2d(p / format!("block{b}") / "conv2", w, w, 3, 1, 1),
            })
            .collect();
        let last = *arch.decoder_widths.last().expect("validated");
        Self {
            arch: arch.clone(),
            blocks,
            mask_head: conv2d(p / "mask_head", last, 1, 3, 1, 1),
            content_head: conv2d(p / "content_head", last, arch.channels, 3, 1, 1),
        }
    }

    /// Decodes to `(mask [B,1,H,W], content [B,C,H,W])`, recording block inputs.
    pub fn forward_traced(&self, embedding: &Tensor, skips: &[Tensor]) -> Result<((Tensor, Tensor), Vec<BlockTrace>)> {
        let arch = &self.arch;
        let expected = arch.stage_sizes();
        let n = self.blocks.len();
        if skips.len() != n - 1 {
            return Err(shape_err!("decoder expects {} skips, got {}", n - 1, skips.len()));
        }
        let d = arch.bottleneck_channels();
        if embedding.dim() != 4 || embedding.size()[1] != d || spatial(embedding) != expected[n - 1] {
            return Err(shape_err!("decoder embedding has shape {:?}, expected [B, {d}, {:?}]", embedding.size(), expected[n - 1]));
        }
        for (i, s) in skips.iter().enumerate() {
            if s.dim() != 4 || s.size()[1] != arch.encoder_widths[i] || spatial(s) != expected[i] {
                return Err(shape_err!("skip {i} has shape {:?}", s.size()));
            }
        }

        let sizes = arch.block_sizes();
        let mut outputs: Vec<Tensor> = Vec::with_capacity(n);
        let mut traces = Vec::with_capacity(n);
        for (b, block) in self.blocks.iter().enumerate() {
            let size = sizes[b];
            let mut sources: Vec<(String, &Tensor)> = Vec::new();
            if arch.dense || b == 0 {
                sources.push(("bottleneck".into(), embedding));
            }
            if arch.dense {
                sources.extend(outputs.iter().enumerate().map(|(i, o)| (format!("block{i}"), o)));
            } else if b > 0 {
                sources.push((format!("block{}", b - 1), &outputs[b - 1]));
            }
            let mut inputs: Vec<Tensor> = sources.iter().map(|(_, t)| resize(t, size)).collect();
            let skip = arch.skip_stage(b).map(|s| &skips[s]);
            if let Some(s) = skip {
                inputs.push(s.shallow_clone());
            }
            let x = Tensor::cat(&inputs, 1);
            traces.push(BlockTrace {
                resolution: size,
                sources: sources.iter().map(|(l, t)| (l.clone(), t.size()[1], spatial(t))).collect(),
                skip: skip.map(|s| (s.size()[1], spatial(s))),
                input_channels: x.size()[1],
                conv_in_channels: block.conv1.ws.size()[1],
            });
            let h = lrelu(&block.conv1.forward(&x));
            outputs.push(lrelu(&block.conv2.forward(&h)));
        }
        let last = outputs.last().expect("at least one block");
        let mask = self.mask_head.forward(last).sigmoid();
        let content = self.content_head.forward(last).tanh();
        Ok(((mask, content), traces))
    }

    pub fn forward(&self, embedding: &Tensor, skips: &[Tensor]) -> Result<(Tensor, Tensor)> {
        self.forward_traced(embedding, skips).map(|(out, _)| out)
    }
}

/// Returns `e_dst − e_src + e_img`.
pub fn analogy_embed(e_src: &MotionEmbedding, e_dst: &MotionEmbedding, e_img: &ImageEmbedding) -> Result<Tensor> {
    let (a, b, c) = (e_src.0.size(), e_dst.0.size(), e_img.bottleneck.size());
    if a != b || a != c {
        return Err(shape_err!("analogy operands differ in shape: {a:?}, {b:?}, {c:?}"));
    }
    Ok((&e_dst.0 - &e_src.0) + &e_img.bottleneck)
}

/// Batched generator output.
#[derive(Debug)]
pub struct GmOutput {
    pub frame: Tensor,
    pub mask: Tensor,
    pub content: Tensor,
    /// Decoder input (the analogy embedding).
    pub analogy: Tensor,
    pub image_bottleneck: Tensor,
}

#[derive(Debug)]
pub struct ForecastNet {
    arch: GmArch,
    motion: Encoder,
    image: Encoder,
    decoder: DenseDecoder,
}

impl ForecastNet {
    pub fn new(p: &nn::Path, arch: &GmArch) -> Result<Self> {
        arch.validate()?;
        Ok(Self {
            arch: arch.clone(),
            motion: Encoder::new(&(p / "f_m"), arch.joints, &arch.encoder_widths),
            image: Encoder::new(&(p / "f_i"), arch.channels, &arch.encoder_widths),
            decoder: DenseDecoder::new(&(p / "f_d"), arch),
        })
    }

    fn check_input(&self, t: &Tensor, channels: i64, what: &str) -> Result<()> {
        let s = t.size();
        if s.len() != 4 || s[1] != channels || s[2] != self.arch.height || s[3] != self.arch.width {
            return Err(shape_err!(
                "{what} has shape {s:?}, expected [B, {channels}, {}, {}]",
                self.arch.height,
                self.arch.width
            ));
        }
        Ok(())
    }

    pub fn encode_motion(&self, maps: &Tensor) -> Result<MotionEmbedding> {
        self.check_input(maps, self.arch.joints, "motion map")?;
        Ok(MotionEmbedding(self.motion.forward(maps).1))
    }

    pub fn encode_image(&self, frames: &Tensor) -> Result<ImageEmbedding> {
        self.check_input(frames, self.arch.channels, "frame")?;
        let (skips, bottleneck) = self.image.forward(frames);
        Ok(ImageEmbedding { bottleneck, skips })
    }

    pub fn decoder(&self) -> &DenseDecoder {
        &self.decoder
    }

    /// `frames [B,C,H,W]`, `src`/`dst` maps `[B,J,H,W]`.
    pub fn forward(&self, frames: &Tensor, src: &Tensor, dst: &Tensor) -> Result<GmOutput> {
        // Source and target maps go through the encoder separately so equal
        // inputs produce bit-identical embeddings.
        let e_src = self.encode_motion(src)?;
        let e_dst = self.encode_motion(dst)?;
        let e_img = self.encode_image(frames)?;
        let analogy = analogy_embed(&e_src, &e_dst, &e_img)?;
        let (mask, content) = self.decoder.forward(&analogy, &e_img.skips)?;
        Ok(GmOutput {
            frame: compose_tensor(frames, &mask, &content),
            mask,
            content,
            analogy,
            image_bottleneck: e_img.bottleneck,
        })
    }
}

/// A generator with its parameters, architecture and provenance.
pub struct GmCheckpoint {
    vs: nn::VarStore,
    net: ForecastNet,
    arch: GmArch,
    pub meta: ModelMeta,
}

impl std::fmt::Debug for GmCheckpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GmCheckpoint").field("arch", &self.arch).field("meta", &self.meta).finish()
    }
}

fn frame_batch(frame: &Frame, kind: Kind) -> Tensor {
    frame.to_tensor().unsqueeze(0).to_kind(kind)
}

fn map_batch(map: &MotionMap, kind: Kind) -> Tensor {
    map.to_tensor().unsqueeze(0).to_kind(kind)
}

impl GmCheckpoint {
    pub fn new(arch: GmArch, seed: u64) -> Result<Self> {
        let vs = nn::VarStore::new(tch::Device::Cpu);
        let mut net = ForecastNet::new(&vs.root(), &arch)?;
        init_params(&vs, seed);
        fill_bias(&mut net.decoder.mask_head, arch.mask_bias);
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

    pub fn arch(&self) -> &GmArch {
        &self.arch
    }

    pub fn net(&self) -> &ForecastNet {
        &self.net
    }

    pub fn var_store(&self) -> &nn::VarStore {
        &self.vs
    }

    pub fn var_store_mut(&mut self) -> &mut nn::VarStore {
        &mut self.vs
    }

    fn kind(&self) -> Kind {
        super::float_kind(&self.vs)
    }

    /// Switches all parameters to `f64` (used by gradient checks).
    pub fn to_double(&mut self) {
        self.vs.double();
    }

    pub fn forward(&self, frames: &Tensor, src: &Tensor, dst: &Tensor) -> Result<GmOutput> {
        self.net.forward(frames, src, dst)
    }

    pub fn encode_motion(&self, map: &MotionMap) -> Result<MotionEmbedding> {
        tch::no_grad(|| self.net.encode_motion(&map_batch(map, self.kind())))
    }

    pub fn encode_image(&self, frame: &Frame) -> Result<ImageEmbedding> {
        tch::no_grad(|| self.net.encode_image(&frame_batch(frame, self.kind())))
    }

    pub fn decode_residual(&self, embedding: &Tensor, skips: &[Tensor]) -> Result<ResidualDecomposition> {
        let (mask, content) = tch::no_grad(|| self.net.decoder.forward(embedding, skips))?;
        if mask.size()[0] != 1 {
            return Err(shape_err!("decode_residual expects a single embedding"));
        }
        ResidualDecomposition::from_tensors(&mask.get(0), &content.get(0))
    }

    /// Generates `I_target` from `frame` and the two motion maps.
    pub fn forecast_frame(
        &self,
        frame: &Frame,
        map_now: &MotionMap,
        map_target: &MotionMap,
    ) -> Result<(Frame, ResidualDecomposition)> {
        let kind = self.kind();
        let out = tch::no_grad(|| {
            self.net.forward(&frame_batch(frame, kind), &map_batch(map_now, kind), &map_batch(map_target, kind))
        })?;
        let dec = ResidualDecomposition::from_tensors(&out.mask.get(0), &out.content.get(0))?;
        Ok((Frame::from_tensor(&out.frame.get(0))?, dec))
    }

    pub fn to_file(&self) -> Result<CheckpointFile> {
        CheckpointFile::from_var_store(STAGE_TAG, &self.arch, &self.meta, &self.vs)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_file()?.write(path)
    }

    pub fn from_file(file: &CheckpointFile) -> Result<Self> {
        file.expect_stage(STAGE_TAG)?;
        let arch: GmArch = file.descriptor()?;
        let mut ck = Self::new(arch, 0)?;
        file.load_into(&ck.vs)?;
        ck.meta = file.meta()?;
        Ok(ck)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_file(&CheckpointFile::read(path)?)
    }
}
