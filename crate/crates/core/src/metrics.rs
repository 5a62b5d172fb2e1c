//! Pixel and embedding metrics, all on the `[0, 1]` pixel scale.

use tch::{Kind, Tensor};

use crate::error::{shape_err, Result};
use crate::features::RandomConvStack;
use crate::residual::{Frame, VideoClip};

/// PSNR reported for (near-)identical inputs.
pub const PSNR_CAP_DB: f64 = 100.0;
const PSNR_CAP_MSE: f64 = 1e-10;

/// A frame or a clip, viewed as a list of frames.
pub trait Media {
    fn frame_slice(&self) -> &[Frame];
}

impl Media for Frame {
    fn frame_slice(&self) -> &[Frame] {
        std::slice::from_ref(self)
    }
}

impl Media for VideoClip {
    fn frame_slice(&self) -> &[Frame] {
        self.frames()
    }
}

/// Mean squared difference after rescaling pixels from `[-1, 1]` to `[0, 1]`.
pub fn mse<M: Media + ?Sized>(a: &M, b: &M) -> Result<f64> {
    let (fa, fb) = (a.frame_slice(), b.frame_slice());
    if fa.len() != fb.len() {
        return Err(shape_err!("{} frames versus {}", fa.len(), fb.len()));
    }
    let mut sum = 0.0f64;
    let mut n = 0usize;
    for (x, y) in fa.iter().zip(fb) {
        if x.dims() != y.dims() {
            return Err(shape_err!("frame dims {:?} versus {:?}", x.dims(), y.dims()));
        }
        for (p, q) in x.pixels().iter().zip(y.pixels()) {
            let d = (*p as f64 - *q as f64) / 2.0;
            sum += d * d;
        }
        n += x.pixels().len();
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

/// `10·log10(1 / mse)`, capped at [`PSNR_CAP_DB`].
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse < PSNR_CAP_MSE {
        PSNR_CAP_DB
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
    }
}

pub fn psnr(a: &Frame, b: &Frame) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

/// Deterministic frame → vector map used by the content distances.
pub trait FrameEmbedder {
    fn tag(&self) -> String;
    fn dim(&self) -> usize;
    /// One embedding per frame, in order.
    fn embed_frames(&self, frames: &[Frame]) -> Vec<Vec<f64>>;

    fn embed(&self, frame: &Frame) -> Vec<f64> {
        self.embed_frames(std::slice::from_ref(frame)).remove(0)
    }
}

/// Fixed-seed random strided conv stack followed by global averaging.
#[derive(Debug)]
pub struct RandomConvEmbedder {
    stack: RandomConvStack,
}

impl RandomConvEmbedder {
    pub const DEFAULT_SEED: u64 = 7;

    /// 128-dimensional embedder for `channels`-channel frames.
    pub fn new(channels: usize, seed: u64) -> Self {
        Self {
            stack: RandomConvStack::new(channels as i64, &[32, 64, 128], seed),
        }
    }
}

impl Default for RandomConvEmbedder {
    fn default() -> Self {
        Self::new(3, Self::DEFAULT_SEED)
    }
}

impl FrameEmbedder for RandomConvEmbedder {
    fn tag(&self) -> String {
        format!("random-conv-{}", self.stack.seed())
    }

    fn dim(&self) -> usize {
        self.stack.out_channels() as usize
    }

    fn embed_frames(&self, frames: &[Frame]) -> Vec<Vec<f64>> {
        if frames.is_empty() {
            return Vec::new();
        }
        let batch = Tensor::stack(&frames.iter().map(Frame::to_tensor).collect::<Vec<_>>(), 0);
        let x = (batch.to_kind(Kind::Double) + 1.0) / 2.0;
        let f = tch::no_grad(|| self.stack.forward(&x)).mean_dim([2, 3].as_slice(), false, Kind::Double);
        let d = self.dim();
        let flat = Vec::<f64>::try_from(f.contiguous().view([-1])).expect("double tensor");
        flat.chunks_exact(d).map(<[f64]>::to_vec).collect()
    }
}

/// Flattened `[0, 1]` pixels; handy as an exact oracle embedder.
#[derive(Debug, Clone, Copy, Default)]
pub struct PixelEmbedder;

impl FrameEmbedder for PixelEmbedder {
    fn tag(&self) -> String {
        "pixels".into()
    }

    fn dim(&self) -> usize {
        0
    }

    fn embed_frames(&self, frames: &[Frame]) -> Vec<Vec<f64>> {
        frames
            .iter()
            .map(|f| f.pixels().iter().map(|&v| (v as f64 + 1.0) / 2.0).collect())
            .collect()
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Mean distance between each frame's embedding and the reference's.
pub fn acd_identity(video: &VideoClip, reference: &Frame, emb: &dyn FrameEmbedder) -> Result<f64> {
    if video.frame_dims() != reference.dims() {
        return Err(shape_err!("reference dims {:?} versus clip {:?}", reference.dims(), video.frame_dims()));
    }
    let r = emb.embed(reference);
    let e = emb.embed_frames(video.frames());
    Ok(e.iter().map(|v| euclidean(v, &r)).sum::<f64>() / e.len() as f64)
}

/// Mean distance over all unordered pairs of frame embeddings; 0 for one frame.
pub fn acd_content(video: &VideoClip, emb: &dyn FrameEmbedder) -> f64 {
    let e = emb.embed_frames(video.frames());
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..e.len() {
        for j in i + 1..e.len() {
            sum += euclidean(&e[i], &e[j]);
            pairs += 1;
        }
    }
    if pairs == 0 {
        0.0
    } else {
        sum / pairs as f64
    }
}
