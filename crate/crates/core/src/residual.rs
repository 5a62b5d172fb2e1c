//! Frames, clips, motion conditions and the residual composition operators.
//!
//! Pixels are stored as `f32` in `[-1, 1]` with layout `H×W×C`. Motion maps
//! are `H×W×J` stacks of per-joint heatmaps in `[0, 1]`. A residual
//! decomposition is a single-channel gate `m` and a content map `c`; the
//! composed frame is `m⊙c + (1−m)⊙base` with `m` broadcast over channels.

use ndarray::{Array3, Array4, ArrayView3, Axis, Zip};
use tch::{Kind, Tensor};

use crate::error::{arg_err, shape_err, Result};

pub const MIN_SIDE: usize = 8;

fn check_range(values: impl IntoIterator<Item = f32>, lo: f32, hi: f32, what: &str) -> Result<()> {
    for v in values {
        if !v.is_finite() {
            return Err(arg_err!("{what} contains a non-finite value"));
        }
        if v < lo || v > hi {
            return Err(arg_err!("{what} value {v} outside [{lo}, {hi}]"));
        }
    }
    Ok(())
}

/// A single RGB frame, `H×W×C`, values in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pixels: Array3<f32>,
}

impl Frame {
    pub fn new(pixels: Array3<f32>) -> Result<Self> {
        let (h, w, c) = pixels.dim();
        if h < MIN_SIDE || w < MIN_SIDE {
            return Err(shape_err!("frame is {h}x{w}, both sides must be at least {MIN_SIDE}"));
        }
        if c == 0 {
            return Err(shape_err!("frame has no channels"));
        }
        check_range(pixels.iter().copied(), -1.0, 1.0, "frame")?;
        Ok(Self { pixels })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Result<Self> {
        Self::new(Array3::from_elem((height, width, channels), value))
    }

    /// Build from a `[C, H, W]` float tensor.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        Self::new(chw_tensor_to_hwc(t)?)
    }

    /// `[C, H, W]` float tensor.
    pub fn to_tensor(&self) -> Tensor {
        hwc_to_chw_tensor(self.pixels.view())
    }

    pub fn pixels(&self) -> &Array3<f32> {
        &self.pixels
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().1
    }

    pub fn channels(&self) -> usize {
        self.pixels.dim().2
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.pixels.dim()
    }
}

/// An ordered run of `K ≥ 1` frames sharing dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    frames: Vec<Frame>,
}

impl VideoClip {
    pub fn new(frames: Vec<Frame>) -> Result<Self> {
        let first = frames.first().ok_or_else(|| arg_err!("clip must hold at least one frame"))?;
        let dims = first.dims();
        if let Some((i, f)) = frames.iter().enumerate().find(|(_, f)| f.dims() != dims) {
            return Err(shape_err!("frame {i} is {:?}, expected {:?}", f.dims(), dims));
        }
        Ok(Self { frames })
    }

    /// Build from a `[C, K, H, W]` tensor.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let size = t.size();
        if size.len() != 4 {
            return Err(shape_err!("expected [C, K, H, W], got {size:?}"));
        }
        (0..size[1])
            .map(|k| Frame::from_tensor(&t.select(1, k)))
            .collect::<Result<Vec<_>>>()
            .and_then(Self::new)
    }

    /// `[C, K, H, W]` float tensor.
    pub fn to_tensor(&self) -> Tensor {
        let frames: Vec<Tensor> = self.frames.iter().map(Frame::to_tensor).collect();
        Tensor::stack(&frames, 1)
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Frame> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame_dims(&self) -> (usize, usize, usize) {
        self.frames[0].dims()
    }
}

/// Stacked per-joint heatmaps, `H×W×J`, values in `[0, 1]`.
///
/// Each channel either peaks at exactly 1 (visible joint) or is all zero.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionMap {
    heatmaps: Array3<f32>,
}

impl MotionMap {
    pub fn new(heatmaps: Array3<f32>) -> Result<Self> {
        check_range(heatmaps.iter().copied(), 0.0, 1.0, "motion map")?;
        for (j, channel) in heatmaps.axis_iter(Axis(2)).enumerate() {
            let peak = channel.iter().copied().fold(0.0f32, f32::max);
            if peak != 0.0 && (peak - 1.0).abs() > 1e-6 {
                return Err(arg_err!("motion map channel {j} peaks at {peak}, expected 0 or 1"));
            }
        }
        Ok(Self { heatmaps })
    }

    /// Build from a `[J, H, W]` tensor.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        Self::new(chw_tensor_to_hwc(t)?)
    }

    /// `[J, H, W]` float tensor.
    pub fn to_tensor(&self) -> Tensor {
        hwc_to_chw_tensor(self.heatmaps.view())
    }

    pub fn heatmaps(&self) -> &Array3<f32> {
        &self.heatmaps
    }

    pub fn joints(&self) -> usize {
        self.heatmaps.dim().2
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.heatmaps.dim()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionMapSequence {
    maps: Vec<MotionMap>,
}

impl MotionMapSequence {
    pub fn new(maps: Vec<MotionMap>) -> Result<Self> {
        if let Some(first) = maps.first() {
            let dims = first.dims();
            if let Some((i, m)) = maps.iter().enumerate().find(|(_, m)| m.dims() != dims) {
                return Err(shape_err!("motion map {i} is {:?}, expected {:?}", m.dims(), dims));
            }
        }
        Ok(Self { maps })
    }

    /// `[J, K, H, W]` float tensor.
    pub fn to_tensor(&self) -> Tensor {
        let maps: Vec<Tensor> = self.maps.iter().map(MotionMap::to_tensor).collect();
        Tensor::stack(&maps, 1)
    }

    pub fn maps(&self) -> &[MotionMap] {
        &self.maps
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }
}

/// Mask `m` (`H×W×1`, in `[0, 1]`) and content `c` (`H×W×C`, in `[-1, 1]`).
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualDecomposition {
    mask: Array3<f32>,
    content: Array3<f32>,
}

impl ResidualDecomposition {
    pub fn new(mask: Array3<f32>, content: Array3<f32>) -> Result<Self> {
        let (mh, mw, mc) = mask.dim();
        let (ch, cw, _) = content.dim();
        if mc != 1 {
            return Err(shape_err!("mask must have one channel, got {mc}"));
        }
        if (mh, mw) != (ch, cw) {
            return Err(shape_err!("mask is {mh}x{mw} but content is {ch}x{cw}"));
        }
        check_range(mask.iter().copied(), 0.0, 1.0, "mask")?;
        check_range(content.iter().copied(), -1.0, 1.0, "content")?;
        Ok(Self { mask, content })
    }

    /// Build from `[1, H, W]` mask and `[C, H, W]` content tensors.
    pub fn from_tensors(mask: &Tensor, content: &Tensor) -> Result<Self> {
        Self::new(chw_tensor_to_hwc(mask)?, chw_tensor_to_hwc(content)?)
    }

    pub fn mask(&self) -> &Array3<f32> {
        &self.mask
    }

    pub fn content(&self) -> &Array3<f32> {
        &self.content
    }
}

/// Per-timestep mask (`K×H×W×1`) and content (`K×H×W×C`).
#[derive(Debug, Clone, PartialEq)]
pub struct SpatiotemporalResidual {
    mask: Array4<f32>,
    content: Array4<f32>,
}

impl SpatiotemporalResidual {
    pub fn new(mask: Array4<f32>, content: Array4<f32>) -> Result<Self> {
        let (mk, mh, mw, mc) = mask.dim();
        let (ck, ch, cw, _) = content.dim();
        if mc != 1 {
            return Err(shape_err!("mask must have one channel, got {mc}"));
        }
        if (mk, mh, mw) != (ck, ch, cw) {
            return Err(shape_err!("mask is {mk}x{mh}x{mw} but content is {ck}x{ch}x{cw}"));
        }
        if mk == 0 {
            return Err(arg_err!("spatiotemporal residual needs at least one timestep"));
        }
        check_range(mask.iter().copied(), 0.0, 1.0, "mask")?;
        check_range(content.iter().copied(), -1.0, 1.0, "content")?;
        Ok(Self { mask, content })
    }

    /// Build from `[1, K, H, W]` mask and `[C, K, H, W]` content tensors.
    pub fn from_tensors(mask: &Tensor, content: &Tensor) -> Result<Self> {
        let to_khwc = |t: &Tensor| -> Result<Array4<f32>> {
            let size = t.size();
            if size.len() != 4 {
                return Err(shape_err!("expected [C, K, H, W], got {size:?}"));
            }
            let dims: Vec<usize> = size.iter().map(|&d| d as usize).collect();
            let data = tensor_to_vec(&t.permute([1, 2, 3, 0]))?;
            Array4::from_shape_vec((dims[1], dims[2], dims[3], dims[0]), data)
                .map_err(|e| shape_err!("{e}"))
        };
        Self::new(to_khwc(mask)?, to_khwc(content)?)
    }

    pub fn len(&self) -> usize {
        self.mask.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mask(&self) -> &Array4<f32> {
        &self.mask
    }

    pub fn content(&self) -> &Array4<f32> {
        &self.content
    }

    pub fn step(&self, k: usize) -> ResidualDecomposition {
        ResidualDecomposition {
            mask: self.mask.index_axis(Axis(0), k).to_owned(),
            content: self.content.index_axis(Axis(0), k).to_owned(),
        }
    }
}

/// `m⊙c + (1−m)⊙base`, mask broadcast over channels.
pub fn compose_frame(base: &Frame, dec: &ResidualDecomposition) -> Result<Frame> {
    let (h, w, c) = base.dims();
    let (mh, mw, _) = dec.mask.dim();
    if (mh, mw) != (h, w) {
        return Err(shape_err!("mask is {mh}x{mw} but frame is {h}x{w}"));
    }
    if dec.content.dim() != (h, w, c) {
        return Err(shape_err!("content is {:?} but frame is {:?}", dec.content.dim(), (h, w, c)));
    }
    let mask = dec.mask.broadcast((h, w, c)).expect("single-channel mask broadcasts");
    let mut out = Array3::<f32>::zeros((h, w, c));
    Zip::from(&mut out)
        .and(&mask)
        .and(&dec.content)
        .and(&base.pixels)
        .for_each(|o, &m, &cv, &b| *o = m * cv + (1.0 - m) * b);
    Ok(Frame { pixels: out })
}

/// Applies [`compose_frame`] at every timestep.
pub fn compose_clip(base: &VideoClip, dec: &SpatiotemporalResidual) -> Result<VideoClip> {
    if base.len() != dec.len() {
        return Err(shape_err!("clip has {} frames but residual has {}", base.len(), dec.len()));
    }
    let frames = base
        .frames
        .iter()
        .enumerate()
        .map(|(k, f)| compose_frame(f, &dec.step(k)))
        .collect::<Result<Vec<_>>>()?;
    VideoClip::new(frames)
}

/// Single-map difference formulation: `clamp(base + delta, -1, 1)`.
pub fn compose_difference(base: &Frame, delta: &Array3<f32>) -> Result<Frame> {
    if base.dims() != delta.dim() {
        return Err(shape_err!("delta is {:?} but frame is {:?}", delta.dim(), base.dims()));
    }
    if delta.iter().any(|v| !v.is_finite()) {
        return Err(arg_err!("delta contains a non-finite value"));
    }
    let pixels = Zip::from(&base.pixels)
        .and(delta)
        .map_collect(|&b, &d| (b + d).clamp(-1.0, 1.0));
    Ok(Frame { pixels })
}

/// Differentiable composition on batched tensors.
///
/// `mask` has a singleton channel axis (axis 1) and broadcasts against
/// `content` and `base`, so this serves both `[B, C, H, W]` frames and
/// `[B, C, K, H, W]` clips.
pub fn compose_tensor(base: &Tensor, mask: &Tensor, content: &Tensor) -> Tensor {
    mask * content + (1.0 - mask) * base
}

pub(crate) fn tensor_to_vec(t: &Tensor) -> Result<Vec<f32>> {
    let flat = t.to_kind(Kind::Float).contiguous().view([-1]);
    Ok(Vec::<f32>::try_from(&flat)?)
}

fn chw_tensor_to_hwc(t: &Tensor) -> Result<Array3<f32>> {
    let size = t.size();
    if size.len() != 3 {
        return Err(shape_err!("expected a [C, H, W] tensor, got {size:?}"));
    }
    let (c, h, w) = (size[0] as usize, size[1] as usize, size[2] as usize);
    let data = tensor_to_vec(&t.permute([1, 2, 0]))?;
    Array3::from_shape_vec((h, w, c), data).map_err(|e| shape_err!("{e}"))
}

fn hwc_to_chw_tensor(a: ArrayView3<f32>) -> Tensor {
    let (h, w, c) = a.dim();
    let data: Vec<f32> = a.iter().copied().collect();
    Tensor::from_slice(&data)
        .view([h as i64, w as i64, c as i64])
        .permute([2, 0, 1])
        .contiguous()
}
