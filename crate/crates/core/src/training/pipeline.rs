//! Condition → coarse clip → refined clip.

use tch::{Kind, Tensor};

use crate::condition::forecaster::PoseForecaster;
use crate::condition::heatmap::render_heatmaps;
use crate::condition::pose::PoseSequence;
use crate::error::{arg_err, Result};
use crate::nets::gm::GmCheckpoint;
use crate::nets::gr::GrCheckpoint;
use crate::residual::{Frame, MotionMap, MotionMapSequence, ResidualDecomposition, SpatiotemporalResidual, VideoClip};

/// Frames forecast per G_M call.
const CHUNK: i64 = 32;

#[derive(Debug, Clone)]
pub struct GeneratedVideo {
    /// Forecast poses, when a forecaster produced the conditions.
    pub poses: Option<PoseSequence>,
    pub maps: MotionMapSequence,
    pub coarse: VideoClip,
    pub coarse_residuals: Vec<ResidualDecomposition>,
    pub refined: Option<VideoClip>,
    pub refine_residual: Option<SpatiotemporalResidual>,
}

impl GeneratedVideo {
    /// The refined clip when available, else the coarse one.
    pub fn output(&self) -> &VideoClip {
        self.refined.as_ref().unwrap_or(&self.coarse)
    }
}

/// Forecasts every target independently from one anchor frame.
///
/// `frame [B,C,H,W]`, `map_now [B,J,H,W]`, `targets [B,J,T,H,W]` →
/// `(frames [B,C,T,H,W], masks [B,1,T,H,W], contents [B,C,T,H,W])`.
pub fn coarse_frames(gm: &GmCheckpoint, frame: &Tensor, map_now: &Tensor, targets: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let s = targets.size();
    if s.len() != 5 {
        return Err(arg_err!("targets must be [B, J, T, H, W], got {s:?}"));
    }
    let (b, t) = (s[0], s[2]);
    let flat_targets = targets.permute([0, 2, 1, 3, 4]).reshape([b * t, s[1], s[3], s[4]]);
    let rep = |x: &Tensor| {
        let xs = x.size();
        x.unsqueeze(1).expand([b, t, xs[1], xs[2], xs[3]], false).reshape([b * t, xs[1], xs[2], xs[3]])
    };
    let (frames, maps_now) = (rep(frame), rep(map_now));
    let (mut outs, mut masks, mut contents) = (Vec::new(), Vec::new(), Vec::new());
    let mut start = 0;
    while start < b * t {
        let n = CHUNK.min(b * t - start);
        let o = gm.forward(&frames.narrow(0, start, n), &maps_now.narrow(0, start, n), &flat_targets.narrow(0, start, n))?;
        outs.push(o.frame);
        masks.push(o.mask);
        contents.push(o.content);
        start += n;
    }
    let unflat = |parts: Vec<Tensor>| {
        let x = Tensor::cat(&parts, 0);
        let xs = x.size();
        x.view([b, t, xs[1], xs[2], xs[3]]).permute([0, 2, 1, 3, 4]).contiguous()
    };
    Ok((unflat(outs), unflat(masks), unflat(contents)))
}

/// Refines `[B,C,T,H,W]` in disjoint windows of the refiner's length. A short
/// final window is padded by repeating its last frame and then truncated.
pub fn refine_frames(gr: &GrCheckpoint, coarse: &Tensor, maps: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let k = gr.clip_len() as i64;
    let t = coarse.size()[2];
    if maps.size()[2] != t {
        return Err(arg_err!("{} frames but {} maps", t, maps.size()[2]));
    }
    let pad = |x: &Tensor, len: i64| {
        if len == k {
            x.shallow_clone()
        } else {
            let last = x.narrow(2, len - 1, 1);
            let s = last.size();
            Tensor::cat(&[x.shallow_clone(), last.expand([s[0], s[1], k - len, s[3], s[4]], false)], 2)
        }
    };
    let (mut clips, mut masks, mut contents) = (Vec::new(), Vec::new(), Vec::new());
    let mut start = 0;
    while start < t {
        let len = k.min(t - start);
        let out = gr.forward(&pad(&coarse.narrow(2, start, len), len), &pad(&maps.narrow(2, start, len), len))?;
        clips.push(out.clip.narrow(2, 0, len));
        masks.push(out.mask.narrow(2, 0, len));
        contents.push(out.content.narrow(2, 0, len));
        start += len;
    }
    Ok((Tensor::cat(&clips, 2), Tensor::cat(&masks, 2), Tensor::cat(&contents, 2)))
}

fn check_dims(frame: &Frame, map0: &MotionMap, gm: &GmCheckpoint, gr: Option<&GrCheckpoint>) -> Result<()> {
    let a = gm.arch();
    let (h, w, c) = frame.dims();
    if (h as i64, w as i64, c as i64) != (a.height, a.width, a.channels) {
        return Err(arg_err!("frame is {h}x{w}x{c}, G_M expects {}x{}x{}", a.height, a.width, a.channels));
    }
    if map0.dims() != (h, w, a.joints as usize) {
        return Err(arg_err!("motion maps are {:?}, G_M expects {h}x{w}x{}", map0.dims(), a.joints));
    }
    if let Some(gr) = gr {
        let r = gr.arch();
        if (r.height, r.width, r.channels, r.joints) != (a.height, a.width, a.channels, a.joints) {
            return Err(arg_err!("G_R dims {r:?} do not match G_M dims {a:?}"));
        }
    }
    Ok(())
}

/// Generates one frame per target map from `frame`, then optionally refines.
pub fn generate_from_maps(
    frame: &Frame,
    map_now: &MotionMap,
    targets: &MotionMapSequence,
    gm: &GmCheckpoint,
    gr: Option<&GrCheckpoint>,
) -> Result<GeneratedVideo> {
    check_dims(frame, map_now, gm, gr)?;
    if targets.is_empty() {
        return Err(arg_err!("no target motion maps"));
    }
    if targets.maps()[0].dims() != map_now.dims() {
        return Err(arg_err!("target maps {:?} differ from the anchor map {:?}", targets.maps()[0].dims(), map_now.dims()));
    }
    let kind = Kind::Float;
    let maps_t = targets.to_tensor().unsqueeze(0).to_kind(kind);
    tch::no_grad(|| {
        let (coarse, cmask, ccontent) = coarse_frames(
            gm,
            &frame.to_tensor().unsqueeze(0).to_kind(kind),
            &map_now.to_tensor().unsqueeze(0).to_kind(kind),
            &maps_t,
        )?;
        let coarse_clip = VideoClip::from_tensor(&coarse.get(0))?;
        let coarse_residuals = (0..targets.len() as i64)
            .map(|t| ResidualDecomposition::from_tensors(&cmask.get(0).select(1, t), &ccontent.get(0).select(1, t)))
            .collect::<Result<Vec<_>>>()?;
        let (refined, refine_residual) = match gr {
            Some(gr) => {
                let (clip, mask, content) = refine_frames(gr, &coarse, &maps_t)?;
                (
                    Some(VideoClip::from_tensor(&clip.get(0))?),
                    Some(SpatiotemporalResidual::from_tensors(&mask.get(0), &content.get(0))?),
                )
            }
            None => (None, None),
        };
        Ok(GeneratedVideo {
            poses: None,
            maps: targets.clone(),
            coarse: coarse_clip,
            coarse_residuals,
            refined,
            refine_residual,
        })
    })
}

/// Forecasts `steps` poses from the history (whose last pose belongs to
/// `frame`), renders their maps and generates the video.
pub fn generate_video(
    frame: &Frame,
    pose_history: &PoseSequence,
    steps: usize,
    sigma: f64,
    gm: &GmCheckpoint,
    gr: Option<&GrCheckpoint>,
    forecaster: &dyn PoseForecaster,
) -> Result<GeneratedVideo> {
    let (h, w, _) = frame.dims();
    let last = pose_history.last().ok_or_else(|| arg_err!("empty pose history"))?;
    let map_now = render_heatmaps(last, h, w, sigma)?;
    let poses = forecaster.forecast(pose_history, steps)?;
    let maps = poses
        .poses()
        .iter()
        .map(|p| render_heatmaps(p, h, w, sigma))
        .collect::<Result<Vec<_>>>()?;
    let mut video = generate_from_maps(frame, &map_now, &MotionMapSequence::new(maps)?, gm, gr)?;
    video.poses = Some(poses);
    Ok(video)
}
