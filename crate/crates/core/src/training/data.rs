//! In-memory clip banks and batch sampling.

use rand::Rng;
use tch::{Kind, Tensor};

use crate::condition::heatmap::render_heatmaps_tensor;
use crate::condition::synth::{DatasetManifest, Split};
use crate::error::{arg_err, Result};
use crate::io::read_clip_dir;

/// Draws a start `t` and a jump `k` with `k` uniform in `[1, k_max]` and,
/// given `k`, `t` uniform over every start with `t + k < clip_len`.
pub fn sample_time_jump(clip_len: usize, k_max: usize, rng: &mut impl Rng) -> Result<(usize, usize)> {
    if k_max < 1 || clip_len <= k_max {
        return Err(arg_err!("need clip_len > k_max >= 1, got clip_len {clip_len}, k_max {k_max}"));
    }
    let k = rng.random_range(1..=k_max);
    let t = rng.random_range(0..clip_len - k);
    Ok((t, k))
}

/// Every clip of one split, frames as `u8` and keypoints as coordinates.
#[derive(Debug)]
pub struct ClipBank {
    /// `[N·T, C, H, W]`, `u8`.
    frames: Tensor,
    /// `[N·T, J, 2]`.
    coords: Tensor,
    /// `[N·T, J]`.
    visible: Tensor,
    pub ids: Vec<String>,
    pub classes: Vec<usize>,
    pub clip_len: usize,
    pub height: i64,
    pub width: i64,
    pub joints: i64,
    pub sigma: f64,
}

impl ClipBank {
    pub fn load(manifest: &DatasetManifest, split: Split) -> Result<Self> {
        let clips: Vec<_> = manifest.split(split).collect();
        if clips.is_empty() {
            return Err(arg_err!("split {split:?} is empty"));
        }
        let clip_len = clips.iter().map(|c| c.frames).min().unwrap_or(0);
        let (mut frames, mut coords, mut visible) = (Vec::new(), Vec::new(), Vec::new());
        for clip in &clips {
            let video = read_clip_dir(manifest.clip_dir(clip))?;
            let poses = manifest.load_keypoints(clip)?;
            if video.len() < clip_len || poses.len() < clip_len {
                return Err(arg_err!("clip {} has fewer frames or keypoints than its manifest entry", clip.id));
            }
            for t in 0..clip_len {
                let f = video.frames()[t].to_tensor();
                frames.push(((f + 1.0) * 127.5).round().clamp(0.0, 255.0).to_kind(Kind::Uint8));
                let pose = &poses.poses()[t];
                coords.push(Tensor::from_slice(&pose.flat_coords()).view([-1, 2]));
                let vis: Vec<f32> = pose.visibility().iter().map(|&v| f32::from(u8::from(v))).collect();
                visible.push(Tensor::from_slice(&vis));
            }
        }
        Ok(Self {
            frames: Tensor::stack(&frames, 0),
            coords: Tensor::stack(&coords, 0),
            visible: Tensor::stack(&visible, 0),
            ids: clips.iter().map(|c| c.id.clone()).collect(),
            classes: clips.iter().map(|c| c.class).collect(),
            clip_len,
            height: manifest.height as i64,
            width: manifest.width as i64,
            joints: manifest.joints as i64,
            sigma: manifest.sigma,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    fn flat(&self, idx: &[(usize, usize)]) -> Tensor {
        let flat: Vec<i64> = idx.iter().map(|&(n, t)| (n * self.clip_len + t) as i64).collect();
        Tensor::from_slice(&flat)
    }

    /// Frames at `(clip, time)` pairs, `[B, C, H, W]` in `[-1, 1]`.
    pub fn frames(&self, idx: &[(usize, usize)]) -> Tensor {
        self.frames.index_select(0, &self.flat(idx)).to_kind(Kind::Float) / 127.5 - 1.0
    }

    /// Motion maps at `(clip, time)` pairs, `[B, J, H, W]`.
    pub fn maps(&self, idx: &[(usize, usize)]) -> Tensor {
        let f = self.flat(idx);
        render_heatmaps_tensor(
            &self.coords.index_select(0, &f),
            &self.visible.index_select(0, &f),
            self.height,
            self.width,
            self.sigma,
        )
    }

    /// `len` consecutive frames from `start`, `[B, C, len, H, W]`.
    pub fn clip_frames(&self, starts: &[(usize, usize)], len: usize) -> Tensor {
        let idx = self.window_index(starts, len);
        let b = starts.len() as i64;
        let f = self.frames(&idx);
        let s = f.size();
        f.view([b, len as i64, s[1], s[2], s[3]]).permute([0, 2, 1, 3, 4]).contiguous()
    }

    /// Maps matching [`ClipBank::clip_frames`], `[B, J, len, H, W]`.
    pub fn clip_maps(&self, starts: &[(usize, usize)], len: usize) -> Tensor {
        let idx = self.window_index(starts, len);
        let b = starts.len() as i64;
        let m = self.maps(&idx);
        let s = m.size();
        m.view([b, len as i64, s[1], s[2], s[3]]).permute([0, 2, 1, 3, 4]).contiguous()
    }

    fn window_index(&self, starts: &[(usize, usize)], len: usize) -> Vec<(usize, usize)> {
        starts.iter().flat_map(|&(n, t)| (t..t + len).map(move |u| (n, u))).collect()
    }
}
