//! Fixed random convolutional feature stacks.
//!
//! These stand in for pretrained perceptual networks: weights are drawn once
//! from a seeded generator and never trained. Gradients still flow to the
//! input, so they can serve inside a loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tch::Tensor;

use crate::nets::LEAKY_SLOPE;

#[derive(Debug)]
pub struct RandomConvStack {
    weights: Vec<Tensor>,
    seed: u64,
}

impl RandomConvStack {
    /// 3×3 stride-2 convolutions with the given output widths.
    pub fn new(in_channels: i64, widths: &[i64], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut c = in_channels;
        let weights = widths
            .iter()
            .map(|&w| {
                let fan_in = (c * 9) as f64;
                let bound = (6.0 / fan_in).sqrt();
                let data: Vec<f32> = (0..w * c * 9).map(|_| rng.random_range(-bound..bound) as f32).collect();
                let t = Tensor::from_slice(&data).view([w, c, 3, 3]);
                c = w;
                t
            })
            .collect();
        Self { weights, seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn out_channels(&self) -> i64 {
        self.weights.last().map_or(0, |w| w.size()[0])
    }

    /// `[B, C, H, W]` → final feature map.
    pub fn forward(&self, x: &Tensor) -> Tensor {
        let mut h = x.shallow_clone();
        for w in &self.weights {
            let w = w.to_kind(x.kind());
            h = h.conv2d(&w, None::<Tensor>, [2, 2], [1, 1], [1, 1], 1);
            h = h.maximum(&(&h * LEAKY_SLOPE));
        }
        h
    }
}

/// Maps a batch of frames `[B, C, H, W]` to feature vectors `[B, F]`.
pub trait FeatureExtractor {
    fn features(&self, frames: &Tensor) -> Tensor;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityFeatures;

impl FeatureExtractor for IdentityFeatures {
    fn features(&self, frames: &Tensor) -> Tensor {
        frames.flatten(1, -1)
    }
}

/// Global channel statistics of a random conv stack (appearance proxy).
#[derive(Debug)]
pub struct AppearanceFeatures(pub RandomConvStack);

impl FeatureExtractor for AppearanceFeatures {
    fn features(&self, frames: &Tensor) -> Tensor {
        let f = self.0.forward(frames);
        f.mean_dim([2, 3].as_slice(), false, f.kind())
    }
}

/// Random conv features pooled onto a coarse spatial grid (structure proxy).
#[derive(Debug)]
pub struct StructureFeatures {
    pub stack: RandomConvStack,
    pub grid: i64,
}

impl FeatureExtractor for StructureFeatures {
    fn features(&self, frames: &Tensor) -> Tensor {
        self.stack.forward(frames).adaptive_avg_pool2d([self.grid, self.grid]).flatten(1, -1)
    }
}

/// The pair of toy extractors used by the feature similarity loss.
pub fn toy_extractors(channels: i64) -> (AppearanceFeatures, StructureFeatures) {
    (
        AppearanceFeatures(RandomConvStack::new(channels, &[16, 32], 101)),
        StructureFeatures {
            stack: RandomConvStack::new(channels, &[16, 16], 202),
            grid: 4,
        },
    )
}
