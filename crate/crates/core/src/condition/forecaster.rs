//! Recurrent pose forecaster.
//!
//! The network observes a short pose history and rolls forward
//! autoregressively. Each step consumes the current coordinates and their
//! velocity; the head predicts the next velocity, which is integrated and
//! clamped to the unit square.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tch::nn::{self, Module, OptimizerConfig, RNN};
use tch::{Kind, Tensor};

use super::pose::{Pose, PoseSequence};
use super::synth::{DatasetManifest, Split};
use crate::checkpoint::{CheckpointFile, ModelMeta};
use crate::error::{arg_err, Error, Result};
use crate::training::TrainConfig;

pub const STAGE_TAG: &str = "lstm";

/// Velocities are small; this rescales them to unit-ish magnitude.
const VELOCITY_SCALE: f64 = 20.0;

pub trait PoseForecaster {
    /// Predicts `steps` poses following `history`.
    fn forecast(&self, history: &PoseSequence, steps: usize) -> Result<PoseSequence>;
}

/// Repeats the last observed pose.
#[derive(Debug, Clone, Copy, Default)]
pub struct FreezeLastPose;

impl PoseForecaster for FreezeLastPose {
    fn forecast(&self, history: &PoseSequence, steps: usize) -> Result<PoseSequence> {
        let last = history.last().ok_or_else(|| arg_err!("empty pose history"))?;
        PoseSequence::new(vec![last.clone(); steps])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecasterArch {
    pub joints: usize,
    pub observed: usize,
    pub predict: usize,
    pub hidden: i64,
    pub layers: i64,
}

impl ForecasterArch {
    pub fn validate(&self) -> Result<()> {
        if self.joints == 0 || self.observed == 0 || self.predict == 0 || self.hidden < 1 || self.layers < 1 {
            return Err(arg_err!("invalid forecaster architecture {self:?}"));
        }
        Ok(())
    }

    fn dim(&self) -> i64 {
        2 * self.joints as i64
    }
}

struct PoseLstm {
    lstm: nn::LSTM,
    head: nn::Linear,
}

pub struct ForecasterCheckpoint {
    vs: nn::VarStore,
    net: PoseLstm,
    arch: ForecasterArch,
    pub meta: ModelMeta,
}

impl std::fmt::Debug for ForecasterCheckpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ForecasterCheckpoint").field("arch", &self.arch).field("meta", &self.meta).finish()
    }
}

impl ForecasterCheckpoint {
    pub fn new(arch: ForecasterArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let vs = nn::VarStore::new(tch::Device::Cpu);
        let root = vs.root();
        let cfg = nn::RNNConfig {
            num_layers: arch.layers,
            batch_first: true,
            ..Default::default()
        };
        let net = PoseLstm {
            lstm: nn::lstm(&root / "lstm", 2 * arch.dim(), arch.hidden, cfg),
            head: nn::linear(&root / "head", arch.hidden, arch.dim(), Default::default()),
        };
        // Uniform(±1/√hidden) for every tensor, the usual recurrent init; zero head bias.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (arch.hidden as f64).sqrt();
        tch::no_grad(|| {
            let mut vars = vs.variables().into_iter().collect::<Vec<_>>();
            vars.sort_by(|a, b| a.0.cmp(&b.0));
            for (name, mut var) in vars {
                if name == "head.bias" {
                    let _ = var.zero_();
                    continue;
                }
                let data: Vec<f32> = (0..var.numel()).map(|_| rng.random_range(-bound..bound) as f32).collect();
                var.copy_(&Tensor::from_slice(&data).view(var.size().as_slice()));
            }
        });
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

    pub fn arch(&self) -> &ForecasterArch {
        &self.arch
    }

    pub fn observed(&self) -> usize {
        self.arch.observed
    }

    pub fn predict(&self) -> usize {
        self.arch.predict
    }

    pub fn var_store(&self) -> &nn::VarStore {
        &self.vs
    }

    /// `history [B, observed, 2J]` → `[B, steps, 2J]`, differentiable.
    pub fn rollout(&self, history: &Tensor, steps: usize) -> Result<Tensor> {
        let s = history.size();
        if s.len() != 3 || s[1] != self.arch.observed as i64 || s[2] != self.arch.dim() {
            return Err(arg_err!(
                "history has shape {s:?}, expected [B, {}, {}]",
                self.arch.observed,
                self.arch.dim()
            ));
        }
        if steps == 0 {
            return Ok(Tensor::zeros([s[0], 0, s[2]], (history.kind(), history.device())));
        }
        let prev = Tensor::cat(&[history.narrow(1, 0, 1), history.narrow(1, 0, s[1] - 1)], 1);
        let vel = (history - prev) * VELOCITY_SCALE;
        let input = Tensor::cat(&[history * 2.0 - 1.0, vel], 2);
        let (out, mut state) = self.net.lstm.seq(&input);
        let mut h = out.select(1, s[1] - 1);
        let mut pose = history.select(1, s[1] - 1);
        let mut outputs = Vec::with_capacity(steps);
        for i in 0..steps {
            let v = self.net.head.forward(&h) / VELOCITY_SCALE;
            let next = (&pose + &v).clamp(0.0, 1.0);
            outputs.push(next.shallow_clone());
            if i + 1 < steps {
                let step_in = Tensor::cat(&[&next * 2.0 - 1.0, (&next - &pose) * VELOCITY_SCALE], 1);
                state = self.net.lstm.step(&step_in, &state);
                h = state.h().select(0, self.arch.layers - 1);
            }
            pose = next;
        }
        Ok(Tensor::stack(&outputs, 1))
    }

    pub fn to_file(&self) -> Result<CheckpointFile> {
        CheckpointFile::from_var_store(STAGE_TAG, &self.arch, &self.meta, &self.vs)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_file()?.write(path)
    }

    pub fn from_file(file: &CheckpointFile) -> Result<Self> {
        file.expect_stage(STAGE_TAG)?;
        let arch: ForecasterArch = file.descriptor()?;
        let mut ck = Self::new(arch, 0)?;
        file.load_into(&ck.vs)?;
        ck.meta = file.meta()?;
        Ok(ck)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_file(&CheckpointFile::read(path)?)
    }
}

fn sequence_tensor(seq: &PoseSequence) -> Tensor {
    let flat: Vec<f32> = seq.poses().iter().flat_map(Pose::flat_coords).collect();
    let j = seq.num_joints().unwrap_or(0) as i64;
    Tensor::from_slice(&flat).view([seq.len() as i64, 2 * j])
}

/// Autoregressive forecast of `steps` poses; all predicted joints are visible.
pub fn forecast_poses(history: &PoseSequence, steps: usize, ckpt: &ForecasterCheckpoint) -> Result<PoseSequence> {
    if history.len() != ckpt.observed() {
        return Err(arg_err!("history has {} poses, forecaster observes {}", history.len(), ckpt.observed()));
    }
    if steps > ckpt.predict() {
        return Err(arg_err!("{steps} steps requested, forecaster predicts at most {}", ckpt.predict()));
    }
    if history.num_joints() != Some(ckpt.arch.joints) {
        return Err(arg_err!("history has {:?} joints, forecaster expects {}", history.num_joints(), ckpt.arch.joints));
    }
    let out = tch::no_grad(|| ckpt.rollout(&sequence_tensor(history).unsqueeze(0), steps))?;
    let flat = Vec::<f32>::try_from(out.contiguous().view([-1]))?;
    let poses = flat
        .chunks_exact(2 * ckpt.arch.joints)
        .map(|c| Pose::visible(c.chunks_exact(2).map(|p| [p[0], p[1]]).collect()))
        .collect::<Result<Vec<_>>>()?;
    PoseSequence::new(poses)
}

impl PoseForecaster for ForecasterCheckpoint {
    fn forecast(&self, history: &PoseSequence, steps: usize) -> Result<PoseSequence> {
        forecast_poses(history, steps, self)
    }
}

/// Every `observed + predict` window of a split's keypoints, `[N, T, 2J]`.
pub fn pose_windows(manifest: &DatasetManifest, split: Split, len: usize) -> Result<Tensor> {
    let mut windows = Vec::new();
    for clip in manifest.split(split) {
        let seq = manifest.load_keypoints(clip)?;
        if seq.len() < len {
            return Err(arg_err!("clip {} has {} frames, windows need {len}", clip.id, seq.len()));
        }
        let t = sequence_tensor(&seq);
        for start in 0..=(seq.len() - len) {
            windows.push(t.narrow(0, start as i64, len as i64));
        }
    }
    if windows.is_empty() {
        return Err(arg_err!("split {split:?} has no clips"));
    }
    Ok(Tensor::stack(&windows, 0))
}

/// Mean squared coordinate error of `forecaster` over every window of a split.
pub fn split_coordinate_mse(
    manifest: &DatasetManifest,
    split: Split,
    forecaster: &dyn PoseForecaster,
    observed: usize,
    predict: usize,
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for clip in manifest.split(split) {
        let seq = manifest.load_keypoints(clip)?;
        if seq.len() < observed + predict {
            return Err(arg_err!("clip {} is too short", clip.id));
        }
        for start in 0..=(seq.len() - observed - predict) {
            let hist = seq.slice(start, start + observed);
            let truth = seq.slice(start + observed, start + observed + predict);
            let pred = forecaster.forecast(&hist, predict)?;
            total += coordinate_mse(&pred, &truth);
            count += 1;
        }
    }
    if count == 0 {
        return Err(arg_err!("split {split:?} has no clips"));
    }
    Ok(total / count as f64)
}

/// Mean squared difference over all coordinates of two equally long sequences.
pub fn coordinate_mse(a: &PoseSequence, b: &PoseSequence) -> f64 {
    let (mut s, mut n) = (0.0f64, 0usize);
    for (pa, pb) in a.poses().iter().zip(b.poses()) {
        for (ja, jb) in pa.joints().iter().zip(pb.joints()) {
            s += (ja[0] - jb[0]).powi(2) as f64 + (ja[1] - jb[1]).powi(2) as f64;
            n += 2;
        }
    }
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Trains on the forecaster split by unrolling over the full predicted span.
///
/// Returns the checkpoint and the per-step training loss.
pub fn train_pose_forecaster(
    manifest: &DatasetManifest,
    config: &TrainConfig,
) -> Result<(ForecasterCheckpoint, Vec<f64>)> {
    config.validate()?;
    let arch = ForecasterArch {
        joints: manifest.joints,
        observed: config.observed,
        predict: config.predict,
        hidden: config.lstm_hidden,
        layers: config.lstm_layers,
    };
    let mut ckpt = ForecasterCheckpoint::new(arch, config.seed)?;
    ckpt.meta.config = Some(config.clone());
    let windows = pose_windows(manifest, Split::ForecasterTrain, config.observed + config.predict)?;
    let n = windows.size()[0];
    let mut opt = nn::Adam {
        beta1: config.beta1,
        beta2: config.beta2,
        wd: 0.0,
        eps: 1e-8,
        amsgrad: false,
    }
    .build(&ckpt.vs, config.lr)
    .map_err(Error::from)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_f0ca);
    let mut history = Vec::with_capacity(config.steps as usize);
    for _ in 0..config.steps {
        let idx: Vec<i64> = (0..config.batch).map(|_| rng.random_range(0..n)).collect();
        let batch = windows.index_select(0, &Tensor::from_slice(&idx));
        let hist = batch.narrow(1, 0, config.observed as i64);
        let target = batch.narrow(1, config.observed as i64, config.predict as i64);
        let pred = ckpt.rollout(&hist, config.predict)?;
        let loss = (pred - target).square().mean(Kind::Float);
        opt.backward_step(&loss);
        history.push(loss.double_value(&[]));
    }
    ckpt.meta.step = config.steps;
    Ok((ckpt, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch() -> ForecasterArch {
        ForecasterArch {
            joints: 3,
            observed: 10,
            predict: 32,
            hidden: 16,
            layers: 2,
        }
    }

    fn history(len: usize) -> PoseSequence {
        let poses = (0..len)
            .map(|t| Pose::visible(vec![[0.3 + 0.01 * t as f32, 0.5], [0.5, 0.5], [0.7, 0.2]]).unwrap())
            .collect();
        PoseSequence::new(poses).unwrap()
    }

    #[test]
    fn forecast_shapes_and_range() {
        let ck = ForecasterCheckpoint::new(arch(), 1).unwrap();
        let out = forecast_poses(&history(10), 32, &ck).unwrap();
        assert_eq!(out.len(), 32);
        assert_eq!(out.num_joints(), Some(3));
        for p in out.poses() {
            assert!(p.joints().iter().flatten().all(|v| (0.0..=1.0).contains(v)));
        }
        assert!(forecast_poses(&history(10), 0, &ck).unwrap().is_empty());
        assert_eq!(forecast_poses(&history(10), 5, &ck).unwrap(), forecast_poses(&history(10), 5, &ck).unwrap());
    }

    #[test]
    fn wrong_history_length_is_an_argument_error() {
        let ck = ForecasterCheckpoint::new(arch(), 1).unwrap();
        assert!(matches!(forecast_poses(&history(9), 4, &ck), Err(Error::Argument(_))));
        assert!(matches!(forecast_poses(&history(10), 33, &ck), Err(Error::Argument(_))));
    }

    #[test]
    fn freeze_last_pose_repeats() {
        let h = history(10);
        let out = FreezeLastPose.forecast(&h, 4).unwrap();
        assert!(out.poses().iter().all(|p| p == h.last().unwrap()));
    }

    #[test]
    fn checkpoint_round_trip_keeps_lengths() {
        let dir = tempfile::tempdir().unwrap();
        let ck = ForecasterCheckpoint::new(arch(), 3).unwrap();
        ck.save(dir.path().join("f.ckpt")).unwrap();
        let back = ForecasterCheckpoint::load(dir.path().join("f.ckpt")).unwrap();
        assert_eq!((back.observed(), back.predict()), (10, 32));
        assert_eq!(forecast_poses(&history(10), 8, &ck).unwrap(), forecast_poses(&history(10), 8, &back).unwrap());
    }
}
