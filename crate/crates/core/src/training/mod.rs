//! Stage-wise training, sampling and the generation pipeline.

mod config;
mod data;
mod eval;
mod pipeline;
mod stage1;
mod stage2;

use std::path::Path;

use serde::Serialize;
use tch::nn::{self, OptimizerConfig};

pub use config::{FeatExtractor, TrainConfig};
pub use data::{sample_time_jump, ClipBank};
pub use eval::{evaluate, EvalReport, EvalRow, EvalSummary};
pub use pipeline::{coarse_frames, generate_from_maps, generate_video, refine_frames, GeneratedVideo};
pub use stage1::{gm_arch, image_critic_arch, resume_stage1, train_stage1, Stage1Output};
pub use stage2::{gr_arch, resume_stage2, train_stage2, video_critic_arch, Stage2Output};

use crate::error::{Error, Result};
use crate::features::{toy_extractors, AppearanceFeatures, FeatureExtractor, IdentityFeatures, StructureFeatures};
use crate::io::atomic_write;
use crate::losses::LossReport;

pub(crate) fn adam(vs: &nn::VarStore, config: &TrainConfig) -> Result<nn::Optimizer> {
    nn::Adam {
        beta1: config.beta1,
        beta2: config.beta2,
        wd: 0.0,
        eps: 1e-8,
        amsgrad: false,
    }
    .build(vs, config.lr)
    .map_err(Error::from)
}

pub(crate) enum Extractors {
    Identity,
    Toy(AppearanceFeatures, StructureFeatures),
}

impl Extractors {
    pub(crate) fn pair(&self) -> (&dyn FeatureExtractor, &dyn FeatureExtractor) {
        match self {
            Extractors::Identity => (&IdentityFeatures, &IdentityFeatures),
            Extractors::Toy(a, s) => (a, s),
        }
    }
}

pub(crate) fn feature_extractors(config: &TrainConfig) -> Option<Extractors> {
    match config.feat_extractor {
        FeatExtractor::None => None,
        FeatExtractor::Identity => Some(Extractors::Identity),
        FeatExtractor::Toy => {
            let (a, s) = toy_extractors(3);
            Some(Extractors::Toy(a, s))
        }
    }
}

#[derive(Debug, Serialize)]
struct LossRow {
    step: u64,
    rec: f64,
    sparsity: f64,
    gen: f64,
    critic: f64,
    gp: f64,
    feat: f64,
    total: f64,
}

/// Per-step loss reports of one training run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossHistory {
    pub steps: Vec<u64>,
    pub reports: Vec<LossReport>,
    /// Mean predicted mask activation at each step.
    pub mask_means: Vec<f64>,
}

impl LossHistory {
    pub fn push(&mut self, step: u64, report: LossReport, mask_mean: f64) {
        self.steps.push(step);
        self.reports.push(report);
        self.mask_means.push(mask_mean);
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Mean of `f` over the first or last `n` reports.
    pub fn window_mean(&self, n: usize, from_end: bool, f: impl Fn(&LossReport) -> f64) -> f64 {
        let n = n.min(self.reports.len()).max(1);
        let slice = if from_end {
            &self.reports[self.reports.len().saturating_sub(n)..]
        } else {
            &self.reports[..n.min(self.reports.len())]
        };
        slice.iter().map(f).sum::<f64>() / slice.len().max(1) as f64
    }

    /// CSV with columns `step,rec,sparsity,gen,critic,gp,feat,total`.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for (&step, r) in self.steps.iter().zip(&self.reports) {
            w.serialize(LossRow {
                step,
                rec: r.rec,
                sparsity: r.sparsity,
                gen: r.gen,
                critic: r.critic,
                gp: r.gp,
                feat: r.feat,
                total: r.total,
            })?;
        }
        w.into_inner().map_err(|e| Error::Csv(e.into_error().into()))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        atomic_write(path.as_ref(), &self.to_csv()?)
    }
}
