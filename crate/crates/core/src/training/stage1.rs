//! Stage 1: the forecasting generator against the image critic.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tch::Tensor;

use super::data::{sample_time_jump, ClipBank};
use super::{adam, feature_extractors, LossHistory, TrainConfig};
use crate::condition::synth::{DatasetManifest, Split};
use crate::error::{arg_err, Result};
use crate::losses::{
    loss_critic_image, loss_feature_similarity, loss_generator_image, loss_reconstruction, loss_sparsity,
    weighted_total, LossReport,
};
use crate::nets::critic::{CriticArch, CriticCheckpoint};
use crate::nets::gm::{GmArch, GmCheckpoint};

/// G_M architecture for a dataset under a config's width scale and dense flag.
pub fn gm_arch(manifest: &DatasetManifest, config: &TrainConfig) -> GmArch {
    let base = GmArch::new(manifest.height as i64, manifest.width as i64, manifest.joints as i64);
    GmArch {
        encoder_widths: base.encoder_widths.iter().map(|&w| config.width(w)).collect(),
        decoder_widths: base.decoder_widths.iter().map(|&w| config.width(w)).collect(),
        dense: config.dense,
        ..base
    }
}

pub fn image_critic_arch(manifest: &DatasetManifest, config: &TrainConfig) -> CriticArch {
    let mut arch = CriticArch::image(3, manifest.joints as i64);
    arch.widths = arch.widths.iter().map(|&w| config.width(w)).collect();
    arch
}

#[derive(Debug)]
pub struct Stage1Output {
    pub gm: GmCheckpoint,
    pub d_i: CriticCheckpoint,
    pub history: LossHistory,
}

/// Trains from fresh networks seeded by `config.seed`.
pub fn train_stage1(manifest: &DatasetManifest, config: &TrainConfig) -> Result<Stage1Output> {
    config.validate()?;
    let gm = GmCheckpoint::new(gm_arch(manifest, config), config.seed)?;
    let d_i = CriticCheckpoint::new(image_critic_arch(manifest, config), config.seed.wrapping_add(1))?;
    resume_stage1(manifest, config, gm, d_i)
}

/// Runs `config.steps` further steps, continuing the step counter stored in `gm`.
pub fn resume_stage1(
    manifest: &DatasetManifest,
    config: &TrainConfig,
    mut gm: GmCheckpoint,
    mut d_i: CriticCheckpoint,
) -> Result<Stage1Output> {
    config.validate()?;
    let bank = ClipBank::load(manifest, Split::ForecasterTrain)?;
    if bank.clip_len <= config.k_max {
        return Err(arg_err!("clips of {} frames are too short for k_max {}", bank.clip_len, config.k_max));
    }
    let first = gm.meta.step;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ first.rotate_left(32) ^ 0x57a6e1);
    let mut og = adam(gm.var_store(), config)?;
    let mut od = adam(d_i.var_store(), config)?;
    let weights = config.weights();
    let extractors = feature_extractors(config);
    let mut history = LossHistory::default();
    let started = Instant::now();

    let sample = |rng: &mut ChaCha8Rng| -> Result<(Tensor, Tensor, Tensor, Tensor)> {
        let mut src = Vec::with_capacity(config.batch);
        let mut dst = Vec::with_capacity(config.batch);
        for _ in 0..config.batch {
            let n = rng.random_range(0..bank.len());
            let (t, k) = sample_time_jump(bank.clip_len, config.k_max, rng)?;
            src.push((n, t));
            dst.push((n, t + k));
        }
        Ok((bank.frames(&src), bank.maps(&src), bank.frames(&dst), bank.maps(&dst)))
    };

    for i in 0..config.steps {
        let step = first + i;
        let (mut critic_total, mut gp_total) = (0.0, 0.0);
        for _ in 0..config.ratio {
            let (img, m_src, target, m_dst) = sample(&mut rng)?;
            let fake = tch::no_grad(|| gm.forward(&img, &m_src, &m_dst))?.frame;
            let l = loss_critic_image(&d_i, &target, &fake, &m_dst, config.lambda_gp, &mut rng)?;
            od.backward_step(&l.total);
            critic_total += l.total.double_value(&[]);
            gp_total += l.gp.double_value(&[]);
        }
        let (img, m_src, target, m_dst) = sample(&mut rng)?;
        let out = gm.forward(&img, &m_src, &m_dst)?;
        let rec = loss_reconstruction(&out.frame, &target)?;
        let sparsity = loss_sparsity(&out.mask)?;
        let gen = loss_generator_image(&d_i, &out.frame, &m_dst)?;
        let feat = match &extractors {
            Some(ex) => {
                let (c1, c2) = ex.pair();
                Some(loss_feature_similarity(&out.frame, &target, c1, c2)?)
            }
            None => None,
        };
        let total = weighted_total(&weights, &rec, &sparsity, &gen, feat.as_ref());
        og.backward_step(&total);
        let report = LossReport::new(
            &weights,
            rec.double_value(&[]),
            sparsity.double_value(&[]),
            gen.double_value(&[]),
            feat.map_or(0.0, |f| f.double_value(&[])),
            critic_total / config.ratio as f64,
            gp_total / config.ratio as f64,
        );
        history.push(step, report, out.mask.mean(out.mask.kind()).double_value(&[]));
        if i % config.log_every == 0 || i + 1 == config.steps {
            log::info!(
                "stage1 step {step} rec {:.4} mask {:.3} gen {:.3} critic {:.3} ({:.1}s)",
                report.rec,
                history.mask_means.last().copied().unwrap_or_default(),
                report.gen,
                report.critic,
                started.elapsed().as_secs_f64()
            );
        }
    }
    gm.meta.step = first + config.steps;
    gm.meta.config = Some(config.clone());
    d_i.meta.step = first + config.steps;
    d_i.meta.config = Some(config.clone());
    Ok(Stage1Output { gm, d_i, history })
}
