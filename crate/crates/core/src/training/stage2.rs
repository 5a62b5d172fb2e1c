//! Stage 2: the refiner against both critics, on coarse clips from a frozen G_M.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tch::{Kind, Tensor};

use super::data::ClipBank;
use super::pipeline::coarse_frames;
use super::stage1::image_critic_arch;
use super::{adam, feature_extractors, LossHistory, TrainConfig};
use crate::condition::synth::{DatasetManifest, Split};
use crate::error::{arg_err, Result};
use crate::losses::{
    frames_of, loss_critic_image, loss_critic_video, loss_feature_similarity, loss_generator_refine,
    loss_reconstruction, loss_sparsity, weighted_total, LossReport,
};
use crate::nets::critic::{CriticArch, CriticCheckpoint};
use crate::nets::gm::GmCheckpoint;
use crate::nets::gr::{GrArch, GrCheckpoint};

pub fn gr_arch(manifest: &DatasetManifest, config: &TrainConfig) -> GrArch {
    let base = GrArch::new(manifest.height as i64, manifest.width as i64, manifest.joints as i64, config.clip_k as i64);
    GrArch {
        widths: base.widths.map(|w| config.width(w)),
        ..base
    }
}

pub fn video_critic_arch(manifest: &DatasetManifest, config: &TrainConfig) -> CriticArch {
    let mut arch = CriticArch::video(3, manifest.joints as i64);
    arch.widths = arch.widths.iter().map(|&w| config.width(w)).collect();
    arch
}

#[derive(Debug)]
pub struct Stage2Output {
    pub gr: GrCheckpoint,
    pub d_i: CriticCheckpoint,
    pub d_v: CriticCheckpoint,
    pub history: LossHistory,
}

/// Coarse windows generated once by the frozen forecaster.
struct CoarseCache {
    /// `[N, C, K, H, W]`, half precision.
    clips: Tensor,
    /// `(clip, first frame)` of each window.
    origins: Vec<(usize, usize)>,
}

/// Anchor frames sharing the evaluation anchor's phase modulo 4, each
/// followed by enough frames for `ceil(predict / K)` windows.
fn anchors(clip_len: usize, k: usize, observed: usize, predict: usize) -> (Vec<usize>, usize) {
    let windows = predict.div_ceil(k).max(1);
    let span = windows * k;
    let phase = (observed.max(1) - 1) % 4;
    let list = if clip_len > span {
        (0..clip_len - span).filter(|a| a % 4 == phase).collect()
    } else {
        Vec::new()
    };
    (list, windows)
}

fn build_cache(gm: &GmCheckpoint, bank: &ClipBank, config: &TrainConfig) -> Result<CoarseCache> {
    let k = config.clip_k;
    let (anchors, windows) = anchors(bank.clip_len, k, config.observed, config.predict);
    if anchors.is_empty() {
        return Err(arg_err!("clips of {} frames are too short for refiner windows of {k}", bank.clip_len));
    }
    let (mut clips, mut origins) = (Vec::new(), Vec::new());
    for n in 0..bank.len() {
        for &a in &anchors {
            let frame = bank.frames(&[(n, a)]);
            let map_now = bank.maps(&[(n, a)]);
            let targets = bank.clip_maps(&[(n, a + 1)], windows * k);
            let (coarse, _, _) = tch::no_grad(|| coarse_frames(gm, &frame, &map_now, &targets))?;
            for w in 0..windows {
                clips.push(coarse.narrow(2, (w * k) as i64, k as i64).to_kind(Kind::Half));
                origins.push((n, a + 1 + w * k));
            }
        }
    }
    Ok(CoarseCache {
        clips: Tensor::cat(&clips, 0),
        origins,
    })
}

/// Trains fresh G_R, D_I and D_V seeded by `config.seed` on top of a frozen G_M.
pub fn train_stage2(manifest: &DatasetManifest, gm: &GmCheckpoint, config: &TrainConfig) -> Result<Stage2Output> {
    config.validate()?;
    let gr = GrCheckpoint::new(gr_arch(manifest, config), config.seed)?;
    let d_i = CriticCheckpoint::new(image_critic_arch(manifest, config), config.seed.wrapping_add(1))?;
    let d_v = CriticCheckpoint::new(video_critic_arch(manifest, config), config.seed.wrapping_add(2))?;
    resume_stage2(manifest, gm, config, gr, d_i, d_v)
}

pub fn resume_stage2(
    manifest: &DatasetManifest,
    gm: &GmCheckpoint,
    config: &TrainConfig,
    mut gr: GrCheckpoint,
    mut d_i: CriticCheckpoint,
    mut d_v: CriticCheckpoint,
) -> Result<Stage2Output> {
    config.validate()?;
    if gr.clip_len() != config.clip_k {
        return Err(arg_err!("refiner was built for K={}, config asks for {}", gr.clip_len(), config.clip_k));
    }
    let bank = ClipBank::load(manifest, Split::RefinerTrain)?;
    let cache = build_cache(gm, &bank, config)?;
    let k = config.clip_k;
    let first = gr.meta.step;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ first.rotate_left(32) ^ 0x2ef1_4e);
    let mut og = adam(gr.var_store(), config)?;
    let mut odi = adam(d_i.var_store(), config)?;
    let mut odv = adam(d_v.var_store(), config)?;
    let weights = config.weights();
    let extractors = feature_extractors(config);
    let mut history = LossHistory::default();
    let started = Instant::now();

    let sample = |rng: &mut ChaCha8Rng| -> (Tensor, Tensor, Tensor) {
        let picks: Vec<usize> = (0..config.batch).map(|_| rng.random_range(0..cache.origins.len())).collect();
        let idx = Tensor::from_slice(&picks.iter().map(|&p| p as i64).collect::<Vec<_>>());
        let origins: Vec<_> = picks.iter().map(|&p| cache.origins[p]).collect();
        (
            cache.clips.index_select(0, &idx).to_kind(Kind::Float),
            bank.clip_frames(&origins, k),
            bank.clip_maps(&origins, k),
        )
    };
    // One random timestep per sample, for the frame critic.
    let pick_frames = |clip: &Tensor, ts: &[i64]| -> Tensor {
        let b = clip.size()[0];
        let parts: Vec<Tensor> = (0..b).map(|i| clip.get(i).select(1, ts[i as usize])).collect();
        Tensor::stack(&parts, 0)
    };

    for i in 0..config.steps {
        let step = first + i;
        let (mut critic_total, mut gp_total) = (0.0, 0.0);
        for _ in 0..config.ratio {
            let (coarse, real, conds) = sample(&mut rng);
            let fake = tch::no_grad(|| gr.forward(&coarse, &conds))?.clip;
            let lv = loss_critic_video(&d_v, &real, &fake, &conds, config.lambda_gp, &mut rng)?;
            let ts: Vec<i64> = (0..config.batch).map(|_| rng.random_range(0..k as i64)).collect();
            let li = loss_critic_image(
                &d_i,
                &pick_frames(&real, &ts),
                &pick_frames(&fake, &ts),
                &pick_frames(&conds, &ts),
                config.lambda_gp,
                &mut rng,
            )?;
            let joint = &lv.total + &li.total;
            odi.zero_grad();
            odv.zero_grad();
            joint.backward();
            odi.step();
            odv.step();
            critic_total += joint.double_value(&[]);
            gp_total += lv.gp.double_value(&[]) + li.gp.double_value(&[]);
        }
        let (coarse, real, conds) = sample(&mut rng);
        let out = gr.forward(&coarse, &conds)?;
        let rec = loss_reconstruction(&out.clip, &real)?;
        let sparsity = loss_sparsity(&out.mask)?;
        let gen = loss_generator_refine(&d_i, &d_v, &out.clip, &conds)?;
        let feat = match &extractors {
            Some(ex) => {
                let (c1, c2) = ex.pair();
                Some(loss_feature_similarity(&frames_of(&out.clip), &frames_of(&real), c1, c2)?)
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
        history.push(step, report, out.mask.mean(Kind::Float).double_value(&[]));
        if i % config.log_every == 0 || i + 1 == config.steps {
            log::info!(
                "stage2 step {step} rec {:.4} gen {:.3} critic {:.3} ({:.1}s)",
                report.rec,
                report.gen,
                report.critic,
                started.elapsed().as_secs_f64()
            );
        }
    }
    for meta in [&mut gr.meta, &mut d_i.meta, &mut d_v.meta] {
        meta.step = first + config.steps;
        meta.config = Some(config.clone());
    }
    Ok(Stage2Output { gr, d_i, d_v, history })
}
