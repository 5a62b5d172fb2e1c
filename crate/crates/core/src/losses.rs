//! Loss terms for both generators and both critics.
//!
//! All functions work on batched tensors: frames `[B, C, H, W]`, clips
//! `[B, C, K, H, W]`, conditions with `J` channels in place of `C`. Scalar
//! losses are averaged over the batch. L1 terms use mean reduction.

use rand::Rng;
use serde::{Deserialize, Serialize};
use tch::Tensor;

use crate::error::{shape_err, Error, Result};
use crate::features::FeatureExtractor;
use crate::nets::critic::Critic;

/// Added under the square root of the gradient norm so it stays differentiable at zero.
const NORM_EPS: f64 = 1e-12;

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.size() != b.size() {
        return Err(shape_err!("{what}: shapes {:?} and {:?} differ", a.size(), b.size()));
    }
    Ok(())
}

/// Media and condition must agree on every dimension except channels.
fn check_condition(media: &Tensor, cond: &Tensor, rank: usize) -> Result<()> {
    let (m, c) = (media.size(), cond.size());
    if m.len() != rank || c.len() != rank {
        return Err(shape_err!("expected rank-{rank} media and condition, got {m:?} and {c:?}"));
    }
    if m[0] != c[0] || m[2..] != c[2..] {
        return Err(shape_err!("media {m:?} and condition {c:?} disagree outside the channel axis"));
    }
    Ok(())
}

/// Mean absolute error over all elements.
pub fn loss_reconstruction(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    same_shape(pred, target, "reconstruction")?;
    Ok((pred - target).abs().mean(pred.kind()))
}

/// Mean mask activation; the mask must lie in `[0, 1]`.
pub fn loss_sparsity(mask: &Tensor) -> Result<Tensor> {
    if mask.numel() == 0 {
        return Err(Error::Argument("empty mask".into()));
    }
    let (lo, hi) = (mask.min().double_value(&[]), mask.max().double_value(&[]));
    if !(lo >= 0.0 && hi <= 1.0) {
        return Err(Error::Argument(format!("mask values must lie in [0, 1], found [{lo}, {hi}]")));
    }
    Ok(mask.abs().mean(mask.kind()))
}

/// Per-sample image critic scores `[B]` of `[frame, cond]`.
pub fn critic_image(critic: &dyn Critic, frame: &Tensor, cond: &Tensor) -> Result<Tensor> {
    check_condition(frame, cond, 4)?;
    Ok(critic.score(&Tensor::cat(&[frame, cond], 1)))
}

/// Per-sample video critic scores `[B]` of `[clip, conds]`.
pub fn critic_video(critic: &dyn Critic, clip: &Tensor, conds: &Tensor) -> Result<Tensor> {
    check_condition(clip, conds, 5)?;
    Ok(critic.score(&Tensor::cat(&[clip, conds], 1)))
}

/// Per-sample L2 norm of the critic's gradient with respect to its input.
///
/// The returned norms stay attached to the graph so a penalty built on
/// them can be backpropagated into the critic parameters.
pub fn critic_input_gradient_norm(critic: &dyn Critic, input: &Tensor) -> Result<Tensor> {
    let input = input.detach().set_requires_grad(true);
    let score = critic.score(&input);
    if !score.requires_grad() {
        return Err(Error::Contract("critic score does not depend differentiably on its input".into()));
    }
    let grads = Tensor::f_run_backward(&[score.sum(score.kind())], &[&input], true, true)
        .map_err(|e| Error::Contract(format!("critic is not differentiable: {e}")))?;
    let g = grads[0].flatten(1, -1);
    Ok((g.square().sum_dim_intlist([1].as_slice(), false, g.kind()) + NORM_EPS).sqrt())
}

/// One interpolation coefficient per sample, broadcastable against `like`.
pub fn sample_epsilon(like: &Tensor, rng: &mut impl Rng) -> Tensor {
    let b = like.size()[0];
    let vals: Vec<f64> = (0..b).map(|_| rng.random::<f64>()).collect();
    let mut shape = vec![b];
    shape.extend(std::iter::repeat_n(1, like.dim() - 1));
    Tensor::from_slice(&vals).view(shape.as_slice()).to_kind(like.kind())
}

/// `mean_b (‖∇ D([x̂, cond])‖ − 1)²` with `x̂ = ε·real + (1−ε)·fake`.
///
/// The gradient covers the condition channels as well as the media.
pub fn gradient_penalty(
    critic: &dyn Critic,
    real: &Tensor,
    fake: &Tensor,
    cond: &Tensor,
    rng: &mut impl Rng,
) -> Result<Tensor> {
    same_shape(real, fake, "gradient penalty")?;
    check_condition(real, cond, real.dim())?;
    let eps = sample_epsilon(real, rng);
    let x_hat = &eps * real.detach() + (1.0 - &eps) * fake.detach();
    let input = Tensor::cat(&[&x_hat, &cond.detach()], 1);
    gradient_penalty_at(critic, &input)
}

/// Penalty evaluated at an already interpolated, concatenated input.
pub fn gradient_penalty_at(critic: &dyn Critic, input: &Tensor) -> Result<Tensor> {
    let norm = critic_input_gradient_norm(critic, input)?;
    Ok((norm - 1.0).square().mean(input.kind()))
}

/// `−mean_b D_I([fake, cond])`.
pub fn loss_generator_image(d_i: &dyn Critic, fake: &Tensor, cond: &Tensor) -> Result<Tensor> {
    let s = critic_image(d_i, fake, cond)?;
    Ok(-s.mean(s.kind()))
}

/// Critic objective split into its parts.
#[derive(Debug)]
pub struct CriticLoss {
    /// `wasserstein + λ·gp`, the quantity minimized.
    pub total: Tensor,
    /// `mean D(fake) − mean D(real)`.
    pub wasserstein: Tensor,
    pub gp: Tensor,
}

fn critic_loss(
    critic: &dyn Critic,
    real: &Tensor,
    fake: &Tensor,
    cond: &Tensor,
    lambda: f64,
    rng: &mut impl Rng,
    rank: usize,
) -> Result<CriticLoss> {
    same_shape(real, fake, "critic loss")?;
    check_condition(real, cond, rank)?;
    let score = |x: &Tensor| critic.score(&Tensor::cat(&[x, cond], 1));
    let (sf, sr) = (score(&fake.detach()), score(real));
    let wasserstein = sf.mean(sf.kind()) - sr.mean(sr.kind());
    let gp = gradient_penalty(critic, real, fake, cond, rng)?;
    Ok(CriticLoss {
        total: &wasserstein + &gp * lambda,
        wasserstein,
        gp,
    })
}

/// `D_I(fake) − D_I(real) + λ·GP` on frames.
pub fn loss_critic_image(
    d_i: &dyn Critic,
    real: &Tensor,
    fake: &Tensor,
    cond: &Tensor,
    lambda: f64,
    rng: &mut impl Rng,
) -> Result<CriticLoss> {
    critic_loss(d_i, real, fake, cond, lambda, rng, 4)
}

/// `D_V(fake) − D_V(real) + λ·GP` on clips.
pub fn loss_critic_video(
    d_v: &dyn Critic,
    real: &Tensor,
    fake: &Tensor,
    conds: &Tensor,
    lambda: f64,
    rng: &mut impl Rng,
) -> Result<CriticLoss> {
    critic_loss(d_v, real, fake, conds, lambda, rng, 5)
}

/// Folds the time axis of `[B, C, K, H, W]` into the batch: `[B·K, C, H, W]`.
pub fn frames_of(clip: &Tensor) -> Tensor {
    let s = clip.size();
    clip.permute([0, 2, 1, 3, 4]).reshape([s[0] * s[2], s[1], s[3], s[4]])
}

/// `−D_V([clip, conds]) − (1/K) Σ_k D_I([frame_k, cond_k])`, batch-averaged.
pub fn loss_generator_refine(d_i: &dyn Critic, d_v: &dyn Critic, refined: &Tensor, conds: &Tensor) -> Result<Tensor> {
    let dv = critic_video(d_v, refined, conds)?;
    let (b, k) = (refined.size()[0], refined.size()[2]);
    let di = critic_image(d_i, &frames_of(refined), &frames_of(conds))?
        .view([b, k])
        .mean_dim([1].as_slice(), false, dv.kind());
    let per_sample = -dv - di;
    Ok(per_sample.mean(per_sample.kind()))
}

/// `‖C1(target) − C1(pred)‖² + ‖C2(target) − C2(pred)‖²`, batch-averaged.
pub fn loss_feature_similarity(
    pred: &Tensor,
    target: &Tensor,
    c1: &dyn FeatureExtractor,
    c2: &dyn FeatureExtractor,
) -> Result<Tensor> {
    same_shape(pred, target, "feature similarity")?;
    let mut total = Tensor::zeros([], (pred.kind(), pred.device()));
    for c in [c1, c2] {
        let (ft, fp) = (c.features(target), c.features(pred));
        if ft.size() != fp.size() || ft.dim() != 2 || ft.size()[0] != pred.size()[0] {
            return Err(Error::Contract(format!(
                "feature extractor returned {:?} and {:?} for a batch of {}",
                ft.size(),
                fp.size(),
                pred.size()[0]
            )));
        }
        let d = (ft - fp).square().sum_dim_intlist([1].as_slice(), false, pred.kind());
        total += d.mean(pred.kind());
    }
    Ok(total)
}

/// Weights combining the generator terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub rec: f64,
    pub sparsity: f64,
    pub gen: f64,
    pub feat: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            rec: 1.0,
            sparsity: 1.0,
            gen: 1.0,
            feat: 1.0,
        }
    }
}

/// Scalar values logged for one training step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub rec: f64,
    pub sparsity: f64,
    pub gen: f64,
    pub critic: f64,
    pub gp: f64,
    pub feat: f64,
    /// Weighted generator objective.
    pub total: f64,
}

impl LossReport {
    pub fn new(w: &LossWeights, rec: f64, sparsity: f64, gen: f64, feat: f64, critic: f64, gp: f64) -> Self {
        Self {
            rec,
            sparsity,
            gen,
            critic,
            gp,
            feat,
            total: Self::weighted(w, rec, sparsity, gen, feat),
        }
    }

    pub fn weighted(w: &LossWeights, rec: f64, sparsity: f64, gen: f64, feat: f64) -> f64 {
        w.rec * rec + w.sparsity * sparsity + w.gen * gen + w.feat * feat
    }

    pub fn is_finite(&self) -> bool {
        [self.rec, self.sparsity, self.gen, self.critic, self.gp, self.feat, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Weighted generator objective as a differentiable tensor.
pub fn weighted_total(w: &LossWeights, rec: &Tensor, sparsity: &Tensor, gen: &Tensor, feat: Option<&Tensor>) -> Tensor {
    let mut t = rec * w.rec + sparsity * w.sparsity + gen * w.gen;
    if let Some(f) = feat {
        t += f * w.feat;
    }
    t
}
