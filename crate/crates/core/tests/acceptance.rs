//! Acceptance suite: prints one `[PASS]`/`[FAIL]` line per criterion and a
//! tally. With `RMVL_ACCEPTANCE_STRICT=1` it exits non-zero if any criterion
//! fails.
//!
//! Positional arguments select criteria by substring, e.g.
//! `cargo test --test acceptance -- metrics losses`.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::OnceLock;
use std::time::Instant;

use ndarray::{Array3, Array4};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tch::{Device, Kind, Tensor};

use rmvl_core::condition::forecaster::split_coordinate_mse;
use rmvl_core::condition::{synthesize_dataset, DatasetConfig, DatasetManifest, FreezeLastPose, Split};
use rmvl_core::features::{FeatureExtractor, IdentityFeatures};
use rmvl_core::losses::*;
use rmvl_core::metrics::{acd_content, acd_identity, euclidean, mse, psnr, psnr_from_mse, FrameEmbedder, RandomConvEmbedder};
use rmvl_core::nets::critic::{ConstantStubCritic, Critic, CriticArch, CriticCheckpoint, LinearStubCritic};
use rmvl_core::nets::gm::{analogy_embed, GmArch, GmCheckpoint, ImageEmbedding, MotionEmbedding};
use rmvl_core::nets::gr::{GrArch, GrCheckpoint};
use rmvl_core::residual::{compose_clip, compose_frame, Frame, ResidualDecomposition, SpatiotemporalResidual, VideoClip};
use rmvl_core::training::{
    evaluate, gm_arch, sample_time_jump, train_stage1, train_stage2, ClipBank, TrainConfig,
};

type Check = Result<Outcome, Box<dyn std::error::Error>>;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Check {
    Ok(Outcome {
        pass,
        detail: detail.into(),
    })
}

const F64: (Kind, Device) = (Kind::Double, Device::Cpu);
const F32: (Kind, Device) = (Kind::Float, Device::Cpu);

fn val(t: &Tensor) -> f64 {
    t.double_value(&[])
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

/// Collects failed sub-checks so each criterion reports everything at once.
#[derive(Default)]
struct Failures(Vec<String>);

impl Failures {
    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        if !ok {
            self.0.push(what());
        }
    }

    fn near(&mut self, what: &str, got: f64, want: f64, tol: f64) {
        self.check(close(got, want, tol), || format!("{what}: got {got}, want {want}"));
    }

    fn finish(self, n: usize, noun: &str) -> Check {
        if self.0.is_empty() {
            outcome(true, format!("{n} {noun} hold"))
        } else {
            outcome(false, self.0.join("; "))
        }
    }
}

fn rand_array3(rng: &mut ChaCha8Rng, shape: (usize, usize, usize), lo: f32, hi: f32) -> Array3<f32> {
    Array3::from_shape_fn(shape, |_| rng.random_range(lo..=hi))
}

fn rand_frame(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Frame {
    Frame::new(rand_array3(rng, (h, w, 3), -1.0, 1.0)).unwrap()
}

fn rand_clip(rng: &mut ChaCha8Rng, k: usize, h: usize, w: usize) -> VideoClip {
    VideoClip::new((0..k).map(|_| rand_frame(rng, h, w)).collect()).unwrap()
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[i64], lo: f64, hi: f64) -> Tensor {
    let n: i64 = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::from_slice(&v).view(shape)
}

// ---------------------------------------------------------------- composition

fn composition() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut f = Failures::default();

    let base = Frame::filled(8, 8, 3, 0.2)?;
    let content = Array3::from_elem((8, 8, 3), 0.8f32);
    for (m, want) in [(0.0f32, 0.2f32), (1.0, 0.8), (0.5, 0.5)] {
        let dec = ResidualDecomposition::new(Array3::from_elem((8, 8, 1), m), content.clone())?;
        let out = compose_frame(&base, &dec)?;
        let tol = if m == 0.5 { 1e-6 } else { 0.0 };
        f.check(out.pixels().iter().all(|&v| (v - want).abs() <= tol), || format!("scalar m={m}"));
    }

    for i in 0..100 {
        let k = rng.random_range(1..=4);
        let (h, w) = (rng.random_range(8..=12), rng.random_range(8..=12));
        let base = rand_clip(&mut rng, k, h, w);
        let mask = Array4::from_shape_fn((k, h, w, 1), |_| rng.random_range(0.0f32..=1.0));
        let content = Array4::from_shape_fn((k, h, w, 3), |_| rng.random_range(-1.0f32..=1.0));
        let dec = SpatiotemporalResidual::new(mask, content.clone())?;
        let out = compose_clip(&base, &dec)?;
        for t in 0..k {
            let oracle = compose_frame(&base.frames()[t], &dec.step(t))?;
            f.check(out.frames()[t] == oracle, || format!("clip {i} step {t} differs from per-frame oracle"));
        }

        let zeros = SpatiotemporalResidual::new(Array4::zeros((k, h, w, 1)), content.clone())?;
        f.check(compose_clip(&base, &zeros)? == base, || format!("clip {i}: m=0 is not the base clip"));
        let ones = SpatiotemporalResidual::new(Array4::ones((k, h, w, 1)), content.clone())?;
        let full = compose_clip(&base, &ones)?;
        for t in 0..k {
            let c = content.index_axis(ndarray::Axis(0), t);
            f.check(full.frames()[t].pixels().view() == c, || format!("clip {i}: m=1 is not the content"));
        }
    }
    f.finish(100, "random clips plus scalar identities")
}

// -------------------------------------------------------------------- analogy

fn analogy() -> Check {
    let mut f = Failures::default();
    let arch = GmArch::new(64, 64, 8);
    for seed in 0..10u64 {
        let gm = GmCheckpoint::new(arch.clone(), seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let frame = rand_tensor(&mut rng, &[2, 3, 64, 64], -1.0, 1.0).to_kind(Kind::Float);
        let map = rand_tensor(&mut rng, &[2, 8, 64, 64], 0.0, 1.0).to_kind(Kind::Float);
        let out = tch::no_grad(|| gm.forward(&frame, &map, &map))?;
        f.check(out.analogy.equal(&out.image_bottleneck), || format!("seed {seed}: analogy != image bottleneck"));
        let other = rand_tensor(&mut rng, &[2, 8, 64, 64], 0.0, 1.0).to_kind(Kind::Float);
        let moved = tch::no_grad(|| gm.forward(&frame, &map, &other))?;
        f.check(!moved.analogy.equal(&moved.image_bottleneck), || format!("seed {seed}: motion has no effect"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let grid = |rng: &mut ChaCha8Rng| rand_tensor(rng, &[1, 2, 2, 2], -1.0, 1.0);
    let (s, d, i) = (grid(&mut rng), grid(&mut rng), grid(&mut rng));
    let img = ImageEmbedding {
        bottleneck: i.shallow_clone(),
        skips: vec![],
    };
    let got = analogy_embed(&MotionEmbedding(s.shallow_clone()), &MotionEmbedding(d.shallow_clone()), &img)?;
    let [gv, sv, dv, iv] = [&got, &s, &d, &i].map(|t| Vec::<f64>::try_from(t.view([-1])).unwrap());
    for j in 0..8 {
        f.near("elementwise analogy", gv[j], dv[j] - sv[j] + iv[j], 1e-12);
    }
    f.finish(10, "seeds with exact cancellation")
}

// ----------------------------------------------------------- gradient penalty

/// Central-difference gradient of `critic` at `input` (batch of one).
fn numeric_input_grad(critic: &dyn Critic, input: &Tensor, h: f64) -> Vec<f64> {
    let base = Vec::<f64>::try_from(input.view([-1])).unwrap();
    let shape = input.size();
    let eval = |v: &[f64]| val(&critic.score(&Tensor::from_slice(v).view(shape.as_slice())).sum(Kind::Double));
    (0..base.len())
        .map(|i| {
            let mut p = base.clone();
            p[i] += h;
            let up = eval(&p);
            p[i] -= 2.0 * h;
            (up - eval(&p)) / (2.0 * h)
        })
        .collect()
}

fn gradient_penalty_check() -> Check {
    let mut f = Failures::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);

    // Linear critic over N = 4 concatenated inputs: ‖∇‖ = 2, penalty 1.
    let real = rand_tensor(&mut rng, &[1, 2, 1, 1], -1.0, 1.0);
    let fake = rand_tensor(&mut rng, &[1, 2, 1, 1], -1.0, 1.0);
    let cond = rand_tensor(&mut rng, &[1, 2, 1, 1], 0.0, 1.0);
    let gp = gradient_penalty(&LinearStubCritic::sum(), &real, &fake, &cond, &mut rng)?;
    f.near("linear stub N=4", val(&gp), 1.0, 1e-6);
    let unit = gradient_penalty(&LinearStubCritic::unit_gradient(4), &real, &fake, &cond, &mut rng)?;
    f.near("unit-gradient stub", val(&unit), 0.0, 1e-6);

    let mut compared = 0;
    for seed in 0..4u64 {
        for kind in ["image", "video"] {
            let (mut d, shape): (CriticCheckpoint, Vec<i64>) = match kind {
                "image" => (CriticCheckpoint::new(CriticArch::image(3, 2), seed)?, vec![1, 5, 4, 4]),
                _ => (CriticCheckpoint::new(CriticArch::video(3, 2), seed)?, vec![1, 5, 4, 4, 4]),
            };
            d.to_double();
            let x = rand_tensor(&mut rng, &shape, -1.0, 1.0);
            let analytic = val(&critic_input_gradient_norm(&d, &x)?.sum(Kind::Double));
            let numeric = euclidean(&numeric_input_grad(&d, &x, 1e-6), &vec![0.0; x.numel()]);
            let rel = (analytic - numeric).abs() / numeric.abs().max(1e-12);
            f.check(rel < 1e-3, || format!("{kind} critic seed {seed}: analytic {analytic} numeric {numeric}"));
            compared += 1;
        }
    }
    f.finish(compared, "finite-difference norms plus stub penalties")
}

// ---------------------------------------------------------------------- losses

fn losses() -> Check {
    let mut f = Failures::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let tol = 1e-6;
    let mut n = 0usize;
    let mut near = |f: &mut Failures, what: &str, got: f64, want: f64| {
        n += 1;
        f.near(what, got, want, tol);
    };

    // Reconstruction.
    let a = rand_tensor(&mut rng, &[1, 3, 2, 2], -1.0, 1.0);
    near(&mut f, "rec identical", val(&loss_reconstruction(&a, &a)?), 0.0);
    near(&mut f, "rec offset", val(&loss_reconstruction(&(&a + 0.5), &a)?), 0.5);
    let b = rand_tensor(&mut rng, &[1, 3, 2, 2], -1.0, 1.0);
    let (av, bv) = (Vec::<f64>::try_from(a.view([-1]))?, Vec::<f64>::try_from(b.view([-1]))?);
    let oracle = av.iter().zip(&bv).map(|(x, y)| (x - y).abs()).sum::<f64>() / av.len() as f64;
    near(&mut f, "rec random", val(&loss_reconstruction(&a, &b)?), oracle);

    // Sparsity.
    near(&mut f, "sparsity zeros", val(&loss_sparsity(&Tensor::zeros([1, 1, 2, 2], F64))?), 0.0);
    near(&mut f, "sparsity ones", val(&loss_sparsity(&Tensor::ones([1, 1, 2, 2], F64))?), 1.0);
    let m = Tensor::from_slice(&[0.1, 0.3, 0.0, 0.6]).view([1, 1, 2, 2]);
    near(&mut f, "sparsity example", val(&loss_sparsity(&m)?), 0.25);
    f.check(loss_sparsity(&(m + 1.0)).is_err(), || "out-of-range mask accepted".into());

    // Critic scores.
    let frame = rand_tensor(&mut rng, &[1, 3, 64, 64], -1.0, 1.0);
    let cond = rand_tensor(&mut rng, &[1, 8, 64, 64], 0.0, 1.0);
    let sum = val(&frame.sum(Kind::Double)) + val(&cond.sum(Kind::Double));
    near(&mut f, "linear stub image score", val(&critic_image(&LinearStubCritic::sum(), &frame, &cond)?), sum);
    let mut d_i = CriticCheckpoint::new(CriticArch::image(3, 8), 1)?;
    d_i.to_double();
    let s = critic_image(&d_i, &frame, &cond)?;
    f.check(s.size() == [1], || format!("image critic score shape {:?}", s.size()));
    near(&mut f, "image critic determinism", val(&s), val(&critic_image(&d_i, &frame, &cond)?));

    let clip = rand_tensor(&mut rng, &[1, 3, 16, 16, 16], -1.0, 1.0);
    let conds = rand_tensor(&mut rng, &[1, 2, 16, 16, 16], 0.0, 1.0);
    let csum = val(&clip.sum(Kind::Double)) + val(&conds.sum(Kind::Double));
    near(&mut f, "linear stub video score", val(&critic_video(&LinearStubCritic::sum(), &clip, &conds)?), csum);
    let mut d_v = CriticCheckpoint::new(CriticArch::video(3, 2), 2)?;
    d_v.to_double();
    let sv = critic_video(&d_v, &clip, &conds)?;
    f.check(sv.size() == [1], || format!("video critic score shape {:?}", sv.size()));
    near(&mut f, "video critic determinism", val(&sv), val(&critic_video(&d_v, &clip, &conds)?));

    // Generator (image).
    let small = rand_tensor(&mut rng, &[2, 3, 4, 4], -1.0, 1.0);
    let small_c = rand_tensor(&mut rng, &[2, 2, 4, 4], 0.0, 1.0);
    near(&mut f, "gen stub 3.2", val(&loss_generator_image(&ConstantStubCritic { value: 3.2 }, &small, &small_c)?), -3.2);
    near(&mut f, "gen zero critic", val(&loss_generator_image(&ConstantStubCritic { value: 0.0 }, &small, &small_c)?), 0.0);
    let mut d_small = CriticCheckpoint::new(CriticArch::image(3, 2), 3)?;
    d_small.to_double();
    let direct = -val(&critic_image(&d_small, &small, &small_c)?.mean(Kind::Double));
    near(&mut f, "gen = -critic", val(&loss_generator_image(&d_small, &small, &small_c)?), direct);

    // Gradient penalty stubs.
    let (x, y) = (rand_tensor(&mut rng, &[1, 1, 1, 2], -1.0, 1.0), rand_tensor(&mut rng, &[1, 1, 1, 2], -1.0, 1.0));
    let gp = gradient_penalty(&LinearStubCritic::sum(), &x, &y, &Tensor::zeros([1, 1, 1, 2], F64), &mut rng)?;
    near(&mut f, "gp linear N=4", val(&gp), 1.0);

    // Critic losses, image and video, against hand-composed oracles.
    for (rank, shape, cshape) in [(4, vec![3i64, 3, 4, 4], vec![3i64, 2, 4, 4]), (5, vec![2, 3, 4, 4, 4], vec![2, 2, 4, 4, 4])] {
        let real = rand_tensor(&mut rng, &shape, -1.0, 1.0);
        let fake = rand_tensor(&mut rng, &shape, -1.0, 1.0);
        let c = rand_tensor(&mut rng, &cshape, 0.0, 1.0);
        let per_sample: i64 = shape[1..].iter().product::<i64>() + cshape[1..].iter().product::<i64>();
        let run = |critic: &dyn Critic, real: &Tensor, fake: &Tensor, lambda: f64, rng: &mut ChaCha8Rng| {
            if rank == 4 {
                loss_critic_image(critic, real, fake, &c, lambda, rng)
            } else {
                loss_critic_video(critic, real, fake, &c, lambda, rng)
            }
        };
        let unit = LinearStubCritic::unit_gradient(per_sample);
        let cancel = run(&unit, &real, &real, 10.0, &mut rng)?;
        near(&mut f, &format!("critic rank {rank} cancellation"), val(&cancel.total), 0.0);

        let scale = 0.37;
        let stub = LinearStubCritic { scale };
        let l = run(&stub, &real, &fake, 10.0, &mut rng)?;
        let score = |x: &Tensor| {
            let b = x.size()[0];
            let xs = Vec::<f64>::try_from(x.view([b, -1]).sum_dim_intlist([1].as_slice(), false, Kind::Double))
                .unwrap();
            let cs = Vec::<f64>::try_from(c.view([b, -1]).sum_dim_intlist([1].as_slice(), false, Kind::Double))
                .unwrap();
            xs.iter().zip(&cs).map(|(a, b)| scale * (a + b)).sum::<f64>() / b as f64
        };
        let gp_oracle = (scale * (per_sample as f64).sqrt() - 1.0).powi(2);
        near(&mut f, &format!("critic rank {rank} wasserstein"), val(&l.wasserstein), score(&fake) - score(&real));
        near(&mut f, &format!("critic rank {rank} gp"), val(&l.gp), gp_oracle);
        near(&mut f, &format!("critic rank {rank} total"), val(&l.total), score(&fake) - score(&real) + 10.0 * gp_oracle);

        let swapped = run(&stub, &fake, &real, 10.0, &mut rng)?;
        near(&mut f, &format!("critic rank {rank} antisymmetry"), val(&swapped.wasserstein), -val(&l.wasserstein));
    }
    f.check(TrainConfig::default().lambda_gp == 10.0, || "default lambda is not 10".into());

    // Refiner generator loss.
    let (a_, b_) = (ConstantStubCritic { value: 1.25 }, ConstantStubCritic { value: -0.5 });
    let k1 = rand_tensor(&mut rng, &[2, 3, 1, 4, 4], -1.0, 1.0);
    let k1c = rand_tensor(&mut rng, &[2, 2, 1, 4, 4], 0.0, 1.0);
    near(&mut f, "refine constant stubs", val(&loss_generator_refine(&a_, &b_, &k1, &k1c)?), -1.25 + 0.5);
    let di_stub = LinearStubCritic { scale: 0.3 };
    let dv_stub = LinearStubCritic { scale: -0.7 };
    let k1_direct = -val(&critic_video(&dv_stub, &k1, &k1c)?.mean(Kind::Double))
        - val(&critic_image(&di_stub, &k1.select(2, 0), &k1c.select(2, 0))?.mean(Kind::Double));
    near(&mut f, "refine K=1", val(&loss_generator_refine(&di_stub, &dv_stub, &k1, &k1c)?), k1_direct);
    let k4 = rand_tensor(&mut rng, &[2, 3, 4, 4, 4], -1.0, 1.0);
    let k4c = rand_tensor(&mut rng, &[2, 2, 4, 4, 4], 0.0, 1.0);
    let mut oracle = 0.0;
    for b in 0..2 {
        let (x, c) = (k4.get(b), k4c.get(b));
        let dv = -0.7 * (val(&x.sum(Kind::Double)) + val(&c.sum(Kind::Double)));
        let di: f64 = (0..4)
            .map(|k| 0.3 * (val(&x.select(1, k).sum(Kind::Double)) + val(&c.select(1, k).sum(Kind::Double))))
            .sum::<f64>()
            / 4.0;
        oracle += (-dv - di) / 2.0;
    }
    near(&mut f, "refine K=4", val(&loss_generator_refine(&di_stub, &dv_stub, &k4, &k4c)?), oracle);

    // Feature similarity.
    let p = rand_tensor(&mut rng, &[1, 3, 8, 8], -1.0, 1.0);
    let id = IdentityFeatures;
    near(&mut f, "feat identical", val(&loss_feature_similarity(&p, &p, &id, &id)?), 0.0);
    let d = rand_tensor(&mut rng, &[1, 3, 8, 8], -0.5, 0.5);
    let two_sum_sq = 2.0 * val(&d.square().sum(Kind::Double));
    near(&mut f, "feat identity 2Σd²", val(&loss_feature_similarity(&(&p + &d), &p, &id, &id)?), two_sum_sq);
    f.check(id.features(&p).size() == [1, 192], || "identity features do not flatten".into());
    f.check(TrainConfig::default().weights().feat == 0.0, || "feature loss active without extractors".into());

    // Weighted total.
    let w = LossWeights {
        rec: 1.0,
        sparsity: 0.25,
        gen: 0.5,
        feat: 2.0,
    };
    let r = LossReport::new(&w, 0.3, 0.2, -0.4, 0.1, 1.0, 0.01);
    near(&mut f, "report total", r.total, 0.3 + 0.05 - 0.2 + 0.2);
    let t = weighted_total(&w, &Tensor::from(0.3f64), &Tensor::from(0.2f64), &Tensor::from(-0.4f64), Some(&Tensor::from(0.1f64)));
    near(&mut f, "weighted tensor total", val(&t), r.total);

    f.finish(n, "loss oracles within 1e-6")
}

// ------------------------------------------------------------ differentiability

/// Compares autograd and central differences of `Σ out·R` on `count`
/// randomly chosen scalar parameters.
fn parameter_gradients(
    vars: &BTreeMap<String, Tensor>,
    loss: &dyn Fn() -> Tensor,
    count: usize,
    rng: &mut ChaCha8Rng,
    f: &mut Failures,
    label: &str,
) -> usize {
    for v in vars.values() {
        v.shallow_clone().zero_grad();
    }
    loss().backward();
    let names: Vec<&String> = vars.keys().collect();
    let mut picked = std::collections::BTreeSet::new();
    while picked.len() < count {
        let name = names[rng.random_range(0..names.len())];
        picked.insert((name, rng.random_range(0..vars[name].numel() as i64)));
    }
    let mut nonzero = 0;
    for (name, i) in picked {
        let var = &vars[name];
        let analytic = val(&var.grad().view([-1]).get(i));
        let h = 1e-6;
        let mut elem = var.view([-1]).get(i);
        let original = val(&elem);
        let numeric = tch::no_grad(|| {
            let _ = elem.fill_(original + h);
            let up = val(&loss());
            let _ = elem.fill_(original - h);
            let down = val(&loss());
            let _ = elem.fill_(original);
            (up - down) / (2.0 * h)
        });
        let ok = (analytic - numeric).abs() <= 1e-3 * analytic.abs().max(numeric.abs()) + 1e-8;
        f.check(ok, || format!("{label} {name}[{i}]: autograd {analytic} numeric {numeric}"));
        nonzero += (analytic.abs() > 1e-8) as usize;
    }
    nonzero
}

fn differentiability() -> Check {
    let mut f = Failures::default();
    let mut rng = ChaCha8Rng::seed_from_u64(21);

    let arch = GmArch {
        encoder_widths: vec![4, 6, 8],
        decoder_widths: vec![8, 6, 4],
        ..GmArch::new(8, 8, 2)
    };
    let mut gm = GmCheckpoint::new(arch, 4)?;
    gm.to_double();
    let frame = rand_tensor(&mut rng, &[2, 3, 8, 8], -1.0, 1.0);
    let (m0, m1) = (rand_tensor(&mut rng, &[2, 2, 8, 8], 0.0, 1.0), rand_tensor(&mut rng, &[2, 2, 8, 8], 0.0, 1.0));
    let r = rand_tensor(&mut rng, &[2, 3, 8, 8], -1.0, 1.0);
    let gm_vars: BTreeMap<_, _> = gm.var_store().variables().into_iter().collect();
    let gm_loss = || (gm.forward(&frame, &m0, &m1).unwrap().frame * &r).sum(Kind::Double);
    let gm_nonzero = parameter_gradients(&gm_vars, &gm_loss, 20, &mut rng, &mut f, "G_M");

    let arch = GrArch {
        widths: [4, 6],
        mask_bias: 0.0,
        ..GrArch::new(8, 8, 2, 4)
    };
    let mut gr = GrCheckpoint::new(arch, 5)?;
    gr.to_double();
    let coarse = rand_tensor(&mut rng, &[2, 3, 4, 8, 8], -1.0, 1.0);
    let conds = rand_tensor(&mut rng, &[2, 2, 4, 8, 8], 0.0, 1.0);
    let r = rand_tensor(&mut rng, &[2, 3, 4, 8, 8], -1.0, 1.0);
    let gr_vars: BTreeMap<_, _> = gr.var_store().variables().into_iter().collect();
    let gr_loss = || (gr.forward(&coarse, &conds).unwrap().clip * &r).sum(Kind::Double);
    let gr_nonzero = parameter_gradients(&gr_vars, &gr_loss, 20, &mut rng, &mut f, "G_R");

    f.finish(40, &format!("distinct parameter gradients ({gm_nonzero}/20 G_M, {gr_nonzero}/20 G_R non-zero) within 1e-3"))
}

// ---------------------------------------------------------------- dense blocks

fn dense_connectivity() -> Check {
    let mut f = Failures::default();
    for dense in [true, false] {
        let arch = GmArch::new(64, 64, 8).with_dense(dense);
        let blocks = arch.decoder_widths.len();
        f.check(blocks == 4, || format!("expected 4 blocks, got {blocks}"));
        let gm = GmCheckpoint::new(arch.clone(), 0)?;
        let frame = Tensor::rand([1, 3, 64, 64], F32) * 2.0 - 1.0;
        let img = tch::no_grad(|| gm.net().encode_image(&frame))?;
        let (_, traces) = tch::no_grad(|| gm.net().decoder().forward_traced(&img.bottleneck, &img.skips))?;
        for (b, t) in traces.iter().enumerate() {
            let want = if dense { b + 1 } else { 1 };
            f.check(t.sources.len() == want, || format!("dense={dense} block {}: {} sources", b + 1, t.sources.len()));
            if dense {
                let labels: Vec<_> = t.sources.iter().map(|s| s.0.as_str()).collect();
                let expect: Vec<String> =
                    std::iter::once("bottleneck".to_string()).chain((0..b).map(|i| format!("block{i}"))).collect();
                f.check(labels == expect, || format!("block {} sources {labels:?}", b + 1));
                let declared: i64 = arch.bottleneck_channels() + arch.decoder_widths[..b].iter().sum::<i64>();
                let dense_in: i64 = t.sources.iter().map(|s| s.1).sum();
                f.check(dense_in == declared, || format!("block {}: {dense_in} dense channels, want {declared}", b + 1));
            }
            for (label, _, size) in &t.sources {
                f.check(size.0 <= t.resolution.0 && size.1 <= t.resolution.1, || {
                    format!("block {} source {label} at {size:?} above {:?}", b + 1, t.resolution)
                });
            }
            if b > 0 && dense {
                f.check(t.sources[0].2 != t.resolution, || format!("block {}: bottleneck not upsampled", b + 1));
            }
            f.check(t.input_channels == t.conv_in_channels, || {
                format!("block {}: input {} vs conv {}", b + 1, t.input_channels, t.conv_in_channels)
            });
            f.check(t.input_channels == arch.block_in_channels(b), || format!("block {}: declared channels", b + 1));
        }
    }
    f.finish(4, "dense blocks with b incoming sources")
}

// --------------------------------------------------------------------- metrics

fn metrics() -> Check {
    let mut f = Failures::default();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let tol = 1e-6;

    let a = rand_frame(&mut rng, 8, 8);
    f.near("mse identical", mse(&a, &a)?, 0.0, tol);
    let g0 = Frame::filled(8, 8, 3, -0.5)?;
    let g1 = Frame::filled(8, 8, 3, -0.3)?;
    f.near("mse constant 0.1", mse(&g0, &g1)?, 0.01, tol);
    let b = rand_frame(&mut rng, 8, 8);
    let oracle = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(x, y)| ((*x as f64 + 1.0) / 2.0 - (*y as f64 + 1.0) / 2.0).powi(2))
        .sum::<f64>()
        / a.pixels().len() as f64;
    f.near("mse random", mse(&a, &b)?, oracle, 1e-9);

    f.near("psnr identical", psnr(&a, &a)?, 100.0, tol);
    f.near("psnr mse 0.01", psnr_from_mse(0.01), 20.0, tol);
    f.near("psnr constant 0.1", psnr(&g0, &g1)?, 20.0, 1e-4);
    f.near("psnr mse 1", psnr_from_mse(1.0), 0.0, tol);
    let black = Frame::filled(8, 8, 3, -1.0)?;
    let white = Frame::filled(8, 8, 3, 1.0)?;
    f.near("psnr black/white", psnr(&black, &white)?, 0.0, tol);
    let curve: Vec<f64> = [1e-6, 1e-4, 1e-3, 0.01, 0.1, 0.5, 1.0].iter().map(|&m| psnr_from_mse(m)).collect();
    f.check(curve.windows(2).all(|w| w[0] > w[1]), || "psnr not strictly decreasing".into());

    let emb = RandomConvEmbedder::default();
    let copies = VideoClip::new(vec![a.clone(); 4])?;
    f.near("acd-i copies", acd_identity(&copies, &a, &emb)?, 0.0, tol);
    let single = VideoClip::new(vec![b.clone()])?;
    f.near("acd-i K=1", acd_identity(&single, &a, &emb)?, euclidean(&emb.embed(&b), &emb.embed(&a)), 1e-9);
    let three = rand_clip(&mut rng, 3, 8, 8);
    let r = emb.embed(&a);
    let loop_oracle = three.frames().iter().map(|fr| euclidean(&emb.embed(fr), &r)).sum::<f64>() / 3.0;
    f.near("acd-i loop", acd_identity(&three, &a, &emb)?, loop_oracle, 1e-9);

    f.near("acd-c constant", acd_content(&copies, &emb), 0.0, tol);
    let two = VideoClip::new(vec![a.clone(), b.clone()])?;
    f.near("acd-c pair", acd_content(&two, &emb), euclidean(&emb.embed(&a), &emb.embed(&b)), 1e-9);
    let four = rand_clip(&mut rng, 4, 8, 8);
    let e: Vec<_> = four.frames().iter().map(|fr| emb.embed(fr)).collect();
    let mut pairs = Vec::new();
    for i in 0..4 {
        for j in i + 1..4 {
            pairs.push(euclidean(&e[i], &e[j]));
        }
    }
    f.check(pairs.len() == 6, || "pair count".into());
    f.near("acd-c 6 pairs", acd_content(&four, &emb), pairs.iter().sum::<f64>() / 6.0, 1e-9);

    for trial in 0..20 {
        let k = rng.random_range(2..=6);
        let clip = rand_clip(&mut rng, k, 8, 8);
        let mut frames = clip.frames().to_vec();
        frames.shuffle(&mut rng);
        let shuffled = VideoClip::new(frames)?;
        let refr = rand_frame(&mut rng, 8, 8);
        let (i0, i1) = (acd_identity(&clip, &refr, &emb)?, acd_identity(&shuffled, &refr, &emb)?);
        let (c0, c1) = (acd_content(&clip, &emb), acd_content(&shuffled, &emb));
        f.check(close(i0, i1, 1e-9 * i0.max(1.0)), || format!("trial {trial}: acd-i order dependent"));
        f.check(close(c0, c1, 1e-9 * c0.max(1.0)), || format!("trial {trial}: acd-c order dependent"));
        f.check(i0 >= 0.0 && c0 >= 0.0, || format!("trial {trial}: negative acd"));
    }
    f.finish(40, "metric examples and order-invariance trials")
}

// -------------------------------------------------------------------- training

struct Corpus {
    _dir: tempfile::TempDir,
    manifest: DatasetManifest,
}

fn corpus(size: usize) -> &'static DatasetManifest {
    static C64: OnceLock<Corpus> = OnceLock::new();
    static C32: OnceLock<Corpus> = OnceLock::new();
    let cell = if size == 64 { &C64 } else { &C32 };
    &cell
        .get_or_init(|| {
            let dir = tempfile::tempdir().expect("tempdir");
            let cfg = DatasetConfig {
                height: size,
                width: size,
                ..DatasetConfig::default()
            };
            let manifest = synthesize_dataset(&cfg, dir.path()).expect("synthesize corpus");
            Corpus { _dir: dir, manifest }
        })
        .manifest
}

/// Default losses and optimiser at half channel width.
fn stage1_config(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        width_scale: 0.5,
        log_every: 500,
        ..TrainConfig::default()
    }
}

/// Mean reconstruction loss and mask activation on a fixed eval batch.
fn fixed_batch_rec(gm: &GmCheckpoint, manifest: &DatasetManifest, k_max: usize) -> Result<(f64, f64), Box<dyn std::error::Error>> {
    let bank = ClipBank::load(manifest, Split::Eval)?;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut src, mut dst) = (Vec::new(), Vec::new());
    for _ in 0..64 {
        let n = rng.random_range(0..bank.len());
        let (t, k) = sample_time_jump(bank.clip_len, k_max, &mut rng)?;
        src.push((n, t));
        dst.push((n, t + k));
    }
    let out = tch::no_grad(|| gm.forward(&bank.frames(&src), &bank.maps(&src), &bank.maps(&dst)))?;
    let rec = loss_reconstruction(&out.frame, &bank.frames(&dst))?;
    Ok((val(&rec), val(&out.mask.mean(Kind::Double))))
}

fn stage1_efficacy() -> Check {
    let manifest = corpus(64);
    let cfg = TrainConfig {
        steps: 2000,
        batch: 8,
        ..stage1_config(0)
    };
    let init = GmCheckpoint::new(gm_arch(manifest, &cfg), cfg.seed)?;
    let (rec0, mask0) = fixed_batch_rec(&init, manifest, cfg.k_max)?;
    let out = train_stage1(manifest, &cfg)?;
    let (rec1, mask1) = fixed_batch_rec(&out.gm, manifest, cfg.k_max)?;
    let h = &out.history;
    let logged0 = h.reports[0].rec;
    let logged_end = h.window_mean(50, true, |r| r.rec);
    let collapsed = if mask1 < 0.01 { " (mask collapsed: output copies the anchor frame)" } else { "" };
    outcome(
        rec1 < 0.5 * rec0 && mask1 < 0.5,
        format!(
            "fixed-batch rec {rec0:.4} -> {rec1:.4} (ratio {:.3}), mask {mask0:.3} -> {mask1:.4}{collapsed}; \
             logged rec step 0 {logged0:.4}, last-50 mean {logged_end:.4}",
            rec1 / rec0
        ),
    )
}

fn ordering() -> Check {
    let manifest = corpus(32);
    let mut wins = 0;
    let mut lines = Vec::new();
    let emb = RandomConvEmbedder::default();
    let start = Instant::now();
    for seed in 0..3u64 {
        let s1 = TrainConfig {
            steps: ORDER_STAGE1_STEPS,
            batch: 8,
            ..stage1_config(seed)
        };
        let dense = train_stage1(manifest, &s1)?.gm;
        let plain = train_stage1(manifest, &TrainConfig { dense: false, ..s1.clone() })?.gm;
        let s2 = TrainConfig {
            steps: ORDER_STAGE2_STEPS,
            batch: 4,
            ..stage1_config(seed)
        };
        let gr = train_stage2(manifest, &dense, &s2)?.gr;
        let full = evaluate(manifest, &dense, Some(&gr), None, 10, 32, &emb)?.summary;
        let ablated = evaluate(manifest, &plain, None, None, 10, 32, &emb)?.summary;
        let refined = full.mse_refined.unwrap_or(f64::NAN);
        let (coarse, nodense) = (full.mse_coarse, ablated.mse_coarse);
        let ok = refined <= coarse && coarse <= nodense;
        eprintln!("  ordering seed {seed} done at {:.0}s", start.elapsed().as_secs_f64());
        wins += ok as usize;
        lines.push(format!(
            "seed {seed}: full {refined:.5} {} G_M {coarse:.5} {} no-dense {nodense:.5}",
            if refined <= coarse { "<=" } else { ">" },
            if coarse <= nodense { "<=" } else { ">" }
        ));
    }
    // Mask pinned at zero: every output frame is the anchor frame.
    let copy_arch = GmArch {
        mask_bias: -50.0,
        ..gm_arch(manifest, &stage1_config(0))
    };
    let copy = evaluate(manifest, &GmCheckpoint::new(copy_arch, 0)?, None, None, 10, 32, &emb)?.summary.mse_coarse;
    outcome(
        wins >= 2,
        format!("{wins}/3 seeds ordered; {}; copy-anchor baseline {copy:.5}", lines.join("; ")),
    )
}

const ORDER_STAGE1_STEPS: u64 = 1000;
const ORDER_STAGE2_STEPS: u64 = 400;

fn forecaster() -> Check {
    let manifest = corpus(64);
    let cfg = TrainConfig {
        lr: 1e-3,
        beta1: 0.9,
        beta2: 0.999,
        batch: 32,
        steps: 1500,
        log_every: 500,
        ..TrainConfig::default()
    };
    let (ckpt, _) = rmvl_core::condition::train_pose_forecaster(manifest, &cfg)?;
    let mut pass = true;
    let mut parts = Vec::new();
    for class in 0..manifest.classes {
        let sub = DatasetManifest {
            clips: manifest.clips.iter().filter(|c| c.class == class).cloned().collect(),
            ..manifest.clone()
        };
        let l = split_coordinate_mse(&sub, Split::Eval, &ckpt, cfg.observed, cfg.predict)?;
        let b = split_coordinate_mse(&sub, Split::Eval, &FreezeLastPose, cfg.observed, cfg.predict)?;
        pass &= l < b;
        parts.push(format!("class {class}: {l:.6} vs {b:.6}"));
    }
    outcome(pass, format!("lstm vs freeze-last-pose coordinate mse: {}", parts.join(", ")))
}

// ------------------------------------------------------------------------ main

fn main() {
    tch::set_num_threads(std::thread::available_parallelism().map_or(1, |n| n.get() as i32));
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [(&str, fn() -> Check); 10] = [
        ("composition", composition),
        ("analogy", analogy),
        ("gradient-penalty", gradient_penalty_check),
        ("losses", losses),
        ("differentiability", differentiability),
        ("dense-connectivity", dense_connectivity),
        ("stage1-efficacy", stage1_efficacy),
        ("two-stage-ordering", ordering),
        ("forecaster-efficacy", forecaster),
        ("metrics", metrics),
    ];
    let mut failed = 0;
    let mut ran = 0;
    for (name, check) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check));
        let secs = start.elapsed().as_secs_f64();
        let (pass, detail) = match result {
            Ok(Ok(o)) => (o.pass, o.detail),
            Ok(Err(e)) => (false, format!("error: {e}")),
            Err(p) => {
                let msg = p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panic: {msg}"))
            }
        };
        failed += !pass as usize;
        println!("[{}] {name} ({secs:.1}s): {detail}", if pass { "PASS" } else { "FAIL" });
    }
    println!("acceptance: {}/{ran} criteria passed", ran - failed);
    if failed > 0 && std::env::var_os("RMVL_ACCEPTANCE_STRICT").is_some_and(|v| v == "1") {
        std::process::exit(1);
    }
}
