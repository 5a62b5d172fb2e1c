use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rmvl_core::condition::forecaster::{ForecasterCheckpoint, PoseForecaster};
use rmvl_core::condition::{render_heatmaps, synthesize_dataset, DatasetConfig, DatasetManifest, KeypointFile, Split};
use rmvl_core::io::{atomic_write, read_frame_png, write_clip_dir, write_mask_png, write_side_by_side_gif, write_strip_png};
use rmvl_core::metrics::RandomConvEmbedder;
use rmvl_core::nets::critic::CriticCheckpoint;
use rmvl_core::nets::gm::GmCheckpoint;
use rmvl_core::nets::gr::GrCheckpoint;
use rmvl_core::residual::MotionMapSequence;
use rmvl_core::training::{
    evaluate as run_evaluation, generate_from_maps, generate_video, resume_stage1, resume_stage2, train_stage1,
    train_stage2, LossHistory, TrainConfig,
};
use rmvl_core::condition::forecaster::train_pose_forecaster;

use crate::{plot, CheckpointArgs, DatagenArgs, EvaluateArgs, GenerateArgs, Stage, TrainArgs};

pub const GM_FILE: &str = "gm/gm.ckpt";
pub const GR_FILE: &str = "gr/gr.ckpt";
pub const LSTM_FILE: &str = "lstm/forecaster.ckpt";

/// `--out`/`--run` if given, else `$RMVL_HOME`, else `./rmvl-run`.
fn run_root(explicit: Option<PathBuf>) -> PathBuf {
    explicit
        .or_else(|| std::env::var_os("RMVL_HOME").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("rmvl-run"))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    DatasetManifest::load(path).with_context(|| format!("cannot load manifest {}", path.display()))
}

pub fn datagen(args: DatagenArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => DatasetConfig::load(p).with_context(|| format!("bad dataset config {}", p.display()))?,
        None => DatasetConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let manifest = synthesize_dataset(&cfg, &args.out)?;
    println!(
        "wrote {} clips of {} frames ({}x{}, {} joints, {} classes) to {}",
        manifest.clips.len(),
        cfg.frames,
        manifest.height,
        manifest.width,
        manifest.joints,
        manifest.classes,
        args.out.display()
    );
    for split in Split::ALL {
        println!("  {split:?}: {} clips", manifest.split(split).count());
    }
    Ok(())
}

fn train_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &args.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Writes the history, appending to an existing file when resuming.
fn write_history(path: &Path, history: &LossHistory, append: bool) -> Result<()> {
    let fresh = history.to_csv()?;
    let bytes = match std::fs::read(path) {
        Ok(mut old) if append => {
            let body = fresh.iter().position(|&b| b == b'\n').map_or(&fresh[..0], |i| &fresh[i + 1..]);
            old.extend_from_slice(body);
            old
        }
        _ => fresh,
    };
    atomic_write(path, &bytes)?;
    Ok(())
}

fn require(path: &Path, what: &str, hint: &str) -> Result<()> {
    if !path.exists() {
        bail!("missing {what} checkpoint {} ({hint})", path.display());
    }
    Ok(())
}

pub fn train(args: TrainArgs) -> Result<()> {
    let cfg = train_config(&args)?;
    let run = run_root(args.out.clone());
    let manifest = load_manifest(&args.manifest)?;
    let stage_dir = run.join(match args.stage {
        Stage::Lstm => "lstm",
        Stage::Gm => "gm",
        Stage::Gr => "gr",
    });
    create_dir(&stage_dir)?;
    atomic_write(&stage_dir.join("config.toml"), cfg.to_toml_string().as_bytes())?;
    let loss_csv = stage_dir.join("loss.csv");
    match args.stage {
        Stage::Lstm => {
            if args.resume {
                bail!("the pose forecaster cannot be resumed; train it from scratch");
            }
            let (ckpt, losses) = train_pose_forecaster(&manifest, &cfg)?;
            let path = run.join(LSTM_FILE);
            ckpt.save(&path)?;
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["step", "mse"])?;
            for (i, l) in losses.iter().enumerate() {
                w.write_record([i.to_string(), l.to_string()])?;
            }
            atomic_write(&loss_csv, &w.into_inner()?)?;
            println!("{}", path.display());
        }
        Stage::Gm => {
            let (gm_path, di_path) = (run.join(GM_FILE), stage_dir.join("d_i.ckpt"));
            let out = if args.resume {
                require(&gm_path, "G_M", "nothing to resume")?;
                require(&di_path, "D_I", "nothing to resume")?;
                resume_stage1(&manifest, &cfg, GmCheckpoint::load(&gm_path)?, CriticCheckpoint::load(&di_path)?)?
            } else {
                train_stage1(&manifest, &cfg)?
            };
            out.gm.save(&gm_path)?;
            out.d_i.save(&di_path)?;
            write_history(&loss_csv, &out.history, args.resume)?;
            println!("{}", gm_path.display());
        }
        Stage::Gr => {
            let gm_path = args.gm.clone().unwrap_or_else(|| run.join(GM_FILE));
            require(&gm_path, "G_M", "run `rmvl train gm` first or pass --gm")?;
            let gm = GmCheckpoint::load(&gm_path)?;
            let gr_path = run.join(GR_FILE);
            let (di_path, dv_path) = (stage_dir.join("d_i.ckpt"), stage_dir.join("d_v.ckpt"));
            let out = if args.resume {
                for (p, what) in [(&gr_path, "G_R"), (&di_path, "D_I"), (&dv_path, "D_V")] {
                    require(p, what, "nothing to resume")?;
                }
                resume_stage2(
                    &manifest,
                    &gm,
                    &cfg,
                    GrCheckpoint::load(&gr_path)?,
                    CriticCheckpoint::load(&di_path)?,
                    CriticCheckpoint::load(&dv_path)?,
                )?
            } else {
                train_stage2(&manifest, &gm, &cfg)?
            };
            out.gr.save(&gr_path)?;
            out.d_i.save(&di_path)?;
            out.d_v.save(&dv_path)?;
            write_history(&loss_csv, &out.history, args.resume)?;
            println!("{}", gr_path.display());
        }
    }
    Ok(())
}

struct Models {
    gm: GmCheckpoint,
    gr: Option<GrCheckpoint>,
    lstm: Option<ForecasterCheckpoint>,
}

fn load_models(ckpt: &CheckpointArgs) -> Result<Models> {
    let run = run_root(ckpt.run.clone());
    let gm_path = ckpt.gm.clone().unwrap_or_else(|| run.join(GM_FILE));
    require(&gm_path, "G_M", "pass --gm or --run")?;
    let gr = if ckpt.no_refine {
        None
    } else {
        let p = ckpt.gr.clone().unwrap_or_else(|| run.join(GR_FILE));
        require(&p, "G_R", "pass --gr or --run, or use --no-refine")?;
        Some(GrCheckpoint::load(&p)?)
    };
    let lstm = if ckpt.use_gt_maps {
        None
    } else {
        let p = ckpt.lstm.clone().unwrap_or_else(|| run.join(LSTM_FILE));
        require(&p, "pose forecaster", "pass --lstm or --run, or use --use-gt-maps")?;
        Some(ForecasterCheckpoint::load(&p)?)
    };
    Ok(Models {
        gm: GmCheckpoint::load(&gm_path)?,
        gr,
        lstm,
    })
}

pub fn generate(args: GenerateArgs) -> Result<()> {
    let models = load_models(&args.ckpt)?;
    let frame = read_frame_png(&args.input)?;
    let text = std::fs::read_to_string(&args.poses).with_context(|| format!("cannot read {}", args.poses.display()))?;
    let poses = serde_json::from_str::<KeypointFile>(&text)
        .with_context(|| format!("bad keypoint file {}", args.poses.display()))?
        .to_sequence()?;
    let observed = models.lstm.as_ref().map_or(args.observed, ForecasterCheckpoint::observed);
    if observed == 0 || poses.len() < observed {
        bail!("the keypoint file has {} poses, the history needs {observed}", poses.len());
    }
    let history = poses.slice(0, observed);
    let (h, w, _) = frame.dims();
    let video = match &models.lstm {
        Some(f) => generate_video(&frame, &history, args.frames, args.sigma, &models.gm, models.gr.as_ref(), f as &dyn PoseForecaster)?,
        None => {
            if poses.len() < observed + args.frames {
                bail!("--use-gt-maps needs {} poses, the keypoint file has {}", observed + args.frames, poses.len());
            }
            let map_now = render_heatmaps(history.last().expect("non-empty"), h, w, args.sigma)?;
            let maps = poses.poses()[observed..observed + args.frames]
                .iter()
                .map(|p| render_heatmaps(p, h, w, args.sigma))
                .collect::<rmvl_core::Result<Vec<_>>>()?;
            generate_from_maps(&frame, &map_now, &MotionMapSequence::new(maps)?, &models.gm, models.gr.as_ref())?
        }
    };
    let out = &args.out;
    create_dir(&out.join("masks"))?;
    write_clip_dir(&video.coarse, out.join("coarse"))?;
    for (t, dec) in video.coarse_residuals.iter().enumerate() {
        write_mask_png(dec.mask().view(), out.join("masks").join(format!("coarse_{t:04}.png")))?;
    }
    let mut clips = vec![&video.coarse];
    if let (Some(refined), Some(res)) = (&video.refined, &video.refine_residual) {
        write_clip_dir(refined, out.join("refined"))?;
        for t in 0..res.len() {
            write_mask_png(res.step(t).mask().view(), out.join("masks").join(format!("refined_{t:04}.png")))?;
        }
        clips.push(refined);
    }
    if let Some(p) = &video.poses {
        atomic_write(&out.join("poses.json"), &serde_json::to_vec(&p.to_file())?)?;
    }
    let n = write_side_by_side_gif(&clips, 100, out.join("video.gif"))?;
    write_strip_png(video.output(), 4, out.join("strip.png"))?;
    println!("wrote {n} frames to {}", out.display());
    Ok(())
}

pub fn evaluate(args: EvaluateArgs) -> Result<()> {
    let models = load_models(&args.ckpt)?;
    let manifest = load_manifest(&args.manifest)?;
    let embedder = RandomConvEmbedder::new(3, args.seed.unwrap_or(RandomConvEmbedder::DEFAULT_SEED));
    let observed = models.lstm.as_ref().map_or(args.observed, ForecasterCheckpoint::observed);
    let report = run_evaluation(
        &manifest,
        &models.gm,
        models.gr.as_ref(),
        models.lstm.as_ref().map(|f| f as &dyn PoseForecaster),
        observed,
        args.frames,
        &embedder,
    )?;
    report.write(&args.out)?;
    plot::psnr_per_step_svg(&report.summary, &args.out.join("psnr_per_step.svg"))?;
    let s = &report.summary;
    println!(
        "{} clips: psnr {:.2} dB, mse {:.5}, acd-i {:.4}, acd-c {:.4}",
        s.clips, s.psnr_mean, s.mse, s.acd_i, s.acd_c
    );
    if let Some(r) = s.mse_refined {
        println!("mse coarse {:.5}, refined {r:.5}", s.mse_coarse);
    }
    Ok(())
}
