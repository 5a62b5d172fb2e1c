//! Held-out evaluation: per-clip metrics and per-timestep PSNR curves.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::pipeline::{generate_from_maps, generate_video};
use crate::condition::forecaster::PoseForecaster;
use crate::condition::heatmap::render_heatmaps;
use crate::condition::synth::{DatasetManifest, Split};
use crate::error::{arg_err, Error, Result};
use crate::io::{atomic_write, read_clip_dir};
use crate::metrics::{acd_content, acd_identity, mse, psnr, FrameEmbedder};
use crate::nets::gm::GmCheckpoint;
use crate::nets::gr::GrCheckpoint;
use crate::residual::{MotionMapSequence, VideoClip};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub clip_id: String,
    pub psnr_mean: f64,
    pub mse: f64,
    pub acd_i: f64,
    pub acd_c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub clips: usize,
    pub observed: usize,
    pub predict: usize,
    pub ground_truth_maps: bool,
    pub refined: bool,
    pub embedder: String,
    /// Means of the per-clip rows (final output).
    pub psnr_mean: f64,
    pub mse: f64,
    pub acd_i: f64,
    pub acd_c: f64,
    pub mse_coarse: f64,
    pub mse_refined: Option<f64>,
    pub psnr_coarse_per_step: Vec<f64>,
    pub psnr_refined_per_step: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub summary: EvalSummary,
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = v.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Evaluates every eval-split clip starting from frame `observed − 1`.
///
/// With `forecaster = None` the ground-truth keypoints provide the target
/// maps; otherwise poses are forecast from the first `observed` keypoints.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    manifest: &DatasetManifest,
    gm: &GmCheckpoint,
    gr: Option<&GrCheckpoint>,
    forecaster: Option<&dyn PoseForecaster>,
    observed: usize,
    predict: usize,
    embedder: &dyn FrameEmbedder,
) -> Result<EvalReport> {
    if observed == 0 || predict == 0 {
        return Err(arg_err!("observed and predict must be positive"));
    }
    let clips: Vec<_> = manifest.split(Split::Eval).collect();
    if clips.is_empty() {
        return Err(arg_err!("the eval split is empty"));
    }
    let (h, w) = (manifest.height, manifest.width);
    let mut rows = Vec::new();
    let mut coarse_mse = Vec::new();
    let mut refined_mse = Vec::new();
    let mut psnr_coarse = vec![0.0; predict];
    let mut psnr_refined = vec![0.0; predict];
    for clip in &clips {
        if clip.frames < observed + predict {
            return Err(arg_err!("clip {} has {} frames, need {}", clip.id, clip.frames, observed + predict));
        }
        let frames = read_clip_dir(manifest.clip_dir(clip))?;
        let poses = manifest.load_keypoints(clip)?;
        let anchor = &frames.frames()[observed - 1];
        let truth = VideoClip::new(frames.frames()[observed..observed + predict].to_vec())?;
        let video = match forecaster {
            None => {
                let map_now = render_heatmaps(&poses.poses()[observed - 1], h, w, manifest.sigma)?;
                let maps = poses.poses()[observed..observed + predict]
                    .iter()
                    .map(|p| render_heatmaps(p, h, w, manifest.sigma))
                    .collect::<Result<Vec<_>>>()?;
                generate_from_maps(anchor, &map_now, &MotionMapSequence::new(maps)?, gm, gr)?
            }
            Some(f) => generate_video(anchor, &poses.slice(0, observed), predict, manifest.sigma, gm, gr, f)?,
        };
        coarse_mse.push(mse(&video.coarse, &truth)?);
        for (t, (a, b)) in video.coarse.frames().iter().zip(truth.frames()).enumerate() {
            psnr_coarse[t] += psnr(a, b)?;
        }
        if let Some(r) = &video.refined {
            refined_mse.push(mse(r, &truth)?);
            for (t, (a, b)) in r.frames().iter().zip(truth.frames()).enumerate() {
                psnr_refined[t] += psnr(a, b)?;
            }
        }
        let out = video.output();
        let per_frame = out
            .frames()
            .iter()
            .zip(truth.frames())
            .map(|(a, b)| psnr(a, b))
            .collect::<Result<Vec<_>>>()?;
        rows.push(EvalRow {
            clip_id: clip.id.clone(),
            psnr_mean: mean(per_frame),
            mse: mse(out, &truth)?,
            acd_i: acd_identity(out, anchor, embedder)?,
            acd_c: acd_content(out, embedder),
        });
    }
    let n = clips.len() as f64;
    let refined = gr.is_some();
    let summary = EvalSummary {
        clips: rows.len(),
        observed,
        predict,
        ground_truth_maps: forecaster.is_none(),
        refined,
        embedder: embedder.tag(),
        psnr_mean: mean(rows.iter().map(|r| r.psnr_mean)),
        mse: mean(rows.iter().map(|r| r.mse)),
        acd_i: mean(rows.iter().map(|r| r.acd_i)),
        acd_c: mean(rows.iter().map(|r| r.acd_c)),
        mse_coarse: mean(coarse_mse),
        mse_refined: refined.then(|| mean(refined_mse)),
        psnr_coarse_per_step: psnr_coarse.iter().map(|v| v / n).collect(),
        psnr_refined_per_step: refined.then(|| psnr_refined.iter().map(|v| v / n).collect()),
    };
    Ok(EvalReport { rows, summary })
}

impl EvalReport {
    /// CSV with columns `clip_id,psnr_mean,mse,acd_i,acd_c`.
    pub fn rows_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.into_inner().map_err(|e| Error::Csv(e.into_error().into()))
    }

    /// CSV with columns `step,psnr_coarse,psnr_refined`.
    pub fn per_step_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["step", "psnr_coarse", "psnr_refined"])?;
        let s = &self.summary;
        for (t, c) in s.psnr_coarse_per_step.iter().enumerate() {
            let r = s.psnr_refined_per_step.as_ref().map_or(String::new(), |v| v[t].to_string());
            w.write_record([(t + 1).to_string(), c.to_string(), r])?;
        }
        w.into_inner().map_err(|e| Error::Csv(e.into_error().into()))
    }

    /// Writes `eval.csv`, `summary.json` and `psnr_per_step.csv` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = [
            (dir.join("eval.csv"), self.rows_csv()?),
            (dir.join("summary.json"), serde_json::to_vec_pretty(&self.summary)?),
            (dir.join("psnr_per_step.csv"), self.per_step_csv()?),
        ];
        for (p, bytes) in &files {
            atomic_write(p, bytes)?;
        }
        Ok(files.into_iter().map(|(p, _)| p).collect())
    }
}
