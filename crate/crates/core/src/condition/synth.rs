//! Synthetic articulated-figure corpus.
//!
//! Every clip shows one stick figure over a static textured background. The
//! figure follows a closed-form trajectory determined by its motion class and
//! a handful of per-clip parameters, so keypoints can be re-derived exactly
//! from the manifest.

use std::f32::consts::PI;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::heatmap::DEFAULT_SIGMA;
use super::pose::{KeypointFile, Pose, PoseSequence};
use crate::error::{arg_err, Error, Result};
use crate::io::{atomic_write, encode_png};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const KEYPOINT_FILE: &str = "keypoints.json";
pub const MANIFEST_VERSION: u32 = 1;
/// Observed plus predicted poses needed by the forecaster.
pub const MIN_CLIP_FRAMES: usize = 42;
pub const NUM_MOTION_CLASSES: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub clips: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub joints: usize,
    pub classes: usize,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            clips: 120,
            frames: 48,
            height: 64,
            width: 64,
            joints: 8,
            classes: NUM_MOTION_CLASSES,
            sigma: DEFAULT_SIGMA,
            seed: 0,
        }
    }
}

impl DatasetConfig {
    /// Parses a flat TOML file; missing keys take their defaults.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames < MIN_CLIP_FRAMES {
            return Err(arg_err!("clips need at least {MIN_CLIP_FRAMES} frames, got {}", self.frames));
        }
        if !(1..=NUM_MOTION_CLASSES).contains(&self.classes) {
            return Err(arg_err!("classes must be in 1..={NUM_MOTION_CLASSES}, got {}", self.classes));
        }
        // Splits rotate within each class, so the first class needs three clips.
        if self.clips < 2 * self.classes + 1 {
            return Err(arg_err!(
                "need at least {} clips to fill three splits with {} classes, got {}",
                2 * self.classes + 1,
                self.classes,
                self.clips
            ));
        }
        if self.height < 16 || self.width < 16 {
            return Err(arg_err!("frames must be at least 16x16, got {}x{}", self.height, self.width));
        }
        JointLayout::for_count(self.joints)?;
        if !(self.sigma > 0.0) {
            return Err(arg_err!("sigma must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    ForecasterTrain,
    RefinerTrain,
    Eval,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::ForecasterTrain, Split::RefinerTrain, Split::Eval];
}

/// Per-clip trajectory parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipParams {
    pub class: usize,
    pub phase: f32,
    pub amplitude: f32,
    pub size: f32,
    pub center: [f32; 2],
    /// Horizontal drift per frame (glide class only).
    pub velocity: f32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Palette {
    pub background: [f32; 3],
    pub texture: [f32; 4],
    pub left: [f32; 3],
    pub right: [f32; 3],
    pub body: [f32; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipEntry {
    pub id: String,
    pub class: usize,
    pub frames: usize,
    pub split: Split,
    pub dir: PathBuf,
    pub params: ClipParams,
    pub palette: Palette,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub root: PathBuf,
    pub height: usize,
    pub width: usize,
    pub joints: usize,
    pub classes: usize,
    pub sigma: f64,
    pub seed: u64,
    pub clips: Vec<ClipEntry>,
}

impl DatasetManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: DatasetManifest = serde_json::from_str(&text)?;
        if manifest.version != MANIFEST_VERSION {
            return Err(arg_err!("unsupported manifest version {}", manifest.version));
        }
        // Clip directories are resolved against the manifest's own location.
        manifest.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(manifest)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ClipEntry> {
        self.clips.iter().filter(move |c| c.split == split)
    }

    pub fn clip_dir(&self, clip: &ClipEntry) -> PathBuf {
        self.root.join(&clip.dir)
    }

    pub fn layout(&self) -> Result<JointLayout> {
        JointLayout::for_count(self.joints)
    }

    pub fn load_keypoints(&self, clip: &ClipEntry) -> Result<PoseSequence> {
        let path = self.clip_dir(clip).join(KEYPOINT_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let file: KeypointFile = serde_json::from_str(&text)?;
        file.to_sequence()
    }
}

/// Named points of the articulated figure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Head,
    Neck,
    Pelvis,
    LShoulder,
    RShoulder,
    LElbow,
    RElbow,
    LWrist,
    RWrist,
    LHip,
    RHip,
    LKnee,
    RKnee,
    LAnkle,
    RAnkle,
}

const NUM_PARTS: usize = 15;

/// Which figure points are exported as keypoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JointLayout {
    /// head, neck, elbows, wrists, ankles
    Compact8,
    /// head, shoulders, elbows, wrists, hips, knees, ankles
    Full13,
}

impl JointLayout {
    pub fn for_count(joints: usize) -> Result<Self> {
        match joints {
            8 => Ok(JointLayout::Compact8),
            13 => Ok(JointLayout::Full13),
            n => Err(arg_err!("synthetic figures support 8 or 13 joints, got {n}")),
        }
    }

    pub fn parts(self) -> &'static [Part] {
        use Part::*;
        match self {
            JointLayout::Compact8 => &[Head, Neck, LElbow, LWrist, RElbow, RWrist, LAnkle, RAnkle],
            JointLayout::Full13 => &[
                Head, LShoulder, RShoulder, LElbow, RElbow, LWrist, RWrist, LHip, RHip, LKnee, RKnee, LAnkle,
                RAnkle,
            ],
        }
    }
}

/// Figure point positions in normalized coordinates.
#[derive(Debug, Clone, Copy)]
pub struct Skeleton {
    points: [[f32; 2]; NUM_PARTS],
}

impl Skeleton {
    pub fn point(&self, part: Part) -> [f32; 2] {
        self.points[part as usize]
    }
}

const TORSO: f32 = 0.20;
const NECK_TO_HEAD: f32 = 0.065;
const HEAD_RADIUS: f32 = 0.05;
const UPPER_ARM: f32 = 0.10;
const FOREARM: f32 = 0.09;
const THIGH: f32 = 0.12;
const SHIN: f32 = 0.11;
const SHOULDER_HALF: f32 = 0.05;
const HIP_HALF: f32 = 0.035;
const LIMB_HALF_WIDTH: f32 = 0.018;

/// Cycles per frame for the periodic classes (wave, jacks, glide, bob).
pub const CLASS_FREQUENCY: [f32; NUM_MOTION_CLASSES] = [1.0 / 10.0, 1.0 / 16.0, 0.0, 1.0 / 22.0];

/// Angles measured from straight down; positive swings away from the body.
#[derive(Debug, Clone, Copy, Default)]
struct LimbAngles {
    l_shoulder: f32,
    l_elbow: f32,
    r_shoulder: f32,
    r_elbow: f32,
    l_hip: f32,
    l_knee: f32,
    r_hip: f32,
    r_knee: f32,
}

/// Closed-form figure configuration at (possibly fractional) frame `t`.
pub fn skeleton_at(params: &ClipParams, t: f32) -> Skeleton {
    let a = params.amplitude;
    let s = params.size;
    let phase = 2.0 * PI * CLASS_FREQUENCY[params.class] * t + params.phase;
    let osc = phase.sin();
    let mut pelvis = params.center;
    let mut ang = LimbAngles {
        l_shoulder: 0.35,
        r_shoulder: 0.35,
        l_elbow: 0.15,
        r_elbow: 0.15,
        l_hip: 0.12,
        r_hip: 0.12,
        ..Default::default()
    };
    match params.class {
        // wave: right arm raised, swinging at the elbow and shoulder
        0 => {
            ang.r_shoulder = 2.3 + 0.45 * a * osc;
            ang.r_elbow = 0.7 * a * osc;
        }
        // jumping jacks: limbs open and close together with a small bounce
        1 => {
            let open = 0.5 * (1.0 + osc) * a;
            ang.l_shoulder = 0.3 + 1.9 * open;
            ang.r_shoulder = 0.3 + 1.9 * open;
            ang.l_hip = 0.05 + 0.35 * open;
            ang.r_hip = 0.05 + 0.35 * open;
            pelvis[1] -= 0.03 * open;
        }
        // glide: rigid pose translating at constant velocity
        2 => {
            pelvis[0] += params.velocity * t;
        }
        // bob: squat up and down, arms reaching forward
        3 => {
            let down = 0.5 * (1.0 + osc) * a;
            pelvis[1] += 0.06 * down * s;
            ang.l_hip = 0.1 + 0.9 * down;
            ang.r_hip = 0.1 + 0.9 * down;
            ang.l_knee = -1.6 * down;
            ang.r_knee = -1.6 * down;
            ang.l_shoulder = 0.35 + 0.9 * down;
            ang.r_shoulder = 0.35 + 0.9 * down;
        }
        _ => unreachable!("class validated at construction"),
    }
    build_skeleton(pelvis, s, &ang)
}

fn build_skeleton(pelvis: [f32; 2], s: f32, ang: &LimbAngles) -> Skeleton {
    // side = -1 for the figure's left (image left), +1 for right.
    let limb = |from: [f32; 2], angle: f32, len: f32, side: f32| -> [f32; 2] {
        [from[0] + side * angle.sin() * len * s, from[1] + angle.cos() * len * s]
    };
    let neck = [pelvis[0], pelvis[1] - TORSO * s];
    let head = [neck[0], neck[1] - NECK_TO_HEAD * s];
    let l_sh = [neck[0] - SHOULDER_HALF * s, neck[1]];
    let r_sh = [neck[0] + SHOULDER_HALF * s, neck[1]];
    let l_el = limb(l_sh, ang.l_shoulder, UPPER_ARM, -1.0);
    let r_el = limb(r_sh, ang.r_shoulder, UPPER_ARM, 1.0);
    let l_wr = limb(l_el, ang.l_shoulder + ang.l_elbow, FOREARM, -1.0);
    let r_wr = limb(r_el, ang.r_shoulder + ang.r_elbow, FOREARM, 1.0);
    let l_hip = [pelvis[0] - HIP_HALF * s, pelvis[1]];
    let r_hip = [pelvis[0] + HIP_HALF * s, pelvis[1]];
    let l_kn = limb(l_hip, ang.l_hip, THIGH, -1.0);
    let r_kn = limb(r_hip, ang.r_hip, THIGH, 1.0);
    let l_an = limb(l_kn, ang.l_hip + ang.l_knee, SHIN, -1.0);
    let r_an = limb(r_kn, ang.r_hip + ang.r_knee, SHIN, 1.0);
    let mut points = [[0.0f32; 2]; NUM_PARTS];
    for (part, p) in [
        (Part::Head, head),
        (Part::Neck, neck),
        (Part::Pelvis, pelvis),
        (Part::LShoulder, l_sh),
        (Part::RShoulder, r_sh),
        (Part::LElbow, l_el),
        (Part::RElbow, r_el),
        (Part::LWrist, l_wr),
        (Part::RWrist, r_wr),
        (Part::LHip, l_hip),
        (Part::RHip, r_hip),
        (Part::LKnee, l_kn),
        (Part::RKnee, r_kn),
        (Part::LAnkle, l_an),
        (Part::RAnkle, r_an),
    ] {
        points[part as usize] = p;
    }
    Skeleton { points }
}

pub fn pose_at(params: &ClipParams, layout: JointLayout, t: f32) -> Pose {
    let sk = skeleton_at(params, t);
    let joints: Vec<[f32; 2]> = layout.parts().iter().map(|&p| sk.point(p)).collect();
    let visible = joints.iter().map(|p| p.iter().all(|v| (0.0..=1.0).contains(v))).collect();
    Pose::new(joints, visible).expect("visibility derived from range")
}

fn sample_params(class: usize, frames: usize, rng: &mut ChaCha8Rng) -> ClipParams {
    let mut center = [rng.random_range(0.42..0.58), rng.random_range(0.53..0.58)];
    let mut velocity = 0.0;
    if class == 2 {
        let speed: f32 = rng.random_range(0.004..0.008);
        velocity = if rng.random_bool(0.5) { speed } else { -speed };
        // Keep the whole trajectory centred in the frame.
        center[0] = 0.5 - velocity * (frames - 1) as f32 / 2.0 + rng.random_range(-0.03..0.03);
    }
    ClipParams {
        class,
        phase: rng.random_range(0.0..2.0 * PI),
        amplitude: rng.random_range(0.85..1.15),
        size: rng.random_range(0.9..1.1),
        center,
        velocity,
    }
}

fn sample_palette(rng: &mut ChaCha8Rng) -> Palette {
    let mut color = |lo: f32, hi: f32| [rng.random_range(lo..hi), rng.random_range(lo..hi), rng.random_range(lo..hi)];
    let background = color(0.1, 0.4);
    let left = color(0.75, 1.0);
    let right = color(0.55, 0.8);
    let body = color(0.65, 0.95);
    Palette {
        background,
        texture: [
            rng.random_range(1.0..4.0),
            rng.random_range(1.0..4.0),
            rng.random_range(0.0..2.0 * PI),
            rng.random_range(0.05..0.12),
        ],
        left,
        right,
        body,
    }
}

fn segment_distance(p: [f32; 2], a: [f32; 2], b: [f32; 2]) -> f32 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 { ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let d = [ap[0] - t * ab[0], ap[1] - t * ab[1]];
    (d[0] * d[0] + d[1] * d[1]).sqrt()
}

/// Rasterizes one frame into `[0, 1]` RGB values.
pub fn render_frame(params: &ClipParams, palette: &Palette, t: f32, height: usize, width: usize) -> RgbImage {
    use Part::*;
    let sk = skeleton_at(params, t);
    let px = |part: Part| {
        let p = sk.point(part);
        [p[0] * width as f32, p[1] * height as f32]
    };
    let scale = height.min(width) as f32;
    let half = (LIMB_HALF_WIDTH * params.size * scale).max(0.8);
    let head_r = HEAD_RADIUS * params.size * scale;
    let segments: [(Part, Part, [f32; 3]); 13] = [
        (Neck, Pelvis, palette.body),
        (LShoulder, RShoulder, palette.body),
        (LHip, RHip, palette.body),
        (LShoulder, LElbow, palette.left),
        (LElbow, LWrist, palette.left),
        (RShoulder, RElbow, palette.right),
        (RElbow, RWrist, palette.right),
        (LHip, LKnee, palette.left),
        (LKnee, LAnkle, palette.left),
        (RHip, RKnee, palette.right),
        (RKnee, RAnkle, palette.right),
        (Neck, Head, palette.body),
        (Head, Head, palette.body),
    ];
    let [fx, fy, psi, amp] = palette.texture;
    let mut img = RgbImage::new(width as u32, height as u32);
    for r in 0..height {
        for c in 0..width {
            let p = [c as f32, r as f32];
            let u = c as f32 / width as f32;
            let v = r as f32 / height as f32;
            let wave = amp * (2.0 * PI * (fx * u + fy * v) + psi).sin();
            let mut rgb = [
                palette.background[0] + wave,
                palette.background[1] + 0.5 * wave,
                palette.background[2] - wave,
            ];
            for (i, &(a, b, color)) in segments.iter().enumerate() {
                let radius = if i == segments.len() - 1 { head_r } else { half };
                let d = segment_distance(p, px(a), px(b));
                let cover = (radius + 0.5 - d).clamp(0.0, 1.0);
                if cover > 0.0 {
                    for k in 0..3 {
                        rgb[k] = cover * color[k] + (1.0 - cover) * rgb[k];
                    }
                }
            }
            let to_u8 = |x: f32| (x.clamp(0.0, 1.0) * 255.0).round() as u8;
            img.put_pixel(c as u32, r as u32, Rgb([to_u8(rgb[0]), to_u8(rgb[1]), to_u8(rgb[2])]));
        }
    }
    img
}

fn clip_id(index: usize) -> String {
    format!("clip_{index:04}")
}

/// Renders the corpus under `root` and writes `manifest.json`.
pub fn synthesize_dataset(config: &DatasetConfig, root: impl AsRef<Path>) -> Result<DatasetManifest> {
    config.validate()?;
    let root = root.as_ref();
    let layout = JointLayout::for_count(config.joints)?;
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;

    let mut per_class_seen = vec![0usize; config.classes];
    let mut clips = Vec::with_capacity(config.clips);
    for index in 0..config.clips {
        let class = index % config.classes;
        let split = Split::ALL[per_class_seen[class] % 3];
        per_class_seen[class] += 1;

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(index as u64 + 1);
        let params = sample_params(class, config.frames, &mut rng);
        let palette = sample_palette(&mut rng);

        let id = clip_id(index);
        let dir = PathBuf::from("clips").join(&id);
        let abs = root.join(&dir);
        std::fs::create_dir_all(&abs).map_err(|e| Error::io(&abs, e))?;
        let mut keypoints = Vec::with_capacity(config.frames);
        for t in 0..config.frames {
            let img = render_frame(&params, &palette, t as f32, config.height, config.width);
            let path = abs.join(crate::io::frame_file_name(t));
            atomic_write(&path, &encode_png(&image::DynamicImage::ImageRgb8(img), &path)?)?;
            keypoints.push(pose_at(&params, layout, t as f32).to_rows());
        }
        let kp_path = abs.join(KEYPOINT_FILE);
        atomic_write(&kp_path, serde_json::to_string(&KeypointFile { frames: keypoints })?.as_bytes())?;
        clips.push(ClipEntry {
            id,
            class,
            frames: config.frames,
            split,
            dir,
            params,
            palette,
        });
    }

    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        root: root.to_path_buf(),
        height: config.height,
        width: config.width,
        joints: config.joints,
        classes: config.classes,
        sigma: config.sigma,
        seed: config.seed,
        clips,
    };
    let path = root.join(MANIFEST_FILE);
    atomic_write(&path, serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(manifest)
}
