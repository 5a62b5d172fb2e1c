//! PNG/GIF persistence for frames, clips and masks.

use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::codecs::gif::{GifEncoder, Repeat};
use image::{DynamicImage, GrayImage, ImageFormat, Luma, Rgb, RgbImage, RgbaImage};
use ndarray::{Array3, ArrayView3};

use crate::error::{arg_err, Error, Result};
use crate::residual::{Frame, VideoClip};

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:04}.png")
}

/// Writes through a sibling temporary file and renames it into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path.file_name().ok_or_else(|| arg_err!("{} has no file name", path.display()))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub(crate) fn encode_png(img: &DynamicImage, path: &Path) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png).map_err(|e| Error::image(path, e))?;
    Ok(buf.into_inner())
}

fn to_u8(v: f32) -> u8 {
    (((v + 1.0) * 0.5).clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn frame_to_image(frame: &Frame) -> RgbImage {
    let (h, w, c) = frame.dims();
    let px = frame.pixels();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        let ch = |k: usize| to_u8(px[[y, x, k.min(c - 1)]]);
        Rgb([ch(0), ch(1), ch(2)])
    })
}

pub fn image_to_frame(img: &RgbImage) -> Result<Frame> {
    let (w, h) = img.dimensions();
    let pixels = Array3::from_shape_fn((h as usize, w as usize, 3), |(y, x, k)| {
        img.get_pixel(x as u32, y as u32)[k] as f32 / 127.5 - 1.0
    });
    Frame::new(pixels)
}

pub fn write_frame_png(frame: &Frame, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    atomic_write(path, &encode_png(&DynamicImage::ImageRgb8(frame_to_image(frame)), path)?)
}

pub fn read_frame_png(path: impl AsRef<Path>) -> Result<Frame> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| Error::image(path, e))?;
    image_to_frame(&img.to_rgb8())
}

/// Grayscale image of a single-channel `[0, 1]` mask (`H×W×1`).
pub fn mask_to_image(mask: ArrayView3<f32>) -> GrayImage {
    let (h, w, _) = mask.dim();
    GrayImage::from_fn(w as u32, h as u32, |x, y| {
        Luma([(mask[[y as usize, x as usize, 0]].clamp(0.0, 1.0) * 255.0).round() as u8])
    })
}

pub fn write_mask_png(mask: ArrayView3<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    atomic_write(path, &encode_png(&DynamicImage::ImageLuma8(mask_to_image(mask)), path)?)
}

/// Writes `frame_0000.png …` into `dir`; returns the written paths.
pub fn write_clip_dir(clip: &VideoClip, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    clip.frames()
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let path = dir.join(frame_file_name(i));
            write_frame_png(f, &path).map(|_| path)
        })
        .collect()
}

/// Reads consecutive `frame_NNNN.png` files starting at zero.
pub fn read_clip_dir(dir: impl AsRef<Path>) -> Result<VideoClip> {
    let dir = dir.as_ref();
    let mut frames = Vec::new();
    loop {
        let path = dir.join(frame_file_name(frames.len()));
        if !path.exists() {
            break;
        }
        frames.push(read_frame_png(&path)?);
    }
    if frames.is_empty() {
        return Err(arg_err!("no frames found in {}", dir.display()));
    }
    VideoClip::new(frames)
}

/// Places equally sized images side by side.
pub fn hstack(images: &[RgbImage]) -> RgbImage {
    let h = images.iter().map(|i| i.height()).max().unwrap_or(0);
    let w: u32 = images.iter().map(|i| i.width()).sum();
    let mut out = RgbImage::new(w, h);
    let mut x0 = 0;
    for img in images {
        image::imageops::replace(&mut out, img, x0 as i64, 0);
        x0 += img.width();
    }
    out
}

/// Horizontal strip of every `every`-th frame.
pub fn write_strip_png(clip: &VideoClip, every: usize, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let imgs: Vec<RgbImage> = clip.frames().iter().step_by(every.max(1)).map(frame_to_image).collect();
    atomic_write(path, &encode_png(&DynamicImage::ImageRgb8(hstack(&imgs)), path)?)
}

/// Animated GIF where each animation frame is the side-by-side concatenation
/// of the corresponding frame of every clip. Returns the number of frames.
pub fn write_side_by_side_gif(clips: &[&VideoClip], delay_ms: u32, path: impl AsRef<Path>) -> Result<usize> {
    let path = path.as_ref();
    let n = clips.first().map(|c| c.len()).ok_or_else(|| arg_err!("no clips to animate"))?;
    if clips.iter().any(|c| c.len() != n) {
        return Err(arg_err!("clips in a side-by-side GIF must have equal length"));
    }
    let mut buf = Vec::new();
    {
        let mut enc = GifEncoder::new_with_speed(&mut buf, 10);
        enc.set_repeat(Repeat::Infinite).map_err(|e| Error::image(path, e))?;
        for i in 0..n {
            let row: Vec<RgbImage> = clips.iter().map(|c| frame_to_image(&c.frames()[i])).collect();
            let rgba: RgbaImage = DynamicImage::ImageRgb8(hstack(&row)).to_rgba8();
            let frame = image::Frame::from_parts(rgba, 0, 0, image::Delay::from_numer_denom_ms(delay_ms, 1));
            enc.encode_frame(frame).map_err(|e| Error::image(path, e))?;
        }
    }
    atomic_write(path, &buf)?;
    Ok(n)
}

/// Number of frames in a GIF file.
pub fn gif_frame_count(path: impl AsRef<Path>) -> Result<usize> {
    use image::AnimationDecoder;
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let dec = image::codecs::gif::GifDecoder::new(std::io::BufReader::new(file)).map_err(|e| Error::image(path, e))?;
    Ok(dec.into_frames().count())
}
