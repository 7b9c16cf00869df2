//! Image folders in and out.

use std::path::{Path, PathBuf};

use rdp_core::data::{synthetic_image, NamedImage, PatchSampler};
use rdp_core::nn::Tensor;

use crate::error::{io_err, HarnessError, Result};

const EXTENSIONS: [&str; 5] = ["png", "ppm", "pgm", "pnm", "pbm"];

/// Image files directly inside `dir`, sorted by file name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if path.is_file() && ext.is_some_and(|e| EXTENSIONS.contains(&e.as_str())) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Decodes a PNG or PNM file to `[1, 3, H, W]` in `[0, 1]`. Grayscale is
/// copied to all three channels; alpha is dropped.
pub fn load_image(path: &Path) -> Result<NamedImage> {
    let img = image::open(path).map_err(|source| HarnessError::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let rgb = img.to_rgb32f();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let raw = rgb.as_raw();
    let mut data = vec![0.0f32; 3 * h * w];
    for (i, px) in raw.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * h * w + i] = px[c].clamp(0.0, 1.0);
        }
    }
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(NamedImage {
        name,
        pixels: Tensor::from_vec([1, 3, h, w], data)?,
    })
}

/// Writes `[1, 3, H, W]` as 8-bit RGB; the format follows the extension.
pub fn save_image(path: &Path, pixels: &Tensor<f32>) -> Result<()> {
    let [n, c, h, w] = pixels.shape();
    if n != 1 || c != 3 {
        return Err(HarnessError::Validation(format!("expected one RGB image, got shape {:?}", pixels.shape())));
    }
    let d = pixels.data();
    let mut buf = Vec::with_capacity(3 * h * w);
    for i in 0..h * w {
        for ch in 0..3 {
            buf.push(to_u8(d[ch * h * w + i]));
        }
    }
    let img = image::RgbImage::from_raw(w as u32, h as u32, buf).expect("buffer size matches");
    img.save(path).map_err(|source| HarnessError::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Loads every image in `dir` and builds the seeded patch stream.
pub fn ingest_dataset(dir: &Path, patch_size: usize, seed: u64) -> Result<PatchSampler> {
    let paths = list_images(dir)?;
    let images = paths.iter().map(|p| load_image(p)).collect::<Result<Vec<_>>>()?;
    Ok(PatchSampler::new(images, patch_size, seed)?)
}

/// Held-out images, cropped (top-left) to a multiple of `factor` so the
/// codec can take them whole.
pub fn load_eval_images(dir: &Path, factor: usize) -> Result<Vec<NamedImage>> {
    let mut out = Vec::new();
    for path in list_images(dir)? {
        let img = load_image(&path)?;
        let (h, w) = (img.pixels.height(), img.pixels.width());
        let (ch, cw) = (h / factor * factor, w / factor * factor);
        if ch == 0 || cw == 0 {
            log::warn!("skipping {}: smaller than {factor}x{factor}", img.name);
            continue;
        }
        if (ch, cw) != (h, w) {
            log::warn!("cropping {} from {h}x{w} to {ch}x{cw}", img.name);
        }
        out.push(NamedImage {
            name: img.name,
            pixels: crop(&img.pixels, ch, cw),
        });
    }
    if out.is_empty() {
        return Err(HarnessError::Validation(format!("no usable evaluation images in {}", dir.display())));
    }
    Ok(out)
}

fn crop(x: &Tensor<f32>, h: usize, w: usize) -> Tensor<f32> {
    let (sh, sw) = (x.height(), x.width());
    let mut data = Vec::with_capacity(3 * h * w);
    for c in 0..3 {
        for i in 0..h {
            let row = c * sh * sw + i * sw;
            data.extend_from_slice(&x.data()[row..row + w]);
        }
    }
    Tensor::from_vec([1, 3, h, w], data).expect("crop shape")
}

/// Fills `dir` with `count` procedural PNG scenes of `height` x `width`.
/// Used for desk-scale runs when no photo folder is at hand.
pub fn synthesize_dataset(dir: &Path, count: usize, height: usize, width: usize, seed: u64) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    (0..count)
        .map(|i| {
            let path = dir.join(format!("synth_{i:05}.png"));
            save_image(&path, &synthetic_image(seed.wrapping_add(i as u64), height, width))?;
            Ok(path)
        })
        .collect()
}
