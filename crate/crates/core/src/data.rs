//! Seeded patch sampling over an in-memory image set.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::nn::Tensor;

/// Anything that can hand out training batches of `[n, 3, p, p]` patches.
pub trait BatchSource {
    fn next_batch(&mut self, batch_size: usize) -> Result<Tensor<f32>>;
}

/// A named RGB image with values in `[0, 1]`, stored as `[1, 3, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedImage {
    pub name: String,
    pub pixels: Tensor<f32>,
}

/// Visits images in a fresh seeded permutation every epoch and cuts one
/// uniformly placed crop per visit.
#[derive(Clone, Debug)]
pub struct PatchSampler {
    images: Vec<NamedImage>,
    patch_size: usize,
    seed: u64,
    epoch: u64,
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl PatchSampler {
    /// Images smaller than the patch are dropped (with a warning); the rest
    /// are sorted by name so file-system order never matters.
    pub fn new(images: Vec<NamedImage>, patch_size: usize, seed: u64) -> Result<Self> {
        if patch_size == 0 {
            return Err(CoreError::InvalidArgument("patch_size must be positive".into()));
        }
        let mut usable = Vec::new();
        for img in images {
            let [n, c, h, w] = img.pixels.shape();
            if n != 1 || c != 3 {
                return Err(CoreError::Shape(format!("{}: expected [1, 3, H, W], got {:?}", img.name, img.pixels.shape())));
            }
            if h < patch_size || w < patch_size {
                log::warn!("skipping {}: {h}x{w} is smaller than the {patch_size}px patch", img.name);
                continue;
            }
            usable.push(img);
        }
        if usable.is_empty() {
            return Err(CoreError::InvalidArgument(format!("no image is at least {patch_size}x{patch_size}")));
        }
        usable.sort_by(|a, b| a.name.cmp(&b.name));
        let mut s = PatchSampler {
            images: usable,
            patch_size,
            seed,
            epoch: 0,
            order: Vec::new(),
            cursor: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        s.start_epoch();
        Ok(s)
    }

    fn start_epoch(&mut self) {
        self.rng = ChaCha8Rng::seed_from_u64(self.seed ^ self.epoch.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        self.order = (0..self.images.len()).collect();
        self.order.shuffle(&mut self.rng);
        self.cursor = 0;
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.images.iter().map(|i| i.name.as_str())
    }

    /// Next `[3, p, p]` patch as a flat vector.
    pub fn next_patch(&mut self) -> Vec<f32> {
        if self.cursor == self.order.len() {
            self.epoch += 1;
            self.start_epoch();
        }
        let img = &self.images[self.order[self.cursor]].pixels;
        self.cursor += 1;
        let (h, w, p) = (img.height(), img.width(), self.patch_size);
        let top = self.rng.random_range(0..=h - p);
        let left = self.rng.random_range(0..=w - p);
        let data = img.data();
        let mut out = Vec::with_capacity(3 * p * p);
        for c in 0..3 {
            for i in 0..p {
                let row = c * h * w + (top + i) * w + left;
                out.extend_from_slice(&data[row..row + p]);
            }
        }
        out
    }
}

impl BatchSource for PatchSampler {
    fn next_batch(&mut self, batch_size: usize) -> Result<Tensor<f32>> {
        let p = self.patch_size;
        let mut data = Vec::with_capacity(batch_size * 3 * p * p);
        for _ in 0..batch_size {
            data.extend(self.next_patch());
        }
        Tensor::from_vec([batch_size, 3, p, p], data)
    }
}

/// Procedural scene: a colour gradient, a few soft-edged shapes, a striped
/// texture and light pixel noise. The same seed always gives the same image.
pub fn synthetic_image(seed: u64, height: usize, width: usize) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c0 = [0.0f32; 3];
    let mut c1 = [0.0f32; 3];
    for c in 0..3 {
        c0[c] = rng.random_range(0.0..1.0);
        c1[c] = rng.random_range(0.0..1.0);
    }
    let angle: f32 = rng.random_range(0.0..std::f32::consts::TAU);
    let (dx, dy) = (angle.cos(), angle.sin());
    struct Blob {
        cx: f32,
        cy: f32,
        rx: f32,
        ry: f32,
        square: bool,
        colour: [f32; 3],
    }
    let blobs: Vec<Blob> = (0..rng.random_range(3..8))
        .map(|_| Blob {
            cx: rng.random_range(0.0..1.0),
            cy: rng.random_range(0.0..1.0),
            rx: rng.random_range(0.05..0.35),
            ry: rng.random_range(0.05..0.35),
            square: rng.random_bool(0.4),
            colour: [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)],
        })
        .collect();
    let freq: f32 = rng.random_range(4.0..24.0);
    let stripe_angle: f32 = rng.random_range(0.0..std::f32::consts::TAU);
    let stripe_amp: f32 = rng.random_range(0.0..0.12);
    let noise_amp: f32 = rng.random_range(0.0..0.03);
    let (sx, sy) = (stripe_angle.cos(), stripe_angle.sin());

    let mut data = vec![0.0f32; 3 * height * width];
    for i in 0..height {
        for j in 0..width {
            let u = j as f32 / width as f32;
            let v = i as f32 / height as f32;
            let t = ((u - 0.5) * dx + (v - 0.5) * dy + 0.5).clamp(0.0, 1.0);
            let mut px = [0.0f32; 3];
            for c in 0..3 {
                px[c] = c0[c] + (c1[c] - c0[c]) * t;
            }
            for b in &blobs {
                let ex = (u - b.cx) / b.rx;
                let ey = (v - b.cy) / b.ry;
                let r = if b.square { ex.abs().max(ey.abs()) } else { (ex * ex + ey * ey).sqrt() };
                let alpha = ((1.0 - r) * 12.0).clamp(0.0, 1.0);
                for c in 0..3 {
                    px[c] += alpha * (b.colour[c] - px[c]);
                }
            }
            let stripe = stripe_amp * (freq * std::f32::consts::TAU * (u * sx + v * sy)).sin();
            for c in 0..3 {
                let n = noise_amp * rng.random_range(-1.0f32..1.0);
                data[c * height * width + i * width + j] = (px[c] + stripe + n).clamp(0.0, 1.0);
            }
        }
    }
    Tensor::from_vec([1, 3, height, width], data).expect("shape matches data")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(name: &str, h: usize, w: usize, v: f32) -> NamedImage {
        NamedImage {
            name: name.into(),
            pixels: Tensor::from_vec([1, 3, h, w], (0..3 * h * w).map(|i| v + i as f32 * 1e-6).collect()).unwrap(),
        }
    }

    #[test]
    fn deterministic_and_order_free() {
        let set = || vec![img("b", 40, 40, 0.1), img("a", 50, 36, 0.2), img("c", 32, 32, 0.3)];
        let mut s1 = PatchSampler::new(set(), 32, 7).unwrap();
        let mut rev = set();
        rev.reverse();
        let mut s2 = PatchSampler::new(rev, 32, 7).unwrap();
        for _ in 0..5 {
            assert_eq!(s1.next_batch(2).unwrap(), s2.next_batch(2).unwrap());
        }
    }

    #[test]
    fn too_small_images() {
        assert!(PatchSampler::new(vec![img("a", 16, 16, 0.0)], 32, 0).is_err());
        let s = PatchSampler::new(vec![img("a", 16, 16, 0.0), img("b", 32, 32, 0.0)], 32, 0).unwrap();
        assert_eq!(s.len(), 1);
    }
}
