//! Pixel-domain distortion: MSE, PSNR and single-scale luma SSIM.

use crate::error::{CoreError, Result};
use crate::math;
use crate::nn::{Real, Tensor};

/// PSNR reported for identical images (and anything better than it).
pub const PSNR_CAP: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
/// `(K1 L)^2` and `(K2 L)^2` with `K1 = 0.01`, `K2 = 0.03` and dynamic range `L = 1`.
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

pub fn mse<T: Real>(x: &Tensor<T>, y: &Tensor<T>) -> Result<f64> {
    x.expect_shape(y.shape())?;
    if x.is_empty() {
        return Err(CoreError::Shape("empty image".into()));
    }
    let sum: f64 = x
        .data()
        .iter()
        .zip(y.data())
        .map(|(&a, &b)| {
            let d = a.as_f64() - b.as_f64();
            d * d
        })
        .sum();
    Ok(sum / x.len() as f64)
}

/// `-10 log10(mse)`, capped at [`PSNR_CAP`].
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (-10.0 * mse.log10()).min(PSNR_CAP)
    }
}

pub fn psnr<T: Real>(x: &Tensor<T>, y: &Tensor<T>) -> Result<f64> {
    mse(x, y).map(psnr_from_mse)
}

/// `0.299 R + 0.587 G + 0.114 B` of one batch item.
pub fn luma<T: Real>(x: &Tensor<T>, b: usize) -> Result<Vec<f64>> {
    if x.channels() != 3 {
        return Err(CoreError::Shape(format!("luma needs 3 channels, got {}", x.channels())));
    }
    let plane = x.height() * x.width();
    let item = x.item(b);
    Ok((0..plane)
        .map(|i| 0.299 * item[i].as_f64() + 0.587 * item[plane + i].as_f64() + 0.114 * item[2 * plane + i].as_f64())
        .collect())
}

/// Normalised 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size).map(|i| math::exp(-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma))).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Valid-mode separable filtering of an `h x w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for i in 0..h {
        for j in 0..ow {
            rows[i * ow + j] = taps.iter().enumerate().map(|(t, &g)| g * plane[i * w + j + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            out[i * ow + j] = taps.iter().enumerate().map(|(t, &g)| g * rows[(i + t) * ow + j]).sum();
        }
    }
    out
}

/// Mean SSIM of two luma planes over valid window positions.
pub fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize) -> Result<f64> {
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(CoreError::Shape(format!("{h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
    let mu_a = filter_valid(a, h, w, &taps);
    let mu_b = filter_valid(b, h, w, &taps);
    let aa = filter_valid(&prod(a, a), h, w, &taps);
    let bb = filter_valid(&prod(b, b), h, w, &taps);
    let ab = filter_valid(&prod(a, b), h, w, &taps);
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
            / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
    }
    Ok(total / n as f64)
}

/// Luma SSIM averaged over the batch.
pub fn ssim<T: Real>(x: &Tensor<T>, y: &Tensor<T>) -> Result<f64> {
    x.expect_shape(y.shape())?;
    let (h, w) = (x.height(), x.width());
    let mut total = 0.0;
    for b in 0..x.batch() {
        total += ssim_plane(&luma(x, b)?, &luma(y, b)?, h, w)?;
    }
    Ok(total / x.batch() as f64)
}
