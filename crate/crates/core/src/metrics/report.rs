use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::metrics::distortion::{psnr, ssim};
use crate::metrics::perceptual::{distance_to, reference_features, FeatureExtractor};
use crate::nn::{Real, Tensor};

/// Per-image quality numbers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricReport {
    pub image_id: String,
    pub bpp: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub perceptual: f64,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "image_id,bpp,psnr,ssim,perceptual";

    /// Row at reporting precision: bpp and PSNR to 2 decimals, SSIM to 4,
    /// perceptual to 2.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.2},{:.2},{:.4},{:.2}",
            self.image_id, self.bpp, self.psnr, self.ssim, self.perceptual
        )
    }

    /// Row with every value at full round-trip precision.
    pub fn csv_row_exact(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.image_id, self.bpp, self.psnr, self.ssim, self.perceptual
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain struct")
    }
}

/// Bundles PSNR, SSIM and perceptual distance for one `[1, 3, H, W]` pair.
pub fn evaluate_image<T: Real>(
    image_id: &str,
    x: &Tensor<T>,
    x_hat: &Tensor<T>,
    bpp: f64,
    extractor: &dyn FeatureExtractor<T>,
) -> Result<MetricReport> {
    x.expect_shape(x_hat.shape())?;
    let reference = reference_features(extractor, x)?;
    let (per_item, _) = distance_to(extractor, &reference, x_hat, false)?;
    Ok(MetricReport {
        image_id: image_id.to_string(),
        bpp,
        psnr: psnr(x, x_hat)?,
        ssim: ssim(x, x_hat)?,
        perceptual: per_item.iter().sum::<f64>() / per_item.len() as f64,
    })
}
