//! Distortion and perception measures.

pub mod distortion;
pub mod perceptual;
pub mod report;

pub use distortion::{mse, psnr, psnr_from_mse, ssim, PSNR_CAP};
pub use perceptual::{
    distance_to, perceptual_distance, reference_features, ConvFeatures, ExtractorKind, FeatureExtractor,
    FeatureExtractorSpec, FeatureLayer, ReferenceFeatures,
};
pub use report::{evaluate_image, MetricReport};
