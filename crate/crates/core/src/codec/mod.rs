//! Differentiable learned codec: analysis/synthesis transforms, hyperprior,
//! quantisation and the entropy models.

pub mod arch;
pub mod gradcheck;
pub mod likelihood;
pub mod params;
pub mod transforms;

pub use arch::{ArchConfig, Nonlinearity};
pub use likelihood::{
    estimate_bpp, likelihood_conditional, likelihood_factorized, P_FLOOR, SIGMA_FLOOR,
};
pub use params::{CodecParams, FactorizedPrior, SubNetwork};
pub use transforms::{
    analysis, backward, encode_latents, forward, forward_train, hyper_analysis, hyper_synthesis,
    quantize, synthesis, CodecGrads, ForwardOutput, GaussianParams, Mode, QuantizedLatents,
    TrainTape, HYPER_SUPPORT, LATENT_SUPPORT,
};
