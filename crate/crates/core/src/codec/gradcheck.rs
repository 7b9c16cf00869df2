//! Central finite-difference check of the codec's analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::arch::{ArchConfig, Nonlinearity};
use crate::codec::params::{CodecParams, SubNetwork};
use crate::codec::transforms::{backward, forward_train};
use crate::error::Result;
use crate::nn::Tensor;

/// Smallest model the checker is meant for: about 1.5k parameters.
pub fn tiny_arch(nonlinearity: Nonlinearity) -> ArchConfig {
    ArchConfig {
        downsampling_stages: 2,
        hidden_channels: 8,
        latent_channels: 8,
        hyper_channels: 8,
        hyper_downsampling_stages: 1,
        nonlinearity,
        kernel_size: 2,
    }
}

#[derive(Clone, Debug)]
pub struct SubNetworkError {
    pub sub: SubNetwork,
    pub num_params: usize,
    /// `|analytic - numeric| / max(|analytic|, |numeric|)` over the whole sub-network.
    pub relative_error: f64,
}

/// Compares analytic and numeric gradients of `mse + rate_weight * bpp` for every
/// sub-network, using a fixed noise draw so the train-mode loss is smooth.
pub fn check_gradients(
    arch: ArchConfig,
    seed: u64,
    rate_weight: f64,
    step: f64,
) -> Result<Vec<SubNetworkError>> {
    let mut params = CodecParams::<f64>::init(arch, seed)?;
    let side = 4 * params.arch.total_factor();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let x = Tensor::from_vec(
        [1, 3, side, side],
        (0..3 * side * side).map(|_| rng.random::<f64>()).collect(),
    )?;
    let noise_seed = seed.wrapping_add(1);

    let loss = |p: &CodecParams<f64>| -> Result<f64> {
        let (out, _) = forward_train(&x, p, noise_seed)?;
        let mse = out
            .x_hat
            .data()
            .iter()
            .zip(x.data())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / x.len() as f64;
        Ok(mse + rate_weight * (out.bpp_y + out.bpp_z))
    };

    let (out, tape) = forward_train(&x, &params, noise_seed)?;
    let n = x.len() as f64;
    let d_xhat = out.x_hat.zip_map(&x, |a, b| 2.0 * (a - b) / n)?;
    let grads = backward(&params, &tape, Some(d_xhat), rate_weight)?;

    let mut report = Vec::new();
    for sub in SubNetwork::ALL {
        let analytic: Vec<f64> = grads.get(sub).iter().flatten().copied().collect();
        let mut numeric = Vec::with_capacity(analytic.len());
        for (t, len) in params.tensor_lengths(sub).into_iter().enumerate() {
            for i in 0..len {
                let orig = params.tensors(sub)[t][i];
                params.tensors_mut(sub)[t][i] = orig + step;
                let up = loss(&params)?;
                params.tensors_mut(sub)[t][i] = orig - step;
                let down = loss(&params)?;
                params.tensors_mut(sub)[t][i] = orig;
                numeric.push((up - down) / (2.0 * step));
            }
        }
        let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
        let scale = norm(&analytic).max(norm(&numeric)).max(f64::MIN_POSITIVE);
        report.push(SubNetworkError {
            sub,
            num_params: analytic.len(),
            relative_error: norm(&diff) / scale,
        });
    }
    Ok(report)
}
