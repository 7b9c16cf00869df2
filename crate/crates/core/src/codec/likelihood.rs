//! Probability of each quantisation bin under the entropy models, and the
//! derivatives needed for training.

use crate::codec::params::FactorizedPrior;
use crate::codec::transforms::GaussianParams;
use crate::error::{CoreError, Result};
use crate::math;
use crate::nn::{Real, Tensor};

/// Smallest modelled standard deviation.
pub const SIGMA_FLOOR: f64 = 0.11;

/// Lower bound applied to every likelihood: `2^-15`.
pub const P_FLOOR: f64 = 1.0 / 32768.0;

/// Mass of the unit bin centred at offset `t` from the mean of `N(0, sigma^2)`,
/// with its partial derivatives `(p, dp/dt, dp/dsigma)`.
///
/// Evaluated on `-|t|` so both CDF terms sit in the lower tail.
pub fn gaussian_bin(t: f64, sigma: f64) -> (f64, f64, f64) {
    let a = t.abs();
    let upper = (0.5 - a) / sigma;
    let lower = (-0.5 - a) / sigma;
    let p = math::normal_cdf(upper) - math::normal_cdf(lower);
    let (pu, pl) = (math::normal_pdf(upper), math::normal_pdf(lower));
    let dp_da = (pl - pu) / sigma;
    let dp_dsigma = (lower * pl - upper * pu) / sigma;
    let sign = if t < 0.0 { -1.0 } else { 1.0 };
    (p, sign * dp_da, dp_dsigma)
}

/// Mass of the unit bin at offset `d` from the location of a logistic with
/// the given scale, with `(p, dp/dd, dp/dscale)`.
pub fn logistic_bin(d: f64, scale: f64) -> (f64, f64, f64) {
    let a = d.abs();
    let upper = (0.5 - a) / scale;
    let lower = (-0.5 - a) / scale;
    let (su, sl) = (math::sigmoid(upper), math::sigmoid(lower));
    let p = su - sl;
    let (du, dl) = (su * (1.0 - su), sl * (1.0 - sl));
    let dp_da = (dl - du) / scale;
    let dp_dscale = (lower * dl - upper * du) / scale;
    let sign = if d < 0.0 { -1.0 } else { 1.0 };
    (p, sign * dp_da, dp_dscale)
}

pub fn floor_probability(p: f64) -> f64 {
    p.max(P_FLOOR)
}

/// Per-element likelihood of `y_hat` under the mean-scale Gaussian conditional.
pub fn likelihood_conditional<T: Real>(
    y_hat: &Tensor<T>,
    g: &GaussianParams<T>,
) -> Result<Tensor<T>> {
    g.mu.expect_shape(y_hat.shape())?;
    g.sigma.expect_shape(y_hat.shape())?;
    let data = y_hat
        .data()
        .iter()
        .zip(g.mu.data())
        .zip(g.sigma.data())
        .map(|((&y, &mu), &sigma)| {
            let (p, _, _) = gaussian_bin(y.as_f64() - mu.as_f64(), sigma.as_f64());
            T::lit(floor_probability(p))
        })
        .collect();
    Tensor::from_vec(y_hat.shape(), data)
}

/// Per-element likelihood of `z_hat` under the per-channel logistic prior.
pub fn likelihood_factorized<T: Real>(
    z_hat: &Tensor<T>,
    prior: &FactorizedPrior<T>,
) -> Result<Tensor<T>> {
    let [n, c, h, w] = z_hat.shape();
    if prior.location.len() != c {
        return Err(CoreError::Shape(format!(
            "prior has {} channels, hyper-latent has {c}",
            prior.location.len()
        )));
    }
    let plane = h * w;
    let mut out = Tensor::zeros([n, c, h, w]);
    for b in 0..n {
        let src = z_hat.item(b);
        let dst = out.item_mut(b);
        for ch in 0..c {
            let loc = prior.location[ch].as_f64();
            let scale = prior.scale(ch);
            for i in ch * plane..(ch + 1) * plane {
                let (p, _, _) = logistic_bin(src[i].as_f64() - loc, scale);
                dst[i] = T::lit(floor_probability(p));
            }
        }
    }
    Ok(out)
}

/// Bits per pixel implied by one or more likelihood grids.
pub fn estimate_bpp<T: Real>(likelihoods: &[&Tensor<T>], num_pixels: usize) -> Result<f64> {
    if num_pixels == 0 {
        return Err(CoreError::InvalidArgument(
            "num_pixels must be positive".into(),
        ));
    }
    let mut bits = 0.0;
    for grid in likelihoods {
        for &p in grid.data() {
            bits -= math::log2(p.as_f64());
        }
    }
    Ok(bits / num_pixels as f64)
}
