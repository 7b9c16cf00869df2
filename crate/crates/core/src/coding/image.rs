//! Image encode/decode built on the eval-mode codec and the range coder.

use crate::codec::params::{short_hash, CodecParams};
use crate::codec::transforms::{encode_latents, hyper_synthesis, synthesis, GaussianParams, HYPER_SUPPORT, LATENT_SUPPORT};
use crate::coding::bitstream::{arch_hash, Bitstream};
use crate::coding::cdf::CdfTable;
use crate::coding::range::{decode_checked, decode_symbols, encode_checked, encode_symbols, ideal_bits};
use crate::error::{CoreError, Result};
use crate::nn::{Real, Tensor};

/// One logistic table per hyper-latent channel.
pub fn hyper_tables<T: Real>(params: &CodecParams<T>) -> Result<Vec<CdfTable>> {
    (0..params.arch.hyper_channels)
        .map(|c| CdfTable::logistic(params.prior.location[c].as_f64(), params.prior.scale(c), HYPER_SUPPORT))
        .collect()
}

/// One Gaussian table per latent element of a single image, in storage order.
/// Tables are centred at zero because residuals `y_hat - mu` are coded.
pub fn latent_tables<T: Real>(g: &GaussianParams<T>) -> Result<Vec<CdfTable>> {
    g.sigma
        .data()
        .iter()
        .map(|&s| CdfTable::gaussian_escaped(0.0, s.as_f64(), LATENT_SUPPORT))
        .collect()
}

fn expand_hyper(tables: &[CdfTable], shape: [usize; 4]) -> Vec<CdfTable> {
    let plane = shape[2] * shape[3];
    (0..shape[1] * plane).map(|i| tables[i / plane].clone()).collect()
}

/// Integer symbols of a single image's quantised latents.
pub struct LatentSymbols {
    pub z: Vec<i32>,
    pub residuals: Vec<i32>,
}

fn check_single<T: Real>(x: &Tensor<T>) -> Result<(u16, u16)> {
    let [n, c, h, w] = x.shape();
    if n != 1 || c != 3 {
        return Err(CoreError::Shape(format!("expected one RGB image, got {:?}", x.shape())));
    }
    if h > u16::MAX as usize || w > u16::MAX as usize {
        return Err(CoreError::Shape(format!("{h}x{w} does not fit the header")));
    }
    Ok((h as u16, w as u16))
}

/// Encodes a `[1, 3, H, W]` image. The z symbols are folded into the y
/// payload's check, so a corrupted z payload is caught there too.
pub fn encode_image<T: Real>(x: &Tensor<T>, params: &CodecParams<T>) -> Result<Bitstream> {
    let (height, width) = check_single(x)?;
    let latents = encode_latents(x, params)?;
    let z: Vec<i32> = latents.z_hat.data().iter().map(|v| v.as_f64() as i32).collect();
    let residuals: Vec<i32> = latents
        .y_hat
        .data()
        .iter()
        .zip(latents.gaussian.mu.data())
        .map(|(&y, &m)| (y - m).round().as_f64() as i32)
        .collect();
    let z_tables = expand_hyper(&hyper_tables(params)?, latents.z_hat.shape());
    let y_tables = latent_tables(&latents.gaussian)?;
    Ok(Bitstream {
        height,
        width,
        arch_hash: arch_hash(&params.arch),
        frozen_hash: short_hash(&params.frozen_hash()),
        z_payload: encode_symbols(&z, &z_tables)?,
        y_payload: encode_checked(&residuals, &y_tables, &z)?,
    })
}

/// Decoded latents of a bitstream, before synthesis.
pub struct DecodedLatents<T> {
    pub y_hat: Tensor<T>,
    pub z_hat: Tensor<T>,
}

/// Recovers `(y_hat, z_hat)` exactly as the encoder produced them.
pub fn decode_latents<T: Real>(b: &Bitstream, params: &CodecParams<T>) -> Result<DecodedLatents<T>> {
    if b.arch_hash != arch_hash(&params.arch) {
        return Err(CoreError::HashMismatch {
            expected: hex::encode(b.arch_hash),
            found: hex::encode(arch_hash(&params.arch)),
        });
    }
    let frozen = short_hash(&params.frozen_hash());
    if b.frozen_hash != frozen {
        return Err(CoreError::HashMismatch {
            expected: hex::encode(b.frozen_hash),
            found: hex::encode(frozen),
        });
    }
    let (h, w) = (b.height as usize, b.width as usize);
    let f = params.arch.total_factor();
    if h == 0 || w == 0 || h % f != 0 || w % f != 0 {
        return Err(CoreError::CorruptStream(format!("{h}x{w} is not a codable size")));
    }
    let lf = params.arch.latent_factor();
    let z_shape = [1, params.arch.hyper_channels, h / f, w / f];
    let z_tables = expand_hyper(&hyper_tables(params)?, z_shape);
    let z = decode_symbols(&b.z_payload, &z_tables)?;
    let z_hat = Tensor::from_vec(z_shape, z.iter().map(|&v| T::lit(v as f64)).collect())?;
    let g = hyper_synthesis(&z_hat, params)?;
    g.mu.expect_shape([1, params.arch.latent_channels, h / lf, w / lf])?;
    let residuals = decode_checked(&b.y_payload, &latent_tables(&g)?, &z)?;
    let y = g
        .mu
        .data()
        .iter()
        .zip(residuals)
        .map(|(&m, r)| T::lit(r as f64) + m)
        .collect();
    Ok(DecodedLatents {
        y_hat: Tensor::from_vec(g.mu.shape(), y)?,
        z_hat,
    })
}

/// Decodes a bitstream to a `[1, 3, H, W]` image clamped to `[0, 1]`.
pub fn decode_image<T: Real>(b: &Bitstream, params: &CodecParams<T>) -> Result<Tensor<T>> {
    let latents = decode_latents(b, params)?;
    Ok(synthesis(&latents.y_hat, params)?.map(|v| v.max(T::zero()).min(T::one())))
}

/// Ideal bits of the image's symbols under the quantised tables, as
/// `(z_bits, y_bits)`; the coder must land within a few bytes of these.
pub fn quantized_model_bits<T: Real>(x: &Tensor<T>, params: &CodecParams<T>) -> Result<(f64, f64)> {
    check_single(x)?;
    let latents = encode_latents(x, params)?;
    let z: Vec<i32> = latents.z_hat.data().iter().map(|v| v.as_f64() as i32).collect();
    let residuals: Vec<i32> = latents
        .y_hat
        .data()
        .iter()
        .zip(latents.gaussian.mu.data())
        .map(|(&y, &m)| (y - m).round().as_f64() as i32)
        .collect();
    let z_tables = expand_hyper(&hyper_tables(params)?, latents.z_hat.shape());
    Ok((ideal_bits(&z, &z_tables), ideal_bits(&residuals, &latent_tables(&latents.gaussian)?)))
}
