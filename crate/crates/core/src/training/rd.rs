//! Rate-distortion training of the whole codec.

use serde::{Deserialize, Serialize};

use crate::codec::{backward, forward_train, CodecParams, SubNetwork};
use crate::data::BatchSource;
use crate::error::{CoreError, Result};
use crate::nn::{Adam, Tensor};
use crate::training::config::TrainConfig;

/// `d + lambda * rate`: the rate term carries the weight.
pub fn rd_loss(distortion: f64, rate_bpp: f64, lambda: f64) -> f64 {
    distortion + lambda * rate_bpp
}

/// `gamma * d + perceptual`.
pub fn pd_loss(distortion: f64, perceptual: f64, gamma: f64) -> f64 {
    gamma * distortion + perceptual
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub iteration: usize,
    pub loss: f64,
    pub distortion: f64,
    pub rate: f64,
    pub perceptual: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub entries: Vec<LogEntry>,
}

impl TrainLog {
    pub const CSV_HEADER: &'static str = "iteration,loss,distortion,rate,perceptual";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for e in &self.entries {
            s.push_str(&format!("{},{},{},{},{}\n", e.iteration, e.loss, e.distortion, e.rate, e.perceptual));
        }
        s
    }

    pub fn should_log(cfg: &TrainConfig, iteration: usize) -> bool {
        iteration % cfg.log_every == 0 || iteration + 1 == cfg.iterations
    }
}

/// Per-iteration noise seed derived from the run seed.
pub fn iteration_seed(seed: u64, iteration: usize) -> u64 {
    let mut z = seed ^ (iteration as u64).wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mean squared error and its gradient w.r.t. `x_hat`.
pub fn mse_with_grad(x_hat: &Tensor<f32>, x: &Tensor<f32>, scale: f64) -> Result<(f64, Tensor<f32>)> {
    x_hat.expect_shape(x.shape())?;
    let n = x.len() as f64;
    let mse = x_hat
        .data()
        .iter()
        .zip(x.data())
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum::<f64>()
        / n;
    let k = (2.0 * scale / n) as f32;
    Ok((mse, x_hat.zip_map(x, |a, b| k * (a - b))?))
}

/// Minimises `mse + lambda * (bpp_y + bpp_z)` in noisy train mode over every
/// sub-network.
pub fn train_rd(
    mut params: CodecParams<f32>,
    source: &mut dyn BatchSource,
    cfg: &TrainConfig,
) -> Result<(CodecParams<f32>, TrainLog)> {
    let mut log = TrainLog::default();
    if cfg.iterations == 0 {
        return Ok((params, log));
    }
    if !(cfg.lambda > 0.0) {
        return Err(CoreError::InvalidArgument(format!("lambda must be positive, got {}", cfg.lambda)));
    }
    let shapes: Vec<usize> = SubNetwork::ALL.iter().flat_map(|&s| params.tensor_lengths(s)).collect();
    let mut adam = Adam::<f32>::new(cfg.learning_rate, &shapes);
    for it in 0..cfg.iterations {
        let x = source.next_batch(cfg.batch_size)?;
        let (out, tape) = forward_train(&x, &params, iteration_seed(cfg.seed, it))?;
        let (mse, d_xhat) = mse_with_grad(&out.x_hat, &x, 1.0)?;
        let rate = out.bpp();
        let loss = rd_loss(mse, rate, cfg.lambda);
        if !loss.is_finite() {
            log::error!("non-finite RD loss at iteration {it}");
            return Err(CoreError::NonFiniteLoss { iteration: it, batch: it });
        }
        let grads = backward(&params, &tape, Some(d_xhat), cfg.lambda)?;
        let flat: Vec<Vec<f32>> = SubNetwork::ALL.iter().flat_map(|&s| grads.get(s).clone()).collect();
        adam.learning_rate = cfg.learning_rate_at(it);
        adam.step(&mut params.all_tensors_mut(), &flat);
        if TrainLog::should_log(cfg, it) {
            log.entries.push(LogEntry {
                iteration: it,
                loss,
                distortion: mse,
                rate,
                perceptual: 0.0,
            });
        }
    }
    Ok((params, log))
}
