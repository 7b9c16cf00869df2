//! Decoder-only perception-distortion fine-tuning and the gamma sweep.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::analysis::{assemble_curve, GammaLabel, PDCurve, PDPoint};
use crate::codec::{analysis, quantize, CodecParams, Mode, SubNetwork};
use crate::coding::{decode_image, encode_image};
use crate::data::{BatchSource, NamedImage};
use crate::error::{CoreError, Result};
use crate::metrics::{distance_to, evaluate_image, reference_features, ConvFeatures, MetricReport};
use crate::nn::{Adam, Tensor};
use crate::training::config::{FreezeMask, SweepConfig, TrainConfig};
use crate::training::rd::{iteration_seed, mse_with_grad, pd_loss, LogEntry, TrainLog};

/// Returns the rate-fixing mask and the hash of everything it freezes.
pub fn freeze(params: CodecParams<f32>) -> (CodecParams<f32>, FreezeMask, String) {
    let hash = params.frozen_hash();
    (params, FreezeMask::rate_fixing(), hash)
}

/// One decoder being fine-tuned. Optimiser state exists for synthesis only.
struct PdTrainer {
    params: CodecParams<f32>,
    adam: Adam<f32>,
    gamma: f64,
    log: TrainLog,
}

impl PdTrainer {
    fn new(params: CodecParams<f32>, gamma: f64, learning_rate: f64) -> Self {
        let shapes = params.tensor_lengths(SubNetwork::Synthesis);
        PdTrainer {
            adam: Adam::new(learning_rate, &shapes),
            params,
            gamma,
            log: TrainLog::default(),
        }
    }

    fn step(
        &mut self,
        it: usize,
        cfg: &TrainConfig,
        x: &Tensor<f32>,
        y_hat: &Tensor<f32>,
        net: &ConvFeatures<f32>,
        reference: &crate::metrics::ReferenceFeatures<f32>,
    ) -> Result<()> {
        let (x_hat, tape) = self.params.synthesis.forward_tape(y_hat)?;
        let (mse, mut d_xhat) = mse_with_grad(&x_hat, x, self.gamma)?;
        let (per_item, d_perc) = distance_to(net, reference, &x_hat, true)?;
        let perceptual = per_item.iter().sum::<f64>() / per_item.len() as f64;
        let loss = pd_loss(mse, perceptual, self.gamma);
        if !loss.is_finite() {
            log::error!("non-finite PD loss at iteration {it} (gamma {})", self.gamma);
            return Err(CoreError::NonFiniteLoss { iteration: it, batch: it });
        }
        d_xhat.add_assign(&d_perc.expect("gradient requested"))?;
        let mut grads = self.params.synthesis.zero_grads();
        self.params.synthesis.backward(&tape, d_xhat, Some(&mut grads), false)?;
        self.adam.learning_rate = cfg.learning_rate_at(it);
        self.adam.step(&mut self.params.synthesis.params_mut(), &grads);
        if TrainLog::should_log(cfg, it) {
            self.log.entries.push(LogEntry {
                iteration: it,
                loss,
                distortion: mse,
                rate: 0.0,
                perceptual,
            });
        }
        Ok(())
    }
}

/// Shared loop: every trainer sees the same batches and the same rounded
/// latents, so training several decoders together is bit-identical to
/// training each alone.
fn run_trainers(
    frozen: &CodecParams<f32>,
    trainers: &mut [PdTrainer],
    source: &mut dyn BatchSource,
    cfg: &TrainConfig,
) -> Result<()> {
    let net = ConvFeatures::<f32>::from_spec(&cfg.train_metric_spec)?;
    for it in 0..cfg.iterations {
        let x = source.next_batch(cfg.batch_size)?;
        // Same noisy latents the decoder saw during rate-distortion training.
        let mut rng = ChaCha8Rng::seed_from_u64(iteration_seed(cfg.seed, it));
        let y_hat = quantize(&analysis(&x, frozen)?, Mode::Train, None, &mut rng)?;
        let reference = reference_features(&net, &x)?;
        for t in trainers.iter_mut() {
            t.step(it, cfg, &x, &y_hat, &net, &reference)?;
        }
    }
    Ok(())
}

fn check_mask(mask: &FreezeMask) -> Result<()> {
    if !mask.is_rate_fixing() || mask.trainable.iter().any(|&s| s != SubNetwork::Synthesis) {
        return Err(CoreError::InvalidArgument("fine-tuning requires the rate-fixing freeze mask".into()));
    }
    Ok(())
}

fn verify_frozen(frozen: &CodecParams<f32>, params: &CodecParams<f32>) -> Result<()> {
    if params.frozen_hash() == frozen.frozen_hash() {
        return Ok(());
    }
    let moved = SubNetwork::RATE_DETERMINING
        .into_iter()
        .filter(|&s| params.hash_of(&[s]) != frozen.hash_of(&[s]))
        .map(|s| s.name())
        .collect::<Vec<_>>();
    Err(CoreError::FrozenParameterChanged(moved.join(", ")))
}

/// Minimises `gamma * mse + perceptual` over the synthesis transform only.
/// The decoder is fed the rounded latents it will see at decode time.
pub fn finetune_pd(
    params: CodecParams<f32>,
    mask: &FreezeMask,
    source: &mut dyn BatchSource,
    cfg: &TrainConfig,
) -> Result<(CodecParams<f32>, TrainLog)> {
    check_mask(mask)?;
    if cfg.iterations == 0 {
        return Ok((params, TrainLog::default()));
    }
    let frozen = params.clone();
    let mut trainers = [PdTrainer::new(params, cfg.gamma, cfg.learning_rate)];
    run_trainers(&frozen, &mut trainers, source, cfg)?;
    let [t] = trainers;
    verify_frozen(&frozen, &t.params)?;
    Ok((t.params, t.log))
}

/// Evaluation of one decoder on the held-out images.
#[derive(Clone, Debug)]
pub struct DecoderEvaluation {
    pub point: PDPoint,
    pub reports: Vec<MetricReport>,
    pub stream_digests: Vec<String>,
}

/// Codes every image with `params`, decodes, and averages the metrics.
pub fn evaluate_decoder(
    params: &CodecParams<f32>,
    gamma: GammaLabel,
    images: &[NamedImage],
    net: &ConvFeatures<f32>,
) -> Result<DecoderEvaluation> {
    if images.is_empty() {
        return Err(CoreError::InvalidArgument("no evaluation images".into()));
    }
    let mut reports = Vec::with_capacity(images.len());
    let mut digests = Vec::with_capacity(images.len());
    for img in images {
        let stream = encode_image(&img.pixels, params)?;
        let x_hat = decode_image(&stream, params)?;
        digests.push(stream.digest());
        reports.push(evaluate_image(&img.name, &img.pixels, &x_hat, stream.bpp(), net)?);
    }
    let n = reports.len() as f64;
    let mean = |f: fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    let mut h = Sha256::new();
    for d in &digests {
        h.update(d.as_bytes());
    }
    Ok(DecoderEvaluation {
        point: PDPoint {
            gamma,
            bpp_actual: mean(|r| r.bpp),
            psnr: mean(|r| r.psnr),
            ssim: mean(|r| r.ssim),
            perceptual: mean(|r| r.perceptual),
            frozen_hash: params.frozen_hash(),
            checkpoint_hash: params.content_hash(),
            stream_digest: hex::encode(h.finalize()),
        },
        reports,
        stream_digests: digests,
    })
}

/// Outcome of a sweep: the curve plus everything needed to persist it.
#[derive(Clone, Debug)]
pub struct SweepResult {
    pub curve: PDCurve,
    /// Fine-tuned decoders in the order of `SweepConfig::gammas`.
    pub decoders: Vec<(f64, CodecParams<f32>, TrainLog)>,
    /// Evaluations, baseline first, then in the order of `gammas`.
    pub evaluations: Vec<DecoderEvaluation>,
}

/// Fine-tunes one decoder per gamma, each from the same frozen baseline, and
/// evaluates all of them plus the baseline. Any bitstream that differs from
/// the baseline's aborts the sweep.
pub fn sweep_gamma(
    frozen: &CodecParams<f32>,
    mask: &FreezeMask,
    sweep: &SweepConfig,
    source: &mut dyn BatchSource,
    eval_images: &[NamedImage],
) -> Result<SweepResult> {
    check_mask(mask)?;
    sweep.validate(&frozen.arch, "sweep")?;
    let cfg = &sweep.finetune;
    let mut trainers: Vec<PdTrainer> = sweep
        .gammas
        .iter()
        .map(|&g| PdTrainer::new(frozen.clone(), g, cfg.learning_rate))
        .collect();
    run_trainers(frozen, &mut trainers, source, cfg)?;

    let net = ConvFeatures::<f32>::from_spec(&sweep.eval_metric_spec)?;
    let baseline = evaluate_decoder(frozen, GammaLabel::MseOnly, eval_images, &net)?;
    let mut evaluations = vec![baseline];
    let mut decoders = Vec::new();
    for t in trainers {
        verify_frozen(frozen, &t.params)?;
        let e = evaluate_decoder(&t.params, GammaLabel::Value(t.gamma), eval_images, &net)?;
        if e.stream_digests != evaluations[0].stream_digests {
            return Err(CoreError::RateNotFixed(format!("gamma {} changed a bitstream", t.gamma)));
        }
        evaluations.push(e);
        decoders.push((t.gamma, t.params, t.log));
    }
    let curve = assemble_curve(evaluations.iter().map(|e| e.point.clone()).collect())?;
    Ok(SweepResult {
        curve,
        decoders,
        evaluations,
    })
}
