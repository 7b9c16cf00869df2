//! The four transforms, quantisation and the composed codec pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::likelihood::{
    estimate_bpp, gaussian_bin, likelihood_conditional, likelihood_factorized, logistic_bin,
    P_FLOOR, SIGMA_FLOOR,
};
use crate::codec::params::{CodecParams, SubNetwork};
use crate::error::{CoreError, Result};
use crate::math;
use crate::nn::{Grads, Real, Tape, Tensor};

/// Integer support of coded latent residuals `round(y - mu)`.
pub const LATENT_SUPPORT: (i32, i32) = (-32, 31);
/// Integer support of coded hyper-latents `round(z)`.
pub const HYPER_SUPPORT: (i32, i32) = (-64, 63);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Additive uniform noise stands in for rounding.
    Train,
    /// Real rounding, clamped to the coder supports.
    Eval,
}

/// Mean and scale of the conditional Gaussian for every latent element.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianParams<T> {
    pub mu: Tensor<T>,
    pub sigma: Tensor<T>,
}

/// Quantised latents together with the distribution they are coded under.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedLatents<T> {
    pub y_hat: Tensor<T>,
    pub z_hat: Tensor<T>,
    pub gaussian: GaussianParams<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput<T> {
    pub x_hat: Tensor<T>,
    pub bpp_y: f64,
    pub bpp_z: f64,
    pub latents: QuantizedLatents<T>,
}

impl<T> ForwardOutput<T> {
    pub fn bpp(&self) -> f64 {
        self.bpp_y + self.bpp_z
    }
}

fn check_divisible(what: &str, h: usize, w: usize, factor: usize) -> Result<()> {
    if h == 0 || w == 0 || h % factor != 0 || w % factor != 0 {
        return Err(CoreError::DimensionMismatch(format!(
            "{what} of size {h}x{w} is not divisible by {factor}"
        )));
    }
    Ok(())
}

pub fn analysis<T: Real>(x: &Tensor<T>, params: &CodecParams<T>) -> Result<Tensor<T>> {
    check_divisible("image", x.height(), x.width(), params.arch.latent_factor())?;
    params.analysis.forward(x)
}

pub fn synthesis<T: Real>(y_hat: &Tensor<T>, params: &CodecParams<T>) -> Result<Tensor<T>> {
    if y_hat.height() == 0 || y_hat.width() == 0 {
        return Err(CoreError::Shape("latent grid is empty".into()));
    }
    params.synthesis.forward(y_hat)
}

pub fn hyper_analysis<T: Real>(y: &Tensor<T>, params: &CodecParams<T>) -> Result<Tensor<T>> {
    check_divisible(
        "latent grid",
        y.height(),
        y.width(),
        params.arch.hyper_factor(),
    )?;
    params.hyper_analysis.forward(y)
}

/// Splits hyper-synthesis output channels into `(mu, raw sigma)`.
fn split_hyper_output<T: Real>(out: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    let [n, c2, h, w] = out.shape();
    let c = c2 / 2;
    let half = c * h * w;
    let mut mu = Vec::with_capacity(n * half);
    let mut raw = Vec::with_capacity(n * half);
    for b in 0..n {
        let item = out.item(b);
        mu.extend_from_slice(&item[..half]);
        raw.extend_from_slice(&item[half..]);
    }
    (
        Tensor::from_vec([n, c, h, w], mu).expect("sized"),
        Tensor::from_vec([n, c, h, w], raw).expect("sized"),
    )
}

fn sigma_from_raw<T: Real>(raw: &Tensor<T>) -> Tensor<T> {
    raw.map(|r| T::lit(SIGMA_FLOOR + math::softplus(r.as_f64())))
}

pub fn hyper_synthesis<T: Real>(
    z_hat: &Tensor<T>,
    params: &CodecParams<T>,
) -> Result<GaussianParams<T>> {
    let out = params.hyper_synthesis.forward(z_hat)?;
    let (mu, raw) = split_hyper_output(&out);
    Ok(GaussianParams {
        sigma: sigma_from_raw(&raw),
        mu,
    })
}

/// Uniform noise in train mode, `round(v - offset) + offset` in eval mode.
pub fn quantize<T: Real, R: Rng>(
    v: &Tensor<T>,
    mode: Mode,
    offset: Option<&Tensor<T>>,
    rng: &mut R,
) -> Result<Tensor<T>> {
    match mode {
        Mode::Train => Ok(v.map(|x| x + T::lit(rng.random::<f64>() - 0.5))),
        Mode::Eval => match offset {
            Some(o) => v.zip_map(o, |x, m| (x - m).round() + m),
            None => Ok(v.map(|x| x.round())),
        },
    }
}

/// Rounds hyper-latents and clamps them to [`HYPER_SUPPORT`].
pub fn round_hyper<T: Real>(z: &Tensor<T>) -> Tensor<T> {
    let (lo, hi) = (
        T::lit(HYPER_SUPPORT.0 as f64),
        T::lit(HYPER_SUPPORT.1 as f64),
    );
    z.map(|v| v.round().max(lo).min(hi))
}

/// Mean-offset rounding of latents with the residual clamped to [`LATENT_SUPPORT`].
pub fn round_latent<T: Real>(y: &Tensor<T>, mu: &Tensor<T>) -> Result<Tensor<T>> {
    let (lo, hi) = (
        T::lit(LATENT_SUPPORT.0 as f64),
        T::lit(LATENT_SUPPORT.1 as f64),
    );
    y.zip_map(mu, |v, m| (v - m).round().max(lo).min(hi) + m)
}

/// Encoder side of an eval pass: everything up to the quantised latents.
pub fn encode_latents<T: Real>(
    x: &Tensor<T>,
    params: &CodecParams<T>,
) -> Result<QuantizedLatents<T>> {
    check_divisible("image", x.height(), x.width(), params.arch.total_factor())?;
    let y = analysis(x, params)?;
    let z = hyper_analysis(&y, params)?;
    let z_hat = round_hyper(&z);
    let gaussian = hyper_synthesis(&z_hat, params)?;
    let y_hat = round_latent(&y, &gaussian.mu)?;
    Ok(QuantizedLatents {
        y_hat,
        z_hat,
        gaussian,
    })
}

/// Full codec pass. `seed` drives the quantisation noise in train mode.
pub fn forward<T: Real>(
    x: &Tensor<T>,
    mode: Mode,
    params: &CodecParams<T>,
    seed: u64,
) -> Result<ForwardOutput<T>> {
    match mode {
        Mode::Eval => {
            let latents = encode_latents(x, params)?;
            let num_pixels = x.batch() * x.height() * x.width();
            let p_y = likelihood_conditional(&latents.y_hat, &latents.gaussian)?;
            let p_z = likelihood_factorized(&latents.z_hat, &params.prior)?;
            let x_hat = synthesis(&latents.y_hat, params)?;
            Ok(ForwardOutput {
                x_hat,
                bpp_y: estimate_bpp(&[&p_y], num_pixels)?,
                bpp_z: estimate_bpp(&[&p_z], num_pixels)?,
                latents,
            })
        }
        Mode::Train => forward_train(x, params, seed).map(|(out, _)| out),
    }
}

/// Everything the backward pass of a train-mode forward needs.
pub struct TrainTape<T> {
    ga: Tape<T>,
    ha: Tape<T>,
    hs: Tape<T>,
    gs: Tape<T>,
    raw_sigma: Tensor<T>,
    num_pixels: usize,
    y_hat: Tensor<T>,
    z_hat: Tensor<T>,
    gaussian: GaussianParams<T>,
}

/// Train-mode forward that records a tape for [`backward`].
pub fn forward_train<T: Real>(
    x: &Tensor<T>,
    params: &CodecParams<T>,
    seed: u64,
) -> Result<(ForwardOutput<T>, TrainTape<T>)> {
    check_divisible("image", x.height(), x.width(), params.arch.total_factor())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (y, ga) = params.analysis.forward_tape(x)?;
    let (z, ha) = params.hyper_analysis.forward_tape(&y)?;
    let z_hat = quantize(&z, Mode::Train, None, &mut rng)?;
    let (hyper_out, hs) = params.hyper_synthesis.forward_tape(&z_hat)?;
    let (mu, raw_sigma) = split_hyper_output(&hyper_out);
    let gaussian = GaussianParams {
        sigma: sigma_from_raw(&raw_sigma),
        mu,
    };
    let y_hat = quantize(&y, Mode::Train, Some(&gaussian.mu), &mut rng)?;
    let (x_hat, gs) = params.synthesis.forward_tape(&y_hat)?;
    let num_pixels = x.batch() * x.height() * x.width();
    let p_y = likelihood_conditional(&y_hat, &gaussian)?;
    let p_z = likelihood_factorized(&z_hat, &params.prior)?;
    let out = ForwardOutput {
        x_hat,
        bpp_y: estimate_bpp(&[&p_y], num_pixels)?,
        bpp_z: estimate_bpp(&[&p_z], num_pixels)?,
        latents: QuantizedLatents {
            y_hat: y_hat.clone(),
            z_hat: z_hat.clone(),
            gaussian: gaussian.clone(),
        },
    };
    Ok((
        out,
        TrainTape {
            ga,
            ha,
            hs,
            gs,
            raw_sigma,
            num_pixels,
            y_hat,
            z_hat,
            gaussian,
        },
    ))
}

/// Gradients for every sub-network.
#[derive(Clone, Debug, PartialEq)]
pub struct CodecGrads<T> {
    grads: Vec<(SubNetwork, Grads<T>)>,
}

impl<T: Real> CodecGrads<T> {
    pub fn zeros(params: &CodecParams<T>) -> Self {
        CodecGrads {
            grads: SubNetwork::ALL
                .iter()
                .map(|&s| {
                    (
                        s,
                        params
                            .tensors(s)
                            .iter()
                            .map(|t| vec![T::zero(); t.len()])
                            .collect(),
                    )
                })
                .collect(),
        }
    }

    pub fn get(&self, sub: SubNetwork) -> &Grads<T> {
        &self
            .grads
            .iter()
            .find(|(s, _)| *s == sub)
            .expect("every sub-network present")
            .1
    }

    pub fn get_mut(&mut self, sub: SubNetwork) -> &mut Grads<T> {
        &mut self
            .grads
            .iter_mut()
            .find(|(s, _)| *s == sub)
            .expect("every sub-network present")
            .1
    }
}

/// `d(scale * ln(max(p, P_FLOOR))) / dp`; zero where the floor is active.
fn log_gradient(p: f64, scale: f64) -> f64 {
    if p < P_FLOOR {
        0.0
    } else {
        scale / p
    }
}

/// Back-propagates `loss = D(x_hat) + rate_weight * (bpp_y + bpp_z)` where
/// `d_xhat` is the gradient of `D`. Floored likelihoods are constant, so they
/// contribute no rate gradient.
pub fn backward<T: Real>(
    params: &CodecParams<T>,
    tape: &TrainTape<T>,
    d_xhat: Option<Tensor<T>>,
    rate_weight: f64,
) -> Result<CodecGrads<T>> {
    let mut grads = CodecGrads::zeros(params);
    let bits_scale = -rate_weight / (math::LN_2 * tape.num_pixels as f64);

    // Gaussian conditional: gradients w.r.t. y_hat, mu and raw sigma.
    let y_shape = tape.y_hat.shape();
    let mut d_y = Tensor::<T>::zeros(y_shape);
    let [n, c, h, w] = y_shape;
    let mut d_hyper_out = Tensor::<T>::zeros([n, 2 * c, h, w]);
    let half = c * h * w;
    if rate_weight != 0.0 {
        for b in 0..n {
            let yh = tape.y_hat.item(b);
            let mu = tape.gaussian.mu.item(b);
            let sigma = tape.gaussian.sigma.item(b);
            let raw = tape.raw_sigma.item(b);
            let dy = d_y.item_mut(b);
            let dh = d_hyper_out.item_mut(b);
            for i in 0..half {
                let (p, dp_dt, dp_ds) =
                    gaussian_bin(yh[i].as_f64() - mu[i].as_f64(), sigma[i].as_f64());
                let g = log_gradient(p, bits_scale);
                dy[i] = T::lit(g * dp_dt);
                dh[i] = T::lit(-g * dp_dt);
                dh[half + i] = T::lit(g * dp_ds * math::sigmoid(raw[i].as_f64()));
            }
        }
    }

    // Distortion path through the synthesis transform.
    if let Some(dx) = d_xhat {
        let d_from_synthesis = params
            .synthesis
            .backward(
                &tape.gs,
                dx,
                Some(grads.get_mut(SubNetwork::Synthesis)),
                true,
            )?
            .expect("input gradient requested");
        d_y.add_assign(&d_from_synthesis)?;
    }

    // Hyper path.
    let mut d_z = params
        .hyper_synthesis
        .backward(
            &tape.hs,
            d_hyper_out,
            Some(grads.get_mut(SubNetwork::HyperSynthesis)),
            true,
        )?
        .expect("input gradient requested");
    if rate_weight != 0.0 {
        let [n, cz, hz, wz] = tape.z_hat.shape();
        let plane = hz * wz;
        let (dloc, dls) = {
            let g = grads.get_mut(SubNetwork::FactorizedPrior);
            let (a, b) = g.split_at_mut(1);
            (&mut a[0], &mut b[0])
        };
        for b in 0..n {
            let zh = tape.z_hat.item(b);
            let dz = d_z.item_mut(b);
            for ch in 0..cz {
                let loc = params.prior.location[ch].as_f64();
                let scale = params.prior.scale(ch);
                let mut acc_loc = 0.0;
                let mut acc_ls = 0.0;
                for i in ch * plane..(ch + 1) * plane {
                    let (p, dp_dd, dp_ds) = logistic_bin(zh[i].as_f64() - loc, scale);
                    let g = log_gradient(p, bits_scale);
                    dz[i] += T::lit(g * dp_dd);
                    acc_loc -= g * dp_dd;
                    acc_ls += g * dp_ds * scale;
                }
                dloc[ch] += T::lit(acc_loc);
                dls[ch] += T::lit(acc_ls);
            }
        }
    }
    let d_from_hyper = params
        .hyper_analysis
        .backward(
            &tape.ha,
            d_z,
            Some(grads.get_mut(SubNetwork::HyperAnalysis)),
            true,
        )?
        .expect("input gradient requested");
    d_y.add_assign(&d_from_hyper)?;
    params.analysis.backward(
        &tape.ga,
        d_y,
        Some(grads.get_mut(SubNetwork::Analysis)),
        false,
    )?;
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::arch::ArchConfig;

    fn arch(s: usize, sh: usize, cy: usize, cz: usize) -> ArchConfig {
        ArchConfig {
            downsampling_stages: s,
            hidden_channels: 16,
            latent_channels: cy,
            hyper_channels: cz,
            hyper_downsampling_stages: sh,
            ..ArchConfig::default()
        }
    }

    fn image(shape: [usize; 4], seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random::<f32>()).collect()).unwrap()
    }

    #[test]
    fn analysis_shapes() {
        let p = CodecParams::<f32>::init(arch(3, 2, 96, 32), 0).unwrap();
        assert_eq!(
            analysis(&image([1, 3, 64, 64], 0), &p).unwrap().shape(),
            [1, 96, 8, 8]
        );
        let err = analysis(&image([1, 3, 60, 60], 0), &p).unwrap_err();
        assert!(matches!(err, CoreError::DimensionMismatch(_)));
        let p2 = CodecParams::<f32>::init(arch(2, 1, 32, 16), 0).unwrap();
        assert_eq!(
            analysis(&image([2, 3, 32, 32], 0), &p2).unwrap().shape(),
            [2, 32, 8, 8]
        );
    }

    #[test]
    fn synthesis_shapes_and_zero_params() {
        let p = CodecParams::<f32>::init(arch(3, 2, 96, 32), 0).unwrap();
        assert_eq!(
            synthesis(&image([1, 96, 8, 8], 1), &p).unwrap().shape(),
            [1, 3, 64, 64]
        );
        assert_eq!(
            synthesis(&image([4, 96, 4, 4], 1), &p).unwrap().shape(),
            [4, 3, 32, 32]
        );
        let mut z = CodecParams::<f32>::zeros(arch(3, 2, 96, 32)).unwrap();
        if let Some(crate::nn::Layer::Deconv(last)) = z.synthesis.layers.last_mut() {
            last.bias = vec![0.25, 0.5, 0.75];
        }
        let out = synthesis(&Tensor::zeros([1, 96, 2, 2]), &z).unwrap();
        for (i, v) in out.data().iter().enumerate() {
            assert_eq!(*v, [0.25, 0.5, 0.75][i / 256]);
        }
    }

    #[test]
    fn hyper_shapes_and_sigma_floor() {
        let p = CodecParams::<f32>::init(arch(3, 2, 96, 32), 0).unwrap();
        assert_eq!(
            hyper_analysis(&image([1, 96, 8, 8], 2), &p)
                .unwrap()
                .shape(),
            [1, 32, 2, 2]
        );
        assert!(hyper_analysis(&image([1, 96, 1, 1], 2), &p).is_err());
        let p1 = CodecParams::<f32>::init(arch(3, 1, 96, 16), 0).unwrap();
        assert_eq!(
            hyper_analysis(&image([1, 96, 16, 16], 2), &p1)
                .unwrap()
                .shape(),
            [1, 16, 8, 8]
        );
        let g = hyper_synthesis(&image([1, 32, 2, 2], 3).map(|v| (v * 10.0).round()), &p).unwrap();
        assert_eq!(g.mu.shape(), [1, 96, 8, 8]);
        assert_eq!(g.sigma.shape(), [1, 96, 8, 8]);
        assert!(g
            .sigma
            .data()
            .iter()
            .all(|&s| s as f64 >= SIGMA_FLOOR - 1e-7));
        let zero = CodecParams::<f64>::zeros(arch(3, 2, 96, 32)).unwrap();
        let g = hyper_synthesis(&Tensor::zeros([1, 32, 2, 2]), &zero).unwrap();
        let expected = SIGMA_FLOOR + std::f64::consts::LN_2;
        assert!(g.sigma.data().iter().all(|&s| (s - expected).abs() < 1e-15));
    }

    #[test]
    fn quantize_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let v = Tensor::from_vec([1, 1, 1, 1], vec![2.3f64]).unwrap();
        assert_eq!(
            quantize(&v, Mode::Eval, None, &mut rng).unwrap().data()[0],
            2.0
        );
        let off = Tensor::from_vec([1, 1, 1, 1], vec![0.4f64]).unwrap();
        let q = quantize(&v, Mode::Eval, Some(&off), &mut rng)
            .unwrap()
            .data()[0];
        assert!((q - 2.4).abs() < 1e-12);
        let big = image([1, 4, 16, 16], 5).map(|x| x * 20.0 - 10.0);
        let noisy = quantize(&big, Mode::Train, None, &mut rng).unwrap();
        for (a, b) in big.data().iter().zip(noisy.data()) {
            assert!((a - b).abs() <= 0.5);
        }
    }

    #[test]
    fn eval_forward_is_deterministic_and_integral() {
        let p = CodecParams::<f32>::init(arch(3, 2, 32, 16), 4).unwrap();
        let x = image([1, 3, 64, 64], 6);
        let a = forward(&x, Mode::Eval, &p, 1).unwrap();
        let b = forward(&x, Mode::Eval, &p, 2).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.x_hat.shape(), [1, 3, 64, 64]);
        for (y, m) in a
            .latents
            .y_hat
            .data()
            .iter()
            .zip(a.latents.gaussian.mu.data())
        {
            let r = (y - m) as f64;
            assert!((r - r.round()).abs() < 1e-6);
        }
        assert!(a.latents.z_hat.data().iter().all(|z| z.fract() == 0.0));
    }

    #[test]
    fn train_forward_is_seed_deterministic_with_positive_rates() {
        let p = CodecParams::<f32>::init(arch(3, 2, 32, 16), 4).unwrap();
        let x = image([2, 3, 32, 32], 7);
        let a = forward(&x, Mode::Train, &p, 11).unwrap();
        let b = forward(&x, Mode::Train, &p, 11).unwrap();
        let c = forward(&x, Mode::Train, &p, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.latents.y_hat, c.latents.y_hat);
        assert!(a.bpp_y > 0.0 && a.bpp_z > 0.0);
    }
}
