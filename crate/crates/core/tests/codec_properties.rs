use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rdp_core::codec::{
    analysis, estimate_bpp, forward, likelihood_conditional, likelihood_factorized, quantize, synthesis, ArchConfig,
    CodecParams, GaussianParams, Mode,
};
use rdp_core::nn::Tensor;

fn small_arch() -> ArchConfig {
    ArchConfig {
        downsampling_stages: 2,
        hidden_channels: 8,
        latent_channels: 8,
        hyper_channels: 8,
        hyper_downsampling_stages: 1,
        ..ArchConfig::default()
    }
}

fn random(shape: [usize; 4], seed: u64, lo: f32, hi: f32) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn synthesis_inverts_analysis_shape(batch in 1usize..3, hm in 1usize..5, wm in 1usize..5, seed in 0u64..1000) {
        let params = CodecParams::<f32>::init(small_arch(), seed).unwrap();
        let x = random([batch, 3, 8 * hm, 8 * wm], seed, 0.0, 1.0);
        let y = analysis(&x, &params).unwrap();
        prop_assert_eq!(synthesis(&y, &params).unwrap().shape(), x.shape());
    }

    #[test]
    fn eval_quantisation_is_idempotent(seed in 0u64..1000, scale in 0.1f32..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = random([1, 4, 5, 5], seed, -scale, scale);
        let mu = random([1, 4, 5, 5], seed + 1, -scale, scale);
        let once = quantize(&v, Mode::Eval, Some(&mu), &mut rng).unwrap();
        let twice = quantize(&once, Mode::Eval, Some(&mu), &mut rng).unwrap();
        prop_assert_eq!(once, twice);
        let zero_once = quantize(&v, Mode::Eval, None, &mut rng).unwrap();
        prop_assert_eq!(quantize(&zero_once, Mode::Eval, None, &mut rng).unwrap(), zero_once);
    }

    #[test]
    fn likelihoods_are_probabilities(seed in 0u64..1000, spread in 0.0f32..200.0) {
        let y = random([1, 3, 4, 4], seed, -spread, spread).map(|v| v.round());
        let mu = random([1, 3, 4, 4], seed + 7, -spread, spread);
        let sigma = random([1, 3, 4, 4], seed + 9, 0.11, 30.0);
        let p = likelihood_conditional(&y, &GaussianParams { mu, sigma }).unwrap();
        prop_assert!(p.data().iter().all(|&v| v > 0.0 && v <= 1.0));
        let params = CodecParams::<f32>::init(small_arch(), seed).unwrap();
        let z = random([1, 8, 3, 3], seed, -spread, spread).map(|v| v.round());
        let q = likelihood_factorized(&z, &params.prior).unwrap();
        prop_assert!(q.data().iter().all(|&v| v > 0.0 && v <= 1.0));
        prop_assert!(estimate_bpp(&[&p, &q], 16).unwrap() >= 0.0);
    }

    #[test]
    fn forward_is_deterministic_in_both_modes(seed in 0u64..1000) {
        let params = CodecParams::<f32>::init(small_arch(), seed).unwrap();
        let x = random([1, 3, 32, 16], seed, 0.0, 1.0);
        for mode in [Mode::Train, Mode::Eval] {
            let a = forward(&x, mode, &params, seed).unwrap();
            let b = forward(&x, mode, &params, seed).unwrap();
            prop_assert_eq!(a.x_hat.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            b.x_hat.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            prop_assert_eq!(a.bpp_y.to_bits(), b.bpp_y.to_bits());
            prop_assert_eq!(a.bpp_z.to_bits(), b.bpp_z.to_bits());
        }
    }
}
