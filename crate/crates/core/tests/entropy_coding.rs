use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rdp_core::codec::{encode_latents, forward, ArchConfig, CodecParams, Mode, SubNetwork};
use rdp_core::coding::range::ideal_bits;
use rdp_core::coding::{decode_image, decode_latents, decode_symbols, encode_image, encode_symbols, quantized_model_bits, Bitstream, CdfTable, HEADER_LEN};
use rdp_core::nn::Tensor;
use rdp_core::CoreError;

/// Standard normal CDF by composite Simpson integration of the density from 0.
fn phi_oracle(x: f64) -> f64 {
    let n = 20_000;
    let h = x / n as f64;
    let f = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut s = f(0.0) + f(x);
    for i in 1..n {
        s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    0.5 + s * h / 3.0
}

#[test]
fn gaussian_table_matches_independent_replay() {
    // Cumulative rounding of the CDF at the half-integer boundaries, then
    // one count minimum per bin.
    let mut expected = vec![0i64];
    for b in -8..8 {
        expected.push((phi_oracle(b as f64 + 0.5) * 65536.0).round() as i64);
    }
    expected.push(65536);
    for i in 1..17 {
        expected[i] = expected[i].max(expected[i - 1] + 1);
    }
    for i in (1..17).rev() {
        expected[i] = expected[i].min(expected[i + 1] - 1);
    }
    let t = CdfTable::gaussian(0.0, 1.0, (-8, 8)).unwrap();
    let got: Vec<i64> = t.cdf().iter().map(|&c| c as i64).collect();
    assert_eq!(got, expected);
    let p0 = phi_oracle(0.5) - phi_oracle(-0.5);
    assert!((p0 - 0.382925).abs() < 1e-6);
    assert!((t.count(0) as f64 / 65536.0 - p0).abs() <= 1.0 / 65536.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_sequences_round_trip(seed in any::<u64>(), len in 0usize..400) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tables: Vec<CdfTable> = (0..len).map(|_| {
            let mu = rng.random_range(-5.0..5.0);
            let sigma = rng.random_range(0.11..20.0);
            CdfTable::gaussian(mu, sigma, (-32, 31)).unwrap()
        }).collect();
        let symbols: Vec<i32> = (0..len).map(|_| rng.random_range(-40..40)).collect();
        let bytes = encode_symbols(&symbols, &tables).unwrap();
        let clamped: Vec<i32> = symbols.iter().map(|s| s.clamp(&-32, &31)).copied().collect();
        prop_assert_eq!(decode_symbols(&bytes, &tables).unwrap(), clamped.clone());
        let bound = ideal_bits(&clamped, &tables) / 8.0 + 16.0;
        prop_assert!((bytes.len() as f64) <= bound, "{} > {}", bytes.len(), bound);
    }

    #[test]
    fn cdf_tables_are_valid(mu in -40.0f64..40.0, sigma in 0.11f64..1e4) {
        let t = CdfTable::gaussian(mu, sigma, (-32, 31)).unwrap();
        prop_assert_eq!(t.cdf()[0], 0);
        prop_assert_eq!(*t.cdf().last().unwrap(), 65536);
        prop_assert!(t.cdf().windows(2).all(|w| w[1] > w[0]));
    }
}

fn arch() -> ArchConfig {
    ArchConfig {
        downsampling_stages: 2,
        hidden_channels: 16,
        latent_channels: 16,
        hyper_channels: 8,
        hyper_downsampling_stages: 2,
        ..ArchConfig::default()
    }
}

fn smooth_image(seed: u64, h: usize, w: usize) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a, b, c): (f32, f32, f32) = (rng.random(), rng.random(), rng.random());
    let mut data = Vec::with_capacity(3 * h * w);
    for ch in 0..3 {
        for i in 0..h {
            for j in 0..w {
                let v = 0.5 + 0.3 * ((i as f32 * a * 0.3 + ch as f32).sin() * (j as f32 * b * 0.2).cos()) + 0.1 * c;
                data.push((v + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0));
            }
        }
    }
    Tensor::from_vec([1, 3, h, w], data).unwrap()
}

#[test]
fn image_round_trip_is_lossless_on_latents() {
    let params = CodecParams::<f32>::init(arch(), 3).unwrap();
    for seed in 0..3 {
        let x = smooth_image(seed, 64, 96);
        let b = encode_image(&x, &params).unwrap();
        let parsed = Bitstream::from_bytes(&b.to_bytes()).unwrap();
        assert_eq!(parsed, b);
        let enc = encode_latents(&x, &params).unwrap();
        let dec = decode_latents(&parsed, &params).unwrap();
        assert_eq!(dec.y_hat, enc.y_hat);
        assert_eq!(dec.z_hat, enc.z_hat);
        let x_hat = decode_image(&parsed, &params).unwrap();
        let reference = forward(&x, Mode::Eval, &params, 0).unwrap().x_hat.map(|v| v.clamp(0.0, 1.0));
        assert_eq!(x_hat, reference);
        assert_eq!(encode_image(&x, &params).unwrap().to_bytes(), b.to_bytes());
    }
}

#[test]
fn coded_size_tracks_model_bits() {
    let params = CodecParams::<f32>::init(arch(), 4).unwrap();
    let x = smooth_image(9, 128, 128);
    let b = encode_image(&x, &params).unwrap();
    let (zb, yb) = quantized_model_bits(&x, &params).unwrap();
    let payload_bits = ((b.len() - HEADER_LEN) * 8) as f64;
    assert!(payload_bits <= zb + yb + 128.0, "{payload_bits} vs {}", zb + yb);
    let est = forward(&x, Mode::Eval, &params, 0).unwrap();
    let est_bits = est.bpp() * (128.0 * 128.0);
    let header_bits = (HEADER_LEN * 8) as f64;
    assert!((b.len() as f64 * 8.0 - est_bits).abs() <= 0.02 * est_bits + header_bits, "{} vs {est_bits}", b.len() * 8);
}

#[test]
fn decoders_differ_only_in_synthesis() {
    let base = CodecParams::<f32>::init(arch(), 5).unwrap();
    let mut tuned = base.clone();
    for t in tuned.tensors_mut(SubNetwork::Synthesis) {
        for v in t.iter_mut() {
            *v *= 1.01;
        }
    }
    let x = smooth_image(1, 64, 64);
    let b = encode_image(&x, &base).unwrap();
    assert_eq!(encode_image(&x, &tuned).unwrap(), b);
    let a = decode_latents(&b, &base).unwrap();
    let c = decode_latents(&b, &tuned).unwrap();
    assert_eq!(a.y_hat, c.y_hat);
    assert_ne!(decode_image(&b, &base).unwrap(), decode_image(&b, &tuned).unwrap());
}

#[test]
fn refuses_foreign_parameters() {
    let params = CodecParams::<f32>::init(arch(), 6).unwrap();
    let other = CodecParams::<f32>::init(arch(), 7).unwrap();
    let x = smooth_image(2, 64, 64);
    let b = encode_image(&x, &params).unwrap();
    assert!(matches!(decode_image(&b, &other), Err(CoreError::HashMismatch { .. })));
    let mut corrupt = b.clone();
    if let Some(byte) = corrupt.y_payload.get_mut(3) {
        *byte ^= 0x5a;
    }
    assert!(decode_image(&corrupt, &params).is_err());
}
#[test]
fn bit_flips_are_detected() {
    let params = CodecParams::<f32>::init(arch(), 6).unwrap();
    let b = encode_image(&smooth_image(2, 64, 64), &params).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..200 {
        let mut c = b.clone();
        let payload = if rng.random_bool(0.5) { &mut c.z_payload } else { &mut c.y_payload };
        let i = rng.random_range(0..payload.len());
        payload[i] ^= 1 << rng.random_range(0..8);
        assert!(decode_image(&c, &params).is_err());
    }
}
