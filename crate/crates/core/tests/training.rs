use rdp_core::checkpoint::{load_checkpoint, meta_path, save_checkpoint, CheckpointMeta, Stage};
use rdp_core::codec::gradcheck::tiny_arch;
use rdp_core::codec::{CodecParams, Nonlinearity, SubNetwork};
use rdp_core::data::{synthetic_image, BatchSource, NamedImage, PatchSampler};
use rdp_core::nn::Tensor;
use rdp_core::training::{
    finetune_pd, freeze, pd_loss, rd_loss, sweep_gamma, train_rd, FreezeMask, SweepConfig, TrainConfig,
};
use rdp_core::CoreError;

fn images(n: usize, size: usize) -> Vec<NamedImage> {
    (0..n)
        .map(|i| NamedImage {
            name: format!("img{i:03}"),
            pixels: synthetic_image(1000 + i as u64, size, size),
        })
        .collect()
}

fn sampler(seed: u64) -> PatchSampler {
    PatchSampler::new(images(16, 32), 16, seed).unwrap()
}

fn cfg(iterations: usize) -> TrainConfig {
    TrainConfig {
        lambda: 0.01,
        learning_rate: 1e-3,
        iterations,
        batch_size: 4,
        patch_size: 16,
        log_every: 1,
        seed: 3,
        ..TrainConfig::default()
    }
}

fn tiny(seed: u64) -> CodecParams<f32> {
    CodecParams::init(tiny_arch(Nonlinearity::LeakyRelu), seed).unwrap()
}

#[test]
fn loss_arithmetic() {
    // rate carries the weight, not distortion
    assert_eq!(rd_loss(0.01, 2.0, 0.1), 0.01 + 0.1 * 2.0);
    assert!((rd_loss(0.01, 2.0, 0.1) - 0.21).abs() < 1e-15);
    assert_eq!(rd_loss(0.02, 1.0, 0.0), 0.02);
    assert_eq!(rd_loss(0.0, 1.0, 0.05), 0.05);
    assert!((pd_loss(0.01, 0.3, 0.01) - 0.3001).abs() < 1e-15);
    assert_eq!(pd_loss(0.5, 0.0, 1.0), 0.5);
    assert_eq!(pd_loss(0.5, 0.25, 0.0), 0.25);
}

#[test]
fn zero_iterations_return_params_unchanged() {
    let p = tiny(1);
    let (q, log) = train_rd(p.clone(), &mut sampler(0), &cfg(0)).unwrap();
    assert_eq!(q.content_hash(), p.content_hash());
    assert!(log.entries.is_empty());
    let (q, log) = finetune_pd(p.clone(), &FreezeMask::rate_fixing(), &mut sampler(0), &cfg(0)).unwrap();
    assert_eq!(q.content_hash(), p.content_hash());
    assert!(log.entries.is_empty());
}

#[test]
fn rd_training_reduces_loss_and_is_deterministic() {
    let c = cfg(200);
    let (a, log_a) = train_rd(tiny(2), &mut sampler(7), &c).unwrap();
    let (b, log_b) = train_rd(tiny(2), &mut sampler(7), &c).unwrap();
    assert_eq!(a.content_hash(), b.content_hash());
    assert_eq!(log_a, log_b);
    assert_eq!(log_a.entries.len(), 200);
    let mean = |s: &[rdp_core::training::LogEntry]| s.iter().map(|e| e.loss).sum::<f64>() / s.len() as f64;
    let first = mean(&log_a.entries[..20]);
    let last = mean(&log_a.entries[180..]);
    assert!(last < first, "loss went from {first} to {last}");
    let csv = log_a.to_csv();
    assert_eq!(csv.lines().count(), 201);

    let (c2, _) = train_rd(tiny(2), &mut sampler(8), &c).unwrap();
    assert_ne!(c2.content_hash(), a.content_hash());
}

struct NanSource;

impl BatchSource for NanSource {
    fn next_batch(&mut self, n: usize) -> rdp_core::Result<Tensor<f32>> {
        Ok(Tensor::full([n, 3, 16, 16], f32::NAN))
    }
}

#[test]
fn non_finite_loss_aborts() {
    let err = train_rd(tiny(1), &mut NanSource, &cfg(5)).unwrap_err();
    assert!(matches!(err, CoreError::NonFiniteLoss { iteration: 0, .. }), "{err}");
    let err = finetune_pd(tiny(1), &FreezeMask::rate_fixing(), &mut NanSource, &cfg(5)).unwrap_err();
    assert!(matches!(err, CoreError::NonFiniteLoss { iteration: 0, .. }), "{err}");
}

#[test]
fn finetuning_moves_only_the_decoder() {
    let (base, _) = train_rd(tiny(4), &mut sampler(1), &cfg(30)).unwrap();
    let (base, mask, frozen_hash) = freeze(base);
    let c = TrainConfig { gamma: 65.025, ..cfg(20) };
    let (tuned, log) = finetune_pd(base.clone(), &mask, &mut sampler(2), &c).unwrap();
    assert_eq!(tuned.frozen_hash(), frozen_hash);
    for sub in SubNetwork::RATE_DETERMINING {
        let a: Vec<Vec<u32>> = base.tensors(sub).iter().map(|t| t.iter().map(|v| v.to_bits()).collect()).collect();
        let b: Vec<Vec<u32>> = tuned.tensors(sub).iter().map(|t| t.iter().map(|v| v.to_bits()).collect()).collect();
        assert_eq!(a, b, "{sub:?} moved");
    }
    assert_ne!(base.hash_of(&[SubNetwork::Synthesis]), tuned.hash_of(&[SubNetwork::Synthesis]));
    assert_eq!(log.entries.len(), 20);
    assert!(log.entries.iter().all(|e| e.perceptual > 0.0 && e.rate == 0.0));
}

#[test]
fn finetuning_rejects_masks_that_leave_rate_trainable() {
    let mut mask = FreezeMask::rate_fixing();
    mask.frozen.remove(&SubNetwork::HyperSynthesis);
    mask.trainable.insert(SubNetwork::HyperSynthesis);
    let err = finetune_pd(tiny(1), &mask, &mut sampler(0), &cfg(2)).unwrap_err();
    assert!(matches!(err, CoreError::InvalidArgument(_)));
}

fn sweep_cfg(gammas: Vec<f64>) -> SweepConfig {
    SweepConfig {
        gammas,
        finetune: TrainConfig { learning_rate: 1e-3, ..cfg(6) },
        ..SweepConfig::default()
    }
}

#[test]
fn sweep_matches_independent_runs_and_fixes_rate() {
    let (base, _) = train_rd(tiny(5), &mut sampler(1), &cfg(20)).unwrap();
    let (base, mask, _) = freeze(base);
    let eval = images(2, 32);
    let sweep = sweep_cfg(vec![65.025, 0.0, 650.25]);
    let res = sweep_gamma(&base, &mask, &sweep, &mut sampler(9), &eval).unwrap();
    assert_eq!(res.curve.points.len(), 4);
    assert!(res.curve.points[0].gamma == rdp_core::analysis::GammaLabel::MseOnly);
    let digests: Vec<&str> = res.curve.points.iter().map(|p| p.stream_digest.as_str()).collect();
    assert!(digests.windows(2).all(|w| w[0] == w[1]));
    assert!(res.curve.points.iter().all(|p| p.bpp_actual == res.curve.points[0].bpp_actual));

    for (gamma, params, log) in &res.decoders {
        let c = TrainConfig { gamma: *gamma, ..sweep.finetune.clone() };
        let (alone, alone_log) = finetune_pd(base.clone(), &mask, &mut sampler(9), &c).unwrap();
        assert_eq!(alone.content_hash(), params.content_hash(), "gamma {gamma}");
        assert_eq!(&alone_log, log);
    }
}

#[test]
fn empty_sweep_is_an_error() {
    let (base, mask, _) = freeze(tiny(1));
    let err = sweep_gamma(&base, &mask, &sweep_cfg(vec![]), &mut sampler(0), &images(1, 32)).unwrap_err();
    assert!(matches!(err, CoreError::InvalidArgument(_)));
    let err = sweep_gamma(&base, &mask, &sweep_cfg(vec![1.0, 1.0]), &mut sampler(0), &images(1, 32)).unwrap_err();
    assert!(matches!(err, CoreError::InvalidArgument(_)));
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rd.ckpt");
    let (p, _) = train_rd(tiny(6), &mut sampler(0), &cfg(3)).unwrap();
    let meta = CheckpointMeta::new(&p, Stage::RdTrained, None, None, cfg(3));
    save_checkpoint(&path, &p, &meta).unwrap();
    let (q, m) = load_checkpoint(&path).unwrap();
    assert_eq!(q.content_hash(), p.content_hash());
    assert_eq!(m, meta);

    let mut bytes = std::fs::read(&path).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0x40;
    std::fs::write(&path, &bytes).unwrap();
    assert!(load_checkpoint(&path).is_err());

    save_checkpoint(&path, &p, &meta).unwrap();
    let other = CheckpointMeta::new(&tiny(7), Stage::RdTrained, None, None, cfg(3));
    std::fs::write(meta_path(&path), serde_json::to_string(&other).unwrap()).unwrap();
    assert!(load_checkpoint(&path).is_err());
}

#[test]
fn frozen_hash_tracks_exactly_the_frozen_subnetworks() {
    let (p, mask, h) = freeze(tiny(3));
    let (p, _, h2) = freeze(p);
    assert_eq!(h, h2);
    assert_eq!(mask.trainable.iter().copied().collect::<Vec<_>>(), vec![SubNetwork::Synthesis]);
    for sub in SubNetwork::ALL {
        let mut q = p.clone();
        q.tensors_mut(sub)[0][0] += 0.25;
        let changed = freeze(q).2 != h;
        assert_eq!(changed, sub != SubNetwork::Synthesis, "{sub:?}");
    }
}
