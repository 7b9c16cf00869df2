mod common;

use std::time::SystemTime;

use rdp_core::checkpoint::load_checkpoint;
use rdp_harness::experiment::{manifest_hash, sha256_file, RunStatus};
use rdp_harness::{run_experiment, HarnessError};

fn mtime(p: &std::path::Path) -> SystemTime {
    std::fs::metadata(p).unwrap().modified().unwrap()
}

#[test]
fn one_rate_point_two_gammas() {
    let t = tempfile::tempdir().unwrap();
    common::tiny_dataset(t.path());
    let cfg = common::tiny_config(t.path());
    let m = run_experiment(&cfg).unwrap();
    assert_eq!(m.status, RunStatus::Complete);
    assert_eq!(m.rate_points.len(), 1);
    let rp = &m.rate_points[0];
    assert_eq!(rp.decoders.len(), 2);
    assert_eq!(rp.streams.len(), 2);
    assert!(rp.failure.is_none());
    let out = &cfg.output_dir;
    let curve: rdp_core::analysis::PDCurve =
        serde_json::from_str(&std::fs::read_to_string(out.join("rate_00/curve.json")).unwrap()).unwrap();
    assert_eq!(curve.points.len(), 3);
    assert!(rp.knee_psnr.is_some());
    for f in ["results.csv", "results.json", "perceptual_vs_psnr.svg", "perceptual_vs_ssim.svg", "reports.csv"] {
        assert!(out.join("rate_00").join(f).exists(), "{f}");
    }

    // a completed run is a no-op
    let h = manifest_hash(out).unwrap();
    let ck = out.join("rate_00/rd.ckpt");
    let before = mtime(&ck);
    let m2 = run_experiment(&cfg).unwrap();
    assert_eq!(m2, m);
    assert_eq!(manifest_hash(out).unwrap(), h);
    assert_eq!(mtime(&ck), before);

    // deleted artifacts come back byte-identical
    for rel in ["rate_00/gamma_0.ckpt", "rate_00/results.csv", "rate_00/streams/synth_00001.rdpc", "rate_00/rd.ckpt"] {
        let p = out.join(rel);
        let sha = sha256_file(&p).unwrap();
        std::fs::remove_file(&p).unwrap();
        run_experiment(&cfg).unwrap();
        assert_eq!(sha256_file(&p).unwrap(), sha, "{rel}");
        assert_eq!(manifest_hash(out).unwrap(), h, "{rel}");
    }
}

#[test]
fn same_config_in_two_places_gives_the_same_manifest() {
    let t = tempfile::tempdir().unwrap();
    common::tiny_dataset(t.path());
    let mut cfg = common::tiny_config(t.path());
    cfg.lambdas = vec![0.02, 0.01];
    run_experiment(&cfg).unwrap();
    let a = manifest_hash(&cfg.output_dir).unwrap();
    let first = cfg.output_dir.clone();
    cfg.output_dir = t.path().join("again");
    let m = run_experiment(&cfg).unwrap();
    assert_eq!(manifest_hash(&cfg.output_dir).unwrap(), a);

    // the second rate point continues from the first
    let (_, meta1) = load_checkpoint(&cfg.output_dir.join("rate_01/rd.ckpt")).unwrap();
    assert_eq!(meta1.parent_hash.as_deref(), m.rate_points[0].rd_params_hash.as_deref());
    assert_eq!(meta1.config.lambda, 0.01);

    cfg.seed += 1;
    cfg.output_dir = first;
    let e = run_experiment(&cfg).unwrap_err();
    assert!(e.is_validation(), "{e}");
}

#[test]
fn stage_failures_are_recorded() {
    let t = tempfile::tempdir().unwrap();
    common::tiny_dataset(t.path());
    let mut cfg = common::tiny_config(t.path());
    cfg.train.patch_size = 64;
    cfg.sweep.finetune.patch_size = 64;
    let e = run_experiment(&cfg).unwrap_err();
    assert!(matches!(&e, HarnessError::Stage { stage, .. } if stage == "train-rd"), "{e}");
    assert_eq!(e.exit_code(), 2);
    let m = rdp_harness::Manifest::load(&cfg.output_dir).unwrap().unwrap();
    assert_eq!(m.status, RunStatus::Failed);
    assert_eq!(m.rate_points[0].failure.as_ref().unwrap().stage, "train-rd");
}
