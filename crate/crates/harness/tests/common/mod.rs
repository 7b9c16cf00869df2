#![allow(dead_code)]

use std::path::Path;

use rdp_core::codec::gradcheck::tiny_arch;
use rdp_core::codec::Nonlinearity;
use rdp_harness::dataset::synthesize_dataset;
use rdp_harness::ExperimentConfig;

/// Small folders of procedural images under `root`.
pub fn tiny_dataset(root: &Path) {
    synthesize_dataset(&root.join("train"), 12, 32, 32, 10).unwrap();
    synthesize_dataset(&root.join("eval"), 2, 32, 40, 900).unwrap();
}

pub fn tiny_config(root: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(root.join("train"), root.join("eval"));
    cfg.arch = tiny_arch(Nonlinearity::LeakyRelu);
    cfg.lambdas = vec![0.01];
    cfg.train.iterations = 8;
    cfg.train.batch_size = 2;
    cfg.train.patch_size = 16;
    cfg.train.learning_rate = 1e-3;
    cfg.train.log_every = 1;
    cfg.sweep.gammas = vec![65.025, 0.0];
    cfg.sweep.finetune = cfg.train.clone();
    cfg.sweep.finetune.iterations = 4;
    cfg.output_dir = root.join("out");
    cfg.seed = 11;
    cfg
}
