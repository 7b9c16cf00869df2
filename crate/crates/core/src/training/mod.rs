//! Rate-distortion training, rate freezing, decoder fine-tuning and sweeps.

pub mod config;
pub mod pd;
pub mod rd;

pub use config::{FreezeMask, SweepConfig, TrainConfig, DEFAULT_GAMMAS};
pub use pd::{evaluate_decoder, finetune_pd, freeze, sweep_gamma, DecoderEvaluation, SweepResult};
pub use rd::{iteration_seed, pd_loss, rd_loss, train_rd, LogEntry, TrainLog};
