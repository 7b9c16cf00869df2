//! The `rdp` command line.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rdp_core::analysis::{export_results, import_json, knee_point, plot_curves, DistortionAxis, PDCurve};
use rdp_core::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, Stage};
use rdp_core::codec::CodecParams;
use rdp_core::coding::{decode_image, encode_image, Bitstream};
use rdp_core::data::PatchSampler;
use rdp_core::metrics::{evaluate_image, ConvFeatures, FeatureExtractorSpec, MetricReport};
use rdp_core::training::{finetune_pd, freeze, sweep_gamma, train_rd, TrainConfig};

use crate::config::{load_config, ExperimentConfig};
use crate::dataset::{list_images, load_eval_images, load_image, save_image};
use crate::error::{io_err, HarnessError, Result};
use crate::experiment::{derive_seed, gamma_tag, manifest_hash, run_experiment, write_log};

#[derive(Debug, Parser)]
#[command(name = "rdp", version, about = "Fixed-rate perception-distortion experiments for a learned image codec")]
pub struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true, env = "RDP_OUTPUT_DIR")]
    pub output_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the full codec for one lambda.
    TrainRd {
        /// Defaults to the first configured lambda.
        #[arg(long)]
        lambda: Option<f64>,
        /// Continue from this checkpoint instead of a fresh initialisation.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Mark an RD checkpoint as the frozen baseline and print its frozen hash.
    Freeze {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Fine-tune the decoder of a frozen baseline for one gamma.
    FinetunePd {
        #[arg(long)]
        gamma: f64,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Fine-tune one decoder per configured gamma and evaluate them all.
    Sweep {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Compress an image.
    Encode {
        image: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Reconstruct an image from a bitstream.
    Decode {
        bitstream: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Code every image in a folder and print per-image metrics as CSV.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Defaults to the configured evaluation folder.
        #[arg(long)]
        images: Option<PathBuf>,
    },
    /// Find knees on one or more curve files and export results.
    Analyze {
        #[arg(long = "curve", required = true)]
        curves: Vec<PathBuf>,
    },
    /// Render the two PD plots from a results file.
    Plot {
        #[arg(long)]
        results: PathBuf,
    },
    /// Run (or resume) the full experiment.
    Run,
}

/// Parses `args` and runs; returns the process exit code.
pub fn main_with<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

struct Env {
    config: Option<ExperimentConfig>,
    output_dir: PathBuf,
}

impl Env {
    fn new(cli: &Cli) -> Result<Self> {
        let mut config = match &cli.config {
            Some(p) => Some(load_config(p)?),
            None => None,
        };
        if let Some(c) = config.as_mut() {
            if let Some(s) = cli.seed {
                c.seed = s;
            }
            if let Some(o) = &cli.output_dir {
                c.output_dir = o.clone();
            }
        }
        let output_dir = cli
            .output_dir
            .clone()
            .or_else(|| config.as_ref().map(|c| c.output_dir.clone()))
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(Env { config, output_dir })
    }

    fn config(&self, command: &str) -> Result<&ExperimentConfig> {
        self.config.as_ref().ok_or_else(|| HarnessError::Config {
            path: "--config".into(),
            message: format!("`{command}` needs a configuration file"),
        })
    }

    fn out(&self, name: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.output_dir).map_err(io_err(&self.output_dir))?;
        Ok(self.output_dir.join(name))
    }
}

fn log_path(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".log.csv");
    PathBuf::from(s)
}

fn load(path: &Path) -> Result<(CodecParams<f32>, CheckpointMeta)> {
    if !path.exists() {
        return Err(HarnessError::Validation(format!("checkpoint {} does not exist", path.display())));
    }
    Ok(load_checkpoint(path)?)
}

pub fn execute(cli: Cli) -> Result<()> {
    let env = Env::new(&cli)?;
    match cli.command {
        Command::TrainRd { lambda, init, output } => {
            let cfg = env.config("train-rd")?;
            let lambda = lambda.unwrap_or(cfg.lambdas[0]);
            let rd_cfg = cfg.rd_config(lambda, derive_seed(cfg.seed, 1));
            rd_cfg.validate(&cfg.arch, "train").map_err(|e| HarnessError::Validation(e.to_string()))?;
            let (start, parent) = match init {
                Some(p) => {
                    let (params, _) = load(&p)?;
                    let h = params.content_hash();
                    (params, Some(h))
                }
                None => (CodecParams::init(cfg.arch, cfg.seed)?, None),
            };
            let images = list_images(&cfg.dataset.train_dir)?.iter().map(|p| load_image(p)).collect::<Result<Vec<_>>>()?;
            let mut sampler = PatchSampler::new(images, rd_cfg.patch_size, derive_seed(cfg.seed, 2))?;
            let (params, log) = train_rd(start, &mut sampler, &rd_cfg)?;
            let path = match output {
                Some(p) => p,
                None => env.out("rd.ckpt")?,
            };
            save_checkpoint(&path, &params, &CheckpointMeta::new(&params, Stage::RdTrained, None, parent, rd_cfg))?;
            write_log(&log_path(&path), &log)?;
            println!("{}", params.content_hash());
        }
        Command::Freeze { checkpoint, output } => {
            let (params, meta) = load(&checkpoint)?;
            let parent = params.content_hash();
            let (params, _, frozen_hash) = freeze(params);
            let path = match output {
                Some(p) => p,
                None => env.out("frozen.ckpt")?,
            };
            let meta = CheckpointMeta::new(&params, Stage::FrozenBaseline, None, Some(parent), meta.config);
            save_checkpoint(&path, &params, &meta)?;
            println!("{frozen_hash}");
        }
        Command::FinetunePd { gamma, checkpoint, output } => {
            let cfg = env.config("finetune-pd")?;
            let (params, _) = load(&checkpoint)?;
            let parent = params.content_hash();
            let (params, mask, _) = freeze(params);
            let seed = derive_seed(cfg.seed, 3);
            let c = TrainConfig {
                gamma,
                seed,
                ..cfg.sweep.finetune.clone()
            };
            c.validate(&cfg.arch, "sweep.finetune").map_err(|e| HarnessError::Validation(e.to_string()))?;
            let images = list_images(&cfg.dataset.train_dir)?.iter().map(|p| load_image(p)).collect::<Result<Vec<_>>>()?;
            let mut sampler = PatchSampler::new(images, c.patch_size, seed)?;
            let (tuned, log) = finetune_pd(params, &mask, &mut sampler, &c)?;
            let path = match output {
                Some(p) => p,
                None => env.out(&format!("{}.ckpt", gamma_tag(gamma)))?,
            };
            save_checkpoint(&path, &tuned, &CheckpointMeta::new(&tuned, Stage::PdFinetuned, Some(gamma), Some(parent), c))?;
            write_log(&log_path(&path), &log)?;
            println!("{}", tuned.content_hash());
        }
        Command::Sweep { checkpoint } => {
            let cfg = env.config("sweep")?;
            let (params, _) = load(&checkpoint)?;
            let parent = params.content_hash();
            let (frozen, mask, _) = freeze(params);
            let mut sweep = cfg.sweep.clone();
            sweep.finetune.seed = derive_seed(cfg.seed, 3);
            let images = list_images(&cfg.dataset.train_dir)?.iter().map(|p| load_image(p)).collect::<Result<Vec<_>>>()?;
            let eval = load_eval_images(&cfg.dataset.eval_dir, cfg.arch.total_factor())?;
            let mut sampler = PatchSampler::new(images, sweep.finetune.patch_size, sweep.finetune.seed)?;
            let res = sweep_gamma(&frozen, &mask, &sweep, &mut sampler, &eval)?;
            for (gamma, p, log) in &res.decoders {
                let path = env.out(&format!("{}.ckpt", gamma_tag(*gamma)))?;
                let c = TrainConfig {
                    gamma: *gamma,
                    ..sweep.finetune.clone()
                };
                save_checkpoint(&path, p, &CheckpointMeta::new(p, Stage::PdFinetuned, Some(*gamma), Some(parent.clone()), c))?;
                write_log(&log_path(&path), log)?;
            }
            let curve = serde_json::to_string_pretty(&res.curve)?;
            let path = env.out("curve.json")?;
            std::fs::write(&path, curve).map_err(io_err(&path))?;
            print_curve(&res.curve);
        }
        Command::Encode { image, output, checkpoint } => {
            let (params, _) = load(&checkpoint)?;
            let img = load_image(&image)?;
            let stream = encode_image(&img.pixels, &params).map_err(|e| HarnessError::Validation(e.to_string()))?;
            std::fs::write(&output, stream.to_bytes()).map_err(io_err(&output))?;
            println!("{} bytes, {:.4} bpp", stream.len(), stream.bpp());
        }
        Command::Decode { bitstream, output, checkpoint } => {
            let (params, _) = load(&checkpoint)?;
            let bytes = std::fs::read(&bitstream).map_err(io_err(&bitstream))?;
            let stream = Bitstream::from_bytes(&bytes)?;
            let x_hat = decode_image(&stream, &params)?;
            save_image(&output, &x_hat)?;
        }
        Command::Evaluate { checkpoint, images } => {
            let (params, _) = load(&checkpoint)?;
            let (dir, spec) = match (&images, &env.config) {
                (Some(d), c) => (d.clone(), c.as_ref().map(|c| c.sweep.eval_metric_spec.clone())),
                (None, Some(c)) => (c.dataset.eval_dir.clone(), Some(c.sweep.eval_metric_spec.clone())),
                (None, None) => {
                    return Err(HarnessError::Config {
                        path: "--images".into(),
                        message: "give an image folder or a configuration file".into(),
                    })
                }
            };
            let spec = spec.unwrap_or_else(FeatureExtractorSpec::default_eval);
            let net = ConvFeatures::<f32>::from_spec(&spec)?;
            let eval = load_eval_images(&dir, params.arch.total_factor())?;
            let mut text = format!("{}\n", MetricReport::CSV_HEADER);
            for img in &eval {
                let stream = encode_image(&img.pixels, &params)?;
                let x_hat = decode_image(&stream, &params)?;
                let r = evaluate_image(&img.name, &img.pixels, &x_hat, stream.bpp(), &net)?;
                text.push_str(&r.csv_row());
                text.push('\n');
            }
            print!("{text}");
            let path = env.out("evaluation.csv")?;
            std::fs::write(&path, text).map_err(io_err(&path))?;
        }
        Command::Analyze { curves } => {
            let mut loaded = Vec::new();
            for p in &curves {
                let text = std::fs::read_to_string(p).map_err(io_err(p))?;
                let c: PDCurve = serde_json::from_str(&text).map_err(|e| HarnessError::Validation(format!("{}: {e}", p.display())))?;
                loaded.push(c);
            }
            let mut knees = Vec::new();
            for c in &loaded {
                let k = knee_point(c, DistortionAxis::Psnr)?;
                println!("rate {:.4} bpp: knee at gamma {} (distance {:.4})", c.rate_label, k.gamma_at_knee, k.distance);
                knees.push(Some(k));
            }
            let ex = export_results(&loaded, &knees)?;
            for (name, body) in [("results.csv", &ex.csv), ("results.json", &ex.json)] {
                let path = env.out(name)?;
                std::fs::write(&path, body).map_err(io_err(&path))?;
            }
        }
        Command::Plot { results } => {
            let text = std::fs::read_to_string(&results).map_err(io_err(&results))?;
            let doc = import_json(&text)?;
            let curves: Vec<PDCurve> = doc.curves.iter().map(|c| c.curve.clone()).collect();
            let psnr: Vec<_> = doc.curves.iter().map(|c| c.knee.clone()).collect();
            let ssim: Vec<_> = curves.iter().map(|c| knee_point(c, DistortionAxis::Ssim).ok()).collect();
            let plots = plot_curves(&curves, &psnr, &ssim)?;
            for (name, body) in [("perceptual_vs_psnr.svg", &plots.perceptual_vs_psnr), ("perceptual_vs_ssim.svg", &plots.perceptual_vs_ssim)] {
                let path = env.out(name)?;
                std::fs::write(&path, body).map_err(io_err(&path))?;
            }
        }
        Command::Run => {
            let cfg = env.config("run")?;
            run_experiment(cfg)?;
            println!("{}", manifest_hash(&cfg.output_dir)?);
        }
    }
    Ok(())
}

fn print_curve(curve: &PDCurve) {
    println!("gamma,bpp,psnr,ssim,perceptual");
    for p in &curve.points {
        println!("{},{:.4},{:.3},{:.4},{:.4}", p.gamma, p.bpp_actual, p.psnr, p.ssim, p.perceptual);
    }
}
