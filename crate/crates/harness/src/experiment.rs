//! The full multi-rate procedure with a resumable manifest.
//!
//! Every artifact is recorded with its SHA-256. A rerun reuses any stage
//! whose recorded files are still present and intact, and recomputes the
//! rest; recomputation is deterministic so regenerated files are identical.

use std::path::{Path, PathBuf};

use rdp_core::analysis::{
    assemble_curve, export_results, knee_point, plot_curves, DistortionAxis, GammaLabel, KneeResult, PDCurve,
};
use rdp_core::checkpoint::{load_checkpoint, meta_path, save_checkpoint, CheckpointMeta, Stage};
use rdp_core::codec::CodecParams;
use rdp_core::coding::encode_image;
use rdp_core::data::{NamedImage, PatchSampler};
use rdp_core::metrics::{ConvFeatures, MetricReport};
use rdp_core::training::{
    evaluate_decoder, freeze, sweep_gamma, train_rd, DecoderEvaluation, FreezeMask, TrainConfig, TrainLog,
};
use rdp_core::CoreError;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::dataset::{list_images, load_eval_images, load_image};
use crate::error::{io_err, HarnessError, Result};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderRecord {
    pub gamma: f64,
    pub params_hash: String,
    pub checkpoint: Artifact,
    pub metadata: Artifact,
    pub log: Artifact,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub stage: String,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RatePointRecord {
    pub lambda: f64,
    pub rd_params_hash: Option<String>,
    pub rd_checkpoint: Option<Artifact>,
    pub rd_metadata: Option<Artifact>,
    pub rd_log: Option<Artifact>,
    pub frozen_hash: Option<String>,
    pub decoders: Vec<DecoderRecord>,
    pub streams: Vec<Artifact>,
    pub reports: Option<Artifact>,
    pub curve: Option<Artifact>,
    pub results_csv: Option<Artifact>,
    pub results_json: Option<Artifact>,
    pub plots: Vec<Artifact>,
    pub knee_psnr: Option<KneeResult>,
    pub knee_ssim: Option<KneeResult>,
    pub failure: Option<Failure>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    InProgress,
    Complete,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub experiment_hash: String,
    pub seed: u64,
    pub train_set_hash: String,
    pub eval_set_hash: String,
    pub status: RunStatus,
    pub rate_points: Vec<RatePointRecord>,
}

impl Manifest {
    pub fn load(output_dir: &Path) -> Result<Option<Manifest>> {
        let path = output_dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        Ok(Some(serde_json::from_str(&text)?))
    }

    fn save(&self, output_dir: &Path) -> Result<()> {
        let path = output_dir.join(MANIFEST_FILE);
        let tmp = output_dir.join(format!("{MANIFEST_FILE}.tmp"));
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(&tmp, text).map_err(io_err(&tmp))?;
        std::fs::rename(&tmp, &path).map_err(io_err(&path))
    }
}

/// SHA-256 of the manifest file as written.
pub fn manifest_hash(output_dir: &Path) -> Result<String> {
    let path = output_dir.join(MANIFEST_FILE);
    let bytes = std::fs::read(&path).map_err(io_err(&path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Splitmix-style derivation of independent stream seeds.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed.wrapping_add(stream.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn images_hash(images: &[NamedImage]) -> String {
    let mut h = Sha256::new();
    for img in images {
        h.update(img.name.as_bytes());
        h.update([0]);
        for &d in &img.pixels.shape() {
            h.update((d as u64).to_le_bytes());
        }
        for v in img.pixels.data() {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

pub fn gamma_tag(g: f64) -> String {
    format!("gamma_{g}")
}

struct Ctx<'a> {
    out: &'a Path,
}

impl Ctx<'_> {
    fn abs(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn intact(&self, a: &Option<Artifact>) -> bool {
        a.as_ref().is_some_and(|a| self.verify(a))
    }

    fn verify(&self, a: &Artifact) -> bool {
        sha256_file(&self.abs(&a.path)).is_ok_and(|h| h == a.sha256)
    }

    fn write(&self, rel: &str, bytes: &[u8]) -> Result<Artifact> {
        let path = self.abs(rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        std::fs::write(&path, bytes).map_err(io_err(&path))?;
        Ok(Artifact {
            path: rel.to_string(),
            sha256: hex::encode(Sha256::digest(bytes)),
        })
    }

    fn record(&self, rel: &str) -> Result<Artifact> {
        Ok(Artifact {
            path: rel.to_string(),
            sha256: sha256_file(&self.abs(rel))?,
        })
    }

    fn save_ckpt(&self, rel: &str, params: &CodecParams<f32>, meta: &CheckpointMeta) -> Result<(Artifact, Artifact)> {
        let path = self.abs(rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        save_checkpoint(&path, params, meta)?;
        let meta_rel = format!("{rel}.meta.json");
        debug_assert_eq!(meta_path(&path), self.abs(&meta_rel));
        Ok((self.record(rel)?, self.record(&meta_rel)?))
    }
}

/// Everything `run_experiment` needs that is not in the config file.
pub struct ExperimentData {
    pub train: Vec<NamedImage>,
    pub eval: Vec<NamedImage>,
}

impl ExperimentData {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        let train = list_images(&cfg.dataset.train_dir)?
            .iter()
            .map(|p| load_image(p))
            .collect::<Result<Vec<_>>>()?;
        let eval = load_eval_images(&cfg.dataset.eval_dir, cfg.arch.total_factor())?;
        Ok(ExperimentData { train, eval })
    }
}

/// Runs (or resumes) every rate point and returns the final manifest.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Manifest> {
    cfg.validate()?;
    let data = ExperimentData::load(cfg)?;
    run_with_data(cfg, &data)
}

pub fn run_with_data(cfg: &ExperimentConfig, data: &ExperimentData) -> Result<Manifest> {
    let out = cfg.output_dir.as_path();
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let ctx = Ctx { out };
    let fresh = Manifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        experiment_hash: cfg.experiment_hash(),
        seed: cfg.seed,
        train_set_hash: images_hash(&data.train),
        eval_set_hash: images_hash(&data.eval),
        status: RunStatus::InProgress,
        rate_points: Vec::new(),
    };
    let mut manifest = match Manifest::load(out)? {
        Some(m) => {
            if (&m.experiment_hash, &m.train_set_hash, &m.eval_set_hash)
                != (&fresh.experiment_hash, &fresh.train_set_hash, &fresh.eval_set_hash)
            {
                return Err(HarnessError::Validation(format!(
                    "{} holds a different experiment; choose another output directory",
                    out.display()
                )));
            }
            log::info!("resuming from existing manifest");
            m
        }
        None => fresh,
    };
    manifest.rate_points.resize_with(cfg.lambdas.len(), RatePointRecord::default);
    let original = manifest.clone();

    let mut previous: Option<CodecParams<f32>> = None;
    for (i, &lambda) in cfg.lambdas.iter().enumerate() {
        manifest.rate_points[i].lambda = lambda;
        manifest.rate_points[i].failure = None;
        let res = run_rate_point(cfg, data, &ctx, i, previous.take(), &mut manifest);
        match res {
            Ok(rd) => previous = Some(rd),
            Err((stage, e)) => {
                log::error!("rate point {i} failed in {stage}: {e}");
                manifest.rate_points[i].failure = Some(Failure {
                    stage: stage.to_string(),
                    message: e.to_string(),
                });
                manifest.status = RunStatus::Failed;
                manifest.save(out)?;
                return Err(HarnessError::Stage {
                    stage: stage.to_string(),
                    source: Box::new(e),
                });
            }
        }
    }
    manifest.status = RunStatus::Complete;
    if manifest != original || !out.join(MANIFEST_FILE).exists() {
        manifest.save(out)?;
    } else {
        log::info!("all stages up to date");
    }
    Ok(manifest)
}

type StageResult<T> = std::result::Result<T, (&'static str, HarnessError)>;

fn at(stage: &'static str) -> impl FnOnce(HarnessError) -> (&'static str, HarnessError) {
    move |e| (stage, e)
}

fn run_rate_point(
    cfg: &ExperimentConfig,
    data: &ExperimentData,
    ctx: &Ctx,
    i: usize,
    previous: Option<CodecParams<f32>>,
    manifest: &mut Manifest,
) -> StageResult<CodecParams<f32>> {
    let dir = format!("rate_{i:02}");
    let lambda = cfg.lambdas[i];
    let rd_cfg = cfg.rd_config(lambda, derive_seed(cfg.seed, 3 * i as u64 + 1));

    // train-rd
    let rec = &manifest.rate_points[i];
    let rd_rel = format!("{dir}/rd.ckpt");
    let rd_intact = ctx.intact(&rec.rd_checkpoint) && ctx.intact(&rec.rd_metadata) && ctx.intact(&rec.rd_log);
    let rd = if rd_intact {
        load_checkpoint(&ctx.abs(&rd_rel)).map_err(|e| ("train-rd", e.into()))?.0
    } else {
        log::info!("rate point {i}: training lambda {lambda} for {} iterations", rd_cfg.iterations);
        let start = match previous {
            Some(p) => p,
            None => CodecParams::init(cfg.arch, cfg.seed).map_err(|e| ("train-rd", e.into()))?,
        };
        let parent = (i > 0).then(|| start.content_hash());
        let mut sampler = PatchSampler::new(data.train.clone(), rd_cfg.patch_size, derive_seed(cfg.seed, 3 * i as u64 + 2))
            .map_err(|e| ("train-rd", e.into()))?;
        let (params, log) = train_rd(start, &mut sampler, &rd_cfg).map_err(|e| ("train-rd", e.into()))?;
        let meta = CheckpointMeta::new(&params, Stage::RdTrained, None, parent, rd_cfg.clone());
        let (ck, mt) = ctx.save_ckpt(&rd_rel, &params, &meta).map_err(at("train-rd"))?;
        let lg = ctx.write(&format!("{dir}/rd_log.csv"), log.to_csv().as_bytes()).map_err(at("train-rd"))?;
        let rec = &mut manifest.rate_points[i];
        if rec.rd_checkpoint.as_ref() != Some(&ck) {
            *rec = RatePointRecord {
                lambda,
                ..RatePointRecord::default()
            };
        }
        rec.rd_params_hash = Some(params.content_hash());
        rec.rd_checkpoint = Some(ck);
        rec.rd_metadata = Some(mt);
        rec.rd_log = Some(lg);
        manifest.save(ctx.out).map_err(at("train-rd"))?;
        params
    };

    // freeze
    let (frozen, mask, frozen_hash) = freeze(rd.clone());
    manifest.rate_points[i].frozen_hash = Some(frozen_hash.clone());

    // sweep
    let sweep_seed = derive_seed(cfg.seed, 3 * i as u64 + 3);
    let decoders = load_decoders(ctx, &manifest.rate_points[i], &frozen_hash);
    let (decoders, evaluations) = match decoders {
        Some(d) => (d, None),
        None => {
            log::info!("rate point {i}: fine-tuning {} decoders", cfg.sweep.gammas.len());
            let mut sweep = cfg.sweep.clone();
            sweep.finetune.seed = sweep_seed;
            let mut sampler = PatchSampler::new(data.train.clone(), sweep.finetune.patch_size, sweep_seed)
                .map_err(|e| ("sweep", e.into()))?;
            let res = sweep_gamma(&frozen, &mask, &sweep, &mut sampler, &data.eval).map_err(|e| ("sweep", e.into()))?;
            let parent = frozen.content_hash();
            let mut records = Vec::new();
            for (gamma, params, log) in &res.decoders {
                let tag = gamma_tag(*gamma);
                let c = TrainConfig {
                    gamma: *gamma,
                    ..sweep.finetune.clone()
                };
                let meta = CheckpointMeta::new(params, Stage::PdFinetuned, Some(*gamma), Some(parent.clone()), c);
                let (ck, mt) = ctx.save_ckpt(&format!("{dir}/{tag}.ckpt"), params, &meta).map_err(at("sweep"))?;
                let lg = ctx
                    .write(&format!("{dir}/{tag}_log.csv"), log.to_csv().as_bytes())
                    .map_err(at("sweep"))?;
                records.push(DecoderRecord {
                    gamma: *gamma,
                    params_hash: params.content_hash(),
                    checkpoint: ck,
                    metadata: mt,
                    log: lg,
                });
            }
            manifest.rate_points[i].decoders = records;
            manifest.save(ctx.out).map_err(at("sweep"))?;
            let decoders = res.decoders.into_iter().map(|(g, p, _)| (g, p)).collect();
            (decoders, Some(res.evaluations))
        }
    };

    // evaluate
    let rec = &manifest.rate_points[i];
    let eval_intact = ctx.intact(&rec.reports)
        && ctx.intact(&rec.curve)
        && rec.streams.len() == data.eval.len()
        && rec.streams.iter().all(|a| ctx.verify(a));
    let curve: PDCurve = if eval_intact && evaluations.is_none() {
        let path = ctx.abs(&rec.curve.as_ref().expect("checked").path);
        let text = std::fs::read_to_string(&path).map_err(|e| ("evaluate", io_err(&path)(e)))?;
        serde_json::from_str(&text).map_err(|e| ("evaluate", e.into()))?
    } else {
        let evaluations = match evaluations {
            Some(e) => e,
            None => evaluate_all(cfg, &frozen, &decoders, &data.eval).map_err(|e| ("evaluate", e))?,
        };
        let curve = assemble_curve(evaluations.iter().map(|e| e.point.clone()).collect()).map_err(|e| ("evaluate", e.into()))?;
        let mut reports = format!("gamma,{}\n", MetricReport::CSV_HEADER);
        for e in &evaluations {
            for r in &e.reports {
                reports.push_str(&format!("{},{}\n", e.point.gamma, r.csv_row_exact()));
            }
        }
        let mut streams = Vec::new();
        for img in &data.eval {
            let b = encode_image(&img.pixels, &frozen).map_err(|e| ("evaluate", e.into()))?;
            let stem = Path::new(&img.name).file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            streams.push(ctx.write(&format!("{dir}/streams/{stem}.rdpc"), &b.to_bytes()).map_err(at("evaluate"))?);
        }
        let rec = &mut manifest.rate_points[i];
        rec.streams = streams;
        rec.reports = Some(ctx.write(&format!("{dir}/reports.csv"), reports.as_bytes()).map_err(at("evaluate"))?);
        let curve_json = serde_json::to_string_pretty(&curve).map_err(|e| ("evaluate", e.into()))?;
        rec.curve = Some(ctx.write(&format!("{dir}/curve.json"), curve_json.as_bytes()).map_err(at("evaluate"))?);
        curve
    };

    // analyze + plot
    let knee = |axis| match knee_point(&curve, axis) {
        Ok(k) => Some(k),
        Err(e) => {
            log::warn!("rate point {i}: no {axis:?} knee ({e})");
            None
        }
    };
    let (kp, ks) = (knee(DistortionAxis::Psnr), knee(DistortionAxis::Ssim));
    let exported = export_results(std::slice::from_ref(&curve), &[kp.clone()]).map_err(|e| ("analyze", e.into()))?;
    let plots = plot_curves(std::slice::from_ref(&curve), &[kp.clone()], &[ks.clone()]).map_err(|e| ("plot", e.into()))?;
    let rec = &mut manifest.rate_points[i];
    rec.knee_psnr = kp;
    rec.knee_ssim = ks;
    rec.results_csv = Some(refresh(ctx, &format!("{dir}/results.csv"), exported.csv.as_bytes()).map_err(at("analyze"))?);
    rec.results_json = Some(refresh(ctx, &format!("{dir}/results.json"), exported.json.as_bytes()).map_err(at("analyze"))?);
    rec.plots = vec![
        refresh(ctx, &format!("{dir}/perceptual_vs_psnr.svg"), plots.perceptual_vs_psnr.as_bytes()).map_err(at("plot"))?,
        refresh(ctx, &format!("{dir}/perceptual_vs_ssim.svg"), plots.perceptual_vs_ssim.as_bytes()).map_err(at("plot"))?,
    ];
    Ok(rd)
}

/// Writes only when the file is missing or different.
fn refresh(ctx: &Ctx, rel: &str, bytes: &[u8]) -> Result<Artifact> {
    let want = hex::encode(Sha256::digest(bytes));
    if sha256_file(&ctx.abs(rel)).is_ok_and(|h| h == want) {
        return Ok(Artifact {
            path: rel.to_string(),
            sha256: want,
        });
    }
    ctx.write(rel, bytes)
}

fn load_decoders(ctx: &Ctx, rec: &RatePointRecord, frozen_hash: &str) -> Option<Vec<(f64, CodecParams<f32>)>> {
    if rec.decoders.is_empty() {
        return None;
    }
    let mut out = Vec::new();
    for d in &rec.decoders {
        if !(ctx.verify(&d.checkpoint) && ctx.verify(&d.metadata) && ctx.verify(&d.log)) {
            return None;
        }
        let (p, _) = load_checkpoint(&ctx.abs(&d.checkpoint.path)).ok()?;
        if p.frozen_hash() != frozen_hash {
            return None;
        }
        out.push((d.gamma, p));
    }
    Some(out)
}

/// Baseline plus every decoder on the held-out set, with the fixed-rate check.
pub fn evaluate_all(
    cfg: &ExperimentConfig,
    frozen: &CodecParams<f32>,
    decoders: &[(f64, CodecParams<f32>)],
    eval: &[NamedImage],
) -> Result<Vec<DecoderEvaluation>> {
    let net = ConvFeatures::<f32>::from_spec(&cfg.sweep.eval_metric_spec)?;
    let base = evaluate_decoder(frozen, GammaLabel::MseOnly, eval, &net)?;
    let mut out = vec![base];
    for (g, p) in decoders {
        let e = evaluate_decoder(p, GammaLabel::Value(*g), eval, &net)?;
        if e.stream_digests != out[0].stream_digests {
            return Err(CoreError::RateNotFixed(format!("gamma {g} changed a bitstream")).into());
        }
        out.push(e);
    }
    Ok(out)
}

/// The rate-fixing mask, exposed for the CLI.
pub fn rate_fixing_mask() -> FreezeMask {
    FreezeMask::rate_fixing()
}

pub fn write_log(path: &Path, log: &TrainLog) -> Result<()> {
    std::fs::write(path, log.to_csv()).map_err(io_err(path))
}
