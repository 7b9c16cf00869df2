//! CSV/JSON result documents and their re-import.

use serde::{Deserialize, Serialize};

use crate::analysis::curve::{GammaLabel, PDCurve, PDPoint};
use crate::analysis::knee::KneeResult;
use crate::error::{CoreError, Result};

pub const CSV_HEADER: &str =
    "rate_label,gamma,bpp_actual,psnr,ssim,perceptual,is_knee,frozen_hash,checkpoint_hash,stream_digest";
pub const RESULTS_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveResult {
    pub curve: PDCurve,
    pub knee: Option<KneeResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultsDocument {
    pub schema_version: u32,
    pub curves: Vec<CurveResult>,
}

pub struct Exported {
    pub csv: String,
    pub json: String,
}

/// One CSV row per point; `is_knee` marks each curve's knee (if any).
pub fn export_results(curves: &[PDCurve], knees: &[Option<KneeResult>]) -> Result<Exported> {
    if curves.is_empty() {
        return Err(CoreError::InvalidArgument("nothing to export".into()));
    }
    if knees.len() != curves.len() {
        return Err(CoreError::InvalidArgument("one knee entry per curve required".into()));
    }
    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    for (curve, knee) in curves.iter().zip(knees) {
        for (i, p) in curve.points.iter().enumerate() {
            let is_knee = knee.as_ref().is_some_and(|k| k.index == i);
            csv.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                curve.rate_label,
                p.gamma,
                p.bpp_actual,
                p.psnr,
                p.ssim,
                p.perceptual,
                is_knee,
                p.frozen_hash,
                p.checkpoint_hash,
                p.stream_digest
            ));
        }
    }
    let doc = ResultsDocument {
        schema_version: RESULTS_SCHEMA_VERSION,
        curves: curves
            .iter()
            .zip(knees)
            .map(|(c, k)| CurveResult {
                curve: c.clone(),
                knee: k.clone(),
            })
            .collect(),
    };
    Ok(Exported {
        csv,
        json: serde_json::to_string_pretty(&doc)? + "\n",
    })
}

pub fn import_json(text: &str) -> Result<ResultsDocument> {
    let doc: ResultsDocument = serde_json::from_str(text)?;
    if doc.schema_version != RESULTS_SCHEMA_VERSION {
        return Err(CoreError::InvalidArgument(format!("unsupported results schema {}", doc.schema_version)));
    }
    Ok(doc)
}

/// Rebuilds curves from the CSV, grouping consecutive rows by rate label and
/// frozen hash. Returns the curves and the knee row index of each.
pub fn import_csv(text: &str) -> Result<Vec<(PDCurve, Option<usize>)>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(CoreError::InvalidArgument("unexpected CSV header".into()));
    }
    let num = |s: &str, what: &str| -> Result<f64> {
        s.parse::<f64>().map_err(|_| CoreError::InvalidArgument(format!("bad {what} {s:?}")))
    };
    let mut out: Vec<(PDCurve, Option<usize>)> = Vec::new();
    for (row, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 10 {
            return Err(CoreError::InvalidArgument(format!("row {row}: expected 10 fields")));
        }
        let rate = num(f[0], "rate_label")?;
        let point = PDPoint {
            gamma: f[1].parse::<GammaLabel>()?,
            bpp_actual: num(f[2], "bpp_actual")?,
            psnr: num(f[3], "psnr")?,
            ssim: num(f[4], "ssim")?,
            perceptual: num(f[5], "perceptual")?,
            frozen_hash: f[7].to_string(),
            checkpoint_hash: f[8].to_string(),
            stream_digest: f[9].to_string(),
        };
        let is_knee = match f[6] {
            "true" => true,
            "false" => false,
            other => return Err(CoreError::InvalidArgument(format!("row {row}: bad is_knee {other:?}"))),
        };
        let same = out
            .last()
            .is_some_and(|(c, _)| c.rate_label.to_bits() == rate.to_bits() && c.frozen_hash() == point.frozen_hash);
        if !same {
            out.push((
                PDCurve {
                    rate_label: rate,
                    points: Vec::new(),
                },
                None,
            ));
        }
        let (curve, knee) = out.last_mut().unwrap();
        if is_knee {
            if knee.is_some() {
                return Err(CoreError::InvalidArgument(format!("row {row}: second knee in one curve")));
            }
            *knee = Some(curve.points.len());
        }
        curve.points.push(point);
    }
    Ok(out)
}
