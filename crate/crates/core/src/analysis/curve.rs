//! Fixed-rate perception-distortion points and curves.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{CoreError, Result};

/// Distortion weight of a decoder: a swept value or the rate-distortion baseline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GammaLabel {
    MseOnly,
    Value(f64),
}

impl GammaLabel {
    /// Canonical curve order: baseline first, then descending gamma.
    pub fn canonical_cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (GammaLabel::MseOnly, GammaLabel::MseOnly) => Ordering::Equal,
            (GammaLabel::MseOnly, _) => Ordering::Less,
            (_, GammaLabel::MseOnly) => Ordering::Greater,
            (GammaLabel::Value(a), GammaLabel::Value(b)) => b.total_cmp(a),
        }
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            GammaLabel::MseOnly => None,
            GammaLabel::Value(v) => Some(*v),
        }
    }
}

impl fmt::Display for GammaLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GammaLabel::MseOnly => f.write_str("mse-only"),
            GammaLabel::Value(v) => write!(f, "{v}"),
        }
    }
}

impl std::str::FromStr for GammaLabel {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "mse-only" {
            return Ok(GammaLabel::MseOnly);
        }
        s.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite() && *v >= 0.0)
            .map(GammaLabel::Value)
            .ok_or_else(|| CoreError::InvalidArgument(format!("bad gamma label {s:?}")))
    }
}

impl Serialize for GammaLabel {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            GammaLabel::MseOnly => s.serialize_str("mse-only"),
            GammaLabel::Value(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for GammaLabel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(GammaLabel::Value(v)),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Dataset means for one decoder at a fixed rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PDPoint {
    pub gamma: GammaLabel,
    pub bpp_actual: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub perceptual: f64,
    pub frozen_hash: String,
    pub checkpoint_hash: String,
    /// SHA-256 over the per-image bitstream digests, in evaluation order.
    pub stream_digest: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PDCurve {
    /// Mean coded bpp shared by every point.
    pub rate_label: f64,
    pub points: Vec<PDPoint>,
}

impl PDCurve {
    pub fn frozen_hash(&self) -> &str {
        &self.points[0].frozen_hash
    }

    pub fn baseline(&self) -> Option<&PDPoint> {
        self.points.iter().find(|p| p.gamma == GammaLabel::MseOnly)
    }

    pub fn point(&self, gamma: f64) -> Option<&PDPoint> {
        self.points.iter().find(|p| p.gamma == GammaLabel::Value(gamma))
    }
}

/// Orders points canonically and checks they describe one fixed rate.
pub fn assemble_curve(points: Vec<PDPoint>) -> Result<PDCurve> {
    let first = points
        .first()
        .ok_or_else(|| CoreError::InvalidArgument("a curve needs at least one point".into()))?;
    for p in &points {
        if p.frozen_hash != first.frozen_hash {
            return Err(CoreError::InvalidArgument(format!(
                "mixed frozen hashes {} and {}",
                first.frozen_hash, p.frozen_hash
            )));
        }
        if p.stream_digest != first.stream_digest {
            return Err(CoreError::RateNotFixed(format!(
                "bitstream digest of gamma {} differs from gamma {}",
                p.gamma, first.gamma
            )));
        }
        for (name, v) in [("bpp_actual", p.bpp_actual), ("psnr", p.psnr), ("ssim", p.ssim), ("perceptual", p.perceptual)] {
            if !v.is_finite() {
                return Err(CoreError::InvalidArgument(format!("{name} of gamma {} is not finite", p.gamma)));
            }
        }
    }
    let mut points = points;
    points.sort_by(|a, b| a.gamma.canonical_cmp(&b.gamma));
    if points.windows(2).any(|w| w[0].gamma.canonical_cmp(&w[1].gamma) == Ordering::Equal) {
        return Err(CoreError::InvalidArgument("duplicate gamma in curve".into()));
    }
    let rate_label = points.iter().map(|p| p.bpp_actual).sum::<f64>() / points.len() as f64;
    Ok(PDCurve { rate_label, points })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub fn point(gamma: GammaLabel, frozen: &str) -> PDPoint {
        PDPoint {
            gamma,
            bpp_actual: 0.4,
            psnr: 25.0,
            ssim: 0.8,
            perceptual: 0.3,
            frozen_hash: frozen.into(),
            checkpoint_hash: format!("ck-{gamma}"),
            stream_digest: "d".into(),
        }
    }

    #[test]
    fn ordering_and_rejections() {
        let gammas = [0.0, 1e-2, 5e-4, 1e-3, 5e-5, 1e-4];
        let mut pts: Vec<_> = gammas.iter().map(|&g| point(GammaLabel::Value(g), "f")).collect();
        pts.insert(3, point(GammaLabel::MseOnly, "f"));
        let c = assemble_curve(pts).unwrap();
        assert_eq!(c.points.len(), 7);
        assert_eq!(c.points[0].gamma, GammaLabel::MseOnly);
        let order: Vec<f64> = c.points[1..].iter().map(|p| p.gamma.value().unwrap()).collect();
        assert_eq!(order, vec![1e-2, 1e-3, 5e-4, 1e-4, 5e-5, 0.0]);
        assert!(assemble_curve(vec![point(GammaLabel::MseOnly, "a"), point(GammaLabel::Value(1.0), "b")]).is_err());
        assert_eq!(assemble_curve(vec![point(GammaLabel::MseOnly, "a")]).unwrap().points.len(), 1);
    }

    #[test]
    fn gamma_label_serde() {
        let s = serde_json::to_string(&[GammaLabel::MseOnly, GammaLabel::Value(0.5)]).unwrap();
        assert_eq!(s, r#"["mse-only",0.5]"#);
        let back: Vec<GammaLabel> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, vec![GammaLabel::MseOnly, GammaLabel::Value(0.5)]);
    }
}
