//! Knee selection by maximum normalised distance to the chord.

use serde::{Deserialize, Serialize};

use crate::analysis::curve::{GammaLabel, PDCurve};
use crate::error::{CoreError, Result};

/// Distances closer than this are treated as ties.
pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistortionAxis {
    Psnr,
    Ssim,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KneeResult {
    pub index: usize,
    pub gamma_at_knee: GammaLabel,
    pub distance: f64,
    pub axis: DistortionAxis,
}

fn normalise(v: &[f64], name: &str) -> Result<Vec<f64>> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(CoreError::DegenerateCurve(format!("{name} axis has zero range")));
    }
    Ok(v.iter().map(|x| (x - lo) / (hi - lo)).collect())
}

/// Knee of a polyline given in canonical order. Both axes are min-max
/// normalised; the chord joins the points with the smallest and largest x
/// (earliest on ties). Returns `(index, distance)` of the interior point
/// farthest from the chord; ties go to the earliest index.
pub fn knee_of(xs: &[f64], ys: &[f64]) -> Result<(usize, f64)> {
    if xs.len() != ys.len() {
        return Err(CoreError::InvalidArgument("x and y lengths differ".into()));
    }
    if xs.len() < 3 {
        return Err(CoreError::DegenerateCurve(format!("{} points; knee needs at least 3", xs.len())));
    }
    let x = normalise(xs, "distortion")?;
    let y = normalise(ys, "perceptual")?;
    let mut a = 0;
    let mut b = 0;
    for i in 0..x.len() {
        if x[i] < x[a] {
            a = i;
        }
        if x[i] > x[b] {
            b = i;
        }
    }
    let (dx, dy) = (x[b] - x[a], y[b] - y[a]);
    let len = (dx * dx + dy * dy).sqrt();
    let mut best: Option<(usize, f64)> = None;
    for i in (0..x.len()).filter(|&i| i != a && i != b) {
        let d = ((x[i] - x[a]) * dy - (y[i] - y[a]) * dx).abs() / len;
        match best {
            Some((_, bd)) if d <= bd + TIE_TOLERANCE => {}
            _ => best = Some((i, d)),
        }
    }
    Ok(best.expect("at least one interior point"))
}

/// Knee of the perceptual-vs-distortion curve on the chosen axis.
pub fn knee_point(curve: &PDCurve, axis: DistortionAxis) -> Result<KneeResult> {
    let xs: Vec<f64> = curve
        .points
        .iter()
        .map(|p| match axis {
            DistortionAxis::Psnr => p.psnr,
            DistortionAxis::Ssim => p.ssim,
        })
        .collect();
    let ys: Vec<f64> = curve.points.iter().map(|p| p.perceptual).collect();
    let (index, distance) = knee_of(&xs, &ys)?;
    Ok(KneeResult {
        index,
        gamma_at_knee: curve.points[index].gamma,
        distance,
        axis,
    })
}
