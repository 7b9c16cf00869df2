//! Hand-written SVG plots of perception-distortion curves.

use std::fmt::Write;

use crate::analysis::curve::PDCurve;
use crate::analysis::knee::{DistortionAxis, KneeResult};
use crate::error::{CoreError, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 64.0;
const COLOURS: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#9467bd", "#8c564b", "#17becf"];

pub struct Plots {
    pub perceptual_vs_psnr: String,
    pub perceptual_vs_ssim: String,
}

fn bounds(v: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = v.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    if hi > lo {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

/// One plot; `knees[i]` is the knee for `curves[i]` on this axis, if known.
pub fn plot_axis(curves: &[PDCurve], knees: &[Option<KneeResult>], axis: DistortionAxis) -> Result<String> {
    if curves.is_empty() || curves.iter().any(|c| c.points.is_empty()) {
        return Err(CoreError::InvalidArgument("nothing to plot".into()));
    }
    let xval = |p: &crate::analysis::curve::PDPoint| match axis {
        DistortionAxis::Psnr => p.psnr,
        DistortionAxis::Ssim => p.ssim,
    };
    let (x0, x1) = bounds(curves.iter().flat_map(|c| c.points.iter().map(xval)));
    let (y0, y1) = bounds(curves.iter().flat_map(|c| c.points.iter().map(|p| p.perceptual)));
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);
    let xlabel = match axis {
        DistortionAxis::Psnr => "PSNR (dB)",
        DistortionAxis::Ssim => "SSIM",
    };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(s, r#"<path d="M{l} {t} L{l} {b} L{r} {b}" fill="none" stroke="black"/>"#);
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = x0 + f * (x1 - x0);
        let yv = y0 + f * (y1 - y0);
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{:.3}</text>"#,
            sx(xv),
            b + 18.0,
            xv
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{:.3}</text>"#,
            l - 6.0,
            sy(yv) + 4.0,
            yv
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{xlabel}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 16.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">perceptual distance</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
    for (ci, curve) in curves.iter().enumerate() {
        let colour = COLOURS[ci % COLOURS.len()];
        let pts: Vec<String> = curve
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", sx(xval(p)), sy(p.perceptual)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="1.5"/>"#,
            pts.join(" ")
        );
        for p in &curve.points {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{colour}"><title>gamma={}</title></circle>"#,
                sx(xval(p)),
                sy(p.perceptual),
                p.gamma
            );
        }
        if let Some(Some(k)) = knees.get(ci) {
            if let Some(p) = curve.points.get(k.index) {
                let _ = writeln!(
                    s,
                    r#"<circle cx="{:.2}" cy="{:.2}" r="7" fill="none" stroke="red" stroke-width="2"><title>knee gamma={}</title></circle>"#,
                    sx(xval(p)),
                    sy(p.perceptual),
                    p.gamma
                );
            }
        }
        let ly = MARGIN + 16.0 * ci as f64;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" fill="{colour}" text-anchor="end">{:.3} bpp</text>"#,
            WIDTH - MARGIN,
            ly,
            curve.rate_label
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn plot_curves(curves: &[PDCurve], psnr_knees: &[Option<KneeResult>], ssim_knees: &[Option<KneeResult>]) -> Result<Plots> {
    Ok(Plots {
        perceptual_vs_psnr: plot_axis(curves, psnr_knees, DistortionAxis::Psnr)?,
        perceptual_vs_ssim: plot_axis(curves, ssim_knees, DistortionAxis::Ssim)?,
    })
}
