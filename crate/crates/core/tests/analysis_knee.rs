use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rdp_core::analysis::{
    assemble_curve, export_results, import_csv, import_json, knee_of, knee_point, plot_curves, DistortionAxis,
    GammaLabel, PDPoint,
};

/// Independent oracle: normalise by hand, then for every interior point take
/// the length of the rejection of (p - a) from the chord direction.
fn oracle(xs: &[f64], ys: &[f64]) -> usize {
    let nx: Vec<f64> = {
        let (lo, hi) = (xs.iter().cloned().fold(f64::MAX, f64::min), xs.iter().cloned().fold(f64::MIN, f64::max));
        xs.iter().map(|v| (v - lo) / (hi - lo)).collect()
    };
    let ny: Vec<f64> = {
        let (lo, hi) = (ys.iter().cloned().fold(f64::MAX, f64::min), ys.iter().cloned().fold(f64::MIN, f64::max));
        ys.iter().map(|v| (v - lo) / (hi - lo)).collect()
    };
    let a = (0..xs.len()).min_by(|&i, &j| nx[i].partial_cmp(&nx[j]).unwrap()).unwrap();
    let b = (0..xs.len()).max_by(|&i, &j| nx[i].partial_cmp(&nx[j]).unwrap().then(j.cmp(&i))).unwrap();
    let (ux, uy) = (nx[b] - nx[a], ny[b] - ny[a]);
    let norm = (ux * ux + uy * uy).sqrt();
    let (ux, uy) = (ux / norm, uy / norm);
    let mut best = (usize::MAX, -1.0);
    for i in 0..xs.len() {
        if i == a || i == b {
            continue;
        }
        let (px, py) = (nx[i] - nx[a], ny[i] - ny[a]);
        let along = px * ux + py * uy;
        let d = ((px - along * ux).powi(2) + (py - along * uy).powi(2)).sqrt();
        if d > best.1 + 1e-12 {
            best = (i, d);
        }
    }
    best.0
}

#[test]
fn synthetic_curve_knee() {
    let xs = [0.0, 1.0, 2.0, 3.0, 4.0];
    let ys = [10.0, 3.0, 1.0, 0.8, 0.7];
    assert_eq!(oracle(&xs, &ys), 1);
    assert_eq!(knee_of(&xs, &ys).unwrap().0, 1);
}

fn point(gamma: GammaLabel, psnr: f64, ssim: f64, perceptual: f64) -> PDPoint {
    PDPoint {
        gamma,
        bpp_actual: 0.25,
        psnr,
        ssim,
        perceptual,
        frozen_hash: "frozen".into(),
        checkpoint_hash: format!("ck{gamma}"),
        stream_digest: "streams".into(),
    }
}

/// Typical curve shape: the baseline sits top right and
/// decreasing gamma moves left and down, flattening past the knee.
fn demo_points() -> Vec<PDPoint> {
    vec![
        point(GammaLabel::MseOnly, 28.0, 0.85, 0.40),
        point(GammaLabel::Value(650.25), 27.9, 0.848, 0.33),
        point(GammaLabel::Value(65.025), 27.6, 0.842, 0.28),
        point(GammaLabel::Value(32.5125), 27.3, 0.835, 0.265),
        point(GammaLabel::Value(6.5025), 26.6, 0.82, 0.255),
        point(GammaLabel::Value(3.25125), 26.2, 0.81, 0.252),
        point(GammaLabel::Value(0.0), 24.0, 0.75, 0.26),
    ]
}

#[test]
fn trials_affine_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..200 {
        let n = rng.random_range(3..10);
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let ys: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let base = knee_of(&xs, &ys).unwrap().0;
        assert_eq!(base, oracle(&xs, &ys));
        let (a, b, c, d) = (rng.random_range(0.1..10.0), rng.random_range(-50.0..50.0), rng.random_range(0.1..10.0), rng.random_range(-50.0..50.0));
        let tx: Vec<f64> = xs.iter().map(|v| a * v + b).collect();
        let ty: Vec<f64> = ys.iter().map(|v| c * v + d).collect();
        assert_eq!(knee_of(&tx, &ty).unwrap().0, base);
    }
}

#[test]
fn collinear_curve_prefers_largest_gamma() {
    let pts: Vec<PDPoint> = (0..5)
        .map(|i| point(GammaLabel::Value(10.0 - i as f64), 30.0 - i as f64, 0.9, 0.5 - 0.1 * i as f64))
        .collect();
    let k = knee_point(&assemble_curve(pts).unwrap(), DistortionAxis::Psnr).unwrap();
    assert_eq!(k.index, 1);
    assert_eq!(k.gamma_at_knee, GammaLabel::Value(9.0));
}

#[test]
fn export_round_trip_and_plots() {
    let curve = assemble_curve(demo_points()).unwrap();
    let kp = knee_point(&curve, DistortionAxis::Psnr).unwrap();
    let ks = knee_point(&curve, DistortionAxis::Ssim).unwrap();
    let out = export_results(std::slice::from_ref(&curve), &[Some(kp.clone())]).unwrap();
    assert_eq!(out.csv.lines().count(), 8);
    assert_eq!(out.csv.lines().filter(|l| l.contains(",true,")).count(), 1);
    let back = import_csv(&out.csv).unwrap();
    assert_eq!(back, vec![(curve.clone(), Some(kp.index))]);
    let doc = import_json(&out.json).unwrap();
    assert_eq!(doc.curves[0].curve, curve);
    assert_eq!(doc.curves[0].knee, Some(kp.clone()));

    let plots = plot_curves(std::slice::from_ref(&curve), &[Some(kp.clone())], &[Some(ks.clone())]).unwrap();
    let again = plot_curves(std::slice::from_ref(&curve), &[Some(kp)], &[Some(ks)]).unwrap();
    assert_eq!(plots.perceptual_vs_psnr, again.perceptual_vs_psnr);
    assert_eq!(plots.perceptual_vs_ssim, again.perceptual_vs_ssim);
    // Baseline is the rightmost point and the polyline only moves left.
    let line = plots.perceptual_vs_psnr.lines().find(|l| l.starts_with("<polyline")).unwrap();
    let coords: Vec<f64> = line
        .split('"')
        .nth(1)
        .unwrap()
        .split(' ')
        .map(|p| p.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert!(coords.windows(2).all(|w| w[1] < w[0]));
    assert_eq!(plots.perceptual_vs_psnr.matches("stroke=\"red\"").count(), 1);
}

proptest! {
    #[test]
    fn knee_ignores_input_order(seed in any::<u64>()) {
        let mut pts = demo_points();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in pts.iter_mut() {
            p.perceptual += rng.random_range(-0.02..0.02);
            p.psnr += rng.random_range(-0.2..0.2);
        }
        let reference = knee_point(&assemble_curve(pts.clone()).unwrap(), DistortionAxis::Psnr).unwrap();
        for i in (1..pts.len()).rev() {
            let j = rng.random_range(0..=i);
            pts.swap(i, j);
        }
        let shuffled = knee_point(&assemble_curve(pts).unwrap(), DistortionAxis::Psnr).unwrap();
        prop_assert_eq!(reference, shuffled);
    }
}
