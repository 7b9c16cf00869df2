//! Curve assembly, knee selection, reports and plots.

pub mod curve;
pub mod export;
pub mod knee;
pub mod plot;

pub use curve::{assemble_curve, GammaLabel, PDCurve, PDPoint};
pub use export::{export_results, import_csv, import_json, CurveResult, ResultsDocument};
pub use knee::{knee_of, knee_point, DistortionAxis, KneeResult};
pub use plot::{plot_curves, Plots};
