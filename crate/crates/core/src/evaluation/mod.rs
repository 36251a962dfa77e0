//! Score-ranked evaluation: the effect-versus-coverage curve (ATETP) with its
//! area (a-AUC), and the normalized reward-versus-cost curve with its area
//! (c-AUC).
//!
//! Only the ordering of the scores matters. Effects inside a selection are
//! plain inverse-propensity estimates, so every scorer is judged the same way.

mod curves;
mod report;

pub use curves::{
    atetp_curve, cost_curve, rank_order, subset_ate, trapezoid, CurveKind, EvaluationConfig,
    EvaluationCurve, MIN_NORMALIZING_EFFECT,
};
pub use report::{
    check_model_name, curve_csv, curve_svg, evaluate_all, write_curve_csv, write_curve_svg,
    ModelEvaluation, Report,
};
