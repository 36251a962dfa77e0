use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::curves::{atetp_curve, cost_curve, EvaluationConfig, EvaluationCurve};
use crate::ctpm::{Batch, ObjectiveForm, ObjectiveSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEvaluation {
    pub model: String,
    pub a_auc: f64,
    pub c_auc: f64,
    pub atetp: EvaluationCurve,
    pub cost: EvaluationCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub objective: ObjectiveSpec,
    pub records: usize,
    /// Rows ordered by descending a-AUC.
    pub rows: Vec<ModelEvaluation>,
}

/// Evaluates each named score vector on the same batch.
pub fn evaluate_all(
    scored: &[(String, Vec<f64>)],
    batch: &Batch,
    spec: &ObjectiveSpec,
    config: &EvaluationConfig,
) -> Result<Report> {
    let mut rows = scored
        .iter()
        .map(|(name, scores)| {
            let atetp = atetp_curve(batch, scores, spec, config)?;
            let cost = cost_curve(
                batch,
                scores,
                &spec.outcomes.reward,
                &spec.outcomes.cost,
                config,
            )?;
            Ok(ModelEvaluation {
                model: name.clone(),
                a_auc: atetp.auc,
                c_auc: cost.auc,
                atetp,
                cost,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| b.a_auc.total_cmp(&a.a_auc));
    Ok(Report {
        objective: spec.clone(),
        records: batch.len(),
        rows,
    })
}

impl Report {
    pub fn row(&self, model: &str) -> Option<&ModelEvaluation> {
        self.rows.iter().find(|r| r.model == model)
    }

    pub fn to_table(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.model.len())
            .max()
            .unwrap_or(0)
            .max(5);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:>12}  {:>8}", "model", "a-AUC", "c-AUC");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<width$}  {:>12.6}  {:>8.4}",
                r.model, r.a_auc, r.c_auc
            );
        }
        let note = match self.objective.form {
            ObjectiveForm::NetBenefit => {
                "a-AUC integrates tau_q (tau_r - lambda tau_c); higher is better"
            }
            ObjectiveForm::CostEfficiency => {
                "a-AUC integrates -(tau_c / tau_r + lambda tau_m), negated so higher is better"
            }
        };
        let _ = writeln!(out, "\n{} records; {note}", self.records);
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

pub fn write_curve_csv(curve: &EvaluationCurve, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, curve_csv(curve)?)?;
    Ok(())
}

pub fn curve_csv(curve: &EvaluationCurve) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(curve.column_names())?;
    for (x, y) in &curve.points {
        w.write_record([x.to_string(), y.to_string()])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Polyline plot of a curve as a standalone SVG document.
pub fn curve_svg(curve: &EvaluationCurve, title: &str) -> String {
    const W: f64 = 480.0;
    const H: f64 = 360.0;
    const M: f64 = 48.0;
    let xs = curve.points.iter().map(|p| p.0);
    let ys = curve.points.iter().map(|p| p.1);
    let bounds = |it: &mut dyn Iterator<Item = f64>, lo: f64, hi: f64| {
        it.fold((lo, hi), |(a, b), v| (a.min(v), b.max(v)))
    };
    let (x0, x1) = bounds(&mut xs.clone(), 0.0, 1.0);
    let (mut y0, mut y1) = bounds(&mut ys.clone(), f64::INFINITY, f64::NEG_INFINITY);
    if matches!(curve.kind, super::CurveKind::Cost) {
        y0 = y0.min(0.0);
        y1 = y1.max(1.0);
    }
    if !(y1 > y0) {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let px = |x: f64| M + (x - x0) / (x1 - x0) * (W - 2.0 * M);
    let py = |y: f64| H - M - (y - y0) / (y1 - y0) * (H - 2.0 * M);
    let polyline: Vec<String> = curve
        .points
        .iter()
        .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
        .collect();
    let [xl, yl] = curve.column_names();
    let escaped = title
        .replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;");
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r##"<rect x="{M}" y="{M}" width="{}" height="{}" fill="none" stroke="#888"/>"##,
        W - 2.0 * M,
        H - 2.0 * M
    );
    if matches!(curve.kind, super::CurveKind::Cost) {
        let _ = writeln!(
            s,
            r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#bbb" stroke-dasharray="4 4"/>"##,
            px(0.0),
            py(0.0),
            px(1.0),
            py(1.0)
        );
    }
    let _ = writeln!(
        s,
        r##"<polyline fill="none" stroke="#1f5fa8" stroke-width="2" points="{}"/>"##,
        polyline.join(" ")
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="28" text-anchor="middle" font-size="14">{escaped} (AUC {:.4})</text>"#,
        W / 2.0,
        curve.auc
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{xl}</text>"#,
        W / 2.0,
        H - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 14 {})">{yl}</text>"#,
        H / 2.0,
        H / 2.0
    );
    for (v, x, y, anchor) in [
        (x0, px(x0), H - M + 16.0, "middle"),
        (x1, px(x1), H - M + 16.0, "middle"),
        (y0, M - 6.0, py(y0) + 4.0, "end"),
        (y1, M - 6.0, py(y1) + 4.0, "end"),
    ] {
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{y:.2}" text-anchor="{anchor}" font-size="10">{v:.3}</text>"#
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn write_curve_svg(curve: &EvaluationCurve, title: &str, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, curve_svg(curve, title))?;
    Ok(())
}

/// Rejects model names that cannot be used as file stems.
pub fn check_model_name(name: &str) -> Result<()> {
    if name.is_empty()
        || !name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
    {
        return Err(Error::InvalidArgument(format!(
            "model name '{name}' must be [A-Za-z0-9_-]+"
        )));
    }
    Ok(())
}
