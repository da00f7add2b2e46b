//! Pointwise absolute-risk reports: arm-wise risks with confidence limits on
//! a user grid of horizons, for the G-formula and doubly robust estimators.

use serde::Serialize;

use crate::ate::{
    augmentation_terms, build_bundle, estimator_terms, fit_nuisances, ipcw_weights, AteOptions,
    Estimator,
};
use crate::dataset::{Dataset, FormulaSpec};
use crate::error::{Error, Result};
use crate::inference::{wald_ci, PhiContext};
use crate::stats::KahanSum;

#[derive(Debug, Clone, Serialize)]
pub struct RiskPoint {
    pub estimator: Estimator,
    pub t: f64,
    pub risk1: f64,
    pub se1: f64,
    pub lower1: f64,
    pub upper1: f64,
    pub risk0: f64,
    pub se0: f64,
    pub lower0: f64,
    pub upper0: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// Arm-wise risk estimates with pointwise Wald limits at each grid time.
/// Supports the G-formula (plug-in plus outcome-model influence terms) and
/// the doubly robust estimator (tilde influence values).
pub fn risk_curve_points(
    data: &Dataset,
    formulas: &FormulaSpec,
    grid: &[f64],
    estimators: &[Estimator],
    options: &AteOptions,
) -> Result<Vec<RiskPoint>> {
    if grid.is_empty() {
        return Err(Error::validation(
            "risk grid must contain at least one time",
        ));
    }
    for &t in grid {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::validation(format!(
                "grid time {t} must be finite and >= 0"
            )));
        }
    }
    for e in estimators {
        if !matches!(e, Estimator::GFormula | Estimator::AiptwAipcw) {
            return Err(Error::validation(format!(
                "risk curves support g-formula and aiptw-aipcw only, got {}",
                e.name()
            )));
        }
    }
    formulas.validate(data)?;
    let max_follow_up = data
        .samples()
        .iter()
        .map(|s| s.time)
        .fold(0.0_f64, f64::max);
    let tau_max = grid
        .iter()
        .copied()
        .fold(0.0_f64, f64::max)
        .max(f64::MIN_POSITIVE);

    let nuisances = fit_nuisances(data, formulas, tau_max, estimators, options)?;
    let n = data.n();
    let level = options.confidence_level;

    let mut points = Vec::new();
    for &t in grid {
        let warning = (t > max_follow_up)
            .then(|| format!("t = {t} is beyond the last follow-up time {max_follow_up}"));
        let bundle = build_bundle(data, &nuisances, t, options)?;
        let weights = if estimators
            .iter()
            .any(|e| matches!(e, Estimator::AiptwAipcw))
        {
            ipcw_weights(&bundle)?
        } else {
            vec![0.0; n]
        };
        let augment = if estimators
            .iter()
            .any(|e| matches!(e, Estimator::AiptwAipcw))
        {
            augmentation_terms(&bundle)?
        } else {
            vec![0.0; n]
        };
        let mut phi_ctx = PhiContext::new(&nuisances, data, options.mode, t);
        for &estimator in estimators {
            let terms = estimator_terms(estimator, &bundle, &weights, &augment)?;
            let mut per_arm = [(0.0, 0.0, 0.0, 0.0); 2];
            for arm in [0usize, 1usize] {
                let mut acc = KahanSum::new();
                for v in &terms.arm_terms[arm] {
                    acc.add(*v);
                }
                let risk = acc.total() / n as f64;
                let mut if_values: Vec<f64> =
                    terms.arm_terms[arm].iter().map(|v| v - risk).collect();
                if matches!(estimator, Estimator::GFormula) {
                    let phi = phi_ctx.phi_gformula_arm(&bundle, arm as u8)?;
                    for (v, p) in if_values.iter_mut().zip(&phi) {
                        *v += p;
                    }
                }
                let (se, lo, hi) = wald_ci(risk, &if_values, level);
                per_arm[arm] = (risk, se, lo.max(0.0), hi.min(1.0));
            }
            points.push(RiskPoint {
                estimator,
                t,
                risk1: per_arm[1].0,
                se1: per_arm[1].1,
                lower1: per_arm[1].2,
                upper1: per_arm[1].3,
                risk0: per_arm[0].0,
                se0: per_arm[0].1,
                lower0: per_arm[0].2,
                upper0: per_arm[0].3,
                warning: warning.clone(),
            });
        }
    }
    Ok(points)
}

/// CSV rendering of a grid report, one row per (time, estimator).
pub fn risk_points_csv(points: &[RiskPoint]) -> String {
    let mut out =
        String::from("estimator,t,risk1,se1,lower1,upper1,risk0,se0,lower0,upper0,warning\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            p.estimator.name(),
            p.t,
            p.risk1,
            p.se1,
            p.lower1,
            p.upper1,
            p.risk0,
            p.se0,
            p.lower0,
            p.upper0,
            p.warning.as_deref().unwrap_or(""),
        ));
    }
    out
}
