//! Influence-function-based variance estimation and Wald confidence
//! intervals.
//!
//! Every influence vector is on the estimator scale: the estimator deviates
//! from its limit by the mean of the vector, and its standard error is
//! `sqrt(sum v_i^2) / n` (the variance convention has an n^2 denominator).
//!
//! Two flavors exist. The `tilde` variant keeps only the plug-in deviations
//! `h_i - estimate`; for the doubly robust estimator this is a consistent
//! variance when all working models are correct. The `partial-phi` variant
//! adds the derivative terms with respect to the outcome and treatment model
//! estimates; the censoring-model and augmentation-uncertainty terms are
//! deliberately not computed, which in the simulations has a negligible
//! effect on coverage.

use crate::ate::{
    estimator_terms, Estimator, FittedNuisances, NuisanceBundle, OutcomeArm, OutcomeNuisance,
    VarianceVariant,
};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg;
use crate::logistic::logistic_influence;
use crate::risk::{CauseSpecificInfluence, RiskDerivAccum, RiskMode, WalkScratch};
use crate::stats::normal_quantile;

/// Per-subject influence values for one estimator.
#[derive(Debug, Clone)]
pub struct InfluenceVector {
    pub values: Vec<f64>,
    pub variant: VarianceVariant,
    pub estimator: Estimator,
}

/// `(se, lower, upper)` from an influence vector:
/// `se = sqrt(sum v_i^2) / n`, CI = estimate ± z * se.
pub fn wald_ci(estimate: f64, if_values: &[f64], level: f64) -> (f64, f64, f64) {
    debug_assert!(if_values.len() >= 2, "need at least two subjects");
    let n = if_values.len() as f64;
    let ss: f64 = if_values.iter().map(|v| v * v).sum();
    let se = ss.sqrt() / n;
    let z = normal_quantile(0.5 + level / 2.0);
    (se, estimate - z * se, estimate + z * se)
}

/// Plug-in (tilde) influence vector of any estimator: per-subject summand
/// minus the estimate. Sums to zero because the estimate is the mean of the
/// summands.
pub fn if_tilde(estimator: Estimator, bundle: &NuisanceBundle) -> Result<InfluenceVector> {
    let weights = if matches!(estimator, Estimator::GFormula) {
        vec![0.0; bundle.n]
    } else {
        crate::ate::ipcw_weights(bundle)?
    };
    let augment = if matches!(estimator, Estimator::IptwAipcw | Estimator::AiptwAipcw) {
        crate::ate::augmentation_terms(bundle)?
    } else {
        vec![0.0; bundle.n]
    };
    let terms = estimator_terms(estimator, bundle, &weights, &augment)?;
    let mut k1 = crate::stats::KahanSum::new();
    let mut k0 = crate::stats::KahanSum::new();
    for v in &terms.arm_terms[1] {
        k1.add(*v);
    }
    for v in &terms.arm_terms[0] {
        k0.add(*v);
    }
    let ate = (k1.total() - k0.total()) / bundle.n as f64;
    let values = terms.arm_terms[1]
        .iter()
        .zip(&terms.arm_terms[0])
        .map(|(v1, v0)| v1 - v0 - ate)
        .collect();
    Ok(InfluenceVector {
        values,
        variant: VarianceVariant::Tilde,
        estimator,
    })
}

/// The tilde influence vector of the AIPTW,AIPCW estimator (the consistent
/// variance when all working models are correct).
pub fn if_tilde_aiptw(bundle: &NuisanceBundle) -> Result<InfluenceVector> {
    if_tilde(Estimator::AiptwAipcw, bundle)
}

/// Full influence vector of the G-formula estimator: plug-in deviations plus
/// the outcome-model derivative term.
pub fn if_gformula(ctx: &mut PhiContext, bundle: &NuisanceBundle) -> Result<InfluenceVector> {
    let tilde = if_tilde(Estimator::GFormula, bundle)?;
    let phi = ctx.phi_gformula(bundle)?;
    let values = tilde.values.iter().zip(&phi).map(|(t, p)| t + p).collect();
    Ok(InfluenceVector {
        values,
        variant: VarianceVariant::PartialPhi,
        estimator: Estimator::GFormula,
    })
}

/// Influence vector of the IPTW,IPCW estimator: plug-in deviations plus the
/// treatment-model term (the censoring-model term is omitted).
pub fn if_iptw_ipcw(ctx: &mut PhiContext, bundle: &NuisanceBundle) -> Result<InfluenceVector> {
    let weights = crate::ate::ipcw_weights(bundle)?;
    let tilde = if_tilde(Estimator::IptwIpcw, bundle)?;
    let phi = ctx.phi_iptw_ipcw(bundle, &weights)?;
    let values = tilde.values.iter().zip(&phi).map(|(t, p)| t + p).collect();
    Ok(InfluenceVector {
        values,
        variant: VarianceVariant::PartialPhi,
        estimator: Estimator::IptwIpcw,
    })
}

/// Partial-phi influence vector of the AIPTW,AIPCW estimator: the tilde term
/// plus the outcome- and treatment-model derivative terms of the arm-wise
/// functionals.
pub fn if_aiptw_aipcw_partial_phi(
    ctx: &mut PhiContext,
    bundle: &NuisanceBundle,
) -> Result<InfluenceVector> {
    let weights = crate::ate::ipcw_weights(bundle)?;
    let augment = crate::ate::augmentation_terms(bundle)?;
    let tilde = if_tilde(Estimator::AiptwAipcw, bundle)?;
    let phi = ctx.phi_aiptw_aipcw(bundle, &weights, &augment)?;
    let values = tilde.values.iter().zip(&phi).map(|(t, p)| t + p).collect();
    Ok(InfluenceVector {
        values,
        variant: VarianceVariant::PartialPhi,
        estimator: Estimator::AiptwAipcw,
    })
}

struct OutcomeEntry<'a> {
    arm: &'a OutcomeArm,
    /// Arm this model serves exclusively (stratified), or both (pooled).
    forced: Option<u8>,
    influence: CauseSpecificInfluence,
}

/// Shared state for the nuisance-derivative (phi) computations of one
/// estimation run: outcome and treatment influence contributions are computed
/// at most once, however many influence vectors are requested.
pub struct PhiContext<'a> {
    nuisances: &'a FittedNuisances,
    data: &'a Dataset,
    mode: RiskMode,
    tau: f64,
    outcome_entries: Option<Vec<OutcomeEntry<'a>>>,
    logistic_rows: Option<Option<Vec<Vec<f64>>>>,
}

impl<'a> PhiContext<'a> {
    pub fn new(
        nuisances: &'a FittedNuisances,
        data: &'a Dataset,
        mode: RiskMode,
        tau: f64,
    ) -> Self {
        PhiContext {
            nuisances,
            data,
            mode,
            tau,
            outcome_entries: None,
            logistic_rows: None,
        }
    }

    fn ensure_outcome(&mut self) -> Result<&[OutcomeEntry<'a>]> {
        if self.outcome_entries.is_none() {
            let outcome = self
                .nuisances
                .outcome
                .as_ref()
                .ok_or_else(|| Error::validation("outcome model required for this variance"))?;
            let mut entries = Vec::new();
            match outcome {
                OutcomeNuisance::Pooled(arm) => {
                    let influence =
                        CauseSpecificInfluence::compute(&arm.model, &arm.data, &arm.x1, &arm.x2)?;
                    entries.push(OutcomeEntry {
                        arm,
                        forced: None,
                        influence,
                    });
                }
                OutcomeNuisance::Stratified(arms) => {
                    for (a, arm) in arms.iter().enumerate() {
                        let influence = CauseSpecificInfluence::compute(
                            &arm.model, &arm.data, &arm.x1, &arm.x2,
                        )?;
                        entries.push(OutcomeEntry {
                            arm,
                            forced: Some(a as u8),
                            influence,
                        });
                    }
                }
            }
            self.outcome_entries = Some(entries);
        }
        Ok(self.outcome_entries.as_ref().unwrap())
    }

    fn ensure_logistic(&mut self) -> Result<Option<&Vec<Vec<f64>>>> {
        if self.logistic_rows.is_none() {
            let rows = match &self.nuisances.propensity {
                Some(p) => match (&p.fit, &p.x) {
                    (Some(fit), Some(x)) => {
                        let a: Vec<u8> = self.data.samples().iter().map(|s| s.treatment).collect();
                        Some(logistic_influence(fit, x, &a)?)
                    }
                    // empirical or externally fixed propensities: treated as known
                    _ => None,
                },
                None => None,
            };
            self.logistic_rows = Some(rows);
        }
        Ok(self.logistic_rows.as_ref().unwrap().as_ref())
    }

    /// phi for the G-formula: the empirical average over prediction points of
    /// the outcome-model derivative of `F1(tau|1,x) - F1(tau|0,x)`.
    pub fn phi_gformula(&mut self, bundle: &NuisanceBundle) -> Result<Vec<f64>> {
        let data = self.data;
        let mode = self.mode;
        let tau = self.tau;
        let entries = self.ensure_outcome()?;
        let n = bundle.n;
        let mut phi = vec![0.0; n];
        let mut scratch = WalkScratch::default();
        for entry in entries {
            let model = &entry.arm.model;
            let mut accum = RiskDerivAccum::new(model, mode, tau);
            let arms_and_weights: &[(u8, f64)] = match entry.forced {
                None => &[(1, 1.0), (0, -1.0)],
                Some(1) => &[(1, 1.0)],
                Some(_) => &[(0, -1.0)],
            };
            for s in data.samples() {
                for &(arm, w) in arms_and_weights {
                    let (z1, z2) = model.design_rows(&s.covariates, arm);
                    let e1 = model.fit1.risk_score(&z1);
                    let e2 = model.fit2.risk_score(&z2);
                    accum.add_prediction(
                        model,
                        &entry.arm.grid,
                        e1,
                        e2,
                        &z1,
                        &z2,
                        w,
                        &mut scratch,
                    )?;
                }
            }
            accum.finalize(model);
            for (local, &global) in entry.arm.subjects.iter().enumerate() {
                phi[global] += accum.eval_subject(model, &entry.influence, local);
            }
        }
        Ok(phi)
    }

    /// phi of a single-arm G-formula functional `mean_j F1(tau | arm, X_j)`,
    /// used for pointwise risk-curve standard errors.
    pub fn phi_gformula_arm(&mut self, bundle: &NuisanceBundle, arm: u8) -> Result<Vec<f64>> {
        let data = self.data;
        let mode = self.mode;
        let tau = self.tau;
        let entries = self.ensure_outcome()?;
        let n = bundle.n;
        let mut phi = vec![0.0; n];
        let mut scratch = WalkScratch::default();
        for entry in entries {
            if let Some(forced) = entry.forced {
                if forced != arm {
                    continue;
                }
            }
            let model = &entry.arm.model;
            let mut accum = RiskDerivAccum::new(model, mode, tau);
            for s in data.samples() {
                let (z1, z2) = model.design_rows(&s.covariates, arm);
                let e1 = model.fit1.risk_score(&z1);
                let e2 = model.fit2.risk_score(&z2);
                accum.add_prediction(
                    model,
                    &entry.arm.grid,
                    e1,
                    e2,
                    &z1,
                    &z2,
                    1.0,
                    &mut scratch,
                )?;
            }
            accum.finalize(model);
            for (local, &global) in entry.arm.subjects.iter().enumerate() {
                phi[global] += accum.eval_subject(model, &entry.influence, local);
            }
        }
        Ok(phi)
    }

    /// Treatment-model phi term shared by the weighted estimators:
    /// `phi_i = -c' D_i` with `c = sum_j k_j pi_j (1 - pi_j) x_j` and `k_j`
    /// the derivative of subject j's summand with respect to its propensity.
    fn phi_treatment(&mut self, bundle: &NuisanceBundle, k: &[f64]) -> Result<Vec<f64>> {
        let n = bundle.n;
        let nuisances = self.nuisances;
        let Some(rows) = self.ensure_logistic()? else {
            return Ok(vec![0.0; n]);
        };
        let p = rows[0].len();
        let mut c = vec![0.0; p];
        let prop = nuisances
            .propensity
            .as_ref()
            .expect("logistic rows imply propensity");
        let x = prop.x.as_ref().expect("fitted propensity keeps its design");
        for j in 0..n {
            if k[j] == 0.0 {
                continue;
            }
            let pi = bundle.pi[j];
            let w = k[j] * pi * (1.0 - pi);
            c[0] += w;
            for (col, v) in x.row(j).iter().enumerate() {
                c[col + 1] += w * v;
            }
        }
        Ok(rows.iter().map(|d| -linalg::dot(&c, d)).collect())
    }

    /// phi for IPTW,IPCW: the treatment-model term only (the censoring-model
    /// term is deliberately omitted).
    pub fn phi_iptw_ipcw(&mut self, bundle: &NuisanceBundle, weights: &[f64]) -> Result<Vec<f64>> {
        let n = bundle.n;
        // d h_j / d pi_j = -w_j y_j (A/pi^2 + (1-A)/(1-pi)^2)
        let k: Vec<f64> = (0..n)
            .map(|j| {
                let core = weights[j] * bundle.y_tau[j];
                if core == 0.0 {
                    0.0
                } else {
                    let pi = bundle.pi[j];
                    let factor = if bundle.treatment[j] == 1 {
                        1.0 / (pi * pi)
                    } else {
                        1.0 / ((1.0 - pi) * (1.0 - pi))
                    };
                    core * factor
                }
            })
            .collect();
        self.phi_treatment(bundle, &k)
    }

    /// phi for AIPTW,AIPCW: outcome-model terms (including the martingale
    /// part of the augmentation) plus the treatment-model term. The censoring
    /// terms are omitted.
    pub fn phi_aiptw_aipcw(
        &mut self,
        bundle: &NuisanceBundle,
        weights: &[f64],
        augment: &[f64],
    ) -> Result<Vec<f64>> {
        let n = bundle.n;

        // treatment part: k_j = (A/pi^2 + (1-A)/(1-pi)^2) * residual_j
        let k: Vec<f64> = (0..n)
            .map(|j| {
                let residual = weights[j] * bundle.y_tau[j] - bundle.f1_tau_own(j) + augment[j];
                let pi = bundle.pi[j];
                let factor = if bundle.treatment[j] == 1 {
                    1.0 / (pi * pi)
                } else {
                    1.0 / ((1.0 - pi) * (1.0 - pi))
                };
                residual * factor
            })
            .collect();
        let phi_t = self.phi_treatment(bundle, &k)?;

        let data = self.data;
        let mode = self.mode;
        let tau = self.tau;
        let entries = self.ensure_outcome()?;
        let mut phi = phi_t;
        let mut scratch = WalkScratch::default();
        let mut suffix_m = Vec::new();
        let mut suffix_mf = Vec::new();
        let mut m_weights = Vec::new();
        for entry in entries {
            let model = &entry.arm.model;
            let mut accum = RiskDerivAccum::new(model, mode, tau);
            let arms: &[(u8, f64)] = match entry.forced {
                None => &[(1, 1.0), (0, -1.0)],
                Some(1) => &[(1, 1.0)],
                Some(_) => &[(0, -1.0)],
            };
            for (j, s) in data.samples().iter().enumerate() {
                for &(arm, sign) in arms {
                    let (z1, z2) = model.design_rows(&s.covariates, arm);
                    let e1 = model.fit1.risk_score(&z1);
                    let e2 = model.fit2.risk_score(&z2);
                    // direct term: weight (1 - 1[A_j=arm]/pi^arm)
                    let w1 = sign * (1.0 - bundle.arm_weight(j, arm));
                    if w1 != 0.0 {
                        accum.add_prediction(
                            model,
                            &entry.arm.grid,
                            e1,
                            e2,
                            &z1,
                            &z2,
                            w1,
                            &mut scratch,
                        )?;
                    }
                    // augmentation term: only the subject's own arm carries
                    // censoring-martingale mass
                    if bundle.treatment[j] == arm && !bundle.dlc[j].is_empty() {
                        let len = bundle.dlc[j].len();
                        m_weights.resize(len, 0.0);
                        let mut any = false;
                        for kk in 0..len {
                            let dm = f64::from(bundle.own_cens[j] == Some(kk)) - bundle.dlc[j][kk];
                            let denom = bundle.s_own[j][kk] * bundle.g_right[j][kk];
                            m_weights[kk] = dm / denom;
                            any |= m_weights[kk] != 0.0;
                        }
                        if any {
                            let w2 = sign * bundle.arm_weight(j, arm);
                            let grid_id = bundle.cens_grid[j] as usize;
                            accum.add_martingale_prediction(
                                model,
                                &entry.arm.grid,
                                e1,
                                e2,
                                &z1,
                                &z2,
                                w2,
                                &bundle.cens_times[grid_id][..len],
                                &m_weights[..len],
                                &bundle.f1_own[j],
                                &mut scratch,
                                &mut suffix_m,
                                &mut suffix_mf,
                            )?;
                        }
                    }
                }
            }
            accum.finalize(model);
            for (local, &global) in entry.arm.subjects.iter().enumerate() {
                phi[global] += accum.eval_subject(model, &entry.influence, local);
            }
        }
        Ok(phi)
    }
}
