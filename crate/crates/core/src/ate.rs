//! Average treatment effect estimators at a fixed horizon: G-formula,
//! IPTW/IPCW weighting, and the augmented doubly robust combinations, all
//! evaluated on a shared bundle of fitted nuisance predictions.
//!
//! Conventions, unit-tested below and relied on by the identities in the
//! acceptance suite:
//! - IPCW weights evaluate the censoring survival at the left limit,
//!   `G(T-|A,X)`.
//! - The augmentation integral and the discrete martingale identity use the
//!   right-continuous `G(s)`, with `G` built as the product-limit of the
//!   censoring model's Breslow increments (not `exp(-L^C)`).
//! - The martingale increment keeps subjects at risk at their own event time
//!   (`1[T >= s]`), while the censoring model's risk sets exclude same-time
//!   events.

use serde::Serialize;

use crate::cox::{fit_cox, CoxFit};
use crate::dataset::{
    design_matrix, tau_feasibility, ColumnLayout, Dataset, DesignMatrix, FormulaSpec,
    NuisanceModel, TauReport,
};
use crate::error::{Error, Result};
use crate::exec;
use crate::logistic::{fit_logistic, predict_propensity, LogisticFit};
use crate::risk::{walk_sample, CauseSpecificModel, PredGrid, RiskMode};
use crate::stats::{normal_quantile, KahanSum};

pub const DEFAULT_EPS_G: f64 = 1e-6;
pub const DEFAULT_EPS_S: f64 = 1e-6;

/// The five estimators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    GFormula,
    IptwIpcw,
    AiptwIpcw,
    IptwAipcw,
    AiptwAipcw,
}

impl Estimator {
    pub const ALL: [Estimator; 5] = [
        Estimator::GFormula,
        Estimator::IptwIpcw,
        Estimator::AiptwIpcw,
        Estimator::IptwAipcw,
        Estimator::AiptwAipcw,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Estimator::GFormula => "g-formula",
            Estimator::IptwIpcw => "iptw-ipcw",
            Estimator::AiptwIpcw => "aiptw-ipcw",
            Estimator::IptwAipcw => "iptw-aipcw",
            Estimator::AiptwAipcw => "aiptw-aipcw",
        }
    }

    fn needs_outcome(&self) -> bool {
        !matches!(self, Estimator::IptwIpcw)
    }

    fn needs_propensity(&self) -> bool {
        !matches!(self, Estimator::GFormula)
    }

    fn needs_censoring(&self) -> bool {
        !matches!(self, Estimator::GFormula)
    }
}

impl std::str::FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "g-formula" => Ok(Estimator::GFormula),
            "iptw-ipcw" => Ok(Estimator::IptwIpcw),
            "aiptw-ipcw" => Ok(Estimator::AiptwIpcw),
            "iptw-aipcw" => Ok(Estimator::IptwAipcw),
            "aiptw-aipcw" => Ok(Estimator::AiptwAipcw),
            other => Err(Error::validation(format!(
                "unknown estimator `{other}` (expected g-formula, iptw-ipcw, aiptw-ipcw, \
                 iptw-aipcw, aiptw-aipcw or all)"
            ))),
        }
    }
}

/// Variance flavor attached to an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceVariant {
    /// Plug-in deviations only (exact for the doubly robust estimator when
    /// all working models are correct).
    Tilde,
    /// Adds the nuisance-estimation terms, except the censoring-model and
    /// augmentation-uncertainty contributions which are deliberately omitted.
    PartialPhi,
}

impl VarianceVariant {
    pub fn name(&self) -> &'static str {
        match self {
            VarianceVariant::Tilde => "tilde",
            VarianceVariant::PartialPhi => "partial-phi",
        }
    }
}

/// Which variance variants the driver should produce for AIPTW,AIPCW.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VarianceChoice {
    #[default]
    Tilde,
    PartialPhi,
    Both,
}

/// Where propensities come from.
#[derive(Debug, Clone, Default)]
pub enum PropensitySource {
    /// Fit the logistic working model.
    #[default]
    Fitted,
    /// Use the sample treated fraction for everyone (no covariates).
    Empirical,
    /// Externally supplied per-subject values, treated as known.
    Fixed(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct AteOptions {
    pub mode: RiskMode,
    pub variance: VarianceChoice,
    pub truncate_propensity: Option<(f64, f64)>,
    /// Fit outcome and censoring models separately per arm instead of with a
    /// treatment column.
    pub stratified: bool,
    pub propensity: PropensitySource,
    pub eps_g: f64,
    pub eps_s: f64,
    pub confidence_level: f64,
}

impl Default for AteOptions {
    fn default() -> Self {
        AteOptions {
            mode: RiskMode::ProductLimit,
            variance: VarianceChoice::Tilde,
            truncate_propensity: None,
            stratified: false,
            propensity: PropensitySource::Fitted,
            eps_g: DEFAULT_EPS_G,
            eps_s: DEFAULT_EPS_S,
            confidence_level: 0.95,
        }
    }
}

/// Everything the estimators need, evaluated per subject.
#[derive(Debug, Clone)]
pub struct NuisanceBundle {
    pub tau: f64,
    pub n: usize,
    pub time: Vec<f64>,
    pub event: Vec<u8>,
    pub treatment: Vec<u8>,
    /// `1[T <= tau, event = 1]`.
    pub y_tau: Vec<f64>,
    /// `1[T > tau or event != 0]` (outcome observed at the horizon).
    pub observed: Vec<f64>,
    pub pi: Vec<f64>,
    /// `F1(tau | a, X_i)` indexed `[arm][subject]`; empty when the outcome
    /// model was not requested.
    pub f1_tau: [Vec<f64>; 2],
    /// Censoring baseline jump times (<= tau), one grid per censoring fit.
    pub cens_times: [Vec<f64>; 2],
    /// Which grid each subject's censoring quantities index.
    pub cens_grid: Vec<u8>,
    /// Per subject, at the censoring jumps <= min(T_i, tau):
    /// own-arm `F1(s_k | A_i, X_i)`.
    pub f1_own: Vec<Vec<f64>>,
    /// own-arm `S(s_k | A_i, X_i)`.
    pub s_own: Vec<Vec<f64>>,
    /// right-continuous `G(s_k | A_i, X_i)`.
    pub g_right: Vec<Vec<f64>>,
    /// censoring hazard increments `dL^C(s_k | A_i, X_i)`.
    pub dlc: Vec<Vec<f64>>,
    /// Local index of the subject's own censoring jump, if censored by tau.
    pub own_cens: Vec<Option<usize>>,
    /// `G(T_i- | A_i, X_i)` (left limit).
    pub g_tminus: Vec<f64>,
    /// `G(min(T_i, tau) | A_i, X_i)` (right-continuous).
    pub g_tcap: Vec<f64>,
    pub has_outcome: bool,
    pub has_censoring: bool,
    pub eps_g: f64,
    pub eps_s: f64,
}

impl NuisanceBundle {
    /// `F1(tau | A_i, X_i)` at the subject's own arm.
    #[inline]
    pub fn f1_tau_own(&self, i: usize) -> f64 {
        self.f1_tau[self.treatment[i] as usize][i]
    }

    /// `A_i/pi - (1-A_i)/(1-pi)`.
    #[inline]
    pub fn h_pi(&self, i: usize) -> f64 {
        if self.treatment[i] == 1 {
            1.0 / self.pi[i]
        } else {
            -1.0 / (1.0 - self.pi[i])
        }
    }

    /// `1[A_i = a] / pi^a(X_i)`.
    #[inline]
    pub fn arm_weight(&self, i: usize, arm: u8) -> f64 {
        if self.treatment[i] != arm {
            0.0
        } else if arm == 1 {
            1.0 / self.pi[i]
        } else {
            1.0 / (1.0 - self.pi[i])
        }
    }
}

/// Inverse probability-of-censoring weight: `1[T <= tau, event != 0] /
/// G(T- | A, X)`, zero for censored subjects and for follow-up past tau.
pub fn ipcw_weight(i: usize, bundle: &NuisanceBundle) -> Result<f64> {
    if bundle.time[i] > bundle.tau || bundle.event[i] == 0 {
        return Ok(0.0);
    }
    let g = bundle.g_tminus[i];
    if g <= bundle.eps_g {
        return Err(Error::Positivity(format!(
            "censoring survival G(T-) = {g:.3e} <= {:.1e} for subject {i}",
            bundle.eps_g
        )));
    }
    Ok(1.0 / g)
}

/// Censoring martingale `M^C_i(t) = N^C_i(t) - L^C(t ^ T_i | A_i, X_i)`,
/// evaluated at `t ^ tau` (the bundle stores censoring quantities up to the
/// horizon).
pub fn censoring_martingale(i: usize, bundle: &NuisanceBundle, t: f64) -> f64 {
    let grid = &bundle.cens_times[bundle.cens_grid[i] as usize];
    let len = bundle.dlc[i].len();
    let mut v = 0.0;
    for k in 0..len {
        if grid[k] > t {
            break;
        }
        v -= bundle.dlc[i][k];
        if bundle.own_cens[i] == Some(k) {
            v += 1.0;
        }
    }
    v
}

/// Augmentation term: the integral of
/// `(F1(tau|A,X) - F1(s|A,X)) / S(s|A,X) / G(s|A,X)` against the subject's
/// censoring martingale increments up to `min(T_i, tau)`.
pub fn augmentation_term(i: usize, bundle: &NuisanceBundle) -> Result<f64> {
    if !bundle.has_censoring {
        return Ok(0.0);
    }
    if !bundle.has_outcome {
        return Err(Error::validation(
            "augmentation term requires outcome risk predictions in the bundle",
        ));
    }
    let len = bundle.dlc[i].len();
    if len == 0 {
        return Ok(0.0);
    }
    let f1_tau = bundle.f1_tau_own(i);
    let mut acc = 0.0;
    for k in 0..len {
        let dm = f64::from(bundle.own_cens[i] == Some(k)) - bundle.dlc[i][k];
        if dm == 0.0 {
            continue;
        }
        let s = bundle.s_own[i][k];
        let g = bundle.g_right[i][k];
        if s <= bundle.eps_s {
            return Err(Error::Positivity(format!(
                "event-free survival S(s) = {s:.3e} <= {:.1e} for subject {i} in the \
                 augmentation term",
                bundle.eps_s
            )));
        }
        if g <= bundle.eps_g {
            return Err(Error::Positivity(format!(
                "censoring survival G(s) = {g:.3e} <= {:.1e} for subject {i} in the \
                 augmentation term",
                bundle.eps_g
            )));
        }
        acc += (f1_tau - bundle.f1_own[i][k]) / s / g * dm;
    }
    Ok(acc)
}

/// All augmentation terms, computed once.
pub fn augmentation_terms(bundle: &NuisanceBundle) -> Result<Vec<f64>> {
    (0..bundle.n)
        .map(|i| augmentation_term(i, bundle))
        .collect()
}

/// All IPCW weights, computed once.
pub fn ipcw_weights(bundle: &NuisanceBundle) -> Result<Vec<f64>> {
    (0..bundle.n).map(|i| ipcw_weight(i, bundle)).collect()
}

/// A point estimate with arm-wise risks and an influence-function variance.
#[derive(Debug, Clone, Serialize)]
pub struct AteEstimate {
    pub estimator: Estimator,
    pub variance: VarianceVariant,
    pub risk1: f64,
    pub risk0: f64,
    pub ate: f64,
    pub se: f64,
    #[serde(rename = "lower")]
    pub ci_lower: f64,
    #[serde(rename = "upper")]
    pub ci_upper: f64,
    pub tau: f64,
    pub n: usize,
    #[serde(skip)]
    pub if_values: Vec<f64>,
}

impl AteEstimate {
    fn from_if(
        estimator: Estimator,
        variance: VarianceVariant,
        risk1: f64,
        risk0: f64,
        if_values: Vec<f64>,
        tau: f64,
        level: f64,
    ) -> AteEstimate {
        let n = if_values.len();
        let ate = risk1 - risk0;
        let (se, lo, hi) = crate::inference::wald_ci(ate, &if_values, level);
        AteEstimate {
            estimator,
            variance,
            risk1,
            risk0,
            ate,
            se,
            ci_lower: lo,
            ci_upper: hi,
            tau,
            n,
            if_values,
        }
    }
}

/// Per-subject summands of each estimator, used both for the point estimates
/// and for the plug-in (tilde) influence values.
pub(crate) struct EstimatorTerms {
    /// `[arm][subject]`: the summand of the arm-wise risk.
    pub arm_terms: [Vec<f64>; 2],
}

impl EstimatorTerms {
    fn risks(&self) -> (f64, f64) {
        let n = self.arm_terms[0].len() as f64;
        let mut k1 = KahanSum::new();
        let mut k0 = KahanSum::new();
        for v in &self.arm_terms[1] {
            k1.add(*v);
        }
        for v in &self.arm_terms[0] {
            k0.add(*v);
        }
        (k1.total() / n, k0.total() / n)
    }

    /// Plug-in deviations `h_i - ate`, which sum to zero by construction.
    fn tilde_if(&self, ate: f64) -> Vec<f64> {
        self.arm_terms[1]
            .iter()
            .zip(&self.arm_terms[0])
            .map(|(v1, v0)| v1 - v0 - ate)
            .collect()
    }
}

pub(crate) fn estimator_terms(
    estimator: Estimator,
    bundle: &NuisanceBundle,
    weights: &[f64],
    augment: &[f64],
) -> Result<EstimatorTerms> {
    let n = bundle.n;
    if estimator.needs_outcome() && !bundle.has_outcome {
        return Err(Error::validation(format!(
            "{} requires outcome risk predictions",
            estimator.name()
        )));
    }
    let mut arm_terms = [vec![0.0; n], vec![0.0; n]];
    for i in 0..n {
        for arm in [0u8, 1u8] {
            let t = match estimator {
                Estimator::GFormula => bundle.f1_tau[arm as usize][i],
                Estimator::IptwIpcw => bundle.arm_weight(i, arm) * weights[i] * bundle.y_tau[i],
                Estimator::AiptwIpcw => {
                    bundle.f1_tau[arm as usize][i]
                        + bundle.arm_weight(i, arm)
                            * (weights[i] * bundle.y_tau[i] - bundle.f1_tau_own(i))
                }
                Estimator::IptwAipcw => {
                    bundle.arm_weight(i, arm) * (weights[i] * bundle.y_tau[i] + augment[i])
                }
                Estimator::AiptwAipcw => {
                    bundle.f1_tau[arm as usize][i]
                        + bundle.arm_weight(i, arm)
                            * (weights[i] * bundle.y_tau[i] - bundle.f1_tau_own(i) + augment[i])
                }
            };
            arm_terms[arm as usize][i] = t;
        }
    }
    Ok(EstimatorTerms { arm_terms })
}

fn tilde_estimate(
    estimator: Estimator,
    bundle: &NuisanceBundle,
    weights: &[f64],
    augment: &[f64],
    level: f64,
) -> Result<AteEstimate> {
    let terms = estimator_terms(estimator, bundle, weights, augment)?;
    let (risk1, risk0) = terms.risks();
    let if_values = terms.tilde_if(risk1 - risk0);
    Ok(AteEstimate::from_if(
        estimator,
        VarianceVariant::Tilde,
        risk1,
        risk0,
        if_values,
        bundle.tau,
        level,
    ))
}

/// G-formula estimate with the plug-in influence values (the driver upgrades
/// the variance with the nuisance term).
pub fn gformula(bundle: &NuisanceBundle) -> Result<AteEstimate> {
    let zeros = vec![0.0; bundle.n];
    tilde_estimate(Estimator::GFormula, bundle, &zeros, &zeros, 0.95)
}

/// IPTW,IPCW estimate with plug-in influence values.
pub fn iptw_ipcw(bundle: &NuisanceBundle) -> Result<AteEstimate> {
    let weights = ipcw_weights(bundle)?;
    let zeros = vec![0.0; bundle.n];
    tilde_estimate(Estimator::IptwIpcw, bundle, &weights, &zeros, 0.95)
}

/// AIPTW,IPCW estimate (no augmentation term) with plug-in influence values.
pub fn aiptw_ipcw(bundle: &NuisanceBundle) -> Result<AteEstimate> {
    let weights = ipcw_weights(bundle)?;
    let zeros = vec![0.0; bundle.n];
    tilde_estimate(Estimator::AiptwIpcw, bundle, &weights, &zeros, 0.95)
}

/// IPTW,AIPCW estimate with plug-in influence values.
pub fn iptw_aipcw(bundle: &NuisanceBundle) -> Result<AteEstimate> {
    let weights = ipcw_weights(bundle)?;
    let augment = augmentation_terms(bundle)?;
    tilde_estimate(Estimator::IptwAipcw, bundle, &weights, &augment, 0.95)
}

/// AIPTW,AIPCW estimate with the tilde influence values.
pub fn aiptw_aipcw(bundle: &NuisanceBundle) -> Result<AteEstimate> {
    let weights = ipcw_weights(bundle)?;
    let augment = augmentation_terms(bundle)?;
    tilde_estimate(Estimator::AiptwAipcw, bundle, &weights, &augment, 0.95)
}

// ---------------------------------------------------------------------------
// Fitted nuisance models and the bundle builder
// ---------------------------------------------------------------------------

/// One cause-specific model with the context needed for predictions and
/// influence computations. In stratified mode `subjects` are the rows of the
/// arm; pooled mode covers every row.
#[derive(Debug, Clone)]
pub(crate) struct OutcomeArm {
    pub model: CauseSpecificModel,
    pub grid: PredGrid,
    pub subjects: Vec<usize>,
    pub data: Dataset,
    pub x1: DesignMatrix,
    pub x2: DesignMatrix,
}

#[derive(Debug, Clone)]
pub(crate) enum OutcomeNuisance {
    Pooled(OutcomeArm),
    Stratified(Box<[OutcomeArm; 2]>),
}

impl OutcomeNuisance {
    pub fn arm_model(&self, arm: u8) -> &OutcomeArm {
        match self {
            OutcomeNuisance::Pooled(m) => m,
            OutcomeNuisance::Stratified(arms) => &arms[arm as usize],
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct CensoringArm {
    pub fit: CoxFit,
    pub layout: ColumnLayout,
    /// Baseline jump times <= tau.
    pub grid_times: Vec<f64>,
    pub grid_increments: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) enum CensoringNuisance {
    Pooled(CensoringArm),
    Stratified(Box<[CensoringArm; 2]>),
}

impl CensoringNuisance {
    pub fn arm_model(&self, arm: u8) -> &CensoringArm {
        match self {
            CensoringNuisance::Pooled(m) => m,
            CensoringNuisance::Stratified(arms) => &arms[arm as usize],
        }
    }

    pub fn grid_index(&self, arm: u8) -> u8 {
        match self {
            CensoringNuisance::Pooled(_) => 0,
            CensoringNuisance::Stratified(_) => arm,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct PropensityNuisance {
    pub fit: Option<LogisticFit>,
    pub x: Option<DesignMatrix>,
    pub pi: Vec<f64>,
}

/// Per-model iteration counts and positivity diagnostics for the report.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Diagnostics {
    /// Newton iteration counts per fitted model, keyed by model label.
    pub iterations: Vec<(String, usize)>,
    pub positivity_min_g: Option<f64>,
    pub min_pi: Option<f64>,
    pub max_weight: Option<f64>,
}

/// All fitted working models of one estimation run. The internals are
/// crate-private; the struct itself is exposed so callers can split fitting
/// from repeated bundle construction (e.g. over a grid of horizons).
pub struct FittedNuisances {
    pub(crate) outcome: Option<OutcomeNuisance>,
    pub(crate) censoring: Option<CensoringNuisance>,
    pub(crate) propensity: Option<PropensityNuisance>,
    pub(crate) diagnostics: Diagnostics,
}

fn fit_outcome_arm(
    data: &Dataset,
    formulas: &FormulaSpec,
    subjects: Vec<usize>,
    stratified: bool,
    label_suffix: &str,
    diagnostics: &mut Diagnostics,
) -> Result<OutcomeArm> {
    let sub = if stratified {
        data.subset_unchecked(&subjects)
    } else {
        data.clone()
    };
    let layout1 = ColumnLayout::resolve(
        &sub,
        formulas.terms(NuisanceModel::OutcomeCause1),
        NuisanceModel::OutcomeCause1,
        !stratified,
    )?;
    let layout2 = ColumnLayout::resolve(
        &sub,
        formulas.terms(NuisanceModel::OutcomeCause2),
        NuisanceModel::OutcomeCause2,
        !stratified,
    )?;
    let x1 = DesignMatrix::from_layout(&sub, layout1.clone());
    let x2 = DesignMatrix::from_layout(&sub, layout2.clone());
    let fit_for = |cause: u8, x: &DesignMatrix| -> Result<CoxFit> {
        if sub.samples().iter().any(|s| s.event == cause) {
            let fit = fit_cox(&sub, x, cause)?;
            if !fit.converged {
                return Err(Error::convergence(
                    format!("outcome cause {cause}{label_suffix}"),
                    format!("no convergence in {} iterations", fit.iterations),
                ));
            }
            Ok(fit)
        } else {
            Ok(CoxFit::null(cause, x.d))
        }
    };
    let fit1 = fit_for(1, &x1)?;
    let fit2 = fit_for(2, &x2)?;
    diagnostics
        .iterations
        .push((format!("outcome1{label_suffix}"), fit1.iterations));
    diagnostics
        .iterations
        .push((format!("outcome2{label_suffix}"), fit2.iterations));
    let model = CauseSpecificModel::new(fit1, fit2, layout1, layout2)?;
    let grid = PredGrid::from_model(&model);
    Ok(OutcomeArm {
        model,
        grid,
        subjects,
        data: sub,
        x1,
        x2,
    })
}

fn fit_censoring_arm(
    data: &Dataset,
    formulas: &FormulaSpec,
    subjects: Vec<usize>,
    stratified: bool,
    tau: f64,
    label_suffix: &str,
    diagnostics: &mut Diagnostics,
) -> Result<CensoringArm> {
    let sub = if stratified {
        data.subset_unchecked(&subjects)
    } else {
        data.clone()
    };
    let layout = ColumnLayout::resolve(
        &sub,
        formulas.terms(NuisanceModel::Censoring),
        NuisanceModel::Censoring,
        !stratified,
    )?;
    let x = DesignMatrix::from_layout(&sub, layout.clone());
    let fit = if sub.samples().iter().any(|s| s.event == 0) {
        let fit = fit_cox(&sub, &x, 0)?;
        if !fit.converged {
            return Err(Error::convergence(
                format!("censoring{label_suffix}"),
                format!("no convergence in {} iterations", fit.iterations),
            ));
        }
        fit
    } else {
        CoxFit::null(0, x.d)
    };
    diagnostics
        .iterations
        .push((format!("censoring{label_suffix}"), fit.iterations));
    let cut = fit.baseline.index_at(tau);
    let grid_times = fit.baseline.jump_times()[..cut].to_vec();
    let grid_increments = fit.baseline.increments()[..cut].to_vec();
    Ok(CensoringArm {
        fit,
        layout,
        grid_times,
        grid_increments,
    })
}

/// Fit the working models an estimator set needs (lazily: the censoring
/// model is skipped on uncensored data, the propensity model when only the
/// G-formula is requested).
pub fn fit_nuisances(
    data: &Dataset,
    formulas: &FormulaSpec,
    tau: f64,
    estimators: &[Estimator],
    options: &AteOptions,
) -> Result<FittedNuisances> {
    let mut diagnostics = Diagnostics::default();
    let needs_outcome = estimators.iter().any(Estimator::needs_outcome);
    let needs_propensity = estimators.iter().any(Estimator::needs_propensity);
    let any_censored = data.samples().iter().any(|s| s.event == 0);
    let needs_censoring = estimators.iter().any(Estimator::needs_censoring) && any_censored;

    let outcome = if needs_outcome {
        Some(if options.stratified {
            let arms = [
                fit_outcome_arm(
                    data,
                    formulas,
                    data.arm_indices(0),
                    true,
                    " (arm 0)",
                    &mut diagnostics,
                )?,
                fit_outcome_arm(
                    data,
                    formulas,
                    data.arm_indices(1),
                    true,
                    " (arm 1)",
                    &mut diagnostics,
                )?,
            ];
            OutcomeNuisance::Stratified(Box::new(arms))
        } else {
            OutcomeNuisance::Pooled(fit_outcome_arm(
                data,
                formulas,
                (0..data.n()).collect(),
                false,
                "",
                &mut diagnostics,
            )?)
        })
    } else {
        None
    };

    let censoring = if needs_censoring {
        Some(if options.stratified {
            let arms = [
                fit_censoring_arm(
                    data,
                    formulas,
                    data.arm_indices(0),
                    true,
                    tau,
                    " (arm 0)",
                    &mut diagnostics,
                )?,
                fit_censoring_arm(
                    data,
                    formulas,
                    data.arm_indices(1),
                    true,
                    tau,
                    " (arm 1)",
                    &mut diagnostics,
                )?,
            ];
            CensoringNuisance::Stratified(Box::new(arms))
        } else {
            CensoringNuisance::Pooled(fit_censoring_arm(
                data,
                formulas,
                (0..data.n()).collect(),
                false,
                tau,
                "",
                &mut diagnostics,
            )?)
        })
    } else {
        None
    };

    let propensity = if needs_propensity {
        let pi = match &options.propensity {
            PropensitySource::Fitted => {
                let x = design_matrix(data, formulas, NuisanceModel::Treatment)?;
                let a: Vec<u8> = data.samples().iter().map(|s| s.treatment).collect();
                let fit = fit_logistic(&x, &a)?;
                if !fit.converged {
                    return Err(Error::convergence(
                        "treatment",
                        format!("no convergence in {} iterations", fit.iterations),
                    ));
                }
                diagnostics
                    .iterations
                    .push(("treatment".to_string(), fit.iterations));
                let pi = predict_propensity(&fit, &x, options.truncate_propensity)?;
                Some(PropensityNuisance {
                    fit: Some(fit),
                    x: Some(x),
                    pi,
                })
            }
            PropensitySource::Empirical => {
                let frac = data.samples().iter().filter(|s| s.treatment == 1).count() as f64
                    / data.n() as f64;
                Some(PropensityNuisance {
                    fit: None,
                    x: None,
                    pi: vec![frac; data.n()],
                })
            }
            PropensitySource::Fixed(values) => {
                if values.len() != data.n() {
                    return Err(Error::validation(format!(
                        "fixed propensity vector has length {} but n = {}",
                        values.len(),
                        data.n()
                    )));
                }
                Some(PropensityNuisance {
                    fit: None,
                    x: None,
                    pi: values.clone(),
                })
            }
        };
        if let Some(p) = &pi {
            for (i, &v) in p.pi.iter().enumerate() {
                if !(v > 0.0 && v < 1.0) {
                    return Err(Error::Positivity(format!(
                        "propensity {v} for subject {i} is outside (0, 1); consider \
                         --truncate-propensity"
                    )));
                }
            }
        }
        pi
    } else {
        None
    };

    Ok(FittedNuisances {
        outcome,
        censoring,
        propensity,
        diagnostics,
    })
}

/// Evaluate every per-subject nuisance quantity at the horizon.
pub fn build_bundle(
    data: &Dataset,
    nuisances: &FittedNuisances,
    tau: f64,
    options: &AteOptions,
) -> Result<NuisanceBundle> {
    let n = data.n();
    let samples = data.samples();
    let has_outcome = nuisances.outcome.is_some();
    let has_censoring = nuisances.censoring.is_some();

    let pi = match &nuisances.propensity {
        Some(p) => p.pi.clone(),
        // G-formula alone: propensities unused
        None => vec![0.5; n],
    };

    let cens_times: [Vec<f64>; 2] = match &nuisances.censoring {
        None => [Vec::new(), Vec::new()],
        Some(CensoringNuisance::Pooled(arm)) => [arm.grid_times.clone(), Vec::new()],
        Some(CensoringNuisance::Stratified(arms)) => {
            [arms[0].grid_times.clone(), arms[1].grid_times.clone()]
        }
    };

    struct SubjectRow {
        f1_tau: [f64; 2],
        f1_own: Vec<f64>,
        s_own: Vec<f64>,
        g_right: Vec<f64>,
        dlc: Vec<f64>,
        own_cens: Option<usize>,
        g_tminus: f64,
        g_tcap: f64,
    }

    let mode = options.mode;
    let rows: Vec<Result<SubjectRow>> = exec::map_indexed(n, |i| {
        let s = &samples[i];
        let arm_own = s.treatment;
        let t_cap = s.time.min(tau);

        // censoring quantities first: the outcome walk samples at these jumps
        let (grid_idx, dlc, g_right, own_cens, g_tminus, g_tcap) = match &nuisances.censoring {
            None => (0u8, Vec::new(), Vec::new(), None, 1.0, 1.0),
            Some(cens) => {
                let arm = cens.arm_model(arm_own);
                let grid_idx = cens.grid_index(arm_own);
                let times = &arm.grid_times;
                let len = times.partition_point(|&u| u <= t_cap);
                let theta = arm.fit.risk_score(&arm.layout.row(&s.covariates, arm_own));
                let mut dlc = Vec::with_capacity(len);
                let mut g_right = Vec::with_capacity(len);
                let mut g = 1.0_f64;
                let mut g_tminus = 1.0_f64;
                for k in 0..len {
                    let inc = arm.grid_increments[k] * theta;
                    if times[k] < s.time {
                        // track the left limit at the observed time
                        g_tminus = g * (1.0 - inc);
                    }
                    g *= 1.0 - inc;
                    dlc.push(inc);
                    g_right.push(g);
                }
                let own_cens = if s.event == 0 && s.time <= tau {
                    let k = times[..len].partition_point(|&u| u < s.time);
                    debug_assert!(k < len && times[k] == s.time);
                    Some(k)
                } else {
                    None
                };
                (grid_idx, dlc, g_right, own_cens, g_tminus, g)
            }
        };

        let (f1_tau, f1_own, s_own) = if let Some(outcome) = &nuisances.outcome {
            let queries = &cens_times[grid_idx as usize][..dlc.len()];
            let mut f1_own = vec![0.0; queries.len()];
            let mut s_own = vec![0.0; queries.len()];
            let own = outcome.arm_model(arm_own);
            let (e1, e2) = own.model.risk_scores(&s.covariates, arm_own);
            let (f1_tau_own, _) = walk_sample(
                &own.grid,
                e1,
                e2,
                mode,
                tau,
                queries,
                &mut f1_own,
                &mut s_own,
            )?;
            let other_arm = 1 - arm_own;
            let other = outcome.arm_model(other_arm);
            let (e1o, e2o) = other.model.risk_scores(&s.covariates, other_arm);
            let (f1_tau_other, _) =
                walk_sample(&other.grid, e1o, e2o, mode, tau, &[], &mut [], &mut [])?;
            let mut f1_tau = [0.0; 2];
            f1_tau[arm_own as usize] = f1_tau_own;
            f1_tau[other_arm as usize] = f1_tau_other;
            (f1_tau, f1_own, s_own)
        } else {
            ([0.0; 2], Vec::new(), Vec::new())
        };

        Ok(SubjectRow {
            f1_tau,
            f1_own,
            s_own,
            g_right,
            dlc,
            own_cens,
            g_tminus,
            g_tcap,
        })
    });

    let mut f1_tau = [vec![0.0; n], vec![0.0; n]];
    let mut f1_own = Vec::with_capacity(n);
    let mut s_own = Vec::with_capacity(n);
    let mut g_right = Vec::with_capacity(n);
    let mut dlc = Vec::with_capacity(n);
    let mut own_cens = Vec::with_capacity(n);
    let mut g_tminus = Vec::with_capacity(n);
    let mut g_tcap = Vec::with_capacity(n);
    for (i, row) in rows.into_iter().enumerate() {
        let row = row?;
        f1_tau[0][i] = row.f1_tau[0];
        f1_tau[1][i] = row.f1_tau[1];
        f1_own.push(row.f1_own);
        s_own.push(row.s_own);
        g_right.push(row.g_right);
        dlc.push(row.dlc);
        own_cens.push(row.own_cens);
        g_tminus.push(row.g_tminus);
        g_tcap.push(row.g_tcap);
    }

    let cens_grid: Vec<u8> = match &nuisances.censoring {
        Some(cens) => samples
            .iter()
            .map(|s| cens.grid_index(s.treatment))
            .collect(),
        None => vec![0; n],
    };

    Ok(NuisanceBundle {
        tau,
        n,
        time: samples.iter().map(|s| s.time).collect(),
        event: samples.iter().map(|s| s.event).collect(),
        treatment: samples.iter().map(|s| s.treatment).collect(),
        y_tau: samples.iter().map(|s| s.y_tau(tau)).collect(),
        observed: samples
            .iter()
            .map(|s| f64::from(s.observed_at(tau)))
            .collect(),
        pi,
        f1_tau: if has_outcome {
            f1_tau
        } else {
            [Vec::new(), Vec::new()]
        },
        cens_times,
        cens_grid,
        f1_own,
        s_own,
        g_right,
        dlc,
        own_cens,
        g_tminus,
        g_tcap,
        has_outcome,
        has_censoring,
        eps_g: options.eps_g,
        eps_s: options.eps_s,
    })
}

/// Full output of an estimation run.
#[derive(Debug, Clone, Serialize)]
pub struct AteOutput {
    pub estimates: Vec<AteEstimate>,
    pub diagnostics: Diagnostics,
    pub tau_report: TauReport,
}

/// The estimation pipeline: feasibility check, lazy nuisance fitting, bundle
/// construction, then every requested estimator on the shared bundle with its
/// default (or requested) variance variant.
pub fn estimate_ate(
    data: &Dataset,
    formulas: &FormulaSpec,
    tau: f64,
    estimators: &[Estimator],
    options: &AteOptions,
) -> Result<AteOutput> {
    if estimators.is_empty() {
        return Err(Error::validation("no estimators requested"));
    }
    let tau_report = tau_feasibility(data, tau)?;
    if tau_report.failed {
        return Err(Error::validation(format!(
            "tau = {tau} is not feasible: no subjects at risk in at least one arm \
             (at risk: control {}, treated {})",
            tau_report.at_risk[0], tau_report.at_risk[1]
        )));
    }
    formulas.validate(data)?;

    let nuisances = fit_nuisances(data, formulas, tau, estimators, options)?;
    let bundle = build_bundle(data, &nuisances, tau, options)?;

    let needs_weights = estimators.iter().any(Estimator::needs_propensity);
    let weights = if needs_weights {
        ipcw_weights(&bundle)?
    } else {
        vec![0.0; bundle.n]
    };
    let needs_augment = estimators
        .iter()
        .any(|e| matches!(e, Estimator::IptwAipcw | Estimator::AiptwAipcw));
    let augment = if needs_augment {
        augmentation_terms(&bundle)?
    } else {
        vec![0.0; bundle.n]
    };

    let mut diagnostics = nuisances.diagnostics.clone();
    if needs_weights {
        let mut min_g: Option<f64> = None;
        let mut max_w: Option<f64> = None;
        for i in 0..bundle.n {
            if weights[i] > 0.0 {
                min_g = Some(min_g.map_or(bundle.g_tminus[i], |m| m.min(bundle.g_tminus[i])));
                let w = weights[i] * bundle.arm_weight(i, bundle.treatment[i]);
                max_w = Some(max_w.map_or(w, |m| m.max(w)));
            }
        }
        diagnostics.positivity_min_g = min_g;
        diagnostics.max_weight = max_w;
        diagnostics.min_pi = bundle
            .pi
            .iter()
            .map(|&p| p.min(1.0 - p))
            .min_by(f64::total_cmp);
    }

    let level = options.confidence_level;
    let mut estimates = Vec::new();
    let mut phi_ctx = crate::inference::PhiContext::new(&nuisances, data, options.mode, tau);

    for &estimator in estimators {
        let terms = estimator_terms(estimator, &bundle, &weights, &augment)?;
        let (risk1, risk0) = terms.risks();
        let ate = risk1 - risk0;
        let tilde = terms.tilde_if(ate);
        match estimator {
            Estimator::GFormula => {
                let phi = phi_ctx.phi_gformula(&bundle)?;
                let if_values: Vec<f64> = tilde.iter().zip(&phi).map(|(t, p)| t + p).collect();
                estimates.push(AteEstimate::from_if(
                    estimator,
                    VarianceVariant::PartialPhi,
                    risk1,
                    risk0,
                    if_values,
                    tau,
                    level,
                ));
            }
            Estimator::IptwIpcw => {
                let phi = phi_ctx.phi_iptw_ipcw(&bundle, &weights)?;
                let if_values: Vec<f64> = tilde.iter().zip(&phi).map(|(t, p)| t + p).collect();
                estimates.push(AteEstimate::from_if(
                    estimator,
                    VarianceVariant::PartialPhi,
                    risk1,
                    risk0,
                    if_values,
                    tau,
                    level,
                ));
            }
            Estimator::AiptwAipcw => {
                let want_tilde = matches!(
                    options.variance,
                    VarianceChoice::Tilde | VarianceChoice::Both
                );
                let want_phi = matches!(
                    options.variance,
                    VarianceChoice::PartialPhi | VarianceChoice::Both
                );
                if want_tilde {
                    estimates.push(AteEstimate::from_if(
                        estimator,
                        VarianceVariant::Tilde,
                        risk1,
                        risk0,
                        tilde.clone(),
                        tau,
                        level,
                    ));
                }
                if want_phi {
                    let phi = phi_ctx.phi_aiptw_aipcw(&bundle, &weights, &augment)?;
                    let if_values: Vec<f64> = tilde.iter().zip(&phi).map(|(t, p)| t + p).collect();
                    estimates.push(AteEstimate::from_if(
                        estimator,
                        VarianceVariant::PartialPhi,
                        risk1,
                        risk0,
                        if_values,
                        tau,
                        level,
                    ));
                }
            }
            _ => {
                estimates.push(AteEstimate::from_if(
                    estimator,
                    VarianceVariant::Tilde,
                    risk1,
                    risk0,
                    tilde,
                    tau,
                    level,
                ));
            }
        }
    }

    Ok(AteOutput {
        estimates,
        diagnostics,
        tau_report,
    })
}

/// Convenience accessor used by reports.
pub fn z_value(level: f64) -> f64 {
    normal_quantile(0.5 + level / 2.0)
}
