//! Composition of cause-specific hazards into absolute risks and event-free
//! survival, the nonparametric Aalen–Johansen benchmark, and influence
//! contributions of the predicted risks.
//!
//! The default composition is the product-limit form, which conserves
//! probability mass exactly with step hazards: `S(t) = prod(1 - dH(u))` and
//! `F1(t) = sum S(u-) dH1(u)`. The exponential form `S = exp(-H1-H2)` is
//! available as an option and differs at order `dH^2`.

use std::io::Write;

use crate::cox::{CoxFit, CoxInfluence};
use crate::dataset::ColumnLayout;
use crate::error::{Error, Result};
use crate::linalg;
use crate::step::StepFunction;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum RiskMode {
    #[default]
    ProductLimit,
    Exponential,
}

/// The pair of fitted cause-specific hazard models plus the column layouts
/// needed to build design rows for new (arm, covariates) prediction points.
#[derive(Debug, Clone)]
pub struct CauseSpecificModel {
    pub fit1: CoxFit,
    pub fit2: CoxFit,
    pub layout1: ColumnLayout,
    pub layout2: ColumnLayout,
}

impl CauseSpecificModel {
    pub fn new(
        fit1: CoxFit,
        fit2: CoxFit,
        layout1: ColumnLayout,
        layout2: ColumnLayout,
    ) -> Result<Self> {
        if !fit1.converged || !fit2.converged {
            return Err(Error::convergence(
                "outcome",
                "cause-specific fit did not converge",
            ));
        }
        Ok(CauseSpecificModel {
            fit1,
            fit2,
            layout1,
            layout2,
        })
    }

    /// Design rows for a prediction point.
    pub fn design_rows(&self, covariates: &[f64], arm: u8) -> (Vec<f64>, Vec<f64>) {
        (
            self.layout1.row(covariates, arm),
            self.layout2.row(covariates, arm),
        )
    }

    /// `exp(z' beta)` per cause at a prediction point.
    pub fn risk_scores(&self, covariates: &[f64], arm: u8) -> (f64, f64) {
        let (z1, z2) = self.design_rows(covariates, arm);
        (self.fit1.risk_score(&z1), self.fit2.risk_score(&z2))
    }
}

/// Absolute risk curves for both causes plus event-free survival, stored as
/// right-continuous step values on a shared jump grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskCurve {
    times: Vec<f64>,
    f1: Vec<f64>,
    f2: Vec<f64>,
    s: Vec<f64>,
}

impl RiskCurve {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// `(F1, F2, S)` at time t (right-continuous step lookup).
    pub fn eval(&self, t: f64) -> (f64, f64, f64) {
        match self.times.partition_point(|&u| u <= t) {
            0 => (0.0, 0.0, 1.0),
            k => (self.f1[k - 1], self.f2[k - 1], self.s[k - 1]),
        }
    }

    pub fn f1_at(&self, t: f64) -> f64 {
        self.eval(t).0
    }

    pub fn survival_at(&self, t: f64) -> f64 {
        self.eval(t).2
    }

    /// Left limit of the survival function at t.
    pub fn survival_before(&self, t: f64) -> f64 {
        match self.times.partition_point(|&u| u < t) {
            0 => 1.0,
            k => self.s[k - 1],
        }
    }

    /// CSV export: `time,F1,F2,S` with full float precision.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "time,F1,F2,S")?;
        for k in 0..self.times.len() {
            writeln!(
                out,
                "{},{},{},{}",
                self.times[k], self.f1[k], self.f2[k], self.s[k]
            )?;
        }
        Ok(())
    }
}

/// Merged jump grid of the two cause-specific baselines, with back-references
/// into each baseline's jump arrays.
#[derive(Debug, Clone)]
pub(crate) struct PredGrid {
    pub times: Vec<f64>,
    pub inc1: Vec<f64>,
    pub inc2: Vec<f64>,
    /// Index into the cause-1 baseline arrays, -1 when cause 1 has no jump here.
    pub jump1: Vec<i32>,
    pub jump2: Vec<i32>,
}

impl PredGrid {
    pub fn from_steps(lambda1: &StepFunction, lambda2: &StepFunction) -> PredGrid {
        let (t1, i1) = (lambda1.jump_times(), lambda1.increments());
        let (t2, i2) = (lambda2.jump_times(), lambda2.increments());
        let mut times = Vec::with_capacity(t1.len() + t2.len());
        let mut inc1 = Vec::with_capacity(times.capacity());
        let mut inc2 = Vec::with_capacity(times.capacity());
        let mut jump1 = Vec::with_capacity(times.capacity());
        let mut jump2 = Vec::with_capacity(times.capacity());
        let (mut a, mut b) = (0usize, 0usize);
        while a < t1.len() || b < t2.len() {
            let ta = t1.get(a).copied().unwrap_or(f64::INFINITY);
            let tb = t2.get(b).copied().unwrap_or(f64::INFINITY);
            if ta < tb {
                times.push(ta);
                inc1.push(i1[a]);
                inc2.push(0.0);
                jump1.push(a as i32);
                jump2.push(-1);
                a += 1;
            } else if tb < ta {
                times.push(tb);
                inc1.push(0.0);
                inc2.push(i2[b]);
                jump1.push(-1);
                jump2.push(b as i32);
                b += 1;
            } else {
                times.push(ta);
                inc1.push(i1[a]);
                inc2.push(i2[b]);
                jump1.push(a as i32);
                jump2.push(b as i32);
                a += 1;
                b += 1;
            }
        }
        PredGrid {
            times,
            inc1,
            inc2,
            jump1,
            jump2,
        }
    }

    pub fn from_model(model: &CauseSpecificModel) -> PredGrid {
        PredGrid::from_steps(&model.fit1.baseline, &model.fit2.baseline)
    }

    pub fn index_at(&self, t: f64) -> usize {
        self.times.partition_point(|&u| u <= t)
    }
}

fn negative_factor_error(t: f64) -> Error {
    Error::Numeric(format!(
        "product-limit factor below zero at t = {t} (hazard increment sum > 1); \
         the predicted hazard is extreme, consider the exponential mode"
    ))
}

/// Reusable per-grid-point scratch for curve walks.
#[derive(Debug, Default, Clone)]
pub(crate) struct WalkScratch {
    /// S(u-) at each grid point.
    pub s_minus: Vec<f64>,
    /// F1(u) (right-continuous) at each grid point.
    pub f1: Vec<f64>,
    /// Total hazard increment dH(u) at each grid point.
    pub dh: Vec<f64>,
}

/// Walk the grid up to `tau`, recording per-point values into `scratch`.
/// Returns `(points_used, f1_tau)`.
pub(crate) fn walk_record(
    grid: &PredGrid,
    e1: f64,
    e2: f64,
    mode: RiskMode,
    tau: f64,
    scratch: &mut WalkScratch,
) -> Result<(usize, f64)> {
    let count = grid.index_at(tau);
    scratch.s_minus.resize(count, 0.0);
    scratch.f1.resize(count, 0.0);
    scratch.dh.resize(count, 0.0);
    let mut s = 1.0_f64;
    let mut f1 = 0.0_f64;
    let mut h = 0.0_f64;
    for p in 0..count {
        let dh1 = e1 * grid.inc1[p];
        let dh2 = e2 * grid.inc2[p];
        let dh = dh1 + dh2;
        scratch.s_minus[p] = s;
        scratch.dh[p] = dh;
        f1 += s * dh1;
        scratch.f1[p] = f1;
        match mode {
            RiskMode::ProductLimit => {
                let factor = 1.0 - dh;
                if factor < 0.0 {
                    return Err(negative_factor_error(grid.times[p]));
                }
                s *= factor;
            }
            RiskMode::Exponential => {
                h += dh;
                s = (-h).exp();
            }
        }
    }
    Ok((count, f1))
}

/// Walk up to `tau`, sampling `F1` and `S` (right-continuous) at the sorted
/// query times. Returns `(f1_tau, s_tau)`.
pub(crate) fn walk_sample(
    grid: &PredGrid,
    e1: f64,
    e2: f64,
    mode: RiskMode,
    tau: f64,
    queries: &[f64],
    out_f1: &mut [f64],
    out_s: &mut [f64],
) -> Result<(f64, f64)> {
    debug_assert!(queries.windows(2).all(|w| w[0] <= w[1]));
    debug_assert_eq!(queries.len(), out_f1.len());
    let count = grid.index_at(tau);
    let mut s = 1.0_f64;
    let mut f1 = 0.0_f64;
    let mut h = 0.0_f64;
    let mut q = 0usize;
    for p in 0..count {
        let t = grid.times[p];
        while q < queries.len() && queries[q] < t {
            out_f1[q] = f1;
            out_s[q] = s;
            q += 1;
        }
        let dh1 = e1 * grid.inc1[p];
        let dh2 = e2 * grid.inc2[p];
        let dh = dh1 + dh2;
        f1 += s * dh1;
        match mode {
            RiskMode::ProductLimit => {
                let factor = 1.0 - dh;
                if factor < 0.0 {
                    return Err(negative_factor_error(t));
                }
                s *= factor;
            }
            RiskMode::Exponential => {
                h += dh;
                s = (-h).exp();
            }
        }
    }
    while q < queries.len() {
        out_f1[q] = f1;
        out_s[q] = s;
        q += 1;
    }
    Ok((f1, s))
}

/// Compose two cumulative hazard step functions into risk curves.
pub fn compose_risk(
    lambda1: &StepFunction,
    lambda2: &StepFunction,
    mode: RiskMode,
) -> Result<RiskCurve> {
    let grid = PredGrid::from_steps(lambda1, lambda2);
    compose_on_grid(&grid, 1.0, 1.0, mode)
}

pub(crate) fn compose_on_grid(
    grid: &PredGrid,
    e1: f64,
    e2: f64,
    mode: RiskMode,
) -> Result<RiskCurve> {
    let m = grid.times.len();
    let mut f1 = Vec::with_capacity(m);
    let mut f2 = Vec::with_capacity(m);
    let mut s_out = Vec::with_capacity(m);
    let mut s = 1.0_f64;
    let mut acc1 = 0.0_f64;
    let mut acc2 = 0.0_f64;
    let mut h = 0.0_f64;
    for p in 0..m {
        let dh1 = e1 * grid.inc1[p];
        let dh2 = e2 * grid.inc2[p];
        acc1 += s * dh1;
        acc2 += s * dh2;
        match mode {
            RiskMode::ProductLimit => {
                let factor = 1.0 - dh1 - dh2;
                if factor < 0.0 {
                    return Err(negative_factor_error(grid.times[p]));
                }
                s *= factor;
            }
            RiskMode::Exponential => {
                h += dh1 + dh2;
                s = (-h).exp();
            }
        }
        f1.push(acc1);
        f2.push(acc2);
        s_out.push(s);
    }
    Ok(RiskCurve {
        times: grid.times.clone(),
        f1,
        f2,
        s: s_out,
    })
}

/// Absolute risk curves at a prediction point.
pub fn absolute_risk(
    model: &CauseSpecificModel,
    arm: u8,
    covariates: &[f64],
    mode: RiskMode,
) -> Result<RiskCurve> {
    let (e1, e2) = model.risk_scores(covariates, arm);
    let grid = PredGrid::from_model(model);
    compose_on_grid(&grid, e1, e2, mode)
}

/// Like [`absolute_risk`] but composing only jumps at or before `horizon`,
/// which avoids evaluating extreme hazard tails past the time of interest.
pub fn absolute_risk_up_to(
    model: &CauseSpecificModel,
    arm: u8,
    covariates: &[f64],
    mode: RiskMode,
    horizon: f64,
) -> Result<RiskCurve> {
    let (e1, e2) = model.risk_scores(covariates, arm);
    let full = PredGrid::from_model(model);
    let cut = full.index_at(horizon);
    let grid = PredGrid {
        times: full.times[..cut].to_vec(),
        inc1: full.inc1[..cut].to_vec(),
        inc2: full.inc2[..cut].to_vec(),
        jump1: full.jump1[..cut].to_vec(),
        jump2: full.jump2[..cut].to_vec(),
    };
    compose_on_grid(&grid, e1, e2, mode)
}

/// Nonparametric Aalen–Johansen risk curves, optionally restricted to one arm.
pub fn aalen_johansen(data: &crate::dataset::Dataset, arm: Option<u8>) -> Result<RiskCurve> {
    let owned;
    let subset = match arm {
        None => data,
        Some(a) => {
            let idx = data.arm_indices(a);
            if idx.is_empty() {
                return Err(Error::validation(format!("no subjects in arm {a}")));
            }
            owned = data.subset_unchecked(&idx);
            &owned
        }
    };
    let na1 = crate::cox::nelson_aalen(subset, 1);
    let na2 = crate::cox::nelson_aalen(subset, 2);
    compose_risk(&na1, &na2, RiskMode::ProductLimit)
}

/// Influence contributions of both cause-specific fits.
#[derive(Debug, Clone)]
pub struct CauseSpecificInfluence {
    pub inf1: CoxInfluence,
    pub inf2: CoxInfluence,
    pub n: usize,
}

impl CauseSpecificInfluence {
    pub fn compute(
        model: &CauseSpecificModel,
        data: &crate::dataset::Dataset,
        x1: &crate::dataset::DesignMatrix,
        x2: &crate::dataset::DesignMatrix,
    ) -> Result<Self> {
        Ok(CauseSpecificInfluence {
            inf1: crate::cox::cox_influence(&model.fit1, data, x1)?,
            inf2: crate::cox::cox_influence(&model.fit2, data, x2)?,
            n: data.n(),
        })
    }
}

/// Accumulated influence coefficients for one Cox fit: the linear functional
/// that maps a subject's fitting contributions to the derivative of a risk
/// prediction (or a weighted sum of predictions).
#[derive(Debug, Clone)]
pub(crate) struct FitIfCoeffs {
    /// Accumulated weight per baseline jump.
    w: Vec<f64>,
    /// d-vector multiplying the coefficient influence rows.
    g: Vec<f64>,
    /// Cumulative `sum w_l dL0_l / S0_l`, built by `finalize`.
    kw_cum: Vec<f64>,
    /// Jumps at or before the horizon.
    idx_tau: usize,
    finalized: bool,
}

impl FitIfCoeffs {
    fn new(m: usize, d: usize, idx_tau: usize) -> Self {
        FitIfCoeffs {
            w: vec![0.0; m],
            g: vec![0.0; d],
            kw_cum: Vec::new(),
            idx_tau,
            finalized: false,
        }
    }

    fn finalize(&mut self, fit: &CoxFit) {
        let inc = fit.baseline.increments();
        let mut acc = 0.0;
        self.kw_cum = Vec::with_capacity(self.idx_tau);
        for k in 0..self.idx_tau {
            acc += self.w[k] * inc[k] / fit.s0[k];
            self.kw_cum.push(acc);
        }
        self.finalized = true;
    }

    /// Raw (case-weight derivative) contribution of subject i.
    fn eval_subject(&self, fit: &CoxFit, inf: &CoxInfluence, i: usize) -> f64 {
        debug_assert!(self.finalized);
        let mut v = 0.0;
        if let Some(k) = inf.own_jump[i] {
            if k < self.idx_tau {
                v += self.w[k] / fit.s0[k];
            }
        }
        let cap = inf.cap_idx[i].min(self.idx_tau);
        if cap > 0 {
            v -= inf.r[i] * self.kw_cum[cap - 1];
        }
        if !self.g.is_empty() {
            v += linalg::dot(&self.g, &inf.beta[i]);
        }
        v
    }
}

/// Accumulator for derivatives of (weighted sums of) `F1(tau | a, x)`
/// predictions from one cause-specific model.
#[derive(Debug, Clone)]
pub(crate) struct RiskDerivAccum {
    pub c1: FitIfCoeffs,
    pub c2: FitIfCoeffs,
    mode: RiskMode,
    tau: f64,
}

impl RiskDerivAccum {
    pub fn new(model: &CauseSpecificModel, mode: RiskMode, tau: f64) -> Self {
        RiskDerivAccum {
            c1: FitIfCoeffs::new(
                model.fit1.baseline.len(),
                model.fit1.dim(),
                model.fit1.baseline.index_at(tau),
            ),
            c2: FitIfCoeffs::new(
                model.fit2.baseline.len(),
                model.fit2.dim(),
                model.fit2.baseline.index_at(tau),
            ),
            mode,
            tau,
        }
    }

    /// Shared accumulation: `coefs(p)` yields the (cause-1, cause-2)
    /// coefficients of the baseline increment derivatives at grid point p.
    #[allow(clippy::too_many_arguments)]
    fn accumulate<CoefFn>(
        &mut self,
        model: &CauseSpecificModel,
        grid: &PredGrid,
        e1: f64,
        e2: f64,
        z1: &[f64],
        z2: &[f64],
        weight: f64,
        count: usize,
        mut coefs: CoefFn,
    ) where
        CoefFn: FnMut(usize) -> (f64, f64),
    {
        let d1 = model.fit1.dim();
        let d2 = model.fit2.dim();
        for p in 0..count {
            let (c1_p, c2_p) = coefs(p);
            let k1 = grid.jump1[p];
            if k1 >= 0 {
                let k = k1 as usize;
                let c = weight * e1 * c1_p;
                self.c1.w[k] += c;
                let inc = model.fit1.baseline.increments()[k];
                let xbar = &model.fit1.xbar[k * d1..(k + 1) * d1];
                for j in 0..d1 {
                    self.c1.g[j] += c * inc * (z1[j] - xbar[j]);
                }
            }
            let k2 = grid.jump2[p];
            if k2 >= 0 {
                let k = k2 as usize;
                let c = weight * e2 * c2_p;
                self.c2.w[k] += c;
                let inc = model.fit2.baseline.increments()[k];
                let xbar = &model.fit2.xbar[k * d2..(k + 1) * d2];
                for j in 0..d2 {
                    self.c2.g[j] += c * inc * (z2[j] - xbar[j]);
                }
            }
        }
    }

    /// Add `weight * dF1(tau | a, x)` for one prediction point. The scratch
    /// must not be shared across threads; `z1`/`z2` are the design rows and
    /// `e1`/`e2` the corresponding risk scores.
    #[allow(clippy::too_many_arguments)]
    pub fn add_prediction(
        &mut self,
        model: &CauseSpecificModel,
        grid: &PredGrid,
        e1: f64,
        e2: f64,
        z1: &[f64],
        z2: &[f64],
        weight: f64,
        scratch: &mut WalkScratch,
    ) -> Result<f64> {
        let (count, f1_tau) = walk_record(grid, e1, e2, self.mode, self.tau, scratch)?;
        let mode = self.mode;
        let s = &*scratch;
        self.accumulate(model, grid, e1, e2, z1, z2, weight, count, |p| {
            let tail = f1_tau - s.f1[p];
            let tail = match mode {
                RiskMode::ProductLimit => tail / (1.0 - s.dh[p]),
                RiskMode::Exponential => tail,
            };
            (s.s_minus[p] - tail, -tail)
        });
        Ok(f1_tau)
    }

    /// Add the derivative of the weighted censoring-martingale functional for
    /// one subject's own prediction point:
    /// `sum_s m(s) * [dF1(tau) - dF1(s)]`, with `m(s)` given at the sorted
    /// censoring jump times `cs_times` (all <= tau) and `f1_at_cs` the F1
    /// values there.
    #[allow(clippy::too_many_arguments)]
    pub fn add_martingale_prediction(
        &mut self,
        model: &CauseSpecificModel,
        grid: &PredGrid,
        e1: f64,
        e2: f64,
        z1: &[f64],
        z2: &[f64],
        weight: f64,
        cs_times: &[f64],
        m_weights: &[f64],
        f1_at_cs: &[f64],
        scratch: &mut WalkScratch,
        suffix_m: &mut Vec<f64>,
        suffix_mf: &mut Vec<f64>,
    ) -> Result<()> {
        debug_assert_eq!(cs_times.len(), m_weights.len());
        let (count, f1_tau) = walk_record(grid, e1, e2, self.mode, self.tau, scratch)?;
        let nq = cs_times.len();
        suffix_m.resize(nq + 1, 0.0);
        suffix_mf.resize(nq + 1, 0.0);
        suffix_m[nq] = 0.0;
        suffix_mf[nq] = 0.0;
        for q in (0..nq).rev() {
            suffix_m[q] = suffix_m[q + 1] + m_weights[q];
            suffix_mf[q] = suffix_mf[q + 1] + m_weights[q] * f1_at_cs[q];
        }
        let w_total = suffix_m[0];
        let mode = self.mode;
        let s = &*scratch;
        let sm = &*suffix_m;
        let smf = &*suffix_mf;
        // two-pointer over censoring jumps: M(u) sums m(s) for s >= u
        let mut q = 0usize;
        self.accumulate(model, grid, e1, e2, z1, z2, weight, count, |p| {
            while q < nq && cs_times[q] < grid.times[p] {
                q += 1;
            }
            let m_u = sm[q];
            let fm_u = smf[q];
            // net functional: W_total * F1(tau) - sum_s m(s) F1(s)
            let tail = w_total * (f1_tau - s.f1[p]) - (fm_u - m_u * s.f1[p]);
            let tail = match mode {
                RiskMode::ProductLimit => tail / (1.0 - s.dh[p]),
                RiskMode::Exponential => tail,
            };
            ((w_total - m_u) * s.s_minus[p] - tail, -tail)
        });
        Ok(())
    }

    pub fn finalize(&mut self, model: &CauseSpecificModel) {
        self.c1.finalize(&model.fit1);
        self.c2.finalize(&model.fit2);
    }

    /// Raw derivative for subject i of the accumulated functional.
    pub fn eval_subject(
        &self,
        model: &CauseSpecificModel,
        inf: &CauseSpecificInfluence,
        i: usize,
    ) -> f64 {
        self.c1.eval_subject(&model.fit1, &inf.inf1, i)
            + self.c2.eval_subject(&model.fit2, &inf.inf2, i)
    }
}

/// Per-subject influence vector for `F1(tau | arm, covariates)`, on the
/// estimator scale (values are n times the case-weight derivative, so the
/// IF-based standard error is `sqrt(sum v_i^2) / n`).
pub fn risk_influence(
    model: &CauseSpecificModel,
    influence: &CauseSpecificInfluence,
    arm: u8,
    covariates: &[f64],
    tau: f64,
    mode: RiskMode,
) -> Result<Vec<f64>> {
    let grid = PredGrid::from_model(model);
    let (z1, z2) = model.design_rows(covariates, arm);
    let (e1, e2) = (model.fit1.risk_score(&z1), model.fit2.risk_score(&z2));
    let mut accum = RiskDerivAccum::new(model, mode, tau);
    let mut scratch = WalkScratch::default();
    accum.add_prediction(model, &grid, e1, e2, &z1, &z2, 1.0, &mut scratch)?;
    accum.finalize(model);
    let n = influence.n;
    Ok((0..n)
        .map(|i| n as f64 * accum.eval_subject(model, influence, i))
        .collect())
}
