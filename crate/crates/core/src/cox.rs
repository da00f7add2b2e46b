//! Cox proportional-hazards working models: Newton–Raphson maximization of
//! the Breslow-ties partial likelihood, Breslow baseline cumulative hazards,
//! predictions, Nelson–Aalen estimation, and influence contributions for both
//! the coefficients and the baseline.
//!
//! Risk sets follow the convention that events precede censorings at tied
//! clock times. For the censoring model (event code 0 treated as the event)
//! this flips: a subject whose event occurs at time t has already failed and
//! is not at risk for censoring at t.

use crate::dataset::{Dataset, DesignMatrix};
use crate::error::{Error, Result};
use crate::linalg;
use crate::step::StepFunction;

const SCORE_TOL: f64 = 1e-8;
const MAX_ITER: usize = 25;
const BETA_BOUND: f64 = 30.0;

/// A fitted cause-specific (or censoring) hazard model. The baseline is the
/// Breslow cumulative hazard at covariate vector zero.
#[derive(Debug, Clone)]
pub struct CoxFit {
    pub coefficients: Vec<f64>,
    pub baseline: StepFunction,
    pub converged: bool,
    pub iterations: usize,
    /// d x d observed information at the optimum (empty when d = 0).
    pub information: Vec<f64>,
    /// Event code treated as the event (0 fits the censoring hazard).
    pub cause: u8,
    /// Risk-set total sum of exp(x'beta) at each baseline jump.
    pub(crate) s0: Vec<f64>,
    /// Risk-set weighted covariate mean at each baseline jump (m x d flat).
    pub(crate) xbar: Vec<f64>,
}

impl CoxFit {
    pub fn dim(&self) -> usize {
        self.coefficients.len()
    }

    pub fn risk_score(&self, x_row: &[f64]) -> f64 {
        linalg::dot(x_row, &self.coefficients).exp()
    }

    /// Degenerate fit with identically zero hazard, used when a dataset has
    /// no events of the given cause at all.
    pub fn null(cause: u8, d: usize) -> CoxFit {
        CoxFit {
            coefficients: vec![0.0; d],
            baseline: StepFunction::zero(),
            converged: true,
            iterations: 0,
            information: vec![0.0; d * d],
            cause,
            s0: Vec::new(),
            xbar: Vec::new(),
        }
    }
}

struct SweepOutput {
    log_lik: f64,
    score: Vec<f64>,
    info: Vec<f64>,
    jump_times: Vec<f64>,
    increments: Vec<f64>,
    s0: Vec<f64>,
    xbar: Vec<f64>,
}

/// One pass over the risk sets in decreasing time: partial log-likelihood,
/// score, information and Breslow baseline at the given coefficients.
fn sweep(data: &Dataset, x: &DesignMatrix, cause: u8, beta: &[f64]) -> SweepOutput {
    let n = data.n();
    let d = x.d;
    let samples = data.samples();
    let ord = data.time_order();

    let risk: Vec<f64> = (0..n).map(|i| linalg::dot(x.row(i), beta).exp()).collect();

    let mut s0 = 0.0_f64;
    let mut s1 = vec![0.0; d];
    let mut s2 = vec![0.0; d * d];
    let add_subject = |i: usize, s0: &mut f64, s1: &mut [f64], s2: &mut [f64]| {
        let r = risk[i];
        *s0 += r;
        let xi = x.row(i);
        for j in 0..d {
            s1[j] += r * xi[j];
            for k in 0..=j {
                s2[j * d + k] += r * xi[j] * xi[k];
            }
        }
    };

    let mut log_lik = 0.0;
    let mut score = vec![0.0; d];
    let mut info = vec![0.0; d * d];
    let mut jump_times = Vec::new();
    let mut increments = Vec::new();
    let mut s0_out = Vec::new();
    let mut xbar_out = Vec::new();

    let mut contribute = |t: f64,
                          events: &[usize],
                          s0: f64,
                          s1: &[f64],
                          s2: &[f64],
                          log_lik: &mut f64,
                          score: &mut [f64],
                          info: &mut [f64]| {
        let d_t = events.len() as f64;
        let inv_s0 = 1.0 / s0;
        for &e in events {
            *log_lik += linalg::dot(x.row(e), beta);
            for j in 0..d {
                score[j] += x.row(e)[j];
            }
        }
        *log_lik -= d_t * s0.ln();
        for j in 0..d {
            score[j] -= d_t * s1[j] * inv_s0;
            for k in 0..=j {
                let add = d_t * (s2[j * d + k] * inv_s0 - s1[j] * s1[k] * inv_s0 * inv_s0);
                info[j * d + k] += add;
            }
        }
        jump_times.push(t);
        increments.push(d_t * inv_s0);
        s0_out.push(s0);
        for j in 0..d {
            xbar_out.push(s1[j] * inv_s0);
        }
    };

    // walk distinct times from largest to smallest, growing the risk set
    let mut hi = n;
    let mut events_buf: Vec<usize> = Vec::new();
    while hi > 0 {
        let t = samples[ord[hi - 1]].time;
        let mut lo = hi;
        while lo > 0 && samples[ord[lo - 1]].time == t {
            lo -= 1;
        }
        events_buf.clear();
        if cause == 0 {
            // censoring model: same-time events never enter this risk set
            for &i in &ord[lo..hi] {
                if samples[i].event == 0 {
                    add_subject(i, &mut s0, &mut s1, &mut s2);
                    events_buf.push(i);
                }
            }
            if !events_buf.is_empty() {
                contribute(
                    t,
                    &events_buf,
                    s0,
                    &s1,
                    &s2,
                    &mut log_lik,
                    &mut score,
                    &mut info,
                );
            }
            for &i in &ord[lo..hi] {
                if samples[i].event != 0 {
                    add_subject(i, &mut s0, &mut s1, &mut s2);
                }
            }
        } else {
            for &i in &ord[lo..hi] {
                add_subject(i, &mut s0, &mut s1, &mut s2);
                if samples[i].event == cause {
                    events_buf.push(i);
                }
            }
            if !events_buf.is_empty() {
                contribute(
                    t,
                    &events_buf,
                    s0,
                    &s1,
                    &s2,
                    &mut log_lik,
                    &mut score,
                    &mut info,
                );
            }
        }
        hi = lo;
    }

    // mirror lower triangle, restore time-ascending order
    for j in 0..d {
        for k in (j + 1)..d {
            info[j * d + k] = info[k * d + j];
        }
    }
    jump_times.reverse();
    increments.reverse();
    s0_out.reverse();
    let m = jump_times.len();
    let mut xbar_rev = vec![0.0; m * d];
    for k in 0..m {
        let src = (m - 1 - k) * d;
        xbar_rev[k * d..(k + 1) * d].copy_from_slice(&xbar_out[src..src + d]);
    }

    SweepOutput {
        log_lik,
        score,
        info,
        jump_times,
        increments,
        s0: s0_out,
        xbar: xbar_rev,
    }
}

/// Fit a Cox model treating `cause` as the event and everything else as
/// censored. An empty design matrix reduces to the Nelson–Aalen estimator.
pub fn fit_cox(data: &Dataset, x: &DesignMatrix, cause: u8) -> Result<CoxFit> {
    let n = data.n();
    if x.n != n {
        return Err(Error::validation(format!(
            "design matrix has {} rows but dataset has {n}",
            x.n
        )));
    }
    let n_events = data.samples().iter().filter(|s| s.event == cause).count();
    if n_events == 0 {
        return Err(Error::validation(format!(
            "no events of cause {cause} to fit"
        )));
    }
    let d = x.d;
    let model_name = if cause == 0 {
        "censoring".to_string()
    } else {
        format!("cause {cause}")
    };

    let mut beta = vec![0.0; d];
    let mut out = sweep(data, x, cause, &beta);
    let mut iterations = 0;
    let mut converged = d == 0;

    while !converged && iterations < MAX_ITER {
        let max_score = out.score.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if max_score < SCORE_TOL {
            converged = true;
            break;
        }
        let delta = linalg::solve_spd(&out.info, &out.score, d)
            .ok_or_else(|| Error::convergence(&model_name, "singular information matrix"))?;
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let cand: Vec<f64> = beta
                .iter()
                .zip(&delta)
                .map(|(b, dl)| b + step * dl)
                .collect();
            let cand_out = sweep(data, x, cause, &cand);
            if cand_out.log_lik >= out.log_lik - 1e-12 {
                beta = cand;
                out = cand_out;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        iterations += 1;
        if !accepted {
            break;
        }
        if beta.iter().any(|b| b.abs() > BETA_BOUND) {
            return Err(Error::convergence(
                &model_name,
                "monotone likelihood: coefficients diverging",
            ));
        }
    }
    if converged && d > 0 {
        // the convergence check above may have been skipped on the last lap
        let max_score = out.score.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if max_score >= SCORE_TOL {
            converged = false;
        }
    }

    let baseline = StepFunction::new(out.jump_times, out.increments)?;
    Ok(CoxFit {
        coefficients: beta,
        baseline,
        converged,
        iterations,
        information: out.info,
        cause,
        s0: out.s0,
        xbar: out.xbar,
    })
}

/// Predicted cumulative hazard at a covariate vector, sharing jump times with
/// the baseline.
pub fn predict_cumhazard(fit: &CoxFit, x_row: &[f64]) -> Result<StepFunction> {
    if !fit.converged {
        return Err(Error::convergence("cox", "model did not converge"));
    }
    if x_row.len() != fit.dim() {
        return Err(Error::validation(format!(
            "covariate vector length {} does not match {} coefficients",
            x_row.len(),
            fit.dim()
        )));
    }
    Ok(fit.baseline.scaled(fit.risk_score(x_row)))
}

/// Nelson–Aalen estimator of the cumulative hazard for one event code,
/// computed by direct tally (independent of the Cox machinery).
pub fn nelson_aalen(data: &Dataset, cause: u8) -> StepFunction {
    let samples = data.samples();
    let ord = data.time_order();
    let n = data.n();
    let mut jump_times = Vec::new();
    let mut increments = Vec::new();
    let mut at_risk = 0usize;
    let mut hi = n;
    while hi > 0 {
        let t = samples[ord[hi - 1]].time;
        let mut lo = hi;
        while lo > 0 && samples[ord[lo - 1]].time == t {
            lo -= 1;
        }
        let group = &ord[lo..hi];
        if cause == 0 {
            let censored = group.iter().filter(|&&i| samples[i].event == 0).count();
            at_risk += censored;
            if censored > 0 {
                jump_times.push(t);
                increments.push(censored as f64 / at_risk as f64);
            }
            at_risk += group.len() - censored;
        } else {
            at_risk += group.len();
            let events = group.iter().filter(|&&i| samples[i].event == cause).count();
            if events > 0 {
                jump_times.push(t);
                increments.push(events as f64 / at_risk as f64);
            }
        }
        hi = lo;
    }
    jump_times.reverse();
    increments.reverse();
    StepFunction::new(jump_times, increments).expect("tallied jumps are sorted and finite")
}

/// Per-subject influence contributions of a Cox fit, on the case-weight
/// derivative scale: each quantity is the derivative of the estimate with
/// respect to observation i's weight, so contributions sum to zero across
/// subjects and the estimator-level influence function is n times a row.
#[derive(Debug, Clone)]
pub struct CoxInfluence {
    /// n x d: `I^{-1} U_i` where `U_i` is the martingale score residual.
    pub beta: Vec<Vec<f64>>,
    pub(crate) r: Vec<f64>,
    /// Number of baseline jumps each subject is at risk for.
    pub(crate) cap_idx: Vec<usize>,
    /// Index of the subject's own event among the baseline jumps.
    pub(crate) own_jump: Vec<Option<usize>>,
    /// Cumulative `sum ΔΛ0_k / S0_k` along baseline jumps.
    pub(crate) b_cum: Vec<f64>,
    /// Cumulative `sum x̄_k ΔΛ0_k` (m x d flat).
    pub(crate) h_cum: Vec<f64>,
}

impl CoxInfluence {
    /// Influence contribution of subject `i` on the baseline cumulative hazard
    /// at time `t` (case-weight derivative scale).
    pub fn lambda0_if_at(&self, fit: &CoxFit, i: usize, t: f64) -> f64 {
        let idx_t = fit.baseline.index_at(t);
        let mut v = 0.0;
        if let Some(k) = self.own_jump[i] {
            if k < idx_t {
                v += 1.0 / fit.s0[k];
            }
        }
        let cap = self.cap_idx[i].min(idx_t);
        if cap > 0 {
            v -= self.r[i] * self.b_cum[cap - 1];
        }
        if idx_t > 0 && fit.dim() > 0 {
            let h = &self.h_cum[(idx_t - 1) * fit.dim()..idx_t * fit.dim()];
            v -= linalg::dot(h, &self.beta[i]);
        }
        v
    }

    /// The full per-subject baseline influence curve as a step function.
    pub fn lambda0_if_step(&self, fit: &CoxFit, i: usize) -> StepFunction {
        let times = fit.baseline.jump_times().to_vec();
        let mut prev = 0.0;
        let mut increments = Vec::with_capacity(times.len());
        for &t in &times {
            let v = self.lambda0_if_at(fit, i, t);
            increments.push(v - prev);
            prev = v;
        }
        StepFunction::new(times, increments).expect("baseline jump times are sorted")
    }
}

/// Compute the influence contributions for a converged fit. `data` and `x`
/// must be the inputs the model was fitted on.
pub fn cox_influence(fit: &CoxFit, data: &Dataset, x: &DesignMatrix) -> Result<CoxInfluence> {
    if !fit.converged {
        return Err(Error::convergence("cox", "model did not converge"));
    }
    let n = data.n();
    let d = fit.dim();
    let m = fit.baseline.len();
    if m == 0 {
        // zero-hazard fit: every contribution vanishes
        return Ok(CoxInfluence {
            beta: vec![vec![0.0; d]; n],
            r: vec![1.0; n],
            cap_idx: vec![0; n],
            own_jump: vec![None; n],
            b_cum: Vec::new(),
            h_cum: Vec::new(),
        });
    }
    let samples = data.samples();
    let inv_info = if d > 0 {
        linalg::inverse_spd(&fit.information, d)
            .ok_or_else(|| Error::convergence("cox", "singular information matrix"))?
    } else {
        Vec::new()
    };

    let jump_times = fit.baseline.jump_times();
    let increments = fit.baseline.increments();
    let cum = fit.baseline.cumulative();
    let mut b_cum = Vec::with_capacity(m);
    let mut h_cum = vec![0.0; m * d];
    let mut b_acc = 0.0;
    for k in 0..m {
        b_acc += increments[k] / fit.s0[k];
        b_cum.push(b_acc);
        for j in 0..d {
            let prev = if k > 0 { h_cum[(k - 1) * d + j] } else { 0.0 };
            h_cum[k * d + j] = prev + fit.xbar[k * d + j] * increments[k];
        }
    }

    let mut beta_if = Vec::with_capacity(n);
    let mut r = Vec::with_capacity(n);
    let mut cap_idx = Vec::with_capacity(n);
    let mut own_jump = Vec::with_capacity(n);
    for i in 0..n {
        let s = &samples[i];
        let ri = fit.risk_score(x.row(i));
        let cap = if fit.cause == 0 && s.event != 0 {
            fit.baseline.index_before(s.time)
        } else {
            fit.baseline.index_at(s.time)
        };
        let own = if s.event == fit.cause {
            let k = jump_times.partition_point(|&u| u < s.time);
            debug_assert!(k < m && jump_times[k] == s.time);
            Some(k)
        } else {
            None
        };

        let mut u = vec![0.0; d];
        if d > 0 {
            if let Some(k) = own {
                let xi = x.row(i);
                for j in 0..d {
                    u[j] += xi[j] - fit.xbar[k * d + j];
                }
            }
            if cap > 0 {
                let lam = cum[cap - 1];
                let xi = x.row(i);
                for j in 0..d {
                    u[j] -= ri * (xi[j] * lam - h_cum[(cap - 1) * d + j]);
                }
            }
        }
        beta_if.push(if d > 0 {
            linalg::mat_vec(&inv_info, &u, d)
        } else {
            Vec::new()
        });
        r.push(ri);
        cap_idx.push(cap);
        own_jump.push(own);
    }

    Ok(CoxInfluence {
        beta: beta_if,
        r,
        cap_idx,
        own_jump,
        b_cum,
        h_cum,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{DesignMatrix, ObservedSample};

    fn dataset(rows: &[(f64, u8, u8)]) -> Dataset {
        let samples = rows
            .iter()
            .map(|&(time, event, treatment)| ObservedSample {
                time,
                event,
                treatment,
                covariates: vec![],
            })
            .collect();
        Dataset::new(samples, vec![]).unwrap()
    }

    fn design(rows: Vec<Vec<f64>>) -> DesignMatrix {
        let d = rows.first().map_or(0, Vec::len);
        let names = (0..d).map(|j| format!("X{}", j + 1)).collect();
        DesignMatrix::from_rows(rows, names)
    }

    #[test]
    fn empty_design_reduces_to_nelson_aalen() {
        let data = dataset(&[
            (1.0, 1, 1),
            (1.5, 0, 0),
            (2.0, 1, 0),
            (2.5, 2, 1),
            (3.0, 1, 1),
            (3.5, 0, 0),
        ]);
        let x = design(vec![vec![]; 6]);
        let fit = fit_cox(&data, &x, 1).unwrap();
        assert!(fit.converged);
        let na = nelson_aalen(&data, 1);
        assert_eq!(fit.baseline.jump_times(), na.jump_times());
        for (a, b) in fit.baseline.increments().iter().zip(na.increments()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn nelson_aalen_hand_tally() {
        // events at 1 and 2, censoring at 1.5
        let data = dataset(&[(1.0, 1, 1), (1.5, 0, 0), (2.0, 1, 1), (9.0, 1, 0)]);
        let na = nelson_aalen(&data, 1);
        assert_eq!(na.jump_times(), &[1.0, 2.0, 9.0]);
        assert!((na.increments()[0] - 0.25).abs() < 1e-15);
        assert!((na.increments()[1] - 0.5).abs() < 1e-15);
        assert!((na.increments()[2] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn nelson_aalen_no_events_is_zero() {
        let data = dataset(&[(1.0, 1, 1), (2.0, 0, 0), (3.0, 0, 1)]);
        let na = nelson_aalen(&data, 2);
        assert!(na.is_empty());
        assert_eq!(na.value(10.0), 0.0);
    }

    #[test]
    fn nelson_aalen_tied_events_single_increment() {
        let data = dataset(&[
            (2.0, 1, 1),
            (2.0, 1, 0),
            (2.0, 1, 1),
            (2.0, 0, 0),
            (5.0, 1, 0),
        ]);
        let na = nelson_aalen(&data, 1);
        assert_eq!(na.jump_times()[0], 2.0);
        assert!((na.increments()[0] - 3.0 / 5.0).abs() < 1e-15);
    }

    #[test]
    fn censored_subject_stays_in_risk_set_at_tied_event_time() {
        // event and censoring both at t=2: risk set for the event keeps the
        // censored subject, so the increment is 1/2 rather than 1/1
        let data = dataset(&[(1.0, 1, 1), (2.0, 1, 0), (2.0, 0, 1)]);
        let na = nelson_aalen(&data, 1);
        assert!((na.increments()[1] - 0.5).abs() < 1e-15);

        // censoring hazard at t=2 excludes the subject whose event is at 2
        let nc = nelson_aalen(&data, 0);
        assert_eq!(nc.jump_times(), &[2.0]);
        assert!(
            (nc.increments()[0] - 1.0).abs() < 1e-15,
            "{}",
            nc.increments()[0]
        );
    }

    fn hand_partial_loglik(data: &Dataset, xcol: &[f64], beta: f64) -> f64 {
        // direct Breslow partial likelihood for a single covariate
        let mut ll = 0.0;
        for (i, s) in data.samples().iter().enumerate() {
            if s.event != 1 {
                continue;
            }
            let mut denom = 0.0;
            for (j, sj) in data.samples().iter().enumerate() {
                if sj.time >= s.time {
                    denom += (xcol[j] * beta).exp();
                }
            }
            ll += xcol[i] * beta - denom.ln();
        }
        ll
    }

    #[test]
    fn beta_matches_golden_section_oracle() {
        let data = dataset(&[
            (1.0, 1, 1),
            (2.0, 0, 0),
            (3.0, 1, 0),
            (4.0, 1, 1),
            (5.0, 0, 0),
        ]);
        let xcol = vec![1.0, 0.0, 0.0, 1.0, 0.0];
        let x = design(xcol.iter().map(|&v| vec![v]).collect());
        let fit = fit_cox(&data, &x, 1).unwrap();
        assert!(fit.converged);

        // golden-section maximization of the hand-coded partial likelihood
        let phi = (5.0_f64.sqrt() - 1.0) / 2.0;
        let (mut lo, mut hi) = (-10.0_f64, 10.0_f64);
        let mut c = hi - phi * (hi - lo);
        let mut d = lo + phi * (hi - lo);
        let mut fc = hand_partial_loglik(&data, &xcol, c);
        let mut fd = hand_partial_loglik(&data, &xcol, d);
        for _ in 0..200 {
            if fc > fd {
                hi = d;
                d = c;
                fd = fc;
                c = hi - phi * (hi - lo);
                fc = hand_partial_loglik(&data, &xcol, c);
            } else {
                lo = c;
                c = d;
                fc = fd;
                d = lo + phi * (hi - lo);
                fd = hand_partial_loglik(&data, &xcol, d);
            }
        }
        let oracle = 0.5 * (lo + hi);
        assert!(
            (fit.coefficients[0] - oracle).abs() < 1e-6,
            "{} vs oracle {}",
            fit.coefficients[0],
            oracle
        );
    }

    #[test]
    fn duplicated_dataset_gives_identical_beta() {
        let rows = [
            (1.0, 1, 1),
            (2.0, 0, 0),
            (3.0, 1, 0),
            (4.0, 2, 1),
            (5.0, 1, 1),
            (6.0, 0, 0),
        ];
        let xcol: Vec<f64> = vec![0.2, -0.4, 1.0, 0.0, 0.6, -1.0];
        let data = dataset(&rows);
        let x = design(xcol.iter().map(|&v| vec![v]).collect());
        let fit = fit_cox(&data, &x, 1).unwrap();

        let mut rows2 = rows.to_vec();
        rows2.extend_from_slice(&rows);
        let mut xcol2 = xcol.clone();
        xcol2.extend_from_slice(&xcol);
        let data2 = dataset(&rows2);
        let x2 = design(xcol2.iter().map(|&v| vec![v]).collect());
        let fit2 = fit_cox(&data2, &x2, 1).unwrap();

        assert!(
            (fit.coefficients[0] - fit2.coefficients[0]).abs() < 1e-9,
            "{} vs {}",
            fit.coefficients[0],
            fit2.coefficients[0]
        );
    }

    #[test]
    fn no_events_is_an_error() {
        let data = dataset(&[(1.0, 1, 1), (2.0, 0, 0)]);
        let x = design(vec![vec![]; 2]);
        assert!(fit_cox(&data, &x, 2).is_err());
    }

    #[test]
    fn predict_identity_scaling_and_boundary() {
        let data = dataset(&[
            (1.0, 1, 1),
            (2.0, 0, 0),
            (3.0, 1, 0),
            (4.0, 1, 1),
            (5.0, 0, 0),
        ]);
        let x = design(vec![vec![1.0], vec![0.0], vec![0.0], vec![1.0], vec![0.0]]);
        let fit = fit_cox(&data, &x, 1).unwrap();

        // x' beta = 0 reproduces the baseline
        let at_zero = predict_cumhazard(&fit, &[0.0]).unwrap();
        assert_eq!(at_zero, fit.baseline);

        // scaling by exp(x' beta), recomputed directly
        let at_one = predict_cumhazard(&fit, &[1.0]).unwrap();
        let factor = fit.coefficients[0].exp();
        for (v, b) in at_one.increments().iter().zip(fit.baseline.increments()) {
            assert!((v - b * factor).abs() < 1e-12);
        }

        // before the first event time the cumulative hazard is zero
        assert_eq!(at_one.value(0.5), 0.0);
    }

    #[test]
    fn breslow_mass_identity() {
        // exposure-weighted baseline increments reproduce the event counts
        let rows = [
            (1.0, 1, 1),
            (1.0, 2, 0),
            (2.0, 1, 0),
            (2.0, 1, 1),
            (3.0, 0, 1),
            (4.0, 1, 0),
        ];
        let xcol = [0.3, -0.2, 0.8, 0.1, -0.5, 0.9];
        let data = dataset(&rows);
        let x = design(xcol.iter().map(|&v| vec![v]).collect());
        let fit = fit_cox(&data, &x, 1).unwrap();
        for (k, &t) in fit.baseline.jump_times().iter().enumerate() {
            let mut exposure = 0.0;
            for (i, s) in data.samples().iter().enumerate() {
                if s.time >= t {
                    exposure += fit.risk_score(x.row(i));
                }
            }
            let d_t = data
                .samples()
                .iter()
                .filter(|s| s.time == t && s.event == 1)
                .count() as f64;
            let reproduced = exposure * fit.baseline.increments()[k];
            assert!(
                (reproduced - d_t).abs() < 1e-12,
                "jump {k}: {reproduced} vs {d_t}"
            );
        }
    }

    fn simulated_exponential(n: usize, seed: u64) -> (Dataset, DesignMatrix) {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut samples = Vec::new();
        for i in 0..n {
            let z: f64 = crate::stats::normal_quantile(rng.random::<f64>().max(1e-12));
            let rate = 0.5 * (0.7 * z).exp();
            let t_event = -rng.random::<f64>().max(1e-12).ln() / rate;
            let t_cens = -rng.random::<f64>().max(1e-12).ln() / 0.25;
            let (time, event) = if t_event <= t_cens {
                (t_event, 1)
            } else {
                (t_cens, 0)
            };
            samples.push(ObservedSample {
                time,
                event,
                treatment: u8::from(i % 2 == 0),
                covariates: vec![z],
            });
            rows.push(vec![z]);
        }
        (
            Dataset::new(samples, vec!["Z".into()]).unwrap(),
            design(rows),
        )
    }

    #[test]
    fn influence_contributions_average_to_zero() {
        let (data, x) = simulated_exponential(120, 3);
        let fit = fit_cox(&data, &x, 1).unwrap();
        let inf = cox_influence(&fit, &data, &x).unwrap();

        let mean_beta: f64 = inf.beta.iter().map(|b| b[0]).sum::<f64>() / 120.0;
        assert!(mean_beta.abs() < 1e-10, "beta IF mean {mean_beta}");

        for &t in fit.baseline.jump_times().iter().take(20) {
            let mean: f64 = (0..120).map(|i| inf.lambda0_if_at(&fit, i, t)).sum::<f64>() / 120.0;
            assert!(mean.abs() < 1e-10, "lambda0 IF mean at {t}: {mean}");
        }
    }

    #[test]
    fn baseline_if_se_close_to_bootstrap_se() {
        use rand::Rng;
        use rand::SeedableRng;
        let n = 300;
        let (data, x) = simulated_exponential(n, 11);
        let fit = fit_cox(&data, &x, 1).unwrap();
        let inf = cox_influence(&fit, &data, &x).unwrap();

        // median observed event time
        let mut event_times: Vec<f64> = data
            .samples()
            .iter()
            .filter(|s| s.event == 1)
            .map(|s| s.time)
            .collect();
        event_times.sort_by(f64::total_cmp);
        let t_med = event_times[event_times.len() / 2];

        let if_se: f64 = (0..n)
            .map(|i| inf.lambda0_if_at(&fit, i, t_med).powi(2))
            .sum::<f64>()
            .sqrt();

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let mut boots = Vec::new();
        for _ in 0..200 {
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let samples: Vec<ObservedSample> =
                idx.iter().map(|&i| data.samples()[i].clone()).collect();
            let rows: Vec<Vec<f64>> = idx.iter().map(|&i| x.row(i).to_vec()).collect();
            let bd = Dataset::new(samples, vec!["Z".into()]).unwrap();
            let bx = design(rows);
            if let Ok(bfit) = fit_cox(&bd, &bx, 1) {
                if bfit.converged {
                    boots.push(bfit.baseline.value(t_med));
                }
            }
        }
        let boot_se = crate::stats::sample_sd(&boots);
        let ratio = if_se / boot_se;
        assert!(
            (0.85..=1.15).contains(&ratio),
            "IF SE {if_se} vs bootstrap SE {boot_se} (ratio {ratio})"
        );
    }
}
