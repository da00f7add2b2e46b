//! Logistic regression for the treatment propensity, fitted by
//! Newton–Raphson, with score-based influence contributions.

use crate::dataset::DesignMatrix;
use crate::error::{Error, Result};
use crate::linalg;

const SCORE_TOL: f64 = 1e-8;
const MAX_ITER: usize = 25;
const BETA_BOUND: f64 = 30.0;

/// A fitted propensity model. Coefficients include the intercept as the
/// first entry; `fisher_information` is the total (not per-subject)
/// information at the optimum.
#[derive(Debug, Clone)]
pub struct LogisticFit {
    pub coefficients: Vec<f64>,
    /// (d+1) x (d+1) row-major.
    pub fisher_information: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl LogisticFit {
    pub fn dim(&self) -> usize {
        self.coefficients.len()
    }
}

#[inline]
fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Design row with intercept prepended.
fn extended_row(x: &DesignMatrix, i: usize, out: &mut [f64]) {
    out[0] = 1.0;
    out[1..].copy_from_slice(x.row(i));
}

pub fn fit_logistic(x: &DesignMatrix, a: &[u8]) -> Result<LogisticFit> {
    fit_logistic_weighted(x, a, None)
}

/// Weighted maximum likelihood; `weights` of `None` means unit weights.
/// Exposed within the crate so tests can verify influence contributions by
/// finite-difference reweighting.
pub(crate) fn fit_logistic_weighted(
    x: &DesignMatrix,
    a: &[u8],
    weights: Option<&[f64]>,
) -> Result<LogisticFit> {
    let n = x.n;
    if a.len() != n {
        return Err(Error::validation(format!(
            "treatment vector length {} does not match {} design rows",
            a.len(),
            n
        )));
    }
    if n == 0 {
        return Err(Error::validation("cannot fit logistic model on empty data"));
    }
    if a.iter().all(|&v| v == 1) || a.iter().all(|&v| v == 0) {
        return Err(Error::validation("treatment model needs both arms present"));
    }
    let p = x.d + 1;
    let mut beta = vec![0.0; p];
    let mut row = vec![0.0; p];
    let weight = |i: usize| weights.map_or(1.0, |w| w[i]);

    let log_lik = |beta: &[f64]| -> f64 {
        let mut ll = 0.0;
        let mut row = vec![0.0; p];
        for i in 0..n {
            extended_row(x, i, &mut row);
            let eta = linalg::dot(&row, &beta);
            // log(1+e^eta) computed stably
            let log1p_exp = if eta > 0.0 {
                eta + (-eta).exp().ln_1p()
            } else {
                eta.exp().ln_1p()
            };
            ll += weight(i) * (f64::from(a[i]) * eta - log1p_exp);
        }
        ll
    };

    let mut ll = log_lik(&beta);
    let mut converged = false;
    let mut iterations = 0;
    let mut info = vec![0.0; p * p];

    for _ in 0..MAX_ITER {
        let mut score = vec![0.0; p];
        info.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            extended_row(x, i, &mut row);
            let pi = logistic(linalg::dot(&row, &beta));
            let w = weight(i);
            let resid = w * (f64::from(a[i]) - pi);
            let curv = w * pi * (1.0 - pi);
            for j in 0..p {
                score[j] += row[j] * resid;
                for k in 0..=j {
                    info[j * p + k] += curv * row[j] * row[k];
                }
            }
        }
        for j in 0..p {
            for k in (j + 1)..p {
                info[j * p + k] = info[k * p + j];
            }
        }
        let max_score = score.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if max_score < SCORE_TOL {
            converged = true;
            break;
        }
        let delta = linalg::solve_spd(&info, &score, p)
            .ok_or_else(|| Error::convergence("treatment", "singular Fisher information"))?;
        // step-halving on likelihood decrease
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let cand: Vec<f64> = beta.iter().zip(&delta).map(|(b, d)| b + step * d).collect();
            let cand_ll = log_lik(&cand);
            if cand_ll >= ll - 1e-12 {
                beta = cand;
                ll = cand_ll;
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
                "treatment",
                "separation detected: coefficients diverging",
            ));
        }
    }

    Ok(LogisticFit {
        coefficients: beta,
        fisher_information: info,
        converged,
        iterations,
    })
}

/// Predicted propensities, optionally clipped to `[lo, hi]` as a positivity
/// guard.
pub fn predict_propensity(
    fit: &LogisticFit,
    x: &DesignMatrix,
    truncation: Option<(f64, f64)>,
) -> Result<Vec<f64>> {
    if !fit.converged {
        return Err(Error::convergence("treatment", "model did not converge"));
    }
    if x.d + 1 != fit.dim() {
        return Err(Error::validation(format!(
            "design has {} columns but fit expects {}",
            x.d,
            fit.dim() - 1
        )));
    }
    if let Some((lo, hi)) = truncation {
        if !(0.0 <= lo && lo < hi && hi <= 1.0) {
            return Err(Error::validation(format!(
                "propensity truncation bounds must satisfy 0 <= lo < hi <= 1, got [{lo}, {hi}]"
            )));
        }
    }
    let mut row = vec![0.0; fit.dim()];
    let mut out = Vec::with_capacity(x.n);
    for i in 0..x.n {
        extended_row(x, i, &mut row);
        let mut pi = logistic(linalg::dot(&row, &fit.coefficients));
        if let Some((lo, hi)) = truncation {
            pi = pi.clamp(lo, hi);
        }
        out.push(pi);
    }
    Ok(out)
}

/// Per-subject influence contributions for the coefficient estimates: row i is
/// `I^{-1} x_i (A_i - pi_i)`, the derivative of the estimate with respect to
/// observation i's case weight. Column sums vanish at the optimum.
pub fn logistic_influence(fit: &LogisticFit, x: &DesignMatrix, a: &[u8]) -> Result<Vec<Vec<f64>>> {
    if !fit.converged {
        return Err(Error::convergence("treatment", "model did not converge"));
    }
    let p = fit.dim();
    let inv = linalg::inverse_spd(&fit.fisher_information, p)
        .ok_or_else(|| Error::convergence("treatment", "singular Fisher information"))?;
    let mut row = vec![0.0; p];
    let mut out = Vec::with_capacity(x.n);
    for i in 0..x.n {
        extended_row(x, i, &mut row);
        let pi = logistic(linalg::dot(&row, &fit.coefficients));
        let resid = f64::from(a[i]) - pi;
        let mut contrib = linalg::mat_vec(&inv, &row, p);
        contrib.iter_mut().for_each(|v| *v *= resid);
        out.push(contrib);
    }
    Ok(out)
}
