//! Simulation laboratory: the Cox–Weibull data-generating mechanism, the
//! misspecification scenarios, the Monte Carlo truth oracle, and the
//! bias/coverage experiment runner.
//!
//! Twelve auxiliary covariates are drawn per subject (six standard normal,
//! six Bernoulli(1/2)); treatment follows a logistic model and three latent
//! times (event of interest, competing event, censoring) follow Cox–Weibull
//! models by inverse transform. The observed time is the smallest latent
//! time, with events winning ties against censoring.
//!
//! Replicates use counter-based RNG streams (one ChaCha stream per
//! replicate), so a scenario is bit-reproducible no matter how many worker
//! threads run it.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::ate::{
    estimate_ate, AteOptions, Estimator, PropensitySource, VarianceChoice, VarianceVariant,
};
use crate::dataset::{Dataset, FormulaSpec, ObservedSample, TermSpec};
use crate::error::{Error, Result};
use crate::exec;
use crate::stats::{sample_sd, KahanSum};

pub const N_CONTINUOUS: usize = 6;
pub const N_BINARY: usize = 6;
pub const N_COVARIATES: usize = N_CONTINUOUS + N_BINARY;

/// Coefficients of one linear predictor over the twelve covariates: six
/// linear terms for the continuous covariates X1..X6, six for the binary
/// covariates X7..X12, six quadratic terms for the continuous covariates,
/// plus an intercept.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefSet {
    #[serde(default)]
    pub intercept: f64,
    #[serde(default = "zero6")]
    pub linear: [f64; 6],
    #[serde(default = "zero6")]
    pub binary: [f64; 6],
    #[serde(default = "zero6")]
    pub square: [f64; 6],
}

fn zero6() -> [f64; 6] {
    [0.0; 6]
}

impl Default for CoefSet {
    fn default() -> Self {
        CoefSet {
            intercept: 0.0,
            linear: [0.0; 6],
            binary: [0.0; 6],
            square: [0.0; 6],
        }
    }
}

impl CoefSet {
    /// Evaluate on a covariate vector laid out as X1..X6 continuous then
    /// X7..X12 binary.
    pub fn linear_predictor(&self, covariates: &[f64]) -> f64 {
        debug_assert_eq!(covariates.len(), N_COVARIATES);
        let mut lp = self.intercept;
        for j in 0..N_CONTINUOUS {
            let x = covariates[j];
            lp += self.linear[j] * x + self.square[j] * x * x;
        }
        for j in 0..N_BINARY {
            lp += self.binary[j] * covariates[N_CONTINUOUS + j];
        }
        lp
    }
}

/// One Cox–Weibull latent-time model: hazard
/// `shape * scale * t^(shape-1) * exp(lp + treatment_effect * a)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeibullHazard {
    pub shape: f64,
    pub scale: f64,
    #[serde(default)]
    pub coefs: CoefSet,
    #[serde(default)]
    pub treatment_effect: f64,
}

impl WeibullHazard {
    /// Inverse-transform draw: `T = (-ln u / (scale exp(lp)))^(1/shape)`.
    pub fn draw(&self, u: f64, lp: f64) -> f64 {
        let u = u.max(f64::MIN_POSITIVE);
        (-u.ln() / (self.scale * lp.exp())).powf(1.0 / self.shape)
    }

    fn validate(&self, label: &str) -> Result<()> {
        if !(self.shape > 0.0) || !(self.scale > 0.0) {
            return Err(Error::validation(format!(
                "{label}: Weibull shape and scale must be positive"
            )));
        }
        Ok(())
    }
}

/// The full data-generating mechanism.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgmSpec {
    pub seed: u64,
    pub treatment: CoefSet,
    pub cause1: WeibullHazard,
    pub cause2: WeibullHazard,
    pub censoring: WeibullHazard,
}

impl Default for DgmSpec {
    /// The documented default: moderate confounding through X4..X6 and
    /// X10..X12 with quadratic effects of X4..X6, Weibull shape 2 for all
    /// three latent times, no treatment effect on any hazard (null world),
    /// and roughly 30% censoring by the default horizon 10.
    fn default() -> Self {
        DgmSpec {
            seed: 20240,
            treatment: CoefSet {
                intercept: -0.15,
                linear: [0.0, 0.0, 0.0, 0.4, -0.4, 0.4],
                binary: [0.0, 0.0, 0.0, 0.4, -0.4, 0.4],
                square: [0.0, 0.0, 0.0, 0.15, -0.15, 0.15],
            },
            cause1: WeibullHazard {
                shape: 2.0,
                scale: 0.004,
                coefs: CoefSet {
                    intercept: 0.0,
                    linear: [0.0, 0.0, 0.0, 0.3, -0.3, 0.3],
                    binary: [0.0, 0.0, 0.0, 0.3, -0.3, 0.3],
                    square: [0.0, 0.0, 0.0, 0.15, -0.15, 0.15],
                },
                treatment_effect: 0.0,
            },
            cause2: WeibullHazard {
                shape: 2.0,
                scale: 0.002,
                coefs: CoefSet {
                    intercept: 0.0,
                    linear: [0.0, 0.0, 0.0, -0.3, 0.3, 0.3],
                    binary: [0.0, 0.0, 0.0, 0.3, 0.3, -0.3],
                    square: [0.0, 0.0, 0.0, -0.15, 0.15, 0.15],
                },
                treatment_effect: 0.0,
            },
            censoring: WeibullHazard {
                shape: 2.0,
                scale: 0.0045,
                coefs: CoefSet {
                    intercept: 0.0,
                    linear: [0.15, -0.15, 0.15, 0.0, 0.0, 0.0],
                    binary: [0.15, -0.15, 0.15, 0.0, 0.0, 0.0],
                    square: [0.1, -0.1, 0.1, 0.0, 0.0, 0.0],
                },
                treatment_effect: 0.0,
            },
        }
    }
}

impl DgmSpec {
    pub fn validate(&self) -> Result<()> {
        self.cause1.validate("cause1")?;
        self.cause2.validate("cause2")?;
        self.censoring.validate("censoring")?;
        Ok(())
    }

    /// Covariate names as used in formulas and CSV headers.
    pub fn covariate_names() -> Vec<String> {
        (1..=N_COVARIATES).map(|j| format!("X{j}")).collect()
    }
}

fn draw_covariates(rng: &mut ChaCha8Rng, out: &mut [f64]) {
    for slot in out.iter_mut().take(N_CONTINUOUS) {
        *slot = StandardNormal.sample(rng);
    }
    for slot in out.iter_mut().skip(N_CONTINUOUS) {
        *slot = f64::from(rng.random::<f64>() < 0.5);
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Draw one subject. Returns the sample plus, for oracle use, the shared
/// uniforms for the two event-time models.
fn draw_subject(spec: &DgmSpec, rng: &mut ChaCha8Rng, covariates: &mut Vec<f64>) -> ObservedSample {
    covariates.resize(N_COVARIATES, 0.0);
    draw_covariates(rng, covariates);
    let pi = logistic(spec.treatment.linear_predictor(covariates));
    let a = u8::from(rng.random::<f64>() < pi);
    let af = f64::from(a);
    let u1: f64 = rng.random();
    let u2: f64 = rng.random();
    let uc: f64 = rng.random();
    let t1 = spec.cause1.draw(
        u1,
        spec.cause1.coefs.linear_predictor(covariates) + spec.cause1.treatment_effect * af,
    );
    let t2 = spec.cause2.draw(
        u2,
        spec.cause2.coefs.linear_predictor(covariates) + spec.cause2.treatment_effect * af,
    );
    let tc = spec.censoring.draw(
        uc,
        spec.censoring.coefs.linear_predictor(covariates) + spec.censoring.treatment_effect * af,
    );
    // observed time is the smallest latent time; events beat censoring at ties
    let (time, event) = if t1 <= t2 && t1 <= tc {
        (t1, 1)
    } else if t2 <= tc {
        (t2, 2)
    } else {
        (tc, 0)
    };
    ObservedSample {
        time,
        event,
        treatment: a,
        covariates: covariates.clone(),
    }
}

fn simulate_with_rng(spec: &DgmSpec, n: usize, rng: &mut ChaCha8Rng) -> Result<Dataset> {
    let mut covariates = Vec::with_capacity(N_COVARIATES);
    let samples: Vec<ObservedSample> = (0..n)
        .map(|_| draw_subject(spec, rng, &mut covariates))
        .collect();
    Dataset::new(samples, DgmSpec::covariate_names())
}

/// Simulate a dataset from the mechanism (RNG stream 0 of the spec's seed).
pub fn simulate_dataset(spec: &DgmSpec, n: usize) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(0);
    simulate_with_rng(spec, n, &mut rng)
}

/// Simulate the dataset of one replicate (RNG stream `replicate + 1`).
pub fn simulate_replicate(spec: &DgmSpec, n: usize, replicate: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(replicate + 1);
    simulate_with_rng(spec, n, &mut rng)
}

/// Monte Carlo estimate of the true risk difference at `tau`: both potential
/// outcomes are generated per draw (common uniforms, no censoring) and the
/// mean difference is returned.
pub fn true_ate_oracle(spec: &DgmSpec, tau: f64, samples: usize) -> Result<f64> {
    spec.validate()?;
    if samples < 100_000 {
        return Err(Error::validation(format!(
            "oracle sample size {samples} is too small (need at least 1e5)"
        )));
    }
    const BLOCK: usize = 1 << 16;
    const ORACLE_STREAM_BASE: u64 = 1 << 32;
    let n_blocks = samples.div_ceil(BLOCK);
    let block_sums: Vec<f64> = exec::map_indexed(n_blocks, |b| {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(ORACLE_STREAM_BASE + b as u64);
        let lo = b * BLOCK;
        let hi = (lo + BLOCK).min(samples);
        let mut covariates = vec![0.0; N_COVARIATES];
        let mut acc = KahanSum::new();
        for _ in lo..hi {
            draw_covariates(&mut rng, &mut covariates);
            let u1: f64 = rng.random();
            let u2: f64 = rng.random();
            let lp1 = spec.cause1.coefs.linear_predictor(&covariates);
            let lp2 = spec.cause2.coefs.linear_predictor(&covariates);
            let mut y = [0.0_f64; 2];
            for (a, slot) in y.iter_mut().enumerate() {
                let af = a as f64;
                let t1 = spec
                    .cause1
                    .draw(u1, lp1 + spec.cause1.treatment_effect * af);
                let t2 = spec
                    .cause2
                    .draw(u2, lp2 + spec.cause2.treatment_effect * af);
                *slot = f64::from(t1 <= tau && t1 <= t2);
            }
            acc.add(y[1] - y[0]);
        }
        acc.total()
    });
    let mut total = KahanSum::new();
    for s in block_sums {
        total.add(s);
    }
    Ok(total.total() / samples as f64)
}

/// How a working-model formula is degraded to simulate misspecification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DegradeMode {
    /// Remove X4..X6 and X10..X12 (and, as always, every quadratic term).
    DropCovariates,
    /// Remove the quadratic terms only.
    DropSquares,
    /// Alias for the union of the two (identical to `DropCovariates`).
    Both,
}

/// The correctly specified selection: all twelve covariates, with quadratic
/// expansion of the six continuous ones.
pub fn correct_terms() -> Vec<TermSpec> {
    let mut terms = Vec::with_capacity(N_COVARIATES);
    for j in 1..=N_CONTINUOUS {
        terms.push(TermSpec::with_square(format!("X{j}")));
    }
    for j in (N_CONTINUOUS + 1)..=N_COVARIATES {
        terms.push(TermSpec::linear(format!("X{j}")));
    }
    terms
}

pub fn correct_formulas() -> FormulaSpec {
    FormulaSpec::uniform(correct_terms())
}

/// Deterministic removal: quadratic terms always go; in the covariate modes
/// X4..X6 and X10..X12 go as well.
pub fn degrade_formula(terms: &[TermSpec], mode: DegradeMode) -> Vec<TermSpec> {
    let drop_covariates = matches!(mode, DegradeMode::DropCovariates | DegradeMode::Both);
    const DROPPED: [&str; 6] = ["X4", "X5", "X6", "X10", "X11", "X12"];
    terms
        .iter()
        .filter(|t| !(drop_covariates && DROPPED.contains(&t.name.as_str())))
        .map(|t| TermSpec::linear(t.name.clone()))
        .collect()
}

/// The four working-model configurations of the robustness experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MisSpec {
    AllCorrect,
    /// Both cause-specific outcome models degraded (covariates + squares).
    Outcome,
    /// Treatment model degraded (covariates + squares).
    Treatment,
    /// Censoring model degraded (squares only).
    Censoring,
}

impl MisSpec {
    pub const ALL: [MisSpec; 4] = [
        MisSpec::AllCorrect,
        MisSpec::Outcome,
        MisSpec::Treatment,
        MisSpec::Censoring,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            MisSpec::AllCorrect => "all-correct",
            MisSpec::Outcome => "outcome-misspecified",
            MisSpec::Treatment => "treatment-misspecified",
            MisSpec::Censoring => "censoring-misspecified",
        }
    }
}

pub fn scenario_formulas(mis: MisSpec) -> FormulaSpec {
    let correct = correct_terms();
    let mut spec = FormulaSpec::uniform(correct.clone());
    match mis {
        MisSpec::AllCorrect => {}
        MisSpec::Outcome => {
            spec.outcome1 = degrade_formula(&correct, DegradeMode::Both);
            spec.outcome2 = degrade_formula(&correct, DegradeMode::Both);
        }
        MisSpec::Treatment => {
            spec.treatment = degrade_formula(&correct, DegradeMode::Both);
        }
        MisSpec::Censoring => {
            spec.censoring = degrade_formula(&correct, DegradeMode::DropSquares);
        }
    }
    spec
}

/// A complete experiment description.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioSpec {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub dgm: DgmSpec,
    pub n: usize,
    pub replicates: usize,
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// Working-model selections; defaults to the correctly specified set.
    #[serde(default = "correct_formulas")]
    pub formulas: FormulaSpec,
    /// Convenience switch that overrides `formulas` when present.
    #[serde(default)]
    pub misspecification: Option<MisSpec>,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<String>,
    /// Known truth; when absent the oracle runs.
    #[serde(default)]
    pub true_ate: Option<f64>,
    #[serde(default = "default_oracle_samples")]
    pub oracle_samples: usize,
    /// Produce both variance variants for the doubly robust estimator.
    #[serde(default)]
    pub both_variants: bool,
    #[serde(default)]
    pub truncate_propensity: Option<(f64, f64)>,
}

fn default_name() -> String {
    "scenario".to_string()
}

fn default_tau() -> f64 {
    10.0
}

fn default_estimators() -> Vec<String> {
    vec!["all".to_string()]
}

fn default_oracle_samples() -> usize {
    1_000_000
}

impl ScenarioSpec {
    pub fn from_toml_str(text: &str) -> Result<ScenarioSpec> {
        let spec: ScenarioSpec =
            toml::from_str(text).map_err(|e| Error::validation(format!("scenario config: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::validation("replicates must be at least 1"));
        }
        if self.n < 2 {
            return Err(Error::validation("n must be at least 2"));
        }
        if !(self.tau > 0.0) {
            return Err(Error::validation("tau must be positive"));
        }
        self.dgm.validate()?;
        let _ = self.parsed_estimators()?;
        Ok(())
    }

    pub fn parsed_estimators(&self) -> Result<Vec<Estimator>> {
        parse_estimators(&self.estimators)
    }

    pub fn effective_formulas(&self) -> FormulaSpec {
        match self.misspecification {
            Some(mis) => scenario_formulas(mis),
            None => self.formulas.clone(),
        }
    }
}

pub fn parse_estimators(names: &[String]) -> Result<Vec<Estimator>> {
    let mut out = Vec::new();
    for name in names {
        if name == "all" {
            for e in Estimator::ALL {
                if !out.contains(&e) {
                    out.push(e);
                }
            }
        } else {
            let e: Estimator = name.parse()?;
            if !out.contains(&e) {
                out.push(e);
            }
        }
    }
    if out.is_empty() {
        return Err(Error::validation("no estimators requested"));
    }
    Ok(out)
}

/// Aggregated performance of one (estimator, variance-variant) pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorSummary {
    pub estimator: Estimator,
    pub variance: VarianceVariant,
    pub mean_bias: f64,
    pub sd: f64,
    pub mean_se: f64,
    pub coverage: f64,
    /// Monte Carlo standard error of the bias estimate.
    pub mc_se: f64,
    pub replicates_used: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimSummary {
    pub name: String,
    pub n: usize,
    pub replicates: usize,
    pub tau: f64,
    pub seed: u64,
    pub true_ate: f64,
    pub rows: Vec<EstimatorSummary>,
    pub positivity_failures: usize,
    pub convergence_failures: usize,
    pub other_failures: usize,
}

impl SimSummary {
    /// One CSV row per (estimator, variance) pair.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "scenario,estimator,variance,n,replicates,tau,true_ate,mean_bias,sd,mean_se,\
             coverage,mc_se,replicates_used\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                self.name,
                r.estimator.name(),
                r.variance.name(),
                self.n,
                self.replicates,
                self.tau,
                self.true_ate,
                r.mean_bias,
                r.sd,
                r.mean_se,
                r.coverage,
                r.mc_se,
                r.replicates_used,
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }

    pub fn row(
        &self,
        estimator: Estimator,
        variance: VarianceVariant,
    ) -> Option<&EstimatorSummary> {
        self.rows
            .iter()
            .find(|r| r.estimator == estimator && r.variance == variance)
    }
}

struct ReplicateRow {
    estimator: Estimator,
    variance: VarianceVariant,
    ate: f64,
    se: f64,
    covered: bool,
}

enum ReplicateOutcome {
    Ok(Vec<ReplicateRow>),
    Positivity,
    Convergence,
    Other,
}

/// Run every replicate of a scenario and aggregate. Reproducible bit-for-bit
/// for a given spec regardless of the worker count.
pub fn run_scenario(spec: &ScenarioSpec) -> Result<SimSummary> {
    run_scenario_with(spec, None)
}

/// Like [`run_scenario`], invoking `progress` after each completed replicate
/// (from worker threads; completion order is not deterministic, the summary
/// is).
pub fn run_scenario_with(
    spec: &ScenarioSpec,
    progress: Option<&(dyn Fn(usize) + Sync)>,
) -> Result<SimSummary> {
    spec.validate()?;
    let estimators = spec.parsed_estimators()?;
    let formulas = spec.effective_formulas();
    let truth = match spec.true_ate {
        Some(v) => v,
        None => true_ate_oracle(&spec.dgm, spec.tau, spec.oracle_samples)?,
    };
    let options = AteOptions {
        variance: if spec.both_variants {
            VarianceChoice::Both
        } else {
            VarianceChoice::Tilde
        },
        truncate_propensity: spec.truncate_propensity,
        propensity: PropensitySource::Fitted,
        ..AteOptions::default()
    };

    let outcomes: Vec<ReplicateOutcome> = exec::map_indexed(spec.replicates, |r| {
        let outcome = (|| {
            let data = match simulate_replicate(&spec.dgm, spec.n, r as u64) {
                Ok(d) => d,
                Err(_) => return ReplicateOutcome::Other,
            };
            match estimate_ate(&data, &formulas, spec.tau, &estimators, &options) {
                Ok(output) => ReplicateOutcome::Ok(
                    output
                        .estimates
                        .iter()
                        .map(|e| ReplicateRow {
                            estimator: e.estimator,
                            variance: e.variance,
                            ate: e.ate,
                            se: e.se,
                            covered: e.ci_lower <= truth && truth <= e.ci_upper,
                        })
                        .collect(),
                ),
                Err(Error::Positivity(_)) => ReplicateOutcome::Positivity,
                Err(Error::Convergence { .. }) | Err(Error::Numeric(_)) => {
                    ReplicateOutcome::Convergence
                }
                Err(_) => ReplicateOutcome::Other,
            }
        })();
        if let Some(cb) = progress {
            cb(r);
        }
        outcome
    });

    let mut positivity_failures = 0;
    let mut convergence_failures = 0;
    let mut other_failures = 0;
    let mut keys: Vec<(Estimator, VarianceVariant)> = Vec::new();
    let mut estimates: Vec<Vec<f64>> = Vec::new();
    let mut ses: Vec<Vec<f64>> = Vec::new();
    let mut covered: Vec<usize> = Vec::new();
    for outcome in &outcomes {
        match outcome {
            ReplicateOutcome::Ok(rows) => {
                for row in rows {
                    let key = (row.estimator, row.variance);
                    let idx = match keys.iter().position(|k| *k == key) {
                        Some(i) => i,
                        None => {
                            keys.push(key);
                            estimates.push(Vec::new());
                            ses.push(Vec::new());
                            covered.push(0);
                            keys.len() - 1
                        }
                    };
                    estimates[idx].push(row.ate);
                    ses[idx].push(row.se);
                    covered[idx] += usize::from(row.covered);
                }
            }
            ReplicateOutcome::Positivity => positivity_failures += 1,
            ReplicateOutcome::Convergence => convergence_failures += 1,
            ReplicateOutcome::Other => other_failures += 1,
        }
    }

    let rows = keys
        .iter()
        .enumerate()
        .map(|(idx, &(estimator, variance))| {
            let used = estimates[idx].len();
            let mean = crate::stats::mean(&estimates[idx]);
            let sd = sample_sd(&estimates[idx]);
            EstimatorSummary {
                estimator,
                variance,
                mean_bias: mean - truth,
                sd,
                mean_se: crate::stats::mean(&ses[idx]),
                coverage: if used > 0 {
                    covered[idx] as f64 / used as f64
                } else {
                    0.0
                },
                mc_se: if used > 1 {
                    sd / (used as f64).sqrt()
                } else {
                    f64::NAN
                },
                replicates_used: used,
            }
        })
        .collect();

    Ok(SimSummary {
        name: spec.name.clone(),
        n: spec.n,
        replicates: spec.replicates,
        tau: spec.tau,
        seed: spec.dgm.seed,
        true_ate: truth,
        rows,
        positivity_failures,
        convergence_failures,
        other_failures,
    })
}
