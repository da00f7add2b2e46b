//! Command-line front end: `ate` estimates treatment effects on user data,
//! `simulate` runs scenario experiments, `coverage` sweeps sample sizes for
//! confidence-interval calibration, and `risk` emits pointwise absolute-risk
//! curves. All outputs are machine-readable (JSON or CSV) and byte-stable for
//! identical inputs.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use riskdiff_core::ate::{
    estimate_ate, AteOptions, AteOutput, Estimator, PropensitySource, VarianceChoice,
};
use riskdiff_core::dataset::{load_csv, ColumnSchema, Dataset, FormulaSpec, TermSpec};
use riskdiff_core::error::Error;
use riskdiff_core::report::{risk_curve_points, risk_points_csv};
use riskdiff_core::risk::RiskMode;
use riskdiff_core::simlab::{run_scenario_with, ScenarioSpec, SimSummary};

#[derive(Parser)]
#[command(
    name = "riskdiff",
    version,
    about = "Treatment-effect estimation on horizon risks from right-censored competing-risks data"
)]
struct Cli {
    /// Worker threads (overrides the RISKDIFF_WORKERS environment variable).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate risk differences at a horizon from a CSV dataset.
    Ate(AteArgs),
    /// Run a simulation scenario from a TOML specification.
    Simulate(SimulateArgs),
    /// Coverage sweep over sample sizes with correctly specified models.
    Coverage(CoverageArgs),
    /// Pointwise arm-wise absolute risks on a grid of horizons.
    Risk(RiskArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum VarianceArg {
    Tilde,
    PartialPhi,
    Both,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    ProductLimit,
    Exponential,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Input CSV with header row.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Column holding follow-up times.
    #[arg(long)]
    time_col: Option<String>,
    /// Column holding event codes (0 censored, 1 event, 2 competing).
    #[arg(long)]
    event_col: Option<String>,
    /// Column holding the binary treatment.
    #[arg(long)]
    treatment_col: Option<String>,
    /// Outcome-model covariates, e.g. "X1,X2^2" (default: all covariates).
    #[arg(long)]
    outcome_formula: Option<String>,
    /// Cause-2 outcome covariates (default: same as --outcome-formula).
    #[arg(long)]
    outcome2_formula: Option<String>,
    /// Treatment-model covariates (default: all covariates).
    #[arg(long)]
    treatment_formula: Option<String>,
    /// Censoring-model covariates (default: all covariates).
    #[arg(long)]
    censoring_formula: Option<String>,
    /// Clip propensities into `[lo,hi]`, e.g. "0.01,0.99".
    #[arg(long)]
    truncate_propensity: Option<String>,
    /// Fit outcome and censoring models separately per arm.
    #[arg(long)]
    stratified: bool,
    /// Risk composition mode.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Confidence level for Wald intervals.
    #[arg(long)]
    level: Option<f64>,
}

#[derive(Args)]
struct AteArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Horizon tau.
    #[arg(long)]
    tau: Option<f64>,
    /// Estimators: any of g-formula, iptw-ipcw, aiptw-ipcw, iptw-aipcw,
    /// aiptw-aipcw, or all (comma separated or repeated).
    #[arg(long = "estimator", value_delimiter = ',')]
    estimators: Vec<String>,
    /// Variance variant for aiptw-aipcw.
    #[arg(long, value_enum)]
    variance: Option<VarianceArg>,
    /// RNG seed (only simulation commands draw random numbers).
    #[arg(long)]
    seed: Option<u64>,
    /// Output file (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// TOML config supplying values for flags that were not passed.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario specification (TOML).
    #[arg(long)]
    scenario: PathBuf,
    /// Override the scenario's RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output prefix; writes `<prefix>.csv` and `<prefix>.json`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Progress batch size (log line per completed batch of replicates).
    #[arg(long, default_value_t = 50)]
    progress_every: usize,
}

#[derive(Args)]
struct CoverageArgs {
    /// Sample sizes, comma separated.
    #[arg(long = "n", value_delimiter = ',', default_values_t = [100usize, 500, 1000])]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 1000)]
    replicates: usize,
    #[arg(long, default_value_t = 10.0)]
    tau: f64,
    #[arg(long)]
    seed: Option<u64>,
    /// Estimators to track.
    #[arg(long = "estimator", value_delimiter = ',')]
    estimators: Vec<String>,
    /// Output prefix; writes `<prefix>.csv` and `<prefix>.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RiskArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Grid of horizons, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    grid: Vec<f64>,
    /// Estimators: g-formula, aiptw-aipcw or all.
    #[arg(long = "estimator", value_delimiter = ',')]
    estimators: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// TOML counterpart of the `ate` flags; flags win wherever both are present.
#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct AteFileConfig {
    data: Option<PathBuf>,
    tau: Option<f64>,
    estimators: Option<Vec<String>>,
    time_col: Option<String>,
    event_col: Option<String>,
    treatment_col: Option<String>,
    outcome_formula: Option<String>,
    outcome2_formula: Option<String>,
    treatment_formula: Option<String>,
    censoring_formula: Option<String>,
    truncate_propensity: Option<String>,
    stratified: Option<bool>,
    mode: Option<String>,
    variance: Option<String>,
    level: Option<f64>,
    format: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let workers = cli.workers.or_else(|| {
        std::env::var("RISKDIFF_WORKERS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(w) = workers {
        riskdiff_core::exec::configure_workers(w);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Ate(args) => cmd_ate(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Coverage(args) => cmd_coverage(args),
        Command::Risk(args) => cmd_risk(args),
    }
}

fn parse_terms(text: &str) -> Result<Vec<TermSpec>, Error> {
    let mut terms = Vec::new();
    for raw in text.split(',') {
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        if let Some(name) = raw.strip_suffix("^2") {
            // merge with a preceding plain selection of the same covariate
            if let Some(prev) = terms.iter_mut().find(|t: &&mut TermSpec| t.name == name) {
                prev.squared = true;
            } else {
                terms.push(TermSpec::with_square(name));
            }
        } else {
            terms.push(TermSpec::linear(raw));
        }
    }
    Ok(terms)
}

fn parse_truncation(text: &str) -> Result<(f64, f64), Error> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 2 {
        return Err(Error::validation(format!(
            "--truncate-propensity expects lo,hi but got `{text}`"
        )));
    }
    let lo: f64 = parts[0]
        .trim()
        .parse()
        .map_err(|_| Error::validation(format!("cannot parse truncation bound `{}`", parts[0])))?;
    let hi: f64 = parts[1]
        .trim()
        .parse()
        .map_err(|_| Error::validation(format!("cannot parse truncation bound `{}`", parts[1])))?;
    Ok((lo, hi))
}

fn parse_estimator_list(names: &[String]) -> Result<Vec<Estimator>, Error> {
    if names.is_empty() {
        return Ok(Estimator::ALL.to_vec());
    }
    riskdiff_core::simlab::parse_estimators(names)
}

struct LoadedData {
    dataset: Dataset,
    formulas: FormulaSpec,
    options: AteOptions,
}

fn load_common(args: &DataArgs, from_file: &AteFileConfig) -> Result<LoadedData, Error> {
    let path = args
        .data
        .clone()
        .or_else(|| from_file.data.clone())
        .ok_or_else(|| Error::validation("--data is required"))?;
    let schema = ColumnSchema {
        time: args
            .time_col
            .clone()
            .or_else(|| from_file.time_col.clone())
            .unwrap_or_else(|| "time".into()),
        event: args
            .event_col
            .clone()
            .or_else(|| from_file.event_col.clone())
            .unwrap_or_else(|| "event".into()),
        treatment: args
            .treatment_col
            .clone()
            .or_else(|| from_file.treatment_col.clone())
            .unwrap_or_else(|| "treatment".into()),
    };
    let dataset = load_csv(&path, &schema)?;

    let all_linear: Vec<TermSpec> = dataset
        .covariate_names()
        .iter()
        .map(TermSpec::linear)
        .collect();
    let pick = |flag: &Option<String>, file: &Option<String>| -> Result<Vec<TermSpec>, Error> {
        match flag.as_ref().or(file.as_ref()) {
            Some(text) => parse_terms(text),
            None => Ok(all_linear.clone()),
        }
    };
    let outcome1 = pick(&args.outcome_formula, &from_file.outcome_formula)?;
    let outcome2 = match args
        .outcome2_formula
        .as_ref()
        .or(from_file.outcome2_formula.as_ref())
    {
        Some(text) => parse_terms(text)?,
        None => outcome1.clone(),
    };
    let formulas = FormulaSpec {
        outcome1,
        outcome2,
        censoring: pick(&args.censoring_formula, &from_file.censoring_formula)?,
        treatment: pick(&args.treatment_formula, &from_file.treatment_formula)?,
    };

    let mode = match args.mode {
        Some(ModeArg::ProductLimit) => RiskMode::ProductLimit,
        Some(ModeArg::Exponential) => RiskMode::Exponential,
        None => match from_file.mode.as_deref() {
            Some("exponential") => RiskMode::Exponential,
            Some("product-limit") | None => RiskMode::ProductLimit,
            Some(other) => {
                return Err(Error::validation(format!(
                    "unknown mode `{other}` in config"
                )))
            }
        },
    };
    let truncate = match args
        .truncate_propensity
        .as_ref()
        .or(from_file.truncate_propensity.as_ref())
    {
        Some(text) => Some(parse_truncation(text)?),
        None => None,
    };
    let options = AteOptions {
        mode,
        truncate_propensity: truncate,
        stratified: args.stratified || from_file.stratified.unwrap_or(false),
        propensity: PropensitySource::Fitted,
        confidence_level: args.level.or(from_file.level).unwrap_or(0.95),
        ..AteOptions::default()
    };
    Ok(LoadedData {
        dataset,
        formulas,
        options,
    })
}

fn write_output(out: &Option<PathBuf>, content: &str) -> Result<(), Error> {
    match out {
        Some(path) => {
            let mut f = std::fs::File::create(path)?;
            f.write_all(content.as_bytes())?;
        }
        None => {
            std::io::stdout().write_all(content.as_bytes())?;
        }
    }
    Ok(())
}

fn ate_csv(output: &AteOutput) -> String {
    let mut s = String::from("estimator,variance,tau,n,risk1,risk0,ate,se,lower,upper\n");
    for e in &output.estimates {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            e.estimator.name(),
            e.variance.name(),
            e.tau,
            e.n,
            e.risk1,
            e.risk0,
            e.ate,
            e.se,
            e.ci_lower,
            e.ci_upper
        ));
    }
    s
}

fn cmd_ate(args: AteArgs) -> Result<(), Error> {
    let from_file: AteFileConfig = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            toml::from_str(&text)
                .map_err(|e| Error::validation(format!("config {}: {e}", path.display())))?
        }
        None => AteFileConfig::default(),
    };
    let mut loaded = load_common(&args.data, &from_file)?;
    let tau = args
        .tau
        .or(from_file.tau)
        .ok_or_else(|| Error::validation("--tau is required"))?;
    let estimator_names = if args.estimators.is_empty() {
        from_file.estimators.clone().unwrap_or_default()
    } else {
        args.estimators.clone()
    };
    let estimators = parse_estimator_list(&estimator_names)?;
    loaded.options.variance = match args.variance {
        Some(VarianceArg::Tilde) => VarianceChoice::Tilde,
        Some(VarianceArg::PartialPhi) => VarianceChoice::PartialPhi,
        Some(VarianceArg::Both) => VarianceChoice::Both,
        None => match from_file.variance.as_deref() {
            Some("partial-phi") => VarianceChoice::PartialPhi,
            Some("both") => VarianceChoice::Both,
            _ => VarianceChoice::Tilde,
        },
    };

    let output = estimate_ate(
        &loaded.dataset,
        &loaded.formulas,
        tau,
        &estimators,
        &loaded.options,
    )?;

    let format = args.format.unwrap_or(match from_file.format.as_deref() {
        Some("csv") => FormatArg::Csv,
        _ => FormatArg::Json,
    });
    let rendered = match format {
        FormatArg::Json => {
            let mut s = serde_json::to_string_pretty(&output).expect("report serializes");
            s.push('\n');
            s
        }
        FormatArg::Csv => ate_csv(&output),
    };
    write_output(&args.out, &rendered)
}

fn write_summaries(out: &Option<PathBuf>, summaries: &[SimSummary]) -> Result<(), Error> {
    let mut csv = String::new();
    for (i, s) in summaries.iter().enumerate() {
        let block = s.to_csv();
        if i == 0 {
            csv.push_str(&block);
        } else {
            // skip the repeated header
            if let Some(pos) = block.find('\n') {
                csv.push_str(&block[pos + 1..]);
            }
        }
    }
    let json = if summaries.len() == 1 {
        summaries[0].to_json()
    } else {
        serde_json::to_string_pretty(summaries).expect("summaries serialize")
    };
    match out {
        Some(prefix) => {
            let csv_path = prefix.with_extension("csv");
            let json_path = prefix.with_extension("json");
            std::fs::write(&csv_path, csv)?;
            std::fs::write(&json_path, json)?;
            eprintln!("wrote {} and {}", csv_path.display(), json_path.display());
        }
        None => {
            print!("{csv}");
        }
    }
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), Error> {
    let text = std::fs::read_to_string(&args.scenario)?;
    let mut spec = ScenarioSpec::from_toml_str(&text)?;
    if let Some(seed) = args.seed {
        spec.dgm.seed = seed;
    }
    let total = spec.replicates;
    let every = args.progress_every.max(1);
    let done = std::sync::atomic::AtomicUsize::new(0);
    let summary = run_scenario_with(
        &spec,
        Some(&|_r| {
            let k = done.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1;
            if k % every == 0 || k == total {
                eprintln!("completed {k}/{total} replicates");
            }
        }),
    )?;
    write_summaries(&args.out, std::slice::from_ref(&summary))
}

fn cmd_coverage(args: CoverageArgs) -> Result<(), Error> {
    if args.sizes.is_empty() {
        return Err(Error::validation("--n needs at least one sample size"));
    }
    let estimator_names = if args.estimators.is_empty() {
        vec!["g-formula".to_string(), "aiptw-aipcw".to_string()]
    } else {
        args.estimators.clone()
    };
    let mut summaries = Vec::new();
    for &n in &args.sizes {
        let mut dgm = riskdiff_core::simlab::DgmSpec::default();
        if let Some(seed) = args.seed {
            dgm.seed = seed;
        }
        let spec = ScenarioSpec {
            name: format!("coverage-n{n}"),
            dgm,
            n,
            replicates: args.replicates,
            tau: args.tau,
            formulas: riskdiff_core::simlab::correct_formulas(),
            misspecification: None,
            estimators: estimator_names.clone(),
            true_ate: Some(0.0),
            oracle_samples: 1_000_000,
            both_variants: true,
            truncate_propensity: None,
        };
        eprintln!(
            "running coverage at n = {n} ({} replicates)",
            args.replicates
        );
        summaries.push(run_scenario_with(&spec, None)?);
    }
    write_summaries(&args.out, &summaries)
}

fn cmd_risk(args: RiskArgs) -> Result<(), Error> {
    let loaded = load_common(&args.data, &AteFileConfig::default())?;
    let estimators = if args.estimators.is_empty() {
        vec![Estimator::GFormula, Estimator::AiptwAipcw]
    } else {
        let parsed = riskdiff_core::simlab::parse_estimators(&args.estimators)?;
        if args.estimators.iter().any(|e| e == "all") {
            vec![Estimator::GFormula, Estimator::AiptwAipcw]
        } else {
            parsed
        }
    };
    let points = risk_curve_points(
        &loaded.dataset,
        &loaded.formulas,
        &args.grid,
        &estimators,
        &loaded.options,
    )?;
    write_output(&args.out, &risk_points_csv(&points))
}
