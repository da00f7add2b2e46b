//! Competing-risks dataset ingestion, validation and design matrices.
//!
//! A dataset holds one row per subject: follow-up time, event code
//! (0 = censored, 1 = event of interest, 2 = competing event), binary
//! treatment, and a fixed-length covariate vector. Formula specifications
//! select covariates (optionally with squared-term expansion) per nuisance
//! model and turn them into design matrices.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One subject's observation.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedSample {
    pub time: f64,
    /// 0 = censored, 1 = cause of interest, 2 = competing cause.
    pub event: u8,
    /// 0 or 1.
    pub treatment: u8,
    pub covariates: Vec<f64>,
}

impl ObservedSample {
    /// Indicator of the event of interest observed by `tau`.
    #[inline]
    pub fn y_tau(&self, tau: f64) -> f64 {
        if self.time <= tau && self.event == 1 {
            1.0
        } else {
            0.0
        }
    }

    /// Uncensored observation by `tau` (an event of either cause, or follow-up
    /// past `tau`).
    #[inline]
    pub fn observed_at(&self, tau: f64) -> bool {
        self.time > tau || self.event != 0
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    samples: Vec<ObservedSample>,
    covariate_names: Vec<String>,
    /// Subject indices sorted by (time ascending, events before censorings).
    time_order: Vec<usize>,
}

impl Dataset {
    pub fn new(samples: Vec<ObservedSample>, covariate_names: Vec<String>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::validation(format!(
                "dataset needs at least 2 subjects, got {}",
                samples.len()
            )));
        }
        let d = covariate_names.len();
        for (i, s) in samples.iter().enumerate() {
            if !s.time.is_finite() || s.time < 0.0 {
                return Err(Error::validation(format!(
                    "row {}: time must be finite and nonnegative, got {}",
                    i + 1,
                    s.time
                )));
            }
            if s.event > 2 {
                return Err(Error::validation(format!(
                    "row {}: event code must be 0, 1 or 2, got {}",
                    i + 1,
                    s.event
                )));
            }
            if s.treatment > 1 {
                return Err(Error::validation(format!(
                    "row {}: treatment must be 0 or 1, got {}",
                    i + 1,
                    s.treatment
                )));
            }
            if s.covariates.len() != d {
                return Err(Error::validation(format!(
                    "row {}: expected {} covariates, got {}",
                    i + 1,
                    d,
                    s.covariates.len()
                )));
            }
            if let Some(j) = s.covariates.iter().position(|v| !v.is_finite()) {
                return Err(Error::validation(format!(
                    "row {}: non-finite value in column {}",
                    i + 1,
                    covariate_names[j]
                )));
            }
        }
        if !samples.iter().any(|s| s.treatment == 1) || !samples.iter().any(|s| s.treatment == 0) {
            return Err(Error::validation("both treatment arms required"));
        }
        if !samples.iter().any(|s| s.event == 1) {
            return Err(Error::validation("at least one event of cause 1 required"));
        }
        let mut time_order: Vec<usize> = (0..samples.len()).collect();
        // ties: events sort before censorings at the same clock time
        time_order.sort_by(|&a, &b| {
            samples[a]
                .time
                .total_cmp(&samples[b].time)
                .then_with(|| (samples[a].event == 0).cmp(&(samples[b].event == 0)))
                .then(a.cmp(&b))
        });
        Ok(Dataset {
            samples,
            covariate_names,
            time_order,
        })
    }

    pub fn n(&self) -> usize {
        self.samples.len()
    }

    pub fn dim(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn samples(&self) -> &[ObservedSample] {
        &self.samples
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn time_order(&self) -> &[usize] {
        &self.time_order
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|c| c == name)
    }

    /// Subjects of one treatment arm, keeping original indices.
    pub fn arm_indices(&self, arm: u8) -> Vec<usize> {
        (0..self.n())
            .filter(|&i| self.samples[i].treatment == arm)
            .collect()
    }

    /// New dataset restricted to the given subject indices. Bypasses the
    /// two-arm/cause-1 invariants since subsets are internal artifacts.
    pub(crate) fn subset_unchecked(&self, indices: &[usize]) -> Dataset {
        let samples: Vec<ObservedSample> =
            indices.iter().map(|&i| self.samples[i].clone()).collect();
        let mut time_order: Vec<usize> = (0..samples.len()).collect();
        time_order.sort_by(|&a, &b| {
            samples[a]
                .time
                .total_cmp(&samples[b].time)
                .then_with(|| (samples[a].event == 0).cmp(&(samples[b].event == 0)))
                .then(a.cmp(&b))
        });
        Dataset {
            samples,
            covariate_names: self.covariate_names.clone(),
            time_order,
        }
    }
}

/// Column mapping for CSV ingestion.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub time: String,
    pub event: String,
    pub treatment: String,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        ColumnSchema {
            time: "time".to_string(),
            event: "event".to_string(),
            treatment: "treatment".to_string(),
        }
    }
}

/// Load a dataset from CSV. Every column not named in the schema becomes a
/// covariate, in header order.
pub fn load_csv(path: impl AsRef<Path>, schema: &ColumnSchema) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(path.as_ref())?;
    let headers = reader.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::validation(format!("missing column `{name}`")))
    };
    let time_idx = find(&schema.time)?;
    let event_idx = find(&schema.event)?;
    let treat_idx = find(&schema.treatment)?;
    let mut covariate_cols: Vec<(usize, String)> = Vec::new();
    for (j, h) in headers.iter().enumerate() {
        if j != time_idx && j != event_idx && j != treat_idx {
            covariate_cols.push((j, h.to_string()));
        }
    }

    let parse_f64 = |field: &str, row: usize, col: &str| -> Result<f64> {
        field.trim().parse::<f64>().map_err(|_| {
            Error::validation(format!(
                "row {row}, column {col}: cannot parse `{field}` as number"
            ))
        })
    };

    let mut samples = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row = r + 1;
        let time = parse_f64(&record[time_idx], row, &schema.time)?;
        let event_raw = parse_f64(&record[event_idx], row, &schema.event)?;
        if event_raw != 0.0 && event_raw != 1.0 && event_raw != 2.0 {
            return Err(Error::validation(format!(
                "row {row}, column {}: event code must be 0, 1 or 2, got {event_raw}",
                schema.event
            )));
        }
        let treat_raw = parse_f64(&record[treat_idx], row, &schema.treatment)?;
        if treat_raw != 0.0 && treat_raw != 1.0 {
            return Err(Error::validation(format!(
                "row {row}, column {}: treatment must be 0 or 1, got {treat_raw}",
                schema.treatment
            )));
        }
        let mut covariates = Vec::with_capacity(covariate_cols.len());
        for (j, name) in &covariate_cols {
            let v = parse_f64(&record[*j], row, name)?;
            if !v.is_finite() {
                return Err(Error::validation(format!(
                    "row {row}, column {name}: non-finite value"
                )));
            }
            covariates.push(v);
        }
        samples.push(ObservedSample {
            time,
            event: event_raw as u8,
            treatment: treat_raw as u8,
            covariates,
        });
    }
    let names = covariate_cols.into_iter().map(|(_, n)| n).collect();
    Dataset::new(samples, names)
}

/// Write a dataset back to CSV with full float precision, so a reload
/// reproduces the samples bit-for-bit.
pub fn save_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut file = std::fs::File::create(path.as_ref())?;
    let mut header = vec![
        "time".to_string(),
        "event".to_string(),
        "treatment".to_string(),
    ];
    header.extend(data.covariate_names().iter().cloned());
    writeln!(file, "{}", header.join(","))?;
    for s in data.samples() {
        let mut fields = vec![
            format!("{}", s.time),
            s.event.to_string(),
            s.treatment.to_string(),
        ];
        fields.extend(s.covariates.iter().map(|v| format!("{v}")));
        writeln!(file, "{}", fields.join(","))?;
    }
    Ok(())
}

/// One covariate selection: name plus optional squared-term expansion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermSpec {
    pub name: String,
    #[serde(default)]
    pub squared: bool,
}

impl TermSpec {
    pub fn linear(name: impl Into<String>) -> Self {
        TermSpec {
            name: name.into(),
            squared: false,
        }
    }

    pub fn with_square(name: impl Into<String>) -> Self {
        TermSpec {
            name: name.into(),
            squared: true,
        }
    }
}

/// Which working model a design matrix is built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NuisanceModel {
    OutcomeCause1,
    OutcomeCause2,
    Censoring,
    Treatment,
}

impl NuisanceModel {
    pub fn label(&self) -> &'static str {
        match self {
            NuisanceModel::OutcomeCause1 => "outcome (cause 1)",
            NuisanceModel::OutcomeCause2 => "outcome (cause 2)",
            NuisanceModel::Censoring => "censoring",
            NuisanceModel::Treatment => "treatment",
        }
    }
}

/// Covariate selections for the four working models.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FormulaSpec {
    pub outcome1: Vec<TermSpec>,
    pub outcome2: Vec<TermSpec>,
    pub censoring: Vec<TermSpec>,
    pub treatment: Vec<TermSpec>,
}

impl FormulaSpec {
    pub fn terms(&self, model: NuisanceModel) -> &[TermSpec] {
        match model {
            NuisanceModel::OutcomeCause1 => &self.outcome1,
            NuisanceModel::OutcomeCause2 => &self.outcome2,
            NuisanceModel::Censoring => &self.censoring,
            NuisanceModel::Treatment => &self.treatment,
        }
    }

    /// Same selection for all four models.
    pub fn uniform(terms: Vec<TermSpec>) -> Self {
        FormulaSpec {
            outcome1: terms.clone(),
            outcome2: terms.clone(),
            censoring: terms.clone(),
            treatment: terms,
        }
    }

    pub fn validate(&self, data: &Dataset) -> Result<()> {
        for model in [
            NuisanceModel::OutcomeCause1,
            NuisanceModel::OutcomeCause2,
            NuisanceModel::Censoring,
            NuisanceModel::Treatment,
        ] {
            for t in self.terms(model) {
                if data.covariate_index(&t.name).is_none() {
                    return Err(Error::validation(format!(
                        "{} formula references unknown covariate `{}`",
                        model.label(),
                        t.name
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Resolved column layout: covariate indices with square flags, plus an
/// optional trailing treatment column. Maps a subject's raw covariates and a
/// forced treatment arm to a design row.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnLayout {
    /// (covariate index, squared) per column, in order.
    pub columns: Vec<(usize, bool)>,
    pub treatment_column: bool,
    pub names: Vec<String>,
}

impl ColumnLayout {
    pub fn resolve(
        data: &Dataset,
        terms: &[TermSpec],
        model: NuisanceModel,
        treatment_column: bool,
    ) -> Result<ColumnLayout> {
        let mut columns = Vec::new();
        let mut names = Vec::new();
        for t in terms {
            let idx = data.covariate_index(&t.name).ok_or_else(|| {
                Error::validation(format!(
                    "{} formula references unknown covariate `{}`",
                    model.label(),
                    t.name
                ))
            })?;
            columns.push((idx, false));
            names.push(t.name.clone());
            if t.squared {
                columns.push((idx, true));
                names.push(format!("{}^2", t.name));
            }
        }
        if treatment_column {
            names.push("treatment".to_string());
        }
        Ok(ColumnLayout {
            columns,
            treatment_column,
            names,
        })
    }

    pub fn width(&self) -> usize {
        self.columns.len() + usize::from(self.treatment_column)
    }

    /// Fill `out` with the design row for the given covariates and arm.
    pub fn fill_row(&self, covariates: &[f64], treatment: u8, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.width());
        for (k, &(idx, squared)) in self.columns.iter().enumerate() {
            let v = covariates[idx];
            out[k] = if squared { v * v } else { v };
        }
        if self.treatment_column {
            out[self.columns.len()] = f64::from(treatment);
        }
    }

    pub fn row(&self, covariates: &[f64], treatment: u8) -> Vec<f64> {
        let mut out = vec![0.0; self.width()];
        self.fill_row(covariates, treatment, &mut out);
        out
    }
}

/// A dense row-major design matrix aligned with dataset row order.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub n: usize,
    pub d: usize,
    data: Vec<f64>,
    pub layout: ColumnLayout,
    /// Zero-variance columns, reported as warnings rather than failures.
    pub constant_columns: Vec<String>,
}

impl DesignMatrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn names(&self) -> &[String] {
        &self.layout.names
    }

    pub(crate) fn from_layout(data: &Dataset, layout: ColumnLayout) -> DesignMatrix {
        let n = data.n();
        let d = layout.width();
        let mut buf = vec![0.0; n * d];
        for (i, s) in data.samples().iter().enumerate() {
            layout.fill_row(&s.covariates, s.treatment, &mut buf[i * d..(i + 1) * d]);
        }
        let mut constant_columns = Vec::new();
        for j in 0..d {
            let first = buf[j];
            if (1..n).all(|i| buf[i * d + j] == first) {
                constant_columns.push(layout.names[j].clone());
            }
        }
        DesignMatrix {
            n,
            d,
            data: buf,
            layout,
            constant_columns,
        }
    }

    /// Build a design matrix from raw rows (covariates already expanded).
    pub fn from_rows(rows: Vec<Vec<f64>>, names: Vec<String>) -> DesignMatrix {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        let mut buf = Vec::with_capacity(n * d);
        for r in &rows {
            buf.extend_from_slice(r);
        }
        let layout = ColumnLayout {
            columns: (0..d).map(|j| (j, false)).collect(),
            treatment_column: false,
            names: names.clone(),
        };
        let mut constant_columns = Vec::new();
        for j in 0..d {
            if n > 0 {
                let first = buf[j];
                if (1..n).all(|i| buf[i * d + j] == first) {
                    constant_columns.push(names[j].clone());
                }
            }
        }
        DesignMatrix {
            n,
            d,
            data: buf,
            layout,
            constant_columns,
        }
    }
}

/// Build the design matrix for one nuisance model: selected covariates
/// (plus squares where flagged) in specification order, with treatment
/// appended as the last column for outcome and censoring models.
pub fn design_matrix(
    data: &Dataset,
    spec: &FormulaSpec,
    model: NuisanceModel,
) -> Result<DesignMatrix> {
    let treatment_column = !matches!(model, NuisanceModel::Treatment);
    let layout = ColumnLayout::resolve(data, spec.terms(model), model, treatment_column)?;
    Ok(DesignMatrix::from_layout(data, layout))
}

/// Horizon feasibility diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct TauReport {
    pub tau: f64,
    /// Subjects with follow-up time >= tau, per arm [control, treated].
    pub at_risk: [usize; 2],
    /// Cause-1 events observed at or before tau, per arm.
    pub events_cause1: [usize; 2],
    /// Cause-2 events observed at or before tau, per arm.
    pub events_cause2: [usize; 2],
    /// Set when an arm has nobody at risk at tau.
    pub failed: bool,
}

pub fn tau_feasibility(data: &Dataset, tau: f64) -> Result<TauReport> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::validation(format!(
            "tau must be positive and finite, got {tau}"
        )));
    }
    let mut at_risk = [0usize; 2];
    let mut events_cause1 = [0usize; 2];
    let mut events_cause2 = [0usize; 2];
    for s in data.samples() {
        let a = s.treatment as usize;
        if s.time >= tau {
            at_risk[a] += 1;
        }
        if s.time <= tau {
            match s.event {
                1 => events_cause1[a] += 1,
                2 => events_cause2[a] += 1,
                _ => {}
            }
        }
    }
    let failed = at_risk[0] == 0 || at_risk[1] == 0;
    Ok(TauReport {
        tau,
        at_risk,
        events_cause1,
        events_cause2,
        failed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn toy_dataset() -> Dataset {
        let samples = vec![
            ObservedSample {
                time: 1.0,
                event: 1,
                treatment: 1,
                covariates: vec![0.5, 1.0],
            },
            ObservedSample {
                time: 2.0,
                event: 0,
                treatment: 0,
                covariates: vec![-0.25, 0.0],
            },
            ObservedSample {
                time: 3.0,
                event: 2,
                treatment: 1,
                covariates: vec![1.5, 1.0],
            },
            ObservedSample {
                time: 4.0,
                event: 1,
                treatment: 0,
                covariates: vec![0.0, 0.0],
            },
        ];
        Dataset::new(samples, vec!["X1".into(), "X2".into()]).unwrap()
    }

    #[test]
    fn load_csv_four_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.csv");
        std::fs::write(
            &path,
            "time,event,treatment,X1,X2\n1.0,0,1,0.5,1\n2.0,1,0,-0.25,0\n3.5,2,1,1.5,1\n4,1,0,0,0\n",
        )
        .unwrap();
        let data = load_csv(&path, &ColumnSchema::default()).unwrap();
        assert_eq!(data.n(), 4);
        assert_eq!(data.dim(), 2);
        assert_eq!(
            data.covariate_names(),
            &["X1".to_string(), "X2".to_string()]
        );
        assert_eq!(data.samples()[2].event, 2);
        assert_eq!(data.samples()[3].time, 4.0);
    }

    #[test]
    fn load_csv_rejects_bad_event_code() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "time,event,treatment,X1\n1,1,1,0.1\n2,3,0,0.2\n").unwrap();
        let err = load_csv(&path, &ColumnSchema::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 2"), "{msg}");
        assert!(msg.contains("event"), "{msg}");
    }

    #[test]
    fn load_csv_rejects_single_arm() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one_arm.csv");
        std::fs::write(&path, "time,event,treatment,X1\n1,1,1,0.1\n2,0,1,0.2\n").unwrap();
        let err = load_csv(&path, &ColumnSchema::default()).unwrap_err();
        assert!(err.to_string().contains("both treatment arms"), "{err}");
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let data = toy_dataset();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("round.csv");
        save_csv(&data, &path).unwrap();
        let reloaded = load_csv(&path, &ColumnSchema::default()).unwrap();
        assert_eq!(data.samples(), reloaded.samples());
        assert_eq!(data.covariate_names(), reloaded.covariate_names());
    }

    #[test]
    fn design_matrix_square_expansion() {
        let data = toy_dataset();
        let spec = FormulaSpec::uniform(vec![TermSpec::with_square("X1")]);
        let m = design_matrix(&data, &spec, NuisanceModel::Treatment).unwrap();
        assert_eq!(m.names(), &["X1".to_string(), "X1^2".to_string()]);
        assert_eq!(m.row(0), &[0.5, 0.25]);
        assert_eq!(m.row(2), &[1.5, 2.25]);
    }

    #[test]
    fn design_matrix_empty_selection_outcome_gets_treatment_column() {
        let data = toy_dataset();
        let spec = FormulaSpec::default();
        let m = design_matrix(&data, &spec, NuisanceModel::OutcomeCause1).unwrap();
        assert_eq!(m.d, 1);
        assert_eq!(m.names(), &["treatment".to_string()]);
        assert_eq!(m.row(0), &[1.0]);
        assert_eq!(m.row(1), &[0.0]);
    }

    #[test]
    fn design_matrix_unknown_name_errors() {
        let data = toy_dataset();
        let spec = FormulaSpec::uniform(vec![TermSpec::linear("Z9")]);
        assert!(design_matrix(&data, &spec, NuisanceModel::Censoring).is_err());
    }

    #[test]
    fn design_matrix_flags_constant_column() {
        let samples = vec![
            ObservedSample {
                time: 1.0,
                event: 1,
                treatment: 1,
                covariates: vec![2.0],
            },
            ObservedSample {
                time: 2.0,
                event: 0,
                treatment: 0,
                covariates: vec![2.0],
            },
        ];
        let data = Dataset::new(samples, vec!["X1".into()]).unwrap();
        let spec = FormulaSpec::uniform(vec![TermSpec::linear("X1")]);
        let m = design_matrix(&data, &spec, NuisanceModel::Treatment).unwrap();
        assert_eq!(m.constant_columns, vec!["X1".to_string()]);
    }

    #[test]
    fn tau_feasibility_boundaries() {
        let data = toy_dataset();
        // before the first event time
        let early = tau_feasibility(&data, 0.5).unwrap();
        assert_eq!(early.events_cause1, [0, 0]);
        assert_eq!(early.events_cause2, [0, 0]);
        assert!(!early.failed);
        // beyond the last follow-up time
        let late = tau_feasibility(&data, 10.0).unwrap();
        assert!(late.failed);
        assert_eq!(late.at_risk, [0, 0]);
        // median-ish horizon, tallied by hand
        let mid = tau_feasibility(&data, 2.5).unwrap();
        assert_eq!(mid.at_risk, [1, 1]);
        assert_eq!(mid.events_cause1, [0, 1]);
        assert_eq!(mid.events_cause2, [0, 0]);
    }

    #[test]
    fn sorts_events_before_censorings_at_ties() {
        let samples = vec![
            ObservedSample {
                time: 2.0,
                event: 0,
                treatment: 0,
                covariates: vec![],
            },
            ObservedSample {
                time: 2.0,
                event: 1,
                treatment: 1,
                covariates: vec![],
            },
            ObservedSample {
                time: 1.0,
                event: 1,
                treatment: 0,
                covariates: vec![],
            },
        ];
        let data = Dataset::new(samples, vec![]).unwrap();
        assert_eq!(data.time_order(), &[2, 1, 0]);
    }
}
