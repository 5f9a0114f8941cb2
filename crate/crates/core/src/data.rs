//! Datasets for the ANCOVA model `Y_ij = mu_i + x_ij' beta + e_ij`, CSV
//! ingestion and structural validation.

use std::collections::HashMap;
use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::alignment;
use crate::error::{Error, Result};
use crate::par::Exec;
use crate::scores::ScoreFunction;

/// Responses, group structure and covariates. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    responses: Vec<f64>,
    groups: Vec<usize>,
    labels: Vec<String>,
    covariates: DMatrix<f64>,
    covariate_names: Vec<String>,
    members: Vec<Vec<usize>>,
    dropped_rows: Vec<usize>,
}

impl Dataset {
    /// Build from 0-based group indices. Labels default to `"1".."g"`.
    pub fn from_indices(
        responses: Vec<f64>,
        groups: Vec<usize>,
        covariates: DMatrix<f64>,
    ) -> Result<Self> {
        let g = groups.iter().max().map_or(0, |m| m + 1);
        let labels = (1..=g).map(|i| i.to_string()).collect();
        Self::with_labels(responses, groups, labels, covariates, Vec::new())
    }

    /// Build a one-way layout (no covariates) from per-group samples.
    pub fn one_way(samples: &[Vec<f64>]) -> Result<Self> {
        let mut y = Vec::new();
        let mut grp = Vec::new();
        for (i, s) in samples.iter().enumerate() {
            y.extend_from_slice(s);
            grp.extend(std::iter::repeat_n(i, s.len()));
        }
        let n = y.len();
        Self::from_indices(y, grp, DMatrix::zeros(n, 0))
    }

    pub fn with_labels(
        responses: Vec<f64>,
        groups: Vec<usize>,
        labels: Vec<String>,
        covariates: DMatrix<f64>,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        let n = responses.len();
        if n == 0 {
            return Err(Error::EmptyInput);
        }
        if groups.len() != n || covariates.nrows() != n {
            return Err(Error::InvalidDataset(format!(
                "length mismatch: {} responses, {} group labels, {} covariate rows",
                n,
                groups.len(),
                covariates.nrows()
            )));
        }
        let g = labels.len();
        if g < 2 {
            return Err(Error::InvalidDataset(format!(
                "need at least 2 groups, got {g}"
            )));
        }
        let mut members = vec![Vec::new(); g];
        for (row, &gi) in groups.iter().enumerate() {
            if gi >= g {
                return Err(Error::InvalidDataset(format!(
                    "group index {gi} out of range"
                )));
            }
            members[gi].push(row);
        }
        if let Some(empty) = members.iter().position(Vec::is_empty) {
            return Err(Error::InvalidDataset(format!(
                "group `{}` has no observations",
                labels[empty]
            )));
        }
        if responses.iter().any(|v| !v.is_finite()) || covariates.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset("non-finite value".into()));
        }
        let covariate_names = if covariate_names.len() == covariates.ncols() {
            covariate_names
        } else {
            (1..=covariates.ncols()).map(|k| format!("x{k}")).collect()
        };
        Ok(Dataset {
            responses,
            groups,
            labels,
            covariates,
            covariate_names,
            members,
            dropped_rows: Vec::new(),
        })
    }

    pub fn responses(&self) -> &[f64] {
        &self.responses
    }
    pub fn groups(&self) -> &[usize] {
        &self.groups
    }
    pub fn labels(&self) -> &[String] {
        &self.labels
    }
    pub fn label(&self, group: usize) -> &str {
        &self.labels[group]
    }
    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.covariates
    }
    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }
    /// Row indices of each group, in input order.
    pub fn members(&self, group: usize) -> &[usize] {
        &self.members[group]
    }
    pub fn num_groups(&self) -> usize {
        self.labels.len()
    }
    pub fn num_covariates(&self) -> usize {
        self.covariates.ncols()
    }
    pub fn len(&self) -> usize {
        self.responses.len()
    }
    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
    pub fn group_sizes(&self) -> Vec<usize> {
        self.members.iter().map(Vec::len).collect()
    }
    pub fn group_size(&self, group: usize) -> usize {
        self.members[group].len()
    }
    /// Data rows (1-based, excluding header) skipped for missing fields.
    pub fn dropped_rows(&self) -> &[usize] {
        &self.dropped_rows
    }

    pub fn group_index(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::UnknownGroup(label.to_string()))
    }

    /// Same design, new responses.
    pub fn with_responses(&self, responses: Vec<f64>) -> Result<Self> {
        if responses.len() != self.len() {
            return Err(Error::InvalidDataset("response length mismatch".into()));
        }
        if responses.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset("non-finite value".into()));
        }
        Ok(Dataset {
            responses,
            ..self.clone()
        })
    }
}

/// Which CSV columns hold the response, the group and the covariates.
#[derive(Debug, Clone, Default)]
pub struct CsvSchema {
    pub response: String,
    pub group: String,
    pub covariates: Vec<String>,
}

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c.eq_ignore_ascii_case("na")
}

/// Parse an RFC-4180 CSV with a header row.
///
/// Rows with a missing field (empty or `NA`) are skipped and reported through
/// [`Dataset::dropped_rows`]. Groups are numbered in order of first appearance.
pub fn parse_csv<R: Read>(source: R, schema: &CsvSchema) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    if headers.is_empty() {
        return Err(Error::EmptyInput);
    }
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let y_col = col(&schema.response)?;
    let g_col = col(&schema.group)?;
    let x_cols = schema
        .covariates
        .iter()
        .map(|c| col(c))
        .collect::<Result<Vec<_>>>()?;

    let parse_num = |cell: &str, column: &str, row: usize| -> Result<f64> {
        cell.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::NonNumericCell {
                column: column.to_string(),
                row,
                value: cell.to_string(),
            })
    };

    let p = x_cols.len();
    let mut y = Vec::new();
    let mut x = Vec::new();
    let mut grp = Vec::new();
    let mut labels: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut dropped = Vec::new();
    let mut dropped_labels = Vec::new();
    let mut rows = 0usize;
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        rows += 1;
        let field = |c: usize| rec.get(c).unwrap_or("");
        let mut needed = vec![y_col, g_col];
        needed.extend(&x_cols);
        if needed.iter().any(|&c| is_missing(field(c))) {
            dropped.push(row);
            if !is_missing(field(g_col)) {
                dropped_labels.push(field(g_col).trim().to_string());
            }
            continue;
        }
        y.push(parse_num(field(y_col), &schema.response, row)?);
        for (k, &c) in x_cols.iter().enumerate() {
            x.push(parse_num(field(c), &schema.covariates[k], row)?);
        }
        let label = field(g_col).trim().to_string();
        let next = labels.len();
        let gi = *index.entry(label.clone()).or_insert_with(|| {
            labels.push(label);
            next
        });
        grp.push(gi);
    }
    if rows == 0 {
        return Err(Error::EmptyInput);
    }
    if let Some(l) = dropped_labels.iter().find(|l| !index.contains_key(*l)) {
        return Err(Error::InvalidDataset(format!(
            "group `{l}` has 0 rows after dropping rows with missing values"
        )));
    }
    if y.is_empty() {
        return Err(Error::InvalidDataset("no complete rows".into()));
    }
    let n = y.len();
    let covariates = DMatrix::from_row_slice(n, p, &x);
    let mut ds = Dataset::with_labels(y, grp, labels, covariates, schema.covariates.clone())?;
    ds.dropped_rows = dropped;
    Ok(ds)
}

/// Write a dataset as CSV with columns `response,group,<covariates...>`.
pub fn write_csv<W: Write>(ds: &Dataset, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let mut header = vec!["response".to_string(), "group".to_string()];
    header.extend(ds.covariate_names().iter().cloned());
    w.write_record(&header)?;
    for row in 0..ds.len() {
        let mut rec = vec![
            format!("{:?}", ds.responses[row]),
            ds.labels[ds.groups[row]].clone(),
        ];
        for k in 0..ds.num_covariates() {
            rec.push(format!("{:?}", ds.covariates[(row, k)]));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComparisonFamily {
    AllPairs,
    /// Every other group against `control` (0-based group index).
    VersusControl {
        control: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sidedness {
    TwoSided,
    /// Reject only for large positive statistics.
    OneSided,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    Mvn,
    Mvt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleMode {
    /// One pooled estimate, a df-weighted average of the per-pair MSEs.
    Weighted,
    /// Each pair standardized by its own MSE.
    PerPair,
    /// Permutation variance of the pair's score vector (one-way only).
    Classical,
}

/// Which pairs enter the pooled scale in treatment-versus-control mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlScale {
    /// Pool over the (treatment, control) pairs only.
    ControlPairs,
    /// Pool over all g(g-1)/2 pairs.
    AllPairs,
}

#[derive(Debug, Clone)]
pub struct AnalysisConfig {
    pub score_function: ScoreFunction,
    pub family: ComparisonFamily,
    pub sidedness: Sidedness,
    pub alpha: f64,
    pub reference: ReferenceKind,
    pub scale_mode: ScaleMode,
    pub control_scale: ControlScale,
    pub draws: usize,
    pub seed: u64,
    pub exec: Exec,
}

pub const DEFAULT_DRAWS: usize = 100_000;
pub const DEFAULT_SEED: u64 = 20_240_601;

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            score_function: ScoreFunction::wilcoxon(),
            family: ComparisonFamily::AllPairs,
            sidedness: Sidedness::TwoSided,
            alpha: 0.05,
            reference: ReferenceKind::Mvt,
            scale_mode: ScaleMode::Weighted,
            control_scale: ControlScale::ControlPairs,
            draws: DEFAULT_DRAWS,
            seed: DEFAULT_SEED,
            exec: Exec::default(),
        }
    }
}

/// Ordered pairs analyzed under a family: `(first, second)` with the
/// statistic oriented as first minus second.
pub fn family_pairs(g: usize, family: ComparisonFamily) -> Vec<(usize, usize)> {
    match family {
        ComparisonFamily::AllPairs => (0..g)
            .flat_map(|i| (i + 1..g).map(move |j| (i, j)))
            .collect(),
        ComparisonFamily::VersusControl { control } => (0..g)
            .filter(|&i| i != control)
            .map(|i| (i, control))
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub code: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pair: Option<(usize, usize)>,
}

impl Diagnostic {
    pub fn error(code: &str, message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Error,
            code: code.into(),
            message: message.into(),
            pair: None,
        }
    }
    pub fn warning(code: &str, message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Warning,
            code: code.into(),
            message: message.into(),
            pair: None,
        }
    }
    pub fn for_pair(mut self, pair: (usize, usize)) -> Self {
        self.pair = Some(pair);
        self
    }
}

/// Residual df at or below this value draws a warning.
pub const LOW_DF_WARNING: usize = 2;

/// Report every violated invariant. An empty list means the dataset and
/// configuration can be analyzed.
pub fn validate(ds: &Dataset, cfg: &AnalysisConfig) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let g = ds.num_groups();
    let p = ds.num_covariates();
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        out.push(Diagnostic::error(
            "alpha_out_of_range",
            format!("alpha must lie in (0, 1), got {}", cfg.alpha),
        ));
    }
    if cfg.draws < 1000 {
        out.push(Diagnostic::error(
            "too_few_draws",
            format!(
                "at least 1000 Monte Carlo draws required, got {}",
                cfg.draws
            ),
        ));
    }
    if cfg.scale_mode == ScaleMode::Classical && p > 0 {
        out.push(Diagnostic::error(
            "classical_scale_with_covariates",
            "classical scale is only defined for one-way layouts (no covariates)",
        ));
    }
    if let ComparisonFamily::VersusControl { control } = cfg.family {
        if control >= g {
            out.push(Diagnostic::error(
                "invalid_control",
                format!("control group index {control} out of range (g = {g})"),
            ));
            return out;
        }
    }
    if p > 0 && alignment::global_rank_deficient(ds) {
        out.push(Diagnostic::error(
            "rank_deficient_design",
            "centered covariate matrix is rank deficient",
        ));
    }
    let mut pairs = family_pairs(g, cfg.family);
    if cfg.scale_mode == ScaleMode::Weighted && cfg.control_scale == ControlScale::AllPairs {
        pairs = family_pairs(g, ComparisonFamily::AllPairs);
    }
    for (i, j) in pairs {
        let total = ds.group_size(i) + ds.group_size(j);
        if total < p + 3 {
            out.push(
                Diagnostic::error(
                    "insufficient_df",
                    format!(
                        "pair ({}, {}): n_i + n_i' = {total} < p + 3 = {}",
                        ds.label(i),
                        ds.label(j),
                        p + 3
                    ),
                )
                .for_pair((i, j)),
            );
            continue;
        }
        let df = total - p - 2;
        if df <= LOW_DF_WARNING {
            out.push(
                Diagnostic::warning(
                    "low_df",
                    format!(
                        "pair ({}, {}): residual df {df} is very small",
                        ds.label(i),
                        ds.label(j)
                    ),
                )
                .for_pair((i, j)),
            );
        }
        if p > 0 && alignment::pair_rank_deficient(ds, i, j) {
            out.push(
                Diagnostic::error(
                    "rank_deficient_pair",
                    format!(
                        "pair ({}, {}): centered covariate block is rank deficient",
                        ds.label(i),
                        ds.label(j)
                    ),
                )
                .for_pair((i, j)),
            );
        }
    }
    out
}

pub fn has_errors(diags: &[Diagnostic]) -> bool {
    diags.iter().any(|d| d.severity == Severity::Error)
}
