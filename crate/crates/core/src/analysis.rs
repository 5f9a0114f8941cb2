//! End-to-end analysis: validate, align, rank, standardize, correlate, refer.

use serde::{Deserialize, Serialize};

use crate::critical::{
    order_statistic_quantile, p_values_from_maxima, reference_df, NullMaxima, Quantile, Reference,
};
use crate::data::{
    has_errors, validate, AnalysisConfig, ComparisonFamily, ControlScale, Dataset, Diagnostic,
    ReferenceKind, ScaleMode, Severity, Sidedness,
};
use crate::error::{Error, Result};
use crate::joint_dist::{correlation_all_pairs, correlation_control, CorrelationMatrix};
use crate::pair_tests::{family_statistics, FamilyStatistics, ScaleEstimates};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRow {
    pub pair: (usize, usize),
    pub first: String,
    pub second: String,
    pub statistic: f64,
    pub numerator: f64,
    pub se: f64,
    pub scale: f64,
    pub p_value: f64,
    pub p_value_se: f64,
    pub reject: bool,
}

impl PairRow {
    pub fn comparison(&self) -> String {
        format!("{} vs {}", self.first, self.second)
    }
}

/// Everything needed to rerun the analysis bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub scores: String,
    pub family: ComparisonFamily,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub control: Option<String>,
    pub control_scale: ControlScale,
    pub sided: Sidedness,
    pub alpha: f64,
    pub reference: ReferenceKind,
    pub scale_mode: ScaleMode,
    pub draws: usize,
    pub seed: u64,
    /// Degrees of freedom of the multivariate t reference.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub df: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub df_method: Option<String>,
    pub quantile_estimator: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rows: Vec<PairRow>,
    pub critical_value: Quantile,
    pub correlation: CorrelationMatrix,
    pub scale: ScaleEstimates,
    pub group_labels: Vec<String>,
    pub group_sizes: Vec<usize>,
    pub num_covariates: usize,
    pub dropped_rows: Vec<usize>,
    pub config: ConfigEcho,
    pub diagnostics: Vec<Diagnostic>,
}

fn df_method(mode: ScaleMode) -> &'static str {
    match mode {
        ScaleMode::Weighted => "satterthwaite",
        ScaleMode::PerPair | ScaleMode::Classical => "min_pair_df",
    }
}

/// Reference distribution for a family's statistics under `cfg`.
pub fn reference_for(fs: &FamilyStatistics, cfg: &AnalysisConfig) -> Result<Reference> {
    Ok(match cfg.reference {
        ReferenceKind::Mvn => Reference::Mvn,
        ReferenceKind::Mvt => {
            let df = match cfg.scale_mode {
                ScaleMode::Weighted => reference_df(&fs.scale, cfg.scale_mode)?,
                _ => match fs.contexts.iter().map(|c| c.design.df()).min() {
                    Some(d) if d > 0 => d as f64,
                    _ => return Err(Error::ZeroDenominator),
                },
            };
            Reference::Mvt { df }
        }
    })
}

pub fn family_correlation(
    fs: &FamilyStatistics,
    family: ComparisonFamily,
) -> Result<CorrelationMatrix> {
    match family {
        ComparisonFamily::AllPairs => correlation_all_pairs(&fs.contexts),
        ComparisonFamily::VersusControl { .. } => correlation_control(&fs.contexts),
    }
}

fn first_error(diags: &[Diagnostic]) -> Error {
    let msgs: Vec<String> = diags
        .iter()
        .filter(|d| d.severity == Severity::Error)
        .map(|d| format!("{}: {}", d.code, d.message))
        .collect();
    let joined = msgs.join("; ");
    if diags.iter().any(|d| d.code.starts_with("rank_deficient")) {
        Error::RankDeficient(joined)
    } else if diags.iter().any(|d| {
        d.severity == Severity::Error
            && matches!(
                d.code.as_str(),
                "alpha_out_of_range"
                    | "too_few_draws"
                    | "invalid_control"
                    | "classical_scale_with_covariates"
            )
    }) {
        Error::InvalidConfig(joined)
    } else {
        Error::InvalidDataset(joined)
    }
}

pub fn analyze(ds: &Dataset, cfg: &AnalysisConfig) -> Result<ComparisonReport> {
    let mut diagnostics = validate(ds, cfg);
    if has_errors(&diagnostics) {
        return Err(first_error(&diagnostics));
    }
    let fs = family_statistics(ds, cfg)?;
    if fs.ties {
        diagnostics.push(Diagnostic::warning(
            "ties",
            "tied aligned values within a pair; mid-ranks used",
        ));
    }
    if !ds.dropped_rows().is_empty() {
        diagnostics.push(Diagnostic::warning(
            "dropped_rows",
            format!(
                "{} rows with missing values were dropped",
                ds.dropped_rows().len()
            ),
        ));
    }
    let mut correlation = family_correlation(&fs, cfg.family)?;
    correlation.labels = fs.stats.iter().map(|s| s.pair).collect();
    if correlation.psd_repaired {
        diagnostics.push(Diagnostic::warning(
            "psd_repaired",
            format!(
                "correlation matrix had eigenvalue {:e}; clipped to zero",
                correlation.min_eigenvalue
            ),
        ));
    }
    let reference = reference_for(&fs, cfg)?;
    let nm = NullMaxima::sample(&correlation, cfg.draws, cfg.seed, cfg.exec);
    let mut maxima = nm.maxima(reference, cfg.sidedness, cfg.seed, cfg.exec)?;
    let values: Vec<f64> = fs.stats.iter().map(|s| s.value).collect();
    let pv = p_values_from_maxima(&values, &mut maxima, cfg.sidedness);
    let critical_value = order_statistic_quantile(&mut maxima, cfg.alpha)?;
    let decisions = crate::critical::decide(&values, critical_value.value, cfg.sidedness);

    let rows = fs
        .stats
        .iter()
        .enumerate()
        .map(|(k, s)| PairRow {
            pair: s.pair,
            first: ds.label(s.pair.0).to_string(),
            second: ds.label(s.pair.1).to_string(),
            statistic: s.value,
            numerator: s.numerator,
            se: s.se,
            scale: s.scale,
            p_value: pv.p[k],
            p_value_se: pv.mc_se[k],
            reject: decisions[k],
        })
        .collect();

    let (df, method) = match reference {
        Reference::Mvn => (None, None),
        Reference::Mvt { df } => (Some(df), Some(df_method(cfg.scale_mode).to_string())),
    };
    let config = ConfigEcho {
        scores: cfg.score_function.name().to_string(),
        family: cfg.family,
        control: match cfg.family {
            ComparisonFamily::VersusControl { control } => Some(ds.label(control).to_string()),
            ComparisonFamily::AllPairs => None,
        },
        control_scale: cfg.control_scale,
        sided: cfg.sidedness,
        alpha: cfg.alpha,
        reference: cfg.reference,
        scale_mode: cfg.scale_mode,
        draws: cfg.draws,
        seed: cfg.seed,
        df,
        df_method: method,
        quantile_estimator: "order_statistic_ceil".into(),
    };
    Ok(ComparisonReport {
        rows,
        critical_value,
        correlation,
        scale: fs.scale,
        group_labels: ds.labels().to_vec(),
        group_sizes: ds.group_sizes(),
        num_covariates: ds.num_covariates(),
        dropped_rows: ds.dropped_rows().to_vec(),
        config,
        diagnostics,
    })
}
