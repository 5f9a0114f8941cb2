//! JSON and TSV rendering of analysis reports and simulation summaries.

use std::fmt::Write as _;

use crate::analysis::ComparisonReport;
use crate::data::ReferenceKind;
use crate::error::{Error, Result};
use crate::sim::{SimulationResult, SimulationSummary};

pub fn report_json(report: &ComparisonReport) -> Result<String> {
    serde_json::to_string_pretty(report).map_err(|e| Error::Numerical(e.to_string()))
}

/// The serde name of a unit enum variant.
fn tag_name<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|j| j.as_str().map(str::to_string))
        .unwrap_or_default()
}

fn reference_name(r: ReferenceKind) -> &'static str {
    match r {
        ReferenceKind::Mvn => "mvn",
        ReferenceKind::Mvt => "mvt",
    }
}

/// One row per comparison, metadata as `#` comment lines.
pub fn report_tsv(report: &ComparisonReport) -> String {
    let c = &report.config;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# scores={} scale={} seed={} draws={}",
        c.scores,
        tag_name(&c.scale_mode),
        c.seed,
        c.draws
    );
    let _ = write!(out, "# reference={}", reference_name(c.reference));
    if let (Some(df), Some(m)) = (c.df, &c.df_method) {
        let _ = write!(out, " df={df:.4} df_method={m}");
    }
    let _ = writeln!(
        out,
        " alpha={} critical_value={:.4} critical_value_se={:.4}",
        c.alpha, report.critical_value.value, report.critical_value.mc_se
    );
    let _ = writeln!(out, "# weighted_scale={:.6}", report.scale.weighted);
    for d in &report.diagnostics {
        let _ = writeln!(out, "# {} {}: {}", tag_name(&d.severity), d.code, d.message);
    }
    let _ = writeln!(
        out,
        "comparison\tstatistic\tadj_p_value({})\tp_value_se\tdecision",
        reference_name(c.reference)
    );
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{}\t{:.3}\t{:.3}\t{:.4}\t{}",
            r.comparison(),
            r.statistic,
            r.p_value,
            r.p_value_se,
            if r.reject { "reject" } else { "retain" }
        );
    }
    out
}

pub fn simulation_json(rows: &[SimulationSummary]) -> Result<String> {
    serde_json::to_string_pretty(rows).map_err(|e| Error::Numerical(e.to_string()))
}

fn cell(r: Option<SimulationResult>) -> (String, String) {
    match r {
        None => ("NA".into(), "NA".into()),
        Some(r) => (
            format!("{:.4}", r.estimate),
            r.mc_se.map_or_else(|| "NA".into(), |s| format!("{s:.4}")),
        ),
    }
}

pub const SIMULATION_TSV_HEADER: &str = "procedure\treference\tdistribution\tn\talpha\treplications\tfwer\tfwer_se\tminimal_power\tminimal_power_se\tproportional_power\tproportional_power_se\tdf_min\tdf_max";

/// One row per scenario; estimates that do not apply are `NA`.
pub fn simulation_tsv(rows: &[SimulationSummary]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{SIMULATION_TSV_HEADER}");
    for s in rows {
        let sc = &s.scenario;
        let (f, fse) = cell(s.fwer);
        let (m, mse) = cell(s.minimal_power);
        let (p, pse) = cell(s.proportional_power);
        let df = |d: Option<f64>| d.map_or_else(|| "NA".into(), |v| format!("{v:.2}"));
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{f}\t{fse}\t{m}\t{mse}\t{p}\t{pse}\t{}\t{}",
            sc.procedure.name(),
            reference_name(sc.reference),
            sc.error_dist.name(),
            sc.n,
            sc.alpha,
            sc.replications,
            df(s.df_min),
            df(s.df_max),
        );
    }
    out
}
