//! Monte Carlo study of familywise error and power.
//!
//! A scenario fixes the covariate once (from the master seed) and redraws the
//! errors for every replicate. Because the design is fixed, pair designs,
//! correlation matrices and multivariate normal maxima are computed once per
//! scenario. Only the multivariate t scaling is redrawn when the reference df
//! changes between replicates.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Cauchy, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::alignment::{PairDesign, ReducedModel};
use crate::critical::{reference_df, NullMaxima, Reference};
use crate::data::{family_pairs, ComparisonFamily, Dataset, ReferenceKind, ScaleMode, Sidedness};
use crate::error::{Error, Result};
use crate::joint_dist::{correlation_matrix, CorrelationMatrix};
use crate::pair_tests::statistics_from_contexts;
use crate::par::{try_map_range, Exec};
use crate::rng::{derive_seed, substream, tag};
use crate::scores::ScoreFunction;

pub const DEFAULT_SIM_DRAWS: usize = 20_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ErrorDist {
    Normal,
    /// Standard lognormal minus its median, so that the error median is 0.
    Lognormal,
    Cauchy,
    /// Normal with a variance per group.
    HeteroNormal {
        variances: Vec<f64>,
    },
}

impl ErrorDist {
    pub fn name(&self) -> &'static str {
        match self {
            ErrorDist::Normal => "normal",
            ErrorDist::Lognormal => "lognormal",
            ErrorDist::Cauchy => "cauchy",
            ErrorDist::HeteroNormal { .. } => "hetero_normal",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Procedure {
    /// Pairwise ranking with the pooled weighted scale.
    PwrW,
    /// Pairwise ranking with per-pair scales.
    Pwr,
    /// Least-squares contrasts from the full ANCOVA fit.
    Ls,
}

impl Procedure {
    pub fn name(&self) -> &'static str {
        match self {
            Procedure::PwrW => "pwr_w",
            Procedure::Pwr => "pwr",
            Procedure::Ls => "ls",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationScenario {
    pub g: usize,
    pub n: usize,
    pub mu: Vec<f64>,
    pub beta: f64,
    pub error_dist: ErrorDist,
    pub procedure: Procedure,
    pub reference: ReferenceKind,
    pub alpha: f64,
    pub sided: Sidedness,
    pub replications: usize,
    pub master_seed: u64,
    pub draws: usize,
    pub scores: String,
}

impl SimulationScenario {
    /// Six groups, one covariate with slope 5, global null at mu = 2.
    pub fn null_six_groups(n: usize, procedure: Procedure, reference: ReferenceKind) -> Self {
        SimulationScenario {
            g: 6,
            n,
            mu: vec![2.0; 6],
            beta: 5.0,
            error_dist: ErrorDist::Normal,
            procedure,
            reference,
            alpha: 0.05,
            sided: Sidedness::TwoSided,
            replications: 10_000,
            master_seed: 1,
            draws: DEFAULT_SIM_DRAWS,
            scores: "wilcoxon".into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScenario(m));
        if self.g < 2 {
            return bad(format!("g must be at least 2, got {}", self.g));
        }
        if self.n < 2 {
            return bad(format!("n must be at least 2, got {}", self.n));
        }
        if self.mu.len() != self.g {
            return bad(format!(
                "mu has {} entries, expected g = {}",
                self.mu.len(),
                self.g
            ));
        }
        if self.mu.iter().any(|m| !m.is_finite()) || !self.beta.is_finite() {
            return bad("mu and beta must be finite".into());
        }
        if let ErrorDist::HeteroNormal { variances } = &self.error_dist {
            if variances.len() != self.g {
                return bad(format!(
                    "{} variances given, expected g = {}",
                    variances.len(),
                    self.g
                ));
            }
            if variances.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                return bad("variances must be positive".into());
            }
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if self.replications < 1 {
            return bad("replications must be at least 1".into());
        }
        if self.draws < crate::critical::MIN_DRAWS {
            return bad(format!(
                "draws must be at least {}",
                crate::critical::MIN_DRAWS
            ));
        }
        ScoreFunction::by_name(&self.scores).map_err(|e| Error::InvalidScenario(e.to_string()))?;
        Ok(())
    }

    pub fn groups(&self) -> Vec<usize> {
        (0..self.g)
            .flat_map(|i| std::iter::repeat_n(i, self.n))
            .collect()
    }

    /// The covariate vector, shared by all replicates.
    pub fn covariate(&self) -> Vec<f64> {
        let mut rng = substream(self.master_seed, tag::COVARIATE, 0);
        (0..self.g * self.n)
            .map(|_| rng.sample(StandardNormal))
            .collect()
    }

    /// Pairs whose group means differ.
    pub fn false_nulls(&self) -> Vec<bool> {
        family_pairs(self.g, ComparisonFamily::AllPairs)
            .into_iter()
            .map(|(i, j)| self.mu[i] != self.mu[j])
            .collect()
    }
}

fn draw_errors(sc: &SimulationScenario, rep: usize) -> Vec<f64> {
    let mut rng = substream(sc.master_seed, tag::ERRORS, rep as u64);
    let total = sc.g * sc.n;
    match &sc.error_dist {
        ErrorDist::Normal => (0..total).map(|_| rng.sample(StandardNormal)).collect(),
        ErrorDist::Lognormal => (0..total)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                z.exp() - 1.0
            })
            .collect(),
        ErrorDist::Cauchy => {
            let c = Cauchy::new(0.0, 1.0).expect("valid scale");
            (0..total).map(|_| c.sample(&mut rng)).collect()
        }
        ErrorDist::HeteroNormal { variances } => (0..total)
            .map(|k| {
                let z: f64 = rng.sample(StandardNormal);
                variances[k / sc.n].sqrt() * z
            })
            .collect(),
    }
}

fn responses(sc: &SimulationScenario, x: &[f64], rep: usize) -> Vec<f64> {
    draw_errors(sc, rep)
        .into_iter()
        .enumerate()
        .map(|(k, e)| sc.mu[k / sc.n] + sc.beta * x[k] + e)
        .collect()
}

/// One replicate's data set.
pub fn generate_replicate(sc: &SimulationScenario, rep: usize) -> Result<Dataset> {
    sc.validate()?;
    let x = sc.covariate();
    let y = responses(sc, &x, rep);
    Dataset::from_indices(y, sc.groups(), DMatrix::from_column_slice(x.len(), 1, &x))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResultKind {
    Fwer,
    MinimalPower,
    ProportionalPower,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub kind: ResultKind,
    pub estimate: f64,
    /// `None` with a single replicate.
    pub mc_se: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub scenario: SimulationScenario,
    /// Rejection of at least one true null; `None` when every null is false.
    pub fwer: Option<SimulationResult>,
    /// `None` when every null is true.
    pub minimal_power: Option<SimulationResult>,
    pub proportional_power: Option<SimulationResult>,
    /// Reference df; a range when it varies across replicates.
    pub df_min: Option<f64>,
    pub df_max: Option<f64>,
    /// Critical value when it is the same for every replicate.
    pub fixed_critical_value: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Outcome {
    any_true_rejected: bool,
    false_rejected: usize,
    df: Option<f64>,
}

/// Per-scenario state shared by all replicates.
struct Prepared {
    x: Vec<f64>,
    kind: PreparedKind,
    nm: NullMaxima,
    /// Set when the reference does not depend on the replicate.
    fixed: Option<f64>,
}

enum PreparedKind {
    Rank {
        model: ReducedModel,
        designs: Vec<Arc<PairDesign>>,
        sf: ScoreFunction,
        mode: ScaleMode,
    },
    Ls(LsDesign),
}

/// Full-model least squares: group intercepts plus common slopes.
struct LsDesign {
    /// `(g + p) x N` map from responses to coefficients.
    solver: DMatrix<f64>,
    z: DMatrix<f64>,
    /// `sqrt(c' (Z'Z)^-1 c)` per contrast.
    se_unit: Vec<f64>,
    contrasts: Vec<(usize, usize)>,
    df: usize,
}

impl LsDesign {
    fn new(sc: &SimulationScenario, x: &[f64]) -> Result<(Self, CorrelationMatrix)> {
        let total = sc.g * sc.n;
        let groups = sc.groups();
        let z = DMatrix::from_fn(total, sc.g + 1, |r, c| {
            if c < sc.g {
                if groups[r] == c {
                    1.0
                } else {
                    0.0
                }
            } else {
                x[r]
            }
        });
        let ztz = z.transpose() * &z;
        let inv = ztz
            .cholesky()
            .ok_or_else(|| Error::Numerical("singular full-model design".into()))?
            .inverse();
        let contrasts = family_pairs(sc.g, ComparisonFamily::AllPairs);
        let vecs: Vec<DVector<f64>> = contrasts
            .iter()
            .map(|&(i, j)| {
                let mut c = DVector::zeros(sc.g + 1);
                c[i] = 1.0;
                c[j] = -1.0;
                c
            })
            .collect();
        let k = vecs.len();
        let cov = DMatrix::from_fn(k, k, |a, b| (vecs[a].transpose() * &inv * &vecs[b])[0]);
        let se_unit: Vec<f64> = (0..k).map(|a| cov[(a, a)].sqrt()).collect();
        let corr = DMatrix::from_fn(k, k, |a, b| cov[(a, b)] / (se_unit[a] * se_unit[b]));
        let corr = CorrelationMatrix::from_matrix(corr, contrasts.clone())?;
        let solver = &inv * z.transpose();
        Ok((
            LsDesign {
                solver,
                z,
                se_unit,
                contrasts,
                df: total - sc.g - 1,
            },
            corr,
        ))
    }

    fn statistics(&self, y: &[f64]) -> Result<Vec<f64>> {
        let y = DVector::from_column_slice(y);
        let theta = &self.solver * &y;
        let resid = &y - &self.z * &theta;
        let mse = resid.norm_squared() / self.df as f64;
        if !(mse > 0.0) {
            return Err(Error::NonPositiveScale(mse));
        }
        let s = mse.sqrt();
        Ok(self
            .contrasts
            .iter()
            .zip(&self.se_unit)
            .map(|(&(i, j), u)| (theta[i] - theta[j]) / (s * u))
            .collect())
    }
}

fn critical_seed(sc: &SimulationScenario) -> u64 {
    derive_seed(sc.master_seed, tag::MVN_DRAWS)
}

fn prepare(sc: &SimulationScenario, exec: Exec) -> Result<Prepared> {
    sc.validate()?;
    let x = sc.covariate();
    let seed = critical_seed(sc);
    let (kind, corr, fixed_ref) = match sc.procedure {
        Procedure::Ls => {
            let (ls, corr) = LsDesign::new(sc, &x)?;
            let r = match sc.reference {
                ReferenceKind::Mvn => Reference::Mvn,
                ReferenceKind::Mvt => Reference::Mvt { df: ls.df as f64 },
            };
            (PreparedKind::Ls(ls), corr, Some(r))
        }
        Procedure::PwrW | Procedure::Pwr => {
            let ds = Dataset::from_indices(
                vec![0.0; x.len()],
                sc.groups(),
                DMatrix::from_column_slice(x.len(), 1, &x),
            )?;
            let model = ReducedModel::new(&ds)?;
            let designs = family_pairs(sc.g, ComparisonFamily::AllPairs)
                .into_iter()
                .map(|(i, j)| PairDesign::new(&ds, i, j).map(Arc::new))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&PairDesign> = designs.iter().map(|d| d.as_ref()).collect();
            let corr = correlation_matrix(&refs)?;
            let mode = if sc.procedure == Procedure::PwrW {
                ScaleMode::Weighted
            } else {
                ScaleMode::PerPair
            };
            let fixed_ref = match (sc.reference, mode) {
                (ReferenceKind::Mvn, _) => Some(Reference::Mvn),
                (ReferenceKind::Mvt, ScaleMode::PerPair) => {
                    let df = designs.iter().map(|d| d.df()).min().unwrap_or(0);
                    Some(Reference::Mvt { df: df as f64 })
                }
                (ReferenceKind::Mvt, _) => None,
            };
            let sf = ScoreFunction::by_name(&sc.scores)?;
            (
                PreparedKind::Rank {
                    model,
                    designs,
                    sf,
                    mode,
                },
                corr,
                fixed_ref,
            )
        }
    };
    let nm = NullMaxima::sample(&corr, sc.draws, seed, exec);
    let fixed = match fixed_ref {
        Some(r) => Some(nm.quantile(r, sc.alpha, sc.sided, seed, exec)?.value),
        None => None,
    };
    Ok(Prepared { x, kind, nm, fixed })
}

fn replicate(
    sc: &SimulationScenario,
    prep: &Prepared,
    truth: &[bool],
    rep: usize,
) -> Result<Outcome> {
    let y = responses(sc, &prep.x, rep);
    let (stats, q, df) = match &prep.kind {
        PreparedKind::Ls(ls) => (ls.statistics(&y)?, prep.fixed.expect("fixed for ls"), None),
        PreparedKind::Rank {
            model,
            designs,
            sf,
            mode,
        } => {
            let ad = model.fit(&y);
            let contexts = designs.iter().map(|d| d.context(&ad.aligned)).collect();
            let fs = statistics_from_contexts(contexts, None, sf, *mode)?;
            let stats: Vec<f64> = fs.stats.iter().map(|s| s.value).collect();
            match prep.fixed {
                Some(q) => (stats, q, None),
                None => {
                    let df = reference_df(&fs.scale, *mode)?;
                    let seed = derive_seed(
                        derive_seed(sc.master_seed, tag::REPLICATE_CRITICAL),
                        rep as u64,
                    );
                    let q =
                        prep.nm
                            .quantile_value(Reference::Mvt { df }, sc.alpha, sc.sided, seed)?;
                    (stats, q, Some(df))
                }
            }
        }
    };
    let reject = crate::critical::decide(&stats, q, sc.sided);
    let mut out = Outcome {
        any_true_rejected: false,
        false_rejected: 0,
        df,
    };
    for (r, f) in reject.iter().zip(truth) {
        match (*r, *f) {
            (true, true) => out.false_rejected += 1,
            (true, false) => out.any_true_rejected = true,
            _ => {}
        }
    }
    Ok(out)
}

fn proportion(kind: ResultKind, hits: usize, reps: usize) -> SimulationResult {
    let p = hits as f64 / reps as f64;
    SimulationResult {
        kind,
        estimate: p,
        mc_se: (reps > 1).then(|| (p * (1.0 - p) / reps as f64).sqrt()),
    }
}

/// Run every replicate and summarize.
pub fn run(sc: &SimulationScenario, exec: Exec) -> Result<SimulationSummary> {
    let prep = prepare(sc, exec)?;
    let truth = sc.false_nulls();
    let num_false = truth.iter().filter(|f| **f).count();
    let num_true = truth.len() - num_false;
    let outcomes = try_map_range(exec, sc.replications, |rep| {
        replicate(sc, &prep, &truth, rep)
    })?;
    let reps = outcomes.len();
    let fwer = (num_true > 0).then(|| {
        let hits = outcomes.iter().filter(|o| o.any_true_rejected).count();
        proportion(ResultKind::Fwer, hits, reps)
    });
    let (minimal, proportional) = if num_false > 0 {
        let hits = outcomes.iter().filter(|o| o.false_rejected > 0).count();
        let total: usize = outcomes.iter().map(|o| o.false_rejected).sum();
        let mean = total as f64 / (reps * num_false) as f64;
        let ss: f64 = outcomes
            .iter()
            .map(|o| (o.false_rejected as f64 / num_false as f64 - mean).powi(2))
            .sum();
        let se = (reps > 1).then(|| (ss / (reps - 1) as f64 / reps as f64).sqrt());
        (
            Some(proportion(ResultKind::MinimalPower, hits, reps)),
            Some(SimulationResult {
                kind: ResultKind::ProportionalPower,
                estimate: mean,
                mc_se: se,
            }),
        )
    } else {
        (None, None)
    };
    let dfs: Vec<f64> = outcomes.iter().filter_map(|o| o.df).collect();
    let (df_min, df_max) = if dfs.is_empty() {
        let df = match (&prep.kind, sc.reference) {
            (_, ReferenceKind::Mvn) => None,
            (PreparedKind::Ls(ls), _) => Some(ls.df as f64),
            (PreparedKind::Rank { designs, .. }, _) => {
                designs.iter().map(|d| d.df() as f64).reduce(f64::min)
            }
        };
        (df, df)
    } else {
        (
            dfs.iter().copied().reduce(f64::min),
            dfs.iter().copied().reduce(f64::max),
        )
    };
    Ok(SimulationSummary {
        scenario: sc.clone(),
        fwer,
        minimal_power: minimal,
        proportional_power: proportional,
        df_min,
        df_max,
        fixed_critical_value: prep.fixed,
    })
}

/// Familywise error rate; requires equal group means.
pub fn run_fwer(sc: &SimulationScenario, exec: Exec) -> Result<SimulationResult> {
    if sc.false_nulls().iter().any(|f| *f) {
        return Err(Error::InvalidScenario(
            "familywise error needs equal group means".into(),
        ));
    }
    Ok(run(sc, exec)?.fwer.expect("all nulls true"))
}

/// Minimal and proportional power; requires unequal group means.
pub fn run_power(
    sc: &SimulationScenario,
    exec: Exec,
) -> Result<(SimulationResult, SimulationResult)> {
    let s = run(sc, exec)?;
    match (s.minimal_power, s.proportional_power) {
        (Some(m), Some(p)) => Ok((m, p)),
        _ => Err(Error::InvalidScenario(
            "power needs unequal group means".into(),
        )),
    }
}

/// Error distributions addressable from a scenario file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistName {
    Normal,
    Lognormal,
    Cauchy,
    HeteroNormal,
}

fn default_g() -> usize {
    6
}
fn default_beta() -> f64 {
    5.0
}
fn default_draws() -> usize {
    DEFAULT_SIM_DRAWS
}
fn default_scores() -> String {
    "wilcoxon".into()
}
fn default_sided() -> Sidedness {
    Sidedness::TwoSided
}
fn default_seed() -> u64 {
    crate::data::DEFAULT_SEED
}

/// A grid of scenarios: the cross product of procedures, references,
/// distributions, sample sizes and levels over common settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioGrid {
    #[serde(default = "default_g")]
    pub g: usize,
    pub mu: Vec<f64>,
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Group variances for `hetero_normal`.
    #[serde(default)]
    pub variances: Option<Vec<f64>>,
    pub replications: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_draws")]
    pub draws: usize,
    #[serde(default = "default_scores")]
    pub scores: String,
    #[serde(default = "default_sided")]
    pub sided: Sidedness,
    pub procedures: Vec<Procedure>,
    pub references: Vec<ReferenceKind>,
    pub distributions: Vec<DistName>,
    pub n: Vec<usize>,
    pub alpha: Vec<f64>,
}

impl ScenarioGrid {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidScenario(e.to_string()))
    }

    /// Scenarios in row order: procedure, reference, distribution, n, alpha.
    /// LS is paired only with the multivariate t reference.
    pub fn scenarios(&self) -> Result<Vec<SimulationScenario>> {
        let mut out = Vec::new();
        for &procedure in &self.procedures {
            for &reference in &self.references {
                if procedure == Procedure::Ls && reference == ReferenceKind::Mvn {
                    continue;
                }
                for &dist in &self.distributions {
                    let error_dist = match dist {
                        DistName::Normal => ErrorDist::Normal,
                        DistName::Lognormal => ErrorDist::Lognormal,
                        DistName::Cauchy => ErrorDist::Cauchy,
                        DistName::HeteroNormal => ErrorDist::HeteroNormal {
                            variances: self.variances.clone().ok_or_else(|| {
                                Error::InvalidScenario("hetero_normal needs `variances`".into())
                            })?,
                        },
                    };
                    for &n in &self.n {
                        for &alpha in &self.alpha {
                            let sc = SimulationScenario {
                                g: self.g,
                                n,
                                mu: self.mu.clone(),
                                beta: self.beta,
                                error_dist: error_dist.clone(),
                                procedure,
                                reference,
                                alpha,
                                sided: self.sided,
                                replications: self.replications,
                                master_seed: self.seed,
                                draws: self.draws,
                                scores: self.scores.clone(),
                            };
                            sc.validate()?;
                            out.push(sc);
                        }
                    }
                }
            }
        }
        if out.is_empty() {
            return Err(Error::InvalidScenario("grid is empty".into()));
        }
        Ok(out)
    }
}
