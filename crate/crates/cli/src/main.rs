use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use pwrank::analysis::{family_correlation, reference_for};
use pwrank::critical::{max_quantile_with, Reference, ReferenceDistribution};
use pwrank::data::{parse_csv, ControlScale, CsvSchema, DEFAULT_DRAWS, DEFAULT_SEED};
use pwrank::pair_tests::family_statistics;
use pwrank::report::{report_json, report_tsv, simulation_json, simulation_tsv};
use pwrank::sim::{self, DistName, Procedure, ScenarioGrid, DEFAULT_SIM_DRAWS};
use pwrank::{
    analyze, AnalysisConfig, ComparisonFamily, CorrelationMatrix, Dataset, Error, ErrorCategory,
    Exec, ReferenceKind, ScaleMode, ScoreFunction, Sidedness,
};
use serde_json::json;

const EXIT_INPUT: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(
    name = "pwrank",
    version,
    about = "Simultaneous pairwise rank comparisons for one-way and ANCOVA layouts"
)]
struct Cli {
    /// Worker threads for Monte Carlo work. Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analyze a CSV data set.
    Analyze(AnalyzeArgs),
    /// Run a familywise error / power simulation.
    Simulate(SimulateArgs),
    /// Critical value of the max or max-modulus statistic.
    Quantile(QuantileArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Tsv,
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Allpairs,
    Control,
}

#[derive(Clone, Copy, ValueEnum)]
enum SidedArg {
    Two,
    One,
}

impl From<SidedArg> for Sidedness {
    fn from(s: SidedArg) -> Self {
        match s {
            SidedArg::Two => Sidedness::TwoSided,
            SidedArg::One => Sidedness::OneSided,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum RefArg {
    Mvn,
    Mvt,
}

impl From<RefArg> for ReferenceKind {
    fn from(r: RefArg) -> Self {
        match r {
            RefArg::Mvn => ReferenceKind::Mvn,
            RefArg::Mvt => ReferenceKind::Mvt,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    Weighted,
    Perpair,
    Classical,
}

impl From<ScaleArg> for ScaleMode {
    fn from(s: ScaleArg) -> Self {
        match s {
            ScaleArg::Weighted => ScaleMode::Weighted,
            ScaleArg::Perpair => ScaleMode::PerPair,
            ScaleArg::Classical => ScaleMode::Classical,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ControlScaleArg {
    /// Pool the scale over treatment-control pairs only.
    Control,
    /// Pool the scale over all pairs.
    All,
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    response: String,
    #[arg(long)]
    group: String,
    #[arg(long, value_delimiter = ',')]
    covariates: Vec<String>,
}

impl DataArgs {
    fn load(&self) -> Result<Dataset, Error> {
        let schema = CsvSchema {
            response: self.response.clone(),
            group: self.group.clone(),
            covariates: self.covariates.clone(),
        };
        parse_csv(File::open(&self.data)?, &schema)
    }
}

#[derive(Args)]
struct MethodArgs {
    #[arg(long, default_value = "wilcoxon")]
    scores: String,
    #[arg(long, value_enum, default_value = "allpairs")]
    family: FamilyArg,
    /// Label of the control group (with `--family control`).
    #[arg(long)]
    control: Option<String>,
    #[arg(long, value_enum, default_value = "control")]
    control_scale: ControlScaleArg,
    #[arg(long, value_enum, default_value = "weighted")]
    scale: ScaleArg,
}

impl MethodArgs {
    fn config(&self, ds: &Dataset) -> Result<AnalysisConfig, Error> {
        let family = match (self.family, &self.control) {
            (FamilyArg::Allpairs, _) => ComparisonFamily::AllPairs,
            (FamilyArg::Control, Some(label)) => ComparisonFamily::VersusControl {
                control: ds.group_index(label)?,
            },
            (FamilyArg::Control, None) => {
                return Err(Error::InvalidConfig(
                    "--family control needs --control LABEL".into(),
                ))
            }
        };
        Ok(AnalysisConfig {
            score_function: ScoreFunction::by_name(&self.scores)?,
            family,
            scale_mode: self.scale.into(),
            control_scale: match self.control_scale {
                ControlScaleArg::Control => ControlScale::ControlPairs,
                ControlScaleArg::All => ControlScale::AllPairs,
            },
            ..AnalysisConfig::default()
        })
    }
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    method: MethodArgs,
    #[arg(long, value_enum, default_value = "two")]
    sided: SidedArg,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long = "ref", value_enum, default_value = "mvt")]
    reference: RefArg,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_DRAWS)]
    draws: usize,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProcArg {
    PwrW,
    Pwr,
    Ls,
}

impl From<ProcArg> for Procedure {
    fn from(p: ProcArg) -> Self {
        match p {
            ProcArg::PwrW => Procedure::PwrW,
            ProcArg::Pwr => Procedure::Pwr,
            ProcArg::Ls => Procedure::Ls,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum DistArg {
    Normal,
    Lognormal,
    Cauchy,
    HeteroNormal,
}

impl From<DistArg> for DistName {
    fn from(d: DistArg) -> Self {
        match d {
            DistArg::Normal => DistName::Normal,
            DistArg::Lognormal => DistName::Lognormal,
            DistArg::Cauchy => DistName::Cauchy,
            DistArg::HeteroNormal => DistName::HeteroNormal,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// TOML scenario grid. Inline flags below are used when absent.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Overrides `replications` of the scenario file.
    #[arg(long)]
    reps: Option<usize>,
    /// Overrides `seed` of the scenario file.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "pwr-w")]
    procedure: Vec<ProcArg>,
    #[arg(long = "ref", value_enum, value_delimiter = ',', default_value = "mvt")]
    reference: Vec<RefArg>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "normal")]
    dist: Vec<DistArg>,
    #[arg(long, value_delimiter = ',', default_value = "10")]
    n: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0.05")]
    alpha: Vec<f64>,
    #[arg(long, default_value_t = 6)]
    g: usize,
    /// Group means; defaults to 2 for every group.
    #[arg(long, value_delimiter = ',')]
    mu: Vec<f64>,
    #[arg(long, default_value_t = 5.0)]
    beta: f64,
    #[arg(long, value_delimiter = ',')]
    variances: Vec<f64>,
    /// Monte Carlo draws per critical value.
    #[arg(long)]
    draws: Option<usize>,
    #[arg(long, default_value = "wilcoxon")]
    scores: String,
    #[arg(long, value_enum, default_value = "two")]
    sided: SidedArg,
    #[arg(long, value_enum, default_value = "tsv")]
    format: Format,
}

impl SimulateArgs {
    fn grid(&self) -> Result<ScenarioGrid, Error> {
        let mut grid = match &self.scenario {
            Some(path) => ScenarioGrid::from_toml(&std::fs::read_to_string(path)?)?,
            None => ScenarioGrid {
                g: self.g,
                mu: if self.mu.is_empty() {
                    vec![2.0; self.g]
                } else {
                    self.mu.clone()
                },
                beta: self.beta,
                variances: (!self.variances.is_empty()).then(|| self.variances.clone()),
                replications: 1000,
                seed: DEFAULT_SEED,
                draws: self.draws.unwrap_or(DEFAULT_SIM_DRAWS),
                scores: self.scores.clone(),
                sided: self.sided.into(),
                procedures: self.procedure.iter().map(|&p| p.into()).collect(),
                references: self.reference.iter().map(|&r| r.into()).collect(),
                distributions: self.dist.iter().map(|&d| d.into()).collect(),
                n: self.n.clone(),
                alpha: self.alpha.clone(),
            },
        };
        if let Some(r) = self.reps {
            grid.replications = r;
        }
        if let Some(s) = self.seed {
            grid.seed = s;
        }
        if let (Some(d), Some(_)) = (self.draws, &self.scenario) {
            grid.draws = d;
        }
        Ok(grid)
    }
}

#[derive(Args)]
struct QuantileArgs {
    /// JSON file with a square correlation matrix (array of rows).
    #[arg(long, conflicts_with_all = ["k", "data"])]
    correlation: Option<PathBuf>,
    /// Use the K x K identity correlation.
    #[arg(long, conflicts_with = "data")]
    k: Option<usize>,
    /// Derive the correlation (and t df) from a data set.
    #[arg(long, requires_all = ["response", "group"])]
    data: Option<PathBuf>,
    #[arg(long)]
    response: Option<String>,
    #[arg(long)]
    group: Option<String>,
    #[arg(long, value_delimiter = ',')]
    covariates: Vec<String>,
    #[command(flatten)]
    method: MethodArgs,
    #[arg(long = "ref", value_enum, default_value = "mvn")]
    reference: RefArg,
    /// Degrees of freedom for `--ref mvt`; derived from `--data` when omitted.
    #[arg(long)]
    df: Option<f64>,
    #[arg(long, value_enum, default_value = "two")]
    sided: SidedArg,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_DRAWS)]
    draws: usize,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

fn read_correlation(path: &PathBuf) -> Result<CorrelationMatrix, Error> {
    let rows: Vec<Vec<f64>> = serde_json::from_reader(File::open(path)?)
        .map_err(|e| Error::InvalidConfig(format!("correlation file: {e}")))?;
    let k = rows.len();
    if k == 0 || rows.iter().any(|r| r.len() != k) {
        return Err(Error::InvalidConfig(
            "correlation matrix must be square and nonempty".into(),
        ));
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    CorrelationMatrix::from_matrix(DMatrix::from_row_slice(k, k, &flat), Vec::new())
}

fn cmd_quantile(args: &QuantileArgs, exec: Exec) -> Result<String, Error> {
    let (correlation, derived_df) = if let Some(path) = &args.correlation {
        (read_correlation(path)?, None)
    } else if let Some(k) = args.k {
        if k == 0 {
            return Err(Error::InvalidConfig("--k must be positive".into()));
        }
        (CorrelationMatrix::identity(k), None)
    } else if let Some(path) = &args.data {
        let data = DataArgs {
            data: path.clone(),
            response: args.response.clone().unwrap_or_default(),
            group: args.group.clone().unwrap_or_default(),
            covariates: args.covariates.clone(),
        };
        let ds = data.load()?;
        let cfg = AnalysisConfig {
            reference: ReferenceKind::Mvt,
            ..args.method.config(&ds)?
        };
        let fs = family_statistics(&ds, &cfg)?;
        let df = match reference_for(&fs, &cfg)? {
            Reference::Mvt { df } => Some(df),
            Reference::Mvn => None,
        };
        (family_correlation(&fs, cfg.family)?, df)
    } else {
        return Err(Error::InvalidConfig(
            "one of --correlation, --k or --data is required".into(),
        ));
    };
    let reference = match args.reference {
        RefArg::Mvn => Reference::Mvn,
        RefArg::Mvt => Reference::Mvt {
            df: args
                .df
                .or(derived_df)
                .ok_or_else(|| Error::InvalidConfig("--ref mvt needs --df (or --data)".into()))?,
        },
    };
    let k = correlation.dim();
    let rd = ReferenceDistribution {
        reference,
        correlation,
    };
    let q = max_quantile_with(
        &rd,
        args.alpha,
        args.sided.into(),
        args.draws,
        args.seed,
        exec,
    )?;
    Ok(match args.format {
        Format::Json => serde_json::to_string_pretty(&json!({
            "quantile": q.value,
            "mc_se": q.mc_se,
            "draws": q.draws,
            "dimension": k,
            "reference": reference,
            "alpha": args.alpha,
            "sided": Sidedness::from(args.sided),
            "seed": args.seed,
        }))
        .expect("serializable"),
        Format::Tsv => format!(
            "quantile\tmc_se\tdraws\n{:.6}\t{:.6}\t{}",
            q.value, q.mc_se, q.draws
        ),
    })
}

fn cmd_analyze(args: &AnalyzeArgs, exec: Exec) -> Result<String, Error> {
    let ds = args.data.load()?;
    let cfg = AnalysisConfig {
        sidedness: args.sided.into(),
        alpha: args.alpha,
        reference: args.reference.into(),
        seed: args.seed,
        draws: args.draws,
        exec,
        ..args.method.config(&ds)?
    };
    let report = analyze(&ds, &cfg)?;
    match args.format {
        Format::Json => report_json(&report),
        Format::Tsv => Ok(report_tsv(&report)),
    }
}

fn cmd_simulate(args: &SimulateArgs, exec: Exec) -> Result<String, Error> {
    let grid = args.grid()?;
    let rows = grid
        .scenarios()?
        .iter()
        .map(|sc| sim::run(sc, exec))
        .collect::<Result<Vec<_>, _>>()?;
    match args.format {
        Format::Json => simulation_json(&rows),
        Format::Tsv => Ok(simulation_tsv(&rows)),
    }
}

fn configure_threads(threads: Option<usize>) -> Result<Exec, Error> {
    match threads {
        Some(0) => Err(Error::InvalidConfig("--threads must be positive".into())),
        Some(1) => Ok(Exec::Sequential),
        #[cfg(feature = "parallel")]
        Some(n) => {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| Error::InvalidConfig(e.to_string()))?;
            Ok(Exec::Parallel)
        }
        #[cfg(not(feature = "parallel"))]
        Some(_) => Ok(Exec::Sequential),
        None => Ok(Exec::default()),
    }
}

fn run(cli: &Cli) -> Result<String, Error> {
    let exec = configure_threads(cli.threads)?;
    match &cli.command {
        Command::Analyze(a) => cmd_analyze(a, exec),
        Command::Simulate(a) => cmd_simulate(a, exec),
        Command::Quantile(a) => cmd_quantile(a, exec),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(out) => {
            let mut stdout = io::stdout().lock();
            let _ = writeln!(stdout, "{}", out.trim_end());
            ExitCode::SUCCESS
        }
        Err(e) => {
            let category = e.category();
            let body = json!({
                "error": {
                    "category": match category {
                        ErrorCategory::Input => "input",
                        ErrorCategory::Numerical => "numerical",
                    },
                    "kind": e.kind(),
                    "message": e.to_string(),
                }
            });
            eprintln!("{body}");
            ExitCode::from(match category {
                ErrorCategory::Input => EXIT_INPUT,
                ErrorCategory::Numerical => EXIT_NUMERICAL,
            })
        }
    }
}
