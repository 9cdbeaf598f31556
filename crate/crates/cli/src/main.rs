//! `crossing-lab`: exact and simulated crossing-count distributions at
//! extinction for weighted Markov branching processes.
//!
//! Models come from a JSON file or a named preset; every subcommand emits
//! machine-readable JSON (CSV for the flat tables) and the exit code tells
//! scripts what went wrong: 0 success, 1 validation error, 2 numeric
//! degeneracy, 3 statistical gate failure.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crossing_core::{
    compare, conditional_distribution, estimate_distribution, min_root, min_root_at, moments,
    survival_divergence_check, validate, BranchingLaw, Caps, CrossingDistribution, CrossingSet,
    DistError, EmpiricalDistribution, InvalidModel, McError, ModelFile, RootError, SeriesError,
};

/// Coefficient tables grow like C(K+N, N); past four tracked components the
/// CLI refuses rather than thrash memory. The library imposes no cap.
const MAX_CLI_DIMS: usize = 4;

const THREADS_ENV: &str = "CROSSING_LAB_THREADS";

#[derive(Parser)]
#[command(name = "crossing-lab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a model against every invariant and report the violations.
    Validate {
        #[command(flatten)]
        model: ModelArgs,
        /// Write the resolved model back out as JSON.
        #[arg(long, value_name = "PATH")]
        emit_model: Option<PathBuf>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Extinction probability and the constant term of the crossing series.
    Roots {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Exact conditional crossing-count distribution.
    Dist {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Partial-sum mean and variance of one marginal.
    Moments {
        #[command(flatten)]
        model: ModelArgs,
        /// Tracked index to marginalize onto; defaults to the smallest.
        #[arg(long)]
        component: Option<usize>,
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Monte Carlo estimate of the conditional distribution.
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        sim: SimArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Exact-versus-simulated z-score gate; exits 3 when the gate fails.
    Compare {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        sim: SimArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Fraction of surviving paths whose tracked count reached a threshold.
    SurvivalCheck {
        #[command(flatten)]
        model: ModelArgs,
        /// Tracked jump index (at least 2).
        #[arg(long)]
        m: usize,
        /// Count threshold the surviving paths must reach.
        #[arg(long, default_value_t = 50)]
        threshold: u64,
        #[command(flatten)]
        sim: SimArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct ModelSource {
    /// Model file (JSON schema: {"b": {...}, "weights": ..., "crossing_set": [...]}).
    #[arg(long, value_name = "PATH")]
    model: Option<PathBuf>,
    /// Built-in preset: birth-death, cubic, or mxm1.
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
}

#[derive(Args)]
struct ModelArgs {
    #[command(flatten)]
    source: ModelSource,
    /// Death rate (birth-death, mxm1 presets).
    #[arg(long)]
    mu: Option<f64>,
    /// Birth rate (birth-death preset).
    #[arg(long)]
    lambda: Option<f64>,
    /// Cubic preset slope parameter; conservation needs 3p = 2q + 1.
    #[arg(long)]
    p: Option<f64>,
    /// Cubic preset death parameter.
    #[arg(long)]
    q: Option<f64>,
    /// Batch arrival rates for the mxm1 preset: rate of size-j batches
    /// becomes the rate of index j + 1.
    #[arg(long, value_delimiter = ',', value_name = "RATES")]
    arrivals: Option<Vec<f64>>,
    /// Tracked jump indices, e.g. --set 0,2. Presets default to 0.
    #[arg(long, value_delimiter = ',', value_name = "INDICES")]
    set: Option<Vec<usize>>,
}

#[derive(Args)]
struct RunArgs {
    /// Starting population.
    #[arg(long, default_value_t = 1)]
    initial_state: u64,
    /// Series truncation (max total degree). Defaults to 100 for one
    /// tracked index, 40 otherwise.
    #[arg(long = "K", visible_alias = "truncation", value_name = "K")]
    truncation: Option<u32>,
}

#[derive(Args)]
struct SimArgs {
    #[arg(long, default_value_t = 100_000)]
    paths: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10_000)]
    max_steps: u64,
    #[arg(long, default_value_t = 1_000_000)]
    max_state: u64,
}

impl SimArgs {
    fn caps(&self) -> Caps {
        Caps {
            max_steps: self.max_steps,
            max_state: self.max_state,
        }
    }
}

#[derive(Args)]
struct OutputArgs {
    /// Output path; stdout when omitted.
    #[arg(long, short, value_name = "PATH")]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

enum CliError {
    /// Bad configuration, unreadable input, failed validation.
    Validation(String),
    /// The numerics gave up: iteration caps, degenerate denominators.
    Numeric(String),
    /// A statistical gate failed or a simulation produced no usable paths.
    Gate(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Numeric(_) => 2,
            CliError::Gate(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Numeric(m) | CliError::Gate(m) => m,
        }
    }
}

impl From<InvalidModel> for CliError {
    fn from(e: InvalidModel) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<RootError> for CliError {
    fn from(e: RootError) -> Self {
        match e {
            RootError::Invalid(inner) => inner.into(),
            RootError::Dimension(_) => CliError::Validation(e.to_string()),
            RootError::IterationCapExceeded { .. } | RootError::NoRootInUnitInterval { .. } => {
                CliError::Numeric(e.to_string())
            }
        }
    }
}

impl From<SeriesError> for CliError {
    fn from(e: SeriesError) -> Self {
        match e {
            SeriesError::Invalid(inner) => inner.into(),
            SeriesError::Root(inner) => inner.into(),
            SeriesError::TruncationTooSmall | SeriesError::NotCubicFamily => {
                CliError::Validation(e.to_string())
            }
            SeriesError::DegenerateDerivative { .. }
            | SeriesError::NegativeCoefficient { .. } => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<DistError> for CliError {
    fn from(e: DistError) -> Self {
        match e {
            DistError::Invalid(inner) => inner.into(),
            DistError::Root(inner) => inner.into(),
            DistError::Series(inner) => inner.into(),
            DistError::InitialStateZero | DistError::ComponentNotInSet { .. } => {
                CliError::Validation(e.to_string())
            }
            DistError::ExtinctionImpossible => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<McError> for CliError {
    fn from(e: McError) -> Self {
        match e {
            McError::Invalid(inner) => inner.into(),
            McError::Root(inner) => inner.into(),
            McError::InitialStateZero
            | McError::WeightUndefined { .. }
            | McError::ConfigMismatch { .. } => CliError::Validation(e.to_string()),
            McError::NoExtinctPaths { .. }
            | McError::NoSurvivingPaths
            | McError::NotSupercritical { .. } => CliError::Gate(e.to_string()),
        }
    }
}

fn resolve_model(args: &ModelArgs) -> Result<(BranchingLaw, CrossingSet), CliError> {
    let (law, default_set) = if let Some(path) = &args.source.model {
        let text = fs::read_to_string(path)?;
        let file: ModelFile = serde_json::from_str(&text)?;
        let (law, set) = file.into_parts()?;
        (law, Some(set))
    } else {
        let name = args.source.preset.as_deref().expect("clap group");
        (build_preset(name, args)?, None)
    };
    let set = match (&args.set, default_set) {
        (Some(indices), _) => CrossingSet::new(indices.iter().copied()),
        (None, Some(set)) => set,
        (None, None) => CrossingSet::new([0]),
    };
    if set.len() > MAX_CLI_DIMS {
        return Err(CliError::Validation(format!(
            "crossing set has {} components; the CLI caps the dimension at {MAX_CLI_DIMS}",
            set.len()
        )));
    }
    validate(&law, &set).into_result()?;
    Ok((law, set))
}

fn build_preset(name: &str, args: &ModelArgs) -> Result<BranchingLaw, CliError> {
    let need = |value: Option<f64>, flag: &str| {
        value.ok_or_else(|| {
            CliError::Validation(format!("preset {name:?} requires --{flag}"))
        })
    };
    match name {
        // Linear birth-death: deaths at rate mu, splits at rate lambda.
        "birth-death" => {
            let mu = need(args.mu, "mu")?;
            let lambda = need(args.lambda, "lambda")?;
            Ok(BranchingLaw::from_pairs([
                (0, mu),
                (1, -(mu + lambda)),
                (2, lambda),
            ]))
        }
        // Cubic rate function 2q - 3pu + u^3: deaths plus triplet births.
        "cubic" => {
            let p = need(args.p, "p")?;
            let q = need(args.q, "q")?;
            Ok(BranchingLaw::from_pairs([
                (0, 2.0 * q),
                (1, -3.0 * p),
                (3, 1.0),
            ]))
        }
        // Bulk-arrival single-server queue during a busy period: service
        // completions are deaths, a size-j batch arrival is a size-j up jump.
        "mxm1" => {
            let mu = need(args.mu, "mu")?;
            let arrivals = args.arrivals.clone().unwrap_or_default();
            if arrivals.is_empty() {
                return Err(CliError::Validation(
                    "preset \"mxm1\" requires --arrivals with at least one batch rate".into(),
                ));
            }
            let mut rates = BTreeMap::new();
            rates.insert(0, mu);
            for (j, rate) in arrivals.iter().enumerate() {
                rates.insert(j + 2, *rate);
            }
            let total: f64 = mu + arrivals.iter().sum::<f64>();
            rates.insert(1, -total);
            Ok(BranchingLaw::from_rates(rates))
        }
        other => Err(CliError::Validation(format!("unknown preset {other:?}"))),
    }
}

fn default_truncation(set: &CrossingSet, requested: Option<u32>) -> u32 {
    requested.unwrap_or(if set.len() == 1 { 100 } else { 40 })
}

fn threads_from_env() -> Result<Option<usize>, CliError> {
    match std::env::var(THREADS_ENV) {
        Ok(value) => value
            .parse::<usize>()
            .map(Some)
            .map_err(|_| CliError::Validation(format!("{THREADS_ENV}={value:?} is not a count"))),
        Err(_) => Ok(None),
    }
}

#[derive(Serialize)]
struct CoeffJson {
    index: Vec<u64>,
    value: f64,
}

#[derive(Serialize)]
struct ValidateJson {
    pass: bool,
    violations: Vec<crossing_core::Violation>,
}

#[derive(Serialize)]
struct RootsJson {
    rho: f64,
    rho0: f64,
}

#[derive(Serialize)]
struct DistJson {
    rho: f64,
    initial_state: u64,
    probs: Vec<CoeffJson>,
    captured_mass: f64,
    #[serde(rename = "K")]
    truncation: u32,
}

#[derive(Serialize)]
struct MomentsJson {
    component: usize,
    rho: f64,
    conditional: bool,
    mean: f64,
    variance: f64,
    tail_mass: f64,
    converged: bool,
    #[serde(rename = "K")]
    truncation: u32,
}

#[derive(Serialize)]
struct SimulateJson {
    extinct_fraction: f64,
    censor_rate: f64,
    empirical: Vec<CoeffJson>,
}

#[derive(Serialize)]
struct CompareCellJson {
    index: Vec<u64>,
    exact: f64,
    empirical: f64,
    std_error: f64,
    z: f64,
}

#[derive(Serialize)]
struct CompareJson {
    pass: bool,
    max_abs_z: f64,
    n_extinct: u64,
    mass_threshold: f64,
    z_gate: f64,
    unmatched_empirical_mass: f64,
    cells: Vec<CompareCellJson>,
}

#[derive(Serialize)]
struct SurvivalJson {
    n_paths: u64,
    n_surviving: u64,
    threshold: u64,
    fraction_at_or_above: f64,
}

fn dist_json(dist: &CrossingDistribution) -> DistJson {
    DistJson {
        rho: dist.rho(),
        initial_state: dist.initial_state(),
        probs: dist
            .iter()
            .map(|(index, value)| CoeffJson {
                index: index.counts().iter().map(|&c| c as u64).collect(),
                value,
            })
            .collect(),
        captured_mass: dist.captured_mass(),
        truncation: dist.truncation(),
    }
}

fn table_csv(set: &CrossingSet, rows: &[(Vec<u64>, f64)], value_column: &str) -> String {
    let mut out = String::new();
    let header: Vec<String> = set
        .indices()
        .iter()
        .map(|k| format!("y{k}"))
        .chain([value_column.to_string()])
        .collect();
    let _ = writeln!(out, "{}", header.join(","));
    for (index, value) in rows {
        let cells: Vec<String> = index
            .iter()
            .map(|c| c.to_string())
            .chain([format!("{value}")])
            .collect();
        let _ = writeln!(out, "{}", cells.join(","));
    }
    out
}

fn emit(output: &OutputArgs, text: String) -> Result<(), CliError> {
    match &output.output {
        Some(path) => fs::write(path, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn emit_json<T: Serialize>(output: &OutputArgs, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    emit(output, text)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Validate {
            model,
            emit_model,
            output,
        } => {
            // Resolve without the validation shortcut so the report carries
            // every violation, not just the first failure.
            let (law, set) = match &model.source.model {
                Some(path) => {
                    let text = fs::read_to_string(path)?;
                    let file: ModelFile = serde_json::from_str(&text)?;
                    match file.into_parts() {
                        Ok(parts) => parts,
                        Err(InvalidModel(report)) => {
                            emit_json(
                                &output,
                                &ValidateJson {
                                    pass: false,
                                    violations: report.violations().to_vec(),
                                },
                            )?;
                            return Err(CliError::Validation(report.to_string()));
                        }
                    }
                }
                None => {
                    let law = build_preset(model.source.preset.as_deref().unwrap(), &model)?;
                    let set = CrossingSet::new(
                        model.set.clone().unwrap_or_else(|| vec![0]).iter().copied(),
                    );
                    let report = validate(&law, &set);
                    if !report.passed() {
                        emit_json(
                            &output,
                            &ValidateJson {
                                pass: false,
                                violations: report.violations().to_vec(),
                            },
                        )?;
                        return Err(CliError::Validation(report.to_string()));
                    }
                    (law, set)
                }
            };
            if let Some(path) = emit_model {
                let file = ModelFile::from_parts(&law, &set);
                let mut text = serde_json::to_string_pretty(&file)?;
                text.push('\n');
                fs::write(path, text)?;
            }
            emit_json(
                &output,
                &ValidateJson {
                    pass: true,
                    violations: Vec::new(),
                },
            )
        }
        Command::Roots { model, output } => {
            let (law, set) = resolve_model(&model)?;
            let rho = min_root(&law)?;
            let rho0 = min_root_at(&law, &set, &vec![0.0; set.len()])?;
            emit_json(
                &output,
                &RootsJson {
                    rho: rho.value,
                    rho0: rho0.value,
                },
            )
        }
        Command::Dist { model, run, output } => {
            let (law, set) = resolve_model(&model)?;
            let truncation = default_truncation(&set, run.truncation);
            let dist = conditional_distribution(&law, &set, run.initial_state, truncation)?;
            match output.format {
                Format::Json => emit_json(&output, &dist_json(&dist)),
                Format::Csv => {
                    let rows: Vec<(Vec<u64>, f64)> = dist
                        .iter()
                        .map(|(i, v)| (i.counts().iter().map(|&c| c as u64).collect(), v))
                        .collect();
                    emit(&output, table_csv(&set, &rows, "probability"))
                }
            }
        }
        Command::Moments {
            model,
            component,
            run,
            output,
        } => {
            let (law, set) = resolve_model(&model)?;
            let component = component.unwrap_or_else(|| set.indices()[0]);
            let truncation = default_truncation(&set, run.truncation);
            let report = moments(&law, &set, component, truncation)?;
            emit_json(
                &output,
                &MomentsJson {
                    component: report.component,
                    rho: report.rho,
                    conditional: report.conditional,
                    mean: report.mean,
                    variance: report.variance,
                    tail_mass: report.tail_mass,
                    converged: report.converged,
                    truncation: report.truncation,
                },
            )
        }
        Command::Simulate {
            model,
            run,
            sim,
            output,
        } => {
            let (law, set) = resolve_model(&model)?;
            let empirical = estimate_distribution(
                &law,
                &set,
                run.initial_state,
                sim.paths,
                sim.caps(),
                sim.seed,
                threads_from_env()?,
            )?;
            match output.format {
                Format::Json => emit_json(&output, &simulate_json(&empirical)),
                Format::Csv => {
                    let n = empirical.n_extinct as f64;
                    let rows: Vec<(Vec<u64>, f64)> = empirical
                        .frequencies
                        .iter()
                        .map(|(counts, &c)| (counts.clone(), c as f64 / n))
                        .collect();
                    emit(&output, table_csv(&set, &rows, "probability"))
                }
            }
        }
        Command::Compare {
            model,
            run,
            sim,
            output,
        } => {
            let (law, set) = resolve_model(&model)?;
            let truncation = default_truncation(&set, run.truncation);
            let exact = conditional_distribution(&law, &set, run.initial_state, truncation)?;
            let empirical = estimate_distribution(
                &law,
                &set,
                run.initial_state,
                sim.paths,
                sim.caps(),
                sim.seed,
                threads_from_env()?,
            )?;
            let report = compare(&exact, &empirical)?;
            emit_json(
                &output,
                &CompareJson {
                    pass: report.pass,
                    max_abs_z: report.max_abs_z,
                    n_extinct: report.n_extinct,
                    mass_threshold: report.mass_threshold,
                    z_gate: report.z_gate,
                    unmatched_empirical_mass: report.unmatched_empirical_mass,
                    cells: report
                        .cells
                        .iter()
                        .map(|c| CompareCellJson {
                            index: c.counts.clone(),
                            exact: c.exact,
                            empirical: c.empirical,
                            std_error: c.std_error,
                            z: c.z,
                        })
                        .collect(),
                },
            )?;
            if !report.pass {
                return Err(CliError::Gate(format!(
                    "statistical gate failed: max |z| = {} exceeds {}",
                    report.max_abs_z, report.z_gate
                )));
            }
            Ok(())
        }
        Command::SurvivalCheck {
            model,
            m,
            threshold,
            sim,
            output,
        } => {
            let (law, _) = resolve_model(&model)?;
            let report = survival_divergence_check(
                &law,
                m,
                threshold,
                sim.paths,
                sim.caps(),
                sim.seed,
                threads_from_env()?,
            )?;
            emit_json(
                &output,
                &SurvivalJson {
                    n_paths: report.n_paths,
                    n_surviving: report.n_surviving,
                    threshold: report.threshold,
                    fraction_at_or_above: report.fraction_at_or_above,
                },
            )
        }
    }
}

fn simulate_json(empirical: &EmpiricalDistribution) -> SimulateJson {
    let n = empirical.n_extinct as f64;
    SimulateJson {
        extinct_fraction: empirical.extinct_fraction,
        censor_rate: empirical.censor_rate,
        empirical: empirical
            .frequencies
            .iter()
            .map(|(counts, &c)| CoeffJson {
                index: counts.clone(),
                value: c as f64 / n,
            })
            .collect(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message());
            ExitCode::from(err.exit_code())
        }
    }
}
