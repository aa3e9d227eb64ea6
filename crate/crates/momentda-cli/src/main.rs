//! `momentda` command-line front end.
//!
//! Exit codes: 0 success, 1 usage, parse or parameter error, 2 infeasible
//! moments, 3 Newton iteration limit reached, 4 experiment criteria failed.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use momentda::bounds::{self, CertificateInputs, ConstantChoice};
use momentda::density::{draw_sample, moments, Density, DensitySpec};
use momentda::experiments::{self, ExperimentRecord};
use momentda::maxent::{fit_maxent, read_moments_csv, FitOptions};
use momentda::metrics::{self, TabulatedCdf};
use momentda::polybasis::{PolyBasis1D, TensorBasis};

const EXIT_USAGE: u8 = 1;
const EXIT_INFEASIBLE: u8 = 2;
const EXIT_MAX_ITER: u8 = 3;
const EXIT_CRITERIA: u8 = 4;

#[derive(Parser, Debug)]
#[command(
    name = "momentda",
    version,
    about = "Moment-based domain adaptation: maximum-entropy fits, distances, risk certificates and experiments"
)]
struct Cli {
    /// Output format for data written to stdout or --out
    #[arg(long, global = true, help_heading = "Global options", value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Seed for stochastic commands
    #[arg(long, global = true, help_heading = "Global options")]
    seed: Option<u64>,
    /// Maximum number of worker threads
    #[arg(long, global = true, help_heading = "Global options")]
    threads: Option<usize>,
    /// Output file, or output directory for `experiment`
    #[arg(long, global = true, help_heading = "Global options")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a maximum-entropy density to a moments file
    Fit(FitArgs),
    /// Evaluate a target-risk certificate
    Certify(CertifyArgs),
    /// Distance between two densities
    Distance(DistanceArgs),
    /// Run a seeded experiment and write {name}-{seed}.csv and .json
    Experiment(ExperimentArgs),
    /// Dump shifted Legendre coefficients
    Basis(BasisArgs),
}

#[derive(Args, Debug)]
struct FitArgs {
    /// CSV file with m*N moments, dimension-major
    #[arg(long)]
    moments: PathBuf,
    /// Polynomial degree
    #[arg(long)]
    m: usize,
    /// Number of dimensions
    #[arg(long = "n-dims", default_value_t = 1)]
    n_dims: usize,
    /// Gradient-norm tolerance
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    /// Newton iteration limit
    #[arg(long, default_value_t = 200)]
    max_iter: usize,
    /// Gauss-Legendre order per dimension
    #[arg(long)]
    quad_order: Option<usize>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Preset {
    WorkedExample,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Constants {
    Simple,
    Improved,
}

#[derive(Args, Debug)]
#[command(allow_negative_numbers = true)]
struct CertifyArgs {
    /// Reproduce a built-in worked example instead of reading parameters
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Sample size per domain
    #[arg(long, required_unless_present = "preset")]
    k: Option<f64>,
    /// VC dimension of the classifier class
    #[arg(long, required_unless_present = "preset")]
    d: Option<f64>,
    /// Failure probability
    #[arg(long, default_value_t = 0.2)]
    delta: f64,
    /// Polynomial degree
    #[arg(long, default_value_t = 5)]
    m: usize,
    /// Number of dimensions
    #[arg(long = "n-dims", default_value_t = 1)]
    n_dims: usize,
    /// L1 distance between the sample moment vectors
    #[arg(long, default_value_t = 0.0)]
    moment_distance: f64,
    /// Empirical source risk
    #[arg(long, default_value_t = 0.0)]
    empirical_risk: f64,
    /// Optimal joint risk
    #[arg(long, default_value_t = 0.0)]
    lambda_star: f64,
    /// Entropy gap of the densities
    #[arg(long, default_value_t = 0.0)]
    epsilon: f64,
    /// Which constant to use
    #[arg(long, value_enum, default_value_t = Constants::Simple)]
    constants: Constants,
    /// Log-density bound, for improved constants
    #[arg(long)]
    c_inf: Option<f64>,
    /// Derivative-norm bound, for improved constants
    #[arg(long)]
    c_r: Option<f64>,
    /// Derivative order, for improved constants (defaults to m)
    #[arg(long)]
    r: Option<usize>,
    /// Use the sample-size condition scaled by exp(-c_inf)
    #[arg(long)]
    sharper_sample_condition: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Metric {
    L1,
    Kl,
    MomentL1,
    Cmd,
    Levy,
}

#[derive(Args, Debug)]
struct DistanceArgs {
    /// First density: inline JSON or a file path
    #[arg(long)]
    p: String,
    /// Second density: inline JSON or a file path
    #[arg(long)]
    q: String,
    /// Metric to compute
    #[arg(long, value_enum)]
    metric: Metric,
    /// Moment order for moment-l1 and cmd
    #[arg(long, default_value_t = 5)]
    m: usize,
    /// Sample size per density for cmd
    #[arg(long, default_value_t = 10_000)]
    k: usize,
    /// Tabulation points for levy
    #[arg(long, default_value_t = 10_001)]
    cdf_points: usize,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum ExperimentName {
    TruncatedNormal,
    L1BoundCheck,
    SampleConcentration,
    WorkedExample,
    AdaptationDemo,
    LevyProbe,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    /// Experiment to run
    #[arg(value_enum)]
    name: ExperimentName,
    /// Parameter overrides: inline JSON object or a file path
    #[arg(long)]
    params: Option<String>,
    /// Number of pairs (l1-bound-check) or trials per sample size (sample-concentration)
    #[arg(long)]
    trials: Option<usize>,
}

#[derive(Args, Debug)]
struct BasisArgs {
    /// Highest degree
    #[arg(long)]
    m: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<momentda::Error>() {
        Some(momentda::Error::Infeasible { .. }) => EXIT_INFEASIBLE,
        Some(momentda::Error::MaxIterations { .. }) => EXIT_MAX_ITER,
        _ => EXIT_USAGE,
    }
}

fn run(cli: &Cli) -> anyhow::Result<u8> {
    match &cli.command {
        Command::Fit(a) => fit(cli, a),
        Command::Certify(a) => certify(cli, a),
        Command::Distance(a) => distance(cli, a),
        Command::Experiment(a) => experiment(cli, a),
        Command::Basis(a) => basis(cli, a),
    }
}

fn emit(cli: &Cli, text: &str) -> anyhow::Result<()> {
    match &cli.out {
        Some(path) => {
            std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
            eprintln!("wrote {}", path.display());
        }
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn json_text<T: Serialize>(v: &T) -> anyhow::Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn csv_text(header: &[&str], rows: &[Vec<String>]) -> anyhow::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

fn fit(cli: &Cli, a: &FitArgs) -> anyhow::Result<u8> {
    let file = std::fs::File::open(&a.moments)
        .with_context(|| format!("opening {}", a.moments.display()))?;
    let mu = read_moments_csv(file, a.m, a.n_dims)
        .map_err(anyhow::Error::from)
        .with_context(|| format!("reading {}", a.moments.display()))?;
    let opts = FitOptions {
        tol: a.tol,
        max_iter: a.max_iter,
        quad_order: a.quad_order,
    };
    let result = fit_maxent(&mu, &opts)?;
    eprintln!(
        "converged in {} iterations, residual {:e}",
        result.iterations, result.residual
    );
    let summary = result.summary();
    let text = match cli.format {
        Format::Json => json_text(&summary)?,
        Format::Csv => {
            let rows: Vec<Vec<String>> = summary
                .lambda
                .iter()
                .enumerate()
                .map(|(i, l)| {
                    vec![
                        (i / a.m).to_string(),
                        (i % a.m + 1).to_string(),
                        l.to_string(),
                    ]
                })
                .collect();
            csv_text(&["dim", "order", "lambda"], &rows)?
        }
    };
    emit(cli, &text)?;
    Ok(0)
}

fn certify(cli: &Cli, a: &CertifyArgs) -> anyhow::Result<u8> {
    if let Some(Preset::WorkedExample) = a.preset {
        let ex = bounds::worked_example()?;
        let text = match cli.format {
            Format::Json => json_text(&ex)?,
            Format::Csv => {
                let rows: Vec<Vec<String>> = ex
                    .rows
                    .iter()
                    .map(|r| {
                        vec![
                            r.quantity.clone(),
                            r.computed.to_string(),
                            r.reference.to_string(),
                            r.relative_error.to_string(),
                            r.ok.map(|b| b.to_string()).unwrap_or_default(),
                        ]
                    })
                    .collect();
                csv_text(
                    &["quantity", "computed", "reference", "relative_error", "ok"],
                    &rows,
                )?
            }
        };
        emit(cli, &text)?;
        return Ok(0);
    }
    let choice = match a.constants {
        Constants::Simple => ConstantChoice::Simple,
        Constants::Improved => {
            let (Some(c_inf), Some(c_r)) = (a.c_inf, a.c_r) else {
                bail!("improved constants need --c-inf and --c-r");
            };
            ConstantChoice::Improved(bounds::improved_constants(
                a.m,
                a.r.unwrap_or(a.m),
                c_inf,
                c_r,
            )?)
        }
    };
    let cert = bounds::sample_risk_certificate(
        CertificateInputs {
            k: a.k.expect("required by clap"),
            d: a.d.expect("required by clap"),
            delta: a.delta,
            m: a.m,
            n_dims: a.n_dims,
            moment_distance: a.moment_distance,
            empirical_risk: a.empirical_risk,
            lambda_star: a.lambda_star,
            epsilon: a.epsilon,
            sharper_sample_condition: a.sharper_sample_condition,
        },
        &choice,
    )?;
    for c in cert.conditions.iter().filter(|c| !c.ok) {
        eprintln!(
            "condition {} not satisfied: required {}, actual {}",
            c.name, c.required, c.actual
        );
    }
    let text = match cli.format {
        Format::Json => json_text(&cert)?,
        Format::Csv => {
            let mut buf = Vec::new();
            bounds::certificates_to_csv(std::slice::from_ref(&cert), &mut buf)?;
            String::from_utf8(buf)?
        }
    };
    emit(cli, &text)?;
    Ok(0)
}

fn inline_or_file(arg: &str) -> anyhow::Result<String> {
    if arg.trim_start().starts_with('{') {
        Ok(arg.to_string())
    } else {
        std::fs::read_to_string(arg).with_context(|| format!("reading {arg}"))
    }
}

fn density_arg(arg: &str) -> anyhow::Result<Arc<dyn Density>> {
    let spec: DensitySpec = serde_json::from_str(&inline_or_file(arg)?)
        .with_context(|| format!("parsing density spec {arg}"))?;
    Ok(spec.build()?)
}

fn require_seed(cli: &Cli, what: &str) -> anyhow::Result<u64> {
    cli.seed
        .with_context(|| format!("{what} is stochastic and needs --seed"))
}

fn distance(cli: &Cli, a: &DistanceArgs) -> anyhow::Result<u8> {
    let p = density_arg(&a.p)?;
    let q = density_arg(&a.q)?;
    if p.dim() != q.dim() {
        bail!("densities have dimensions {} and {}", p.dim(), q.dim());
    }
    let (name, value) = match a.metric {
        Metric::L1 => ("l1", metrics::l1_distance(p.as_ref(), q.as_ref())?),
        Metric::Kl => ("kl", metrics::kl_divergence(p.as_ref(), q.as_ref())?),
        Metric::MomentL1 => {
            let basis = TensorBasis::new(a.m, p.dim())?;
            let d =
                metrics::moment_l1(&moments(p.as_ref(), &basis)?, &moments(q.as_ref(), &basis)?)?;
            ("moment-l1", d)
        }
        Metric::Cmd => {
            let seed = require_seed(cli, "metric cmd")?;
            let xp = draw_sample(p.as_ref(), a.k, seed)?;
            let xq = draw_sample(q.as_ref(), a.k, seed)?;
            ("cmd", metrics::cmd(&xp, &xq, a.m)?)
        }
        Metric::Levy => {
            if p.dim() != 1 {
                bail!("levy is defined for univariate densities only");
            }
            let fp = TabulatedCdf::from_density(p.as_ref(), a.cdf_points)?;
            let fq = TabulatedCdf::from_density(q.as_ref(), a.cdf_points)?;
            ("levy", metrics::levy_metric(&fp, &fq)?)
        }
    };
    let text = match cli.format {
        Format::Json => json_text(&json!({ "metric": name, "value": value }))?,
        Format::Csv => csv_text(
            &["metric", "value"],
            &[vec![name.into(), value.to_string()]],
        )?,
    };
    emit(cli, &text)?;
    Ok(0)
}

fn merge(base: &mut Value, overrides: Value) -> anyhow::Result<()> {
    let (Value::Object(b), Value::Object(o)) = (base, overrides) else {
        bail!("experiment parameters must be a JSON object");
    };
    b.extend(o);
    Ok(())
}

fn params<T>(base: T, overrides: &Value) -> anyhow::Result<T>
where
    T: Serialize + serde::de::DeserializeOwned,
{
    let mut v = serde_json::to_value(base)?;
    merge(&mut v, overrides.clone())?;
    serde_json::from_value(v).context("invalid experiment parameters")
}

fn experiment(cli: &Cli, a: &ExperimentArgs) -> anyhow::Result<u8> {
    let mut overrides = match &a.params {
        Some(s) => {
            serde_json::from_str::<Value>(&inline_or_file(s)?).context("parsing --params")?
        }
        None => json!({}),
    };
    if !overrides.is_object() {
        bail!("--params must be a JSON object");
    }
    if let Some(t) = a.trials {
        let key = match a.name {
            ExperimentName::L1BoundCheck => "pairs",
            ExperimentName::SampleConcentration => "trials",
            _ => bail!("--trials applies to l1-bound-check and sample-concentration only"),
        };
        overrides[key] = json!(t);
    }
    let stochastic = matches!(
        a.name,
        ExperimentName::L1BoundCheck
            | ExperimentName::SampleConcentration
            | ExperimentName::AdaptationDemo
    );
    let seed = if stochastic {
        require_seed(cli, "this experiment")?
    } else {
        cli.seed.unwrap_or(0)
    };
    let record: ExperimentRecord = match a.name {
        ExperimentName::TruncatedNormal => experiments::truncated_normal_counterexample(
            &params(Default::default(), &overrides)?,
            seed,
        )?,
        ExperimentName::L1BoundCheck => {
            let get = |k: &str, d: usize| {
                overrides
                    .get(k)
                    .and_then(Value::as_u64)
                    .map_or(d, |v| v as usize)
            };
            let base = experiments::L1BoundCheckParams::for_degree(
                get("m", 3),
                get("N", 1),
                get("pairs", 100),
            )?;
            experiments::l1_bound_check(&params(base, &overrides)?, seed)?
        }
        ExperimentName::SampleConcentration => {
            experiments::sample_concentration(&params(Default::default(), &overrides)?, seed)?
        }
        ExperimentName::WorkedExample => {
            if overrides.as_object().is_some_and(|o| !o.is_empty()) {
                bail!("worked-example takes no parameters");
            }
            experiments::worked_example_repro(seed)?
        }
        ExperimentName::AdaptationDemo => {
            experiments::adaptation_demo(&params(Default::default(), &overrides)?, seed)?
        }
        ExperimentName::LevyProbe => {
            experiments::levy_relation_probe(&params(Default::default(), &overrides)?, seed)?
        }
    };
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    let (csv_path, json_path) = record.write(Path::new(&dir))?;
    eprintln!("wrote {} and {}", csv_path.display(), json_path.display());
    for c in &record.criteria {
        eprintln!(
            "{} {}: {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    Ok(if record.passed() { 0 } else { EXIT_CRITERIA })
}

fn basis(cli: &Cli, a: &BasisArgs) -> anyhow::Result<u8> {
    let b = PolyBasis1D::new(a.m)?;
    let text = match cli.format {
        Format::Json => {
            let polys: Vec<Value> = (0..=a.m)
                .map(|n| {
                    json!({
                        "n": n,
                        "scale_squared": 2 * n + 1,
                        "integer_coefficients": b.integer_coefficients(n).iter().map(|c| c.to_string()).collect::<Vec<_>>(),
                        "coefficients": b.coefficients(n),
                    })
                })
                .collect();
            json_text(&json!({ "m": a.m, "polynomials": polys }))?
        }
        Format::Csv => {
            let rows: Vec<Vec<String>> = (0..=a.m)
                .flat_map(|n| {
                    let b = &b;
                    (0..=n).map(move |k| {
                        vec![
                            n.to_string(),
                            k.to_string(),
                            b.integer_coefficients(n)[k].to_string(),
                            b.coefficients(n)[k].to_string(),
                        ]
                    })
                })
                .collect();
            csv_text(&["n", "power", "integer_coefficient", "coefficient"], &rows)?
        }
    };
    emit(cli, &text)?;
    Ok(0)
}
