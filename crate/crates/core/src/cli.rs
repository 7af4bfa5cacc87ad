//! The `ekp` command line: `cv`, `rademacher`, `verify` and `report`.
//!
//! Exit codes: 0 on success, 1 when a computation or input fails validation,
//! 2 on a usage error. `EKP_SEED`, when set, overrides `--seed`.

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;

use crate::data::{load_dataset, load_matrix_csv, DataSet, Format, Task};
use crate::error::{Error, Result};
use crate::harness::{run_cv_experiment, CVConfig, Method};
use crate::kernel::{gaussian_grid, KernelMatrix};
use crate::rademacher::{
    bound_thm1, bound_thm1_logp, bound_thm2, bound_thm2_simple, enumerate_complexity, estimate_complexity,
    margin_bound, DualExponent, BoundReport, DEFAULT_SAMPLES, MAX_ENUMERATION_M,
};
use crate::report::{
    read_result, render_complexity, render_table, write_result, ComplexityReport, Envelope, ResultDoc,
};
use crate::synthetic::{generate, SyntheticConfig};
use crate::verify::run_verify;

pub const SEED_ENV: &str = "EKP_SEED";

#[derive(Debug, Parser)]
#[command(name = "ekp", version, about = "Weighted per-kernel predictor ensembles and learning-kernel baselines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Cross-validated comparison of methods on one dataset.
    Cv(CvArgs),
    /// Empirical complexity of the ensemble class and the bounds that apply.
    Rademacher(RademacherArgs),
    /// Self-checks; exits 1 if any check fails.
    Verify(VerifyArgs),
    /// Table of previously written result files.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Dataset file (csv with label last, or svmlight).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "csv")]
    format: String,
    #[arg(long, default_value = "classification")]
    task: String,
    /// Draw this many points from the built-in synthetic generator instead of reading --data.
    #[arg(long, value_name = "N")]
    synthetic: Option<usize>,
}

#[derive(Debug, Args)]
struct CvArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Comma-separated method names (default: every method valid for the task).
    #[arg(long)]
    methods: Option<String>,
    #[arg(long, default_value_t = -4, allow_negative_numbers = true)]
    gamma_min: i32,
    #[arg(long, default_value_t = 3, allow_negative_numbers = true)]
    gamma_max: i32,
    #[arg(long)]
    cap_grid: Option<String>,
    #[arg(long)]
    ratio_grid: Option<String>,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// C or λ for the base learners (and the kernel-learning baselines).
    #[arg(long, default_value_t = 1.0)]
    base_reg: f64,
    /// Comma-separated grid; each ensemble base learner picks its own value.
    #[arg(long)]
    per_kernel_reg: Option<String>,
    /// Skip per-fold feature standardization.
    #[arg(long)]
    raw_features: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RademacherArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Precomputed m×m kernel matrix as csv; repeat for several kernels.
    #[arg(long = "kernel")]
    kernels: Vec<PathBuf>,
    #[arg(long, default_value_t = -4, allow_negative_numbers = true)]
    gamma_min: i32,
    #[arg(long, default_value_t = 3, allow_negative_numbers = true)]
    gamma_max: i32,
    /// One Λ for every kernel, or a comma-separated list.
    #[arg(long, default_value = "1")]
    lambda: String,
    #[arg(long, default_value_t = 1.0)]
    q: f64,
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    samples: u64,
    /// Also enumerate every sign vector (m ≤ 20).
    #[arg(long)]
    exact: bool,
    /// Empirical ρ-margin loss; with --rho and --delta adds the margin bound.
    #[arg(long)]
    margin_loss: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = -4, allow_negative_numbers = true)]
    gamma_min: i32,
    #[arg(long, default_value_t = 3, allow_negative_numbers = true)]
    gamma_max: i32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Result files written by `cv` or `rademacher`.
    #[arg(required = true)]
    files: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let seed_override = std::env::var(SEED_ENV).ok();
    let result = seed_override
        .as_deref()
        .map(|s| {
            s.trim()
                .parse::<u64>()
                .map_err(|_| Error::Domain(format!("{SEED_ENV} must be an unsigned integer, got '{s}'")))
        })
        .transpose()
        .and_then(|seed| dispatch(cli.command, seed));
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(command: Command, seed_override: Option<u64>) -> Result<i32> {
    match command {
        Command::Cv(a) => {
            let seed = seed_override.unwrap_or(a.seed);
            cv(a, seed)
        }
        Command::Rademacher(a) => {
            let seed = seed_override.unwrap_or(a.seed);
            rademacher(a, seed)
        }
        Command::Verify(a) => {
            let seed = seed_override.unwrap_or(a.seed);
            verify(a, seed)
        }
        Command::Report(a) => report(a),
    }
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|_| Error::Domain(format!("bad {what} entry '{s}'"))))
        .collect()
}

fn load(args: &DataArgs, seed: u64) -> Result<Option<DataSet>> {
    let task: Task = args.task.parse()?;
    match (&args.data, args.synthetic) {
        (Some(_), Some(_)) => Err(Error::Domain("give either --data or --synthetic, not both".into())),
        (Some(path), None) => Ok(Some(load_dataset(path, args.format.parse::<Format>()?, task)?)),
        (None, Some(n)) => {
            let config = match task {
                Task::Classification => SyntheticConfig::classification(n),
                Task::Regression => SyntheticConfig::regression(n),
            };
            Ok(Some(generate(&config, seed)?))
        }
        (None, None) => Ok(None),
    }
}

fn emit(envelope: &Envelope, text: &str, out: Option<&PathBuf>) -> Result<()> {
    if let Some(path) = out {
        write_result(envelope, path)?;
    }
    let mut stdout = std::io::stdout().lock();
    stdout.write_all(text.as_bytes())?;
    stdout.flush()?;
    Ok(())
}

fn cv(a: CvArgs, seed: u64) -> Result<i32> {
    let data = load(&a.data, seed)?.ok_or_else(|| Error::Domain("cv needs --data or --synthetic".into()))?;
    let mut config = CVConfig::new(data.task, a.gamma_min, a.gamma_max, seed);
    config.n_folds = a.folds;
    config.standardize = !a.raw_features;
    config.base_reg = a.base_reg;
    if let Some(g) = &a.per_kernel_reg {
        config.per_kernel_reg = Some(parse_list(g, "per-kernel regularization")?);
    }
    if let Some(m) = &a.methods {
        config.methods = parse_list::<Method>(m, "method")?;
    }
    if let Some(c) = &a.cap_grid {
        config.cap_grid = parse_list(c, "cap grid")?;
    }
    if let Some(r) = &a.ratio_grid {
        config.ratio_grid = parse_list(r, "ratio grid")?;
    }
    let result = run_cv_experiment(&data, &config)?;
    let label = match (&a.data.data, a.data.synthetic) {
        (Some(p), _) => p.file_stem().map_or("data".into(), |s| s.to_string_lossy().into_owned()),
        _ => "synthetic".into(),
    };
    let text = render_table(&[(label, result.clone())]);
    emit(&Envelope::new(ResultDoc::Cv(result), Some(seed)), &text, a.out.as_ref())?;
    Ok(0)
}

fn kernels_for(a: &RademacherArgs, seed: u64) -> Result<Vec<KernelMatrix>> {
    let data = load(&a.data, seed)?;
    match (data, a.kernels.is_empty()) {
        (Some(_), false) => Err(Error::Domain("give either a dataset or --kernel files, not both".into())),
        (Some(d), true) => gaussian_grid(a.gamma_min, a.gamma_max)?
            .iter()
            .map(|s| s.gram(&d.features))
            .collect(),
        (None, false) => a
            .kernels
            .iter()
            .enumerate()
            .map(|(i, p)| load_kernel_csv(p, i + 1).map_err(|e| e.in_kernel(i + 1)))
            .collect(),
        (None, true) => Err(Error::Domain("rademacher needs --data, --synthetic or --kernel".into())),
    }
}

/// Every bound whose hypotheses hold for `q` and `p`.
fn applicable_bounds(kernels: &[KernelMatrix], lambdas: &[f64], q: f64) -> Result<Vec<BoundReport>> {
    let p = kernels.len();
    let m = kernels[0].nrows();
    let lambda_star = lambdas.iter().copied().fold(0.0, f64::max);
    let r2 = kernels
        .iter()
        .flat_map(|k| k.values.diagonal().iter().copied().collect::<Vec<_>>())
        .fold(0.0, f64::max);
    let mut out = Vec::new();
    match DualExponent::from_q(q)? {
        DualExponent::Infinity => {
            let top = (p as f64).ln().ceil() as u32 + 2;
            for r in 1..=top {
                out.push(bound_thm1(kernels, lambdas, r)?);
            }
            if p > 1 && r2 > 0.0 {
                out.push(bound_thm1_logp(p, lambda_star, r2, m)?);
            }
        }
        DualExponent::Finite(r) if (r - r.round()).abs() < 1e-12 => {
            let r = r.round() as u32;
            out.push(bound_thm2(kernels, lambdas, r)?);
            if p > 1 && r2 > 0.0 {
                out.push(bound_thm2_simple(p, lambda_star, r2, m, r)?);
            }
        }
        DualExponent::Finite(_) => {}
    }
    Ok(out)
}

fn rademacher(a: RademacherArgs, seed: u64) -> Result<i32> {
    let kernels = kernels_for(&a, seed)?;
    let mut lambdas: Vec<f64> = parse_list(&a.lambda, "lambda")?;
    if lambdas.len() == 1 {
        lambdas = vec![lambdas[0]; kernels.len()];
    }
    let estimate = estimate_complexity(&kernels, &lambdas, a.q, a.samples, seed)?;
    let exact = if a.exact {
        if estimate.m > MAX_ENUMERATION_M {
            return Err(Error::Domain(format!(
                "--exact needs m ≤ {MAX_ENUMERATION_M}, got m = {}",
                estimate.m
            )));
        }
        Some(enumerate_complexity(&kernels, &lambdas, a.q)?)
    } else {
        None
    };
    let mut bounds = applicable_bounds(&kernels, &lambdas, a.q)?;
    match (a.margin_loss, a.rho) {
        (Some(loss), Some(rho)) => bounds.push(margin_bound(loss, estimate.value, rho, a.delta, estimate.m)?),
        (None, None) => {}
        _ => return Err(Error::Domain("the margin bound needs both --margin-loss and --rho".into())),
    }
    let report = ComplexityReport { estimate, exact, bounds };
    let text = render_complexity(&report);
    emit(&Envelope::new(ResultDoc::Rademacher(report), Some(seed)), &text, a.out.as_ref())?;
    Ok(0)
}

fn verify(a: VerifyArgs, seed: u64) -> Result<i32> {
    let data = load(&a.data, seed)?;
    let specs = gaussian_grid(a.gamma_min, a.gamma_max)?;
    let report = run_verify(data.as_ref().map(|d| (d, specs.as_slice())), seed)?;
    let mut text = String::new();
    let mut suites: Vec<&str> = Vec::new();
    for c in &report.checks {
        if !suites.contains(&c.suite.as_str()) {
            suites.push(&c.suite);
        }
    }
    for s in suites {
        let all: Vec<_> = report.checks.iter().filter(|c| c.suite == s).collect();
        let ok = all.iter().filter(|c| c.passed).count();
        text.push_str(&format!("{s:<10} {ok}/{} passed\n", all.len()));
        for c in all.iter().filter(|c| !c.passed) {
            text.push_str(&format!("  FAILED {}: {}\n", c.name, c.detail));
        }
    }
    let passed = report.passed();
    text.push_str(if passed { "all checks passed\n" } else { "some checks failed\n" });
    emit(&Envelope::new(ResultDoc::Verify(report), Some(seed)), &text, a.out.as_ref())?;
    Ok(if passed { 0 } else { 1 })
}

fn report(a: ReportArgs) -> Result<i32> {
    let mut tables = Vec::new();
    let mut text = String::new();
    for path in &a.files {
        let env = read_result(path)?;
        let label = path.file_stem().map_or("result".into(), |s| s.to_string_lossy().into_owned());
        match env.doc {
            ResultDoc::Cv(r) => tables.push((label, r)),
            ResultDoc::Rademacher(r) => {
                text.push_str(&format!("{label}\n{}", render_complexity(&r)));
            }
            ResultDoc::Bound(b) => text.push_str(&format!("{label}: {} = {}\n", b.theorem.name(), b.value)),
            ResultDoc::Prop2(p) => text.push_str(&format!("{label}: rel_gap = {:e}\n", p.rel_gap)),
            ResultDoc::Verify(v) => text.push_str(&format!(
                "{label}: {}/{} checks passed\n",
                v.checks.iter().filter(|c| c.passed).count(),
                v.checks.len()
            )),
        }
    }
    let table = if tables.is_empty() { String::new() } else { render_table(&tables) };
    let full = format!("{table}{text}");
    if let Some(out) = &a.out {
        std::fs::write(out, &full)?;
    }
    print!("{full}");
    Ok(0)
}

/// Reads an m×m csv and wraps it as kernel `id`.
pub fn load_kernel_csv(path: impl AsRef<std::path::Path>, id: usize) -> Result<KernelMatrix> {
    let values: DMatrix<f64> = load_matrix_csv(path)?;
    KernelMatrix::from_gram(values, id)
}
