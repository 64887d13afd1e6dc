//! Command-line front end.
//!
//! Every subcommand writes CSV to the supplied writer with a fixed header and
//! numbers formatted by [`fmt_num`]; divergence values go through
//! [`fmt_value`], which prints rounding residue as `0`. Flags may also be given in a flat
//! `key = value` file passed with `--config`; keys are the long flag names,
//! unknown keys are rejected and flags on the command line take precedence.
//!
//! Exit codes: 0 success, 2 usage or input error, 3 optimizer
//! non-convergence, 4 numerical failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::bounds::{self, Method};
use crate::diagnostics::{self, DiagnosticSet, SampleBatch};
use crate::gaussian_oracle::{self, GaussianMeasure, LinearGaussianModel};
use crate::grassmann::{self, OptConfig};
use crate::io::{self as csvio, fmt_num};
use crate::linalg::{Frame, SymMatrix};
use crate::quadrature::{self, AffineTarget, PushforwardTarget, Reference, Rosenbrock, SweepOptions, SweepTable};

/// Environment variable capping the worker thread count (0 = automatic).
pub const THREADS_ENV: &str = "CERTDR_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("optimizer did not converge")]
    NotConverged,
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("output: {0}")]
    Output(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::NotConverged => 3,
            CliError::Numerical(_) | CliError::Output(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

fn usage(flag: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Usage(format!("{flag}: {msg}"))
}

fn numerical(e: impl std::fmt::Display) -> CliError {
    CliError::Numerical(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "certdr", version, about = "Certified dimension reduction with dimensional log-Sobolev bounds")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate a certificate `method,rank,lower,upper` for one frame.
    Bounds(BoundsArgs),
    /// Linear-Gaussian experiment: exact error and certificates versus rank.
    Lingauss(LingaussArgs),
    /// Angle sweep of the true KL and its bounds for a planar target.
    Rosenbrock(RosenbrockArgs),
    /// Data-free certificates versus rank.
    Datafree(DatafreeArgs),
    /// Minimize the dimensional majorant over frames of a given rank.
    Optimize(OptimizeArgs),
}

/// Source of the diagnostic matrices; exactly one must be given.
#[derive(Debug, Clone, Args)]
pub struct SourceArgs {
    /// Posterior samples with header x1..xd,g1..gd.
    #[arg(long, value_name = "PATH")]
    pub samples: Option<PathBuf>,
    /// Gaussian target MEAN,COV. Each part is a CSV file, a `;`-separated
    /// list (the mean, or the diagonal of the covariance), `0` for the zero
    /// mean or `I` for the identity covariance.
    #[arg(long, value_name = "MEAN,COV", allow_hyphen_values = true)]
    pub gaussian: Option<String>,
    /// Quadrature diagnostics of the built-in Rosenbrock target.
    #[arg(long)]
    pub rosenbrock: bool,
    /// Dimension used when --gaussian does not determine it.
    #[arg(long, default_value_t = 1)]
    pub dim: usize,
    /// Quadrature points per axis for --rosenbrock.
    #[arg(long, default_value_t = quadrature::DEFAULT_ORDER)]
    pub order: usize,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct BoundsArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// Frame file, d rows and r columns.
    #[arg(long, value_name = "PATH")]
    pub frame: Option<PathBuf>,
    /// Use the frame of this rank that is optimal for the method.
    #[arg(long)]
    pub rank: Option<usize>,
    /// lsi, dim, tilted, hellinger or dim_hellinger.
    #[arg(long, default_value = "dim")]
    pub method: String,
    /// Known lower bound on the Hellinger error for dim_hellinger.
    #[arg(long, default_value_t = 0.0)]
    pub y_lower: f64,
    /// Optimizer starts when the dim frame is optimized.
    #[arg(long, default_value_t = 8)]
    pub starts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Flat key = value file of flag defaults.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct LingaussArgs {
    /// Parameter dimension of the random model.
    #[arg(long, default_value_t = 50)]
    pub dx: usize,
    /// Data dimension of the random model.
    #[arg(long, default_value_t = 50)]
    pub dy: usize,
    /// Forward operator file (dy rows, dx columns) replacing the random one.
    #[arg(long = "A", value_name = "PATH")]
    pub a: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Ranks, e.g. `0,1,5-10`; all ranks 0..=dx by default.
    #[arg(long)]
    pub ranks: Option<String>,
    /// Posterior samples used to estimate the training diagnostics.
    #[arg(long, default_value_t = 100)]
    pub train: usize,
    /// Independent posterior samples used to evaluate the trained frames.
    #[arg(long, default_value_t = 200)]
    pub test: usize,
    #[arg(long, default_value_t = 4)]
    pub starts: usize,
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct RosenbrockArgs {
    /// Number of uniformly spaced angles in [0, 180) degrees.
    #[arg(long, default_value_t = 181)]
    pub angles: usize,
    /// Quadrature points per axis.
    #[arg(long, default_value_t = quadrature::DEFAULT_ORDER)]
    pub order: usize,
    /// standard or best_gaussian.
    #[arg(long, default_value = "standard")]
    pub reference: String,
    /// rosenbrock or identity.
    #[arg(long, default_value = "rosenbrock")]
    pub target: String,
    /// Check order doubling at every n-th angle (0 disables the check).
    #[arg(long, default_value_t = 0)]
    pub check_stride: usize,
    #[arg(long, default_value_t = 8)]
    pub starts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct DatafreeArgs {
    /// Forward operator file (dy rows, dx columns).
    #[arg(long = "A", value_name = "PATH")]
    pub a: Option<PathBuf>,
    /// Joint-law likelihood scores with header g1..gd.
    #[arg(long, value_name = "PATH")]
    pub joint_samples: Option<PathBuf>,
    /// Parameter dimension of the built-in random model.
    #[arg(long, default_value_t = 20)]
    pub dx: usize,
    /// Data dimension of the built-in random model.
    #[arg(long, default_value_t = 15)]
    pub dy: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Ranks, e.g. `0,1,5-10`; all ranks by default.
    #[arg(long)]
    pub ranks: Option<String>,
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct OptimizeArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long, default_value_t = 1)]
    pub rank: usize,
    #[arg(long, default_value_t = 8)]
    pub starts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10_000)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub grad_tol: f64,
    /// Write the frame here instead of after the report.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
}

/// Reads [`THREADS_ENV`] and sizes the global thread pool.
pub fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| usage(THREADS_ENV, format!("expected a non-negative integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| usage(THREADS_ENV, e))
}

/// Parses `args` (including the program name) and runs the subcommand,
/// writing its output to `out`.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args = with_config(args.into_iter().map(Into::into).collect())?;
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            write!(out, "{}", e.render())?;
            return Ok(());
        }
        Err(e) => return Err(CliError::Usage(e.render().to_string().trim_end().to_owned())),
    };
    match cli.command {
        Command::Bounds(a) => cmd_bounds(&a, out),
        Command::Lingauss(a) => cmd_lingauss(&a, out),
        Command::Rosenbrock(a) => cmd_rosenbrock(&a, out),
        Command::Datafree(a) => cmd_datafree(&a, out),
        Command::Optimize(a) => cmd_optimize(&a, out),
    }
}

/// Inserts the flags of a `--config` file right after the subcommand name,
/// so that flags given on the command line override them.
fn with_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut path = None;
    for (i, a) in args.iter().enumerate() {
        let s = a.to_string_lossy();
        if s == "--config" {
            path = args.get(i + 1).map(PathBuf::from);
        } else if let Some(p) = s.strip_prefix("--config=") {
            path = Some(PathBuf::from(p));
        }
    }
    let Some(path) = path else {
        return Ok(args);
    };
    let Some(sub_name) = args.get(1).map(|s| s.to_string_lossy().into_owned()) else {
        return Ok(args);
    };
    let root = Cli::command();
    let Some(sub) = root.find_subcommand(&sub_name) else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| usage("--config", format!("{}: {e}", path.display())))?;
    let mut injected = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| usage("--config", format!("line {}: expected key = value", lineno + 1)))?;
        let (key, value) = (key.trim(), value.trim());
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(key) && key != "config")
            .ok_or_else(|| usage("--config", format!("line {}: unknown key {key:?} for {sub_name}", lineno + 1)))?;
        if arg.get_action().takes_values() {
            injected.push(OsString::from(format!("--{key}")));
            injected.push(OsString::from(value));
        } else {
            match value {
                "true" => injected.push(OsString::from(format!("--{key}"))),
                "false" => {}
                other => {
                    return Err(usage(
                        "--config",
                        format!("line {}: {key} expects true or false, got {other:?}", lineno + 1),
                    ))
                }
            }
        }
    }
    let mut merged = args[..2].to_vec();
    merged.extend(injected);
    merged.extend(args[2..].iter().cloned());
    Ok(merged)
}

/// Parses `0,2,5-8` into a sorted, deduplicated list.
pub fn parse_ranks(list: &str) -> std::result::Result<Vec<usize>, String> {
    let mut ranks = Vec::new();
    for part in list.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let bad = || format!("cannot parse {part:?} as a rank or range");
        match part.split_once('-') {
            Some((a, b)) => {
                let a: usize = a.trim().parse().map_err(|_| bad())?;
                let b: usize = b.trim().parse().map_err(|_| bad())?;
                if a > b {
                    return Err(bad());
                }
                ranks.extend(a..=b);
            }
            None => ranks.push(part.parse().map_err(|_| bad())?),
        }
    }
    if ranks.is_empty() {
        return Err("empty rank list".into());
    }
    ranks.sort_unstable();
    ranks.dedup();
    Ok(ranks)
}

fn ranks_or_all(flag: &str, list: Option<&str>, d: usize) -> Result<Vec<usize>> {
    let ranks = match list {
        Some(s) => parse_ranks(s).map_err(|e| usage(flag, e))?,
        None => (0..=d).collect(),
    };
    if let Some(&r) = ranks.iter().find(|&&r| r > d) {
        return Err(usage(flag, format!("rank {r} exceeds the dimension {d}")));
    }
    Ok(ranks)
}

enum Part {
    Matrix(DMatrix<f64>),
    List(Vec<f64>),
    Zero,
    Identity,
}

fn parse_part(flag: &str, s: &str) -> Result<Part> {
    let s = s.trim();
    if s == "0" {
        return Ok(Part::Zero);
    }
    if s == "I" {
        return Ok(Part::Identity);
    }
    let path = Path::new(s);
    if path.exists() {
        return csvio::read_dense(path).map(Part::Matrix).map_err(|e| usage(flag, e));
    }
    s.split(';')
        .map(|v| v.trim().parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map(Part::List)
        .map_err(|_| usage(flag, format!("{s:?} is neither a file, a number list, 0 nor I")))
}

/// Parses the `--gaussian MEAN,COV` value.
pub fn parse_gaussian(arg: &str, default_dim: usize) -> Result<GaussianMeasure> {
    const FLAG: &str = "--gaussian";
    let (m, c) = arg
        .split_once(',')
        .ok_or_else(|| usage(FLAG, "expected MEAN,COV"))?;
    let (m, c) = (parse_part(FLAG, m)?, parse_part(FLAG, c)?);
    let dim_of = |p: &Part| match p {
        Part::Matrix(x) => Some(x.nrows().max(x.ncols())),
        Part::List(v) if v.len() > 1 => Some(v.len()),
        _ => None,
    };
    let d = dim_of(&m).or(dim_of(&c)).unwrap_or(default_dim);
    if d == 0 {
        return Err(usage("--dim", "dimension must be positive"));
    }
    let mean = match m {
        Part::Zero => DVector::zeros(d),
        Part::Identity => return Err(usage(FLAG, "the mean cannot be I")),
        Part::List(v) if v.len() == 1 => DVector::from_element(d, v[0]),
        Part::List(v) => DVector::from_vec(v),
        Part::Matrix(x) => DVector::from_iterator(x.len(), x.iter().copied()),
    };
    let cov = match c {
        Part::Identity => SymMatrix::identity(d),
        Part::Zero => return Err(usage(FLAG, "the covariance cannot be 0")),
        Part::List(v) if v.len() == 1 => SymMatrix::from_diagonal(&vec![v[0]; d]),
        Part::List(v) => SymMatrix::from_diagonal(&v),
        Part::Matrix(x) => SymMatrix::new(x).map_err(|e| usage(FLAG, e))?,
    };
    if mean.len() != d || cov.dim() != d {
        return Err(usage(
            FLAG,
            format!("mean has length {} but covariance is {}x{}", mean.len(), cov.dim(), cov.dim()),
        ));
    }
    GaussianMeasure::new(mean, cov).map_err(|e| usage(FLAG, e))
}

fn load_diagnostics(src: &SourceArgs) -> Result<DiagnosticSet> {
    let given = usize::from(src.samples.is_some()) + usize::from(src.gaussian.is_some()) + usize::from(src.rosenbrock);
    if given != 1 {
        return Err(CliError::Usage(
            "exactly one of --samples, --gaussian or --rosenbrock is required".into(),
        ));
    }
    if let Some(path) = &src.samples {
        let batch = csvio::read_samples(path).map_err(|e| usage("--samples", e))?;
        return diagnostics::estimate_diagnostics(&batch).map_err(|e| usage("--samples", e));
    }
    if let Some(arg) = &src.gaussian {
        let g = parse_gaussian(arg, src.dim)?;
        return diagnostics::diagnostics_from_gaussian(&g).map_err(numerical);
    }
    let rule = quadrature::gh_rule(src.order).map_err(|e| usage("--order", e))?;
    quadrature::quadrature_diagnostics(&Rosenbrock::default(), &rule).map_err(numerical)
}

fn opt_config(starts: usize, seed: u64) -> Result<OptConfig> {
    let cfg = OptConfig {
        n_starts: starts,
        seed,
        ..OptConfig::default()
    };
    cfg.validate().map_err(|e| usage("--starts", e))?;
    Ok(cfg)
}

/// Minimizer of `J↓` at rank `r`, with the trivial ranks `0` and `d`
/// handled directly.
fn dim_frame(diag: &DiagnosticSet, r: usize, cfg: &OptConfig) -> Result<(Frame, bool)> {
    let d = diag.dim();
    if r == 0 {
        return Ok((Frame::empty(d), true));
    }
    if r == d {
        return Ok((Frame::axes(d, &(0..d).collect::<Vec<_>>()).map_err(numerical)?, true));
    }
    let report = grassmann::minimize(diag, r, cfg).map_err(numerical)?;
    Ok((report.frame, report.converged))
}

fn parse_method(s: &str) -> Result<Method> {
    match s {
        "lsi" => Ok(Method::Lsi),
        "dim" => Ok(Method::DimLsi),
        "tilted" => Ok(Method::Tilted),
        "hellinger" => Ok(Method::Hellinger),
        "dim_hellinger" => Ok(Method::DimHellinger),
        other => Err(usage(
            "--method",
            format!("unknown method {other:?} (expected lsi, dim, tilted, hellinger or dim_hellinger)"),
        )),
    }
}

/// Divergence values below this magnitude are printed as zero.
pub const ZERO_SNAP: f64 = 1e-12;

/// [`fmt_num`] for divergence values, with rounding residue below
/// [`ZERO_SNAP`] printed as `0`.
pub fn fmt_value(x: f64) -> String {
    if x.abs() < ZERO_SNAP {
        "0".into()
    } else {
        fmt_num(x)
    }
}

fn opt_num(x: Option<f64>) -> String {
    x.map(fmt_value).unwrap_or_default()
}

pub fn cmd_bounds(a: &BoundsArgs, out: &mut dyn Write) -> Result<()> {
    let method = parse_method(&a.method)?;
    let diag = load_diagnostics(&a.source)?;
    let d = diag.dim();
    let frame = match (&a.frame, a.rank) {
        (Some(_), Some(_)) => return Err(CliError::Usage("give either --frame or --rank, not both".into())),
        (None, None) => return Err(CliError::Usage("one of --frame or --rank is required".into())),
        (Some(path), None) => {
            let m = csvio::read_dense(path).map_err(|e| usage("--frame", e))?;
            if m.nrows() != d {
                return Err(usage("--frame", format!("frame has {} rows, diagnostics have d = {d}", m.nrows())));
            }
            Frame::orthonormalize(&m).map_err(|e| usage("--frame", e))?
        }
        (None, Some(r)) => {
            if r > d {
                return Err(usage("--rank", format!("rank {r} exceeds the dimension {d}")));
            }
            match method {
                Method::Lsi => bounds::lsi_certificate(&diag, r).map_err(numerical)?.0,
                Method::Tilted => bounds::tilted_certificate(&diag, r)
                    .and_then(|c| c.feature_frame())
                    .map_err(numerical)?,
                _ => dim_frame(&diag, r, &opt_config(a.starts, a.seed)?)?.0,
            }
        }
    };
    let cert = match method {
        Method::DimHellinger => {
            let upper = bounds::dim_hellinger_majorant(&diag, &frame, a.y_lower).map_err(|e| match e {
                bounds::BoundsError::InvalidHellingerLower { .. } => usage("--y-lower", e),
                other => numerical(other),
            })?;
            bounds::CertBound::new(None, upper, method, frame.rank()).map_err(numerical)?
        }
        _ => bounds::evaluate(&diag, &frame, method).map_err(numerical)?,
    };
    writeln!(out, "method,rank,lower,upper")?;
    writeln!(
        out,
        "{},{},{},{}",
        cert.method,
        cert.rank,
        opt_num(cert.lower),
        fmt_value(cert.upper)
    )?;
    Ok(())
}

/// Samples of `g` together with their relative scores `x − C⁻¹(x − m)`.
fn gaussian_batch(g: &GaussianMeasure, precision: &SymMatrix, n: usize, rng: &mut ChaCha8Rng) -> Result<SampleBatch> {
    let x = g.sample(n, rng).map_err(numerical)?;
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= g.mean().transpose();
    }
    let grads = &x - centered * precision.matrix();
    SampleBatch::new(x, grads).map_err(numerical)
}

pub fn cmd_lingauss(a: &LingaussArgs, out: &mut dyn Write) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let model = match &a.a {
        Some(path) => LinearGaussianModel::new(csvio::read_dense(path).map_err(|e| usage("--A", e))?),
        None => {
            if a.dx == 0 || a.dy == 0 {
                return Err(usage("--dx", "dimensions must be positive"));
            }
            LinearGaussianModel::random(a.dx, a.dy, &mut rng)
        }
    };
    for (flag, n) in [("--train", a.train), ("--test", a.test)] {
        if n < 2 {
            return Err(usage(flag, "at least two samples are needed"));
        }
    }
    let d = model.dx();
    let ranks = ranks_or_all("--ranks", a.ranks.as_deref(), d)?;
    let cfg = opt_config(a.starts, a.seed)?;

    let (_, y) = model.sample_joint(&mut rng);
    let post = model.posterior(&y).map_err(numerical)?;
    let precision = post.cov().inverse().map_err(numerical)?;
    let exact = diagnostics::diagnostics_from_gaussian(&post).map_err(numerical)?;
    let train = diagnostics::estimate_diagnostics(&gaussian_batch(&post, &precision, a.train, &mut rng)?)
        .map_err(numerical)?;
    let test = diagnostics::estimate_diagnostics(&gaussian_batch(&post, &precision, a.test, &mut rng)?)
        .map_err(numerical)?;

    writeln!(out, "rank,exact_opt,lsi_cert,dim_train,dim_test")?;
    for r in ranks {
        let (exact_frame, _) = dim_frame(&exact, r, &cfg)?;
        let exact_opt = gaussian_oracle::exact_gaussian_kl(&post, &exact_frame).map_err(numerical)?;
        let (_, lsi_cert) = bounds::lsi_certificate(&exact, r).map_err(numerical)?;
        let (train_frame, _) = dim_frame(&train, r, &cfg)?;
        let dim_train = bounds::dim_majorant(&train, &train_frame).map_err(numerical)?.max(0.0);
        let dim_test = bounds::dim_majorant(&test, &train_frame).map_err(numerical)?.max(0.0);
        writeln!(
            out,
            "{r},{},{},{},{}",
            fmt_value(exact_opt),
            fmt_value(lsi_cert),
            fmt_value(dim_train),
            fmt_value(dim_test)
        )?;
    }
    Ok(())
}

fn parse_reference(s: &str) -> Result<Reference> {
    s.parse().map_err(|e: String| usage("--reference", e))
}

/// Writes a sweep table followed by the footer line with both minimizers.
pub fn write_sweep(table: &SweepTable, out: &mut dyn Write) -> Result<()> {
    writeln!(out, "{}", SweepTable::HEADER)?;
    for r in &table.rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            fmt_num(r.theta_deg),
            fmt_value(r.kl),
            fmt_value(r.lsi_lo),
            fmt_value(r.lsi_hi),
            fmt_value(r.dim_lo),
            fmt_value(r.dim_hi)
        )?;
    }
    write!(
        out,
        "# theta_lsi_deg={} theta_dim_deg={}",
        fmt_num(table.theta_lsi_deg),
        fmt_num(table.theta_dim_deg)
    )?;
    if let Some(drift) = table.drift {
        write!(out, " max_doubling_drift={}", fmt_num(drift))?;
    }
    writeln!(out)?;
    Ok(())
}

pub fn cmd_rosenbrock(a: &RosenbrockArgs, out: &mut dyn Write) -> Result<()> {
    let reference = parse_reference(&a.reference)?;
    if a.angles == 0 {
        return Err(usage("--angles", "at least one angle is needed"));
    }
    if !(1..=quadrature::MAX_ORDER).contains(&a.order) {
        return Err(usage("--order", format!("must lie in 1..={}", quadrature::MAX_ORDER)));
    }
    let rosen = Rosenbrock::default();
    let identity = AffineTarget::identity(2).map_err(numerical)?;
    let target: &dyn PushforwardTarget = match a.target.as_str() {
        "rosenbrock" => &rosen,
        "identity" => &identity,
        other => return Err(usage("--target", format!("unknown target {other:?} (expected rosenbrock or identity)"))),
    };
    let opts = SweepOptions {
        n_angles: a.angles,
        order: a.order,
        reference,
        check_stride: a.check_stride,
        opt: opt_config(a.starts, a.seed)?,
    };
    let table = quadrature::angle_sweep(target, &opts).map_err(numerical)?;
    write_sweep(&table, out)
}

pub fn cmd_datafree(a: &DatafreeArgs, out: &mut dyn Write) -> Result<()> {
    let (h_df, operator) = match (&a.a, &a.joint_samples) {
        (Some(_), Some(_)) => return Err(CliError::Usage("give either --A or --joint-samples, not both".into())),
        (Some(path), None) => {
            let m = csvio::read_dense(path).map_err(|e| usage("--A", e))?;
            let model = LinearGaussianModel::new(m.clone());
            (model.datafree_diagnostic(), Some(m))
        }
        (None, Some(path)) => {
            let batch = csvio::read_joint(path).map_err(|e| usage("--joint-samples", e))?;
            (diagnostics::estimate_datafree(&batch).map_err(|e| usage("--joint-samples", e))?, None)
        }
        (None, None) => {
            if a.dx == 0 || a.dy == 0 {
                return Err(usage("--dx", "dimensions must be positive"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            let model = LinearGaussianModel::random(a.dx, a.dy, &mut rng);
            (model.datafree_diagnostic(), Some(model.operator().clone()))
        }
    };
    let ranks = ranks_or_all("--ranks", a.ranks.as_deref(), h_df.dim())?;
    match operator {
        Some(_) => writeln!(out, "rank,dim_cert,linear_cert,exact_expected_kl")?,
        None => writeln!(out, "rank,dim_cert,linear_cert")?,
    }
    for r in ranks {
        let cert = bounds::datafree_certificate(&h_df, r).map_err(numerical)?;
        write!(out, "{r},{},{}", fmt_value(cert.dim_cert), fmt_value(cert.linear_cert))?;
        if let Some(op) = &operator {
            let exact = gaussian_oracle::datafree_expected_kl_linear(op, r).map_err(numerical)?;
            write!(out, ",{}", fmt_value(exact))?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn cmd_optimize(a: &OptimizeArgs, out: &mut dyn Write) -> Result<()> {
    let diag = load_diagnostics(&a.source)?;
    let d = diag.dim();
    if a.rank == 0 || a.rank >= d {
        return Err(usage("--rank", format!("rank must satisfy 1 <= r < d = {d}")));
    }
    let cfg = OptConfig {
        max_iters: a.max_iters,
        grad_tol: a.grad_tol,
        ..opt_config(a.starts, a.seed)?
    };
    cfg.validate().map_err(|e| usage("--grad-tol", e))?;
    let report = grassmann::minimize(&diag, a.rank, &cfg).map_err(numerical)?;
    let max = report.start_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = report.start_values.iter().copied().fold(f64::INFINITY, f64::min);
    writeln!(out, "field,value")?;
    writeln!(out, "value,{}", fmt_value(report.value))?;
    writeln!(out, "grad_norm,{}", fmt_num(report.grad_norm))?;
    writeln!(out, "iters,{}", report.iters)?;
    writeln!(out, "converged,{}", report.converged)?;
    writeln!(out, "crit_residual_a,{}", fmt_num(report.crit_residual_a))?;
    writeln!(out, "crit_residual_b,{}", fmt_num(report.crit_residual_b))?;
    writeln!(out, "start,{}", report.start)?;
    writeln!(out, "starts,{}", report.start_values.len())?;
    writeln!(out, "spread,{}", fmt_num(max - min))?;
    match &a.out {
        Some(path) => csvio::write_dense_file(path, report.frame.matrix()).map_err(|e| usage("--out", e))?,
        None => {
            writeln!(out)?;
            csvio::write_dense(&mut *out, report.frame.matrix())?;
        }
    }
    if !report.converged {
        return Err(CliError::NotConverged);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_str(args: &[&str]) -> Result<String> {
        let mut buf = Vec::new();
        let mut argv = vec!["certdr"];
        argv.extend_from_slice(args);
        run(argv, &mut buf)?;
        Ok(String::from_utf8(buf).unwrap())
    }

    #[test]
    fn bounds_examples() {
        let s = run_str(&["bounds", "--gaussian", "0,I", "--rank", "1", "--method", "dim"]).unwrap();
        assert_eq!(s, "method,rank,lower,upper\ndim,1,0,0\n");
        let s = run_str(&["bounds", "--gaussian", "1,4", "--rank", "0", "--method", "dim"]).unwrap();
        assert_eq!(s, "method,rank,lower,upper\ndim,0,1.30685281944,1.30685281944\n");
        let s = run_str(&["bounds", "--gaussian", "1,4", "--rank", "0", "--method", "lsi"]).unwrap();
        assert_eq!(s, "method,rank,lower,upper\nlsi,0,0.5,1.625\n");
    }

    #[test]
    fn usage_errors_name_the_flag() {
        let e = run_str(&["bounds", "--gaussian", "1,4", "--rank", "3"]).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("--rank"), "{e}");
        let e = run_str(&["bounds", "--gaussian", "1,x", "--rank", "0"]).unwrap_err();
        assert!(e.to_string().contains("--gaussian"), "{e}");
        let e = run_str(&["bounds", "--rank", "0"]).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        let e = run_str(&["bounds", "--gaussian", "0,I", "--rank", "0", "--method", "nope"]).unwrap_err();
        assert!(e.to_string().contains("--method"), "{e}");
        let e = run_str(&["frobnicate"]).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn ranks_parse() {
        assert_eq!(parse_ranks("0,2,5-7,2").unwrap(), vec![0, 2, 5, 6, 7]);
        assert!(parse_ranks("3-1").is_err());
        assert!(parse_ranks("a").is_err());
        assert!(parse_ranks("").is_err());
    }

    #[test]
    fn gaussian_argument_forms() {
        let g = parse_gaussian("0,I", 3).unwrap();
        assert_eq!(g.dim(), 3);
        let g = parse_gaussian("1;2,4", 1).unwrap();
        assert_eq!(g.dim(), 2);
        assert_eq!(g.cov().get(1, 1), 4.0);
        assert!(parse_gaussian("1;2,1;2;3", 1).is_err());
        assert!(parse_gaussian("0,-1", 1).is_err());
    }

    #[test]
    fn config_file_sets_defaults_and_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        std::fs::write(&cfg, "# defaults\ngaussian = 1,4\nrank = 0\nmethod = dim\n").unwrap();
        let c = cfg.to_str().unwrap();
        let s = run_str(&["bounds", "--config", c]).unwrap();
        assert_eq!(s, "method,rank,lower,upper\ndim,0,1.30685281944,1.30685281944\n");
        let s = run_str(&["bounds", "--config", c, "--method", "lsi"]).unwrap();
        assert_eq!(s, "method,rank,lower,upper\nlsi,0,0.5,1.625\n");
        std::fs::write(&cfg, "ranks = 1\n").unwrap();
        let e = run_str(&["bounds", "--config", c]).unwrap_err();
        assert!(e.to_string().contains("unknown key"), "{e}");
    }

    #[test]
    fn datafree_zero_operator() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.csv");
        std::fs::write(&a, "0,0,0\n0,0,0\n").unwrap();
        let s = run_str(&["datafree", "--A", a.to_str().unwrap()]).unwrap();
        assert_eq!(
            s,
            "rank,dim_cert,linear_cert,exact_expected_kl\n0,0,0,0\n1,0,0,0\n2,0,0,0\n3,0,0,0\n"
        );
    }

    #[test]
    fn lingauss_zero_operator() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.csv");
        std::fs::write(&a, "0,0,0,0\n0,0,0,0\n").unwrap();
        let s = run_str(&["lingauss", "--A", a.to_str().unwrap(), "--train", "40", "--test", "40"]).unwrap();
        let mut lines = s.lines();
        assert_eq!(lines.next(), Some("rank,exact_opt,lsi_cert,dim_train,dim_test"));
        for (r, line) in lines.enumerate() {
            assert_eq!(line, format!("{r},0,0,0,0"));
        }
    }

    #[test]
    fn optimize_identity_gaussian() {
        let s = run_str(&["optimize", "--gaussian", "0,I", "--dim", "3", "--rank", "1"]).unwrap();
        assert!(s.contains("value,0\n"), "{s}");
        assert!(s.contains("iters,0\n"), "{s}");
        assert!(s.contains("converged,true\n"), "{s}");
    }

    #[test]
    fn identity_sweep_table_is_zero() {
        let s = run_str(&["rosenbrock", "--target", "identity", "--angles", "4", "--order", "10"]).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], SweepTable::HEADER);
        assert_eq!(lines[1], "0,0,0,0,0,0");
        assert_eq!(lines[2], "45,0,0,0,0,0");
        assert!(lines[5].starts_with("# theta_lsi_deg="));
    }

    #[test]
    fn help_is_not_an_error() {
        let s = run_str(&["--help"]).unwrap();
        assert!(s.contains("rosenbrock"));
    }
}
