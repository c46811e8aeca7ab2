//! `topo`: topological generalization indicators from recorded trajectories.
//!
//! Exit codes: 0 on success, 1 on invalid input (bad arguments, missing or
//! malformed bundles, invalid specs), 2 when a computation fails.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use topo_core::analysis::{
    build_grid_report, gap_record, recompute_coefficients, write_grid_outputs, GapMode, GapRecord,
    GridReport, GridSpec,
};
use topo_core::complexity::{
    complexities_from_distances, distance_matrix_for, ComplexityRecord, ComputeSpec, ScaleToken,
};
use topo_core::metrics::{read_cache, write_cache, CacheInfo, ProjectionSpec, TargetDim};
use topo_core::synth::{synth_bundle, Shape, SynthSpec};
use topo_core::trajectory::{
    load_bundle, read_bundle, validate_bundle, write_bundle, RunMeta, ValidationReport,
};
use topo_core::{MemoryBudget, MetricKind, TopoError};

#[derive(Parser, Debug)]
#[command(
    name = "topo",
    version,
    about = "Topological generalization indicators from optimizer trajectories"
)]
struct Cli {
    /// Print errors to standard error as a JSON object.
    #[arg(long, global = true)]
    errors_json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute E_alpha, magnitude, positive magnitude and PH-dimension for one bundle.
    Compute(ComputeArgs),
    /// Compute complexities for every bundle under a directory and correlate them with the gap.
    Grid(GridArgs),
    /// Write a synthetic point cloud as a weight-only bundle.
    Synth(SynthArgs),
    /// Recompute Kendall coefficients from an existing grid report.
    Kendall(KendallArgs),
    /// Check a bundle against the format and its invariants.
    Validate(ValidateArgs),
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum MetricArg {
    Euclid,
    RhoP,
    ZeroOne,
}

#[derive(Args, Debug)]
struct ComputeArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long, value_enum, default_value = "rho-p")]
    metric: MetricArg,
    /// Order of the rho-p pseudometric.
    #[arg(long, default_value_t = 1.0)]
    p: f64,
    /// Loss columns to use, as a fraction of the whole training set.
    #[arg(long, default_value_t = 0.10)]
    subsample: f64,
    /// Sparse random projection distortion for the Euclidean metric.
    #[arg(long)]
    proj_eps: Option<f64>,
    /// Projection target dimension; defaults to ceil(8 ln N / eps^2).
    #[arg(long, requires = "proj_eps")]
    proj_dim: Option<usize>,
    /// Exponent alpha of E_alpha (repeatable).
    #[arg(long = "e-alpha", default_values_t = vec![1.0])]
    e_alpha: Vec<f64>,
    /// Magnitude scale: `sqrt-n` or a positive real (repeatable).
    #[arg(long = "mag-scale", default_values = ["sqrt-n", "0.01"])]
    mag_scale: Vec<String>,
    /// Report positive magnitude alongside magnitude.
    #[arg(long)]
    pmag: bool,
    /// Estimate the PH-dimension.
    #[arg(long)]
    ph_dim: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report path; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Leave the generation time out of the report.
    #[arg(long)]
    no_timestamp: bool,
    /// Directory for reusing distance matrices between invocations.
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GridArgs {
    /// Directory whose subdirectories are run bundles.
    #[arg(long)]
    root: PathBuf,
    /// JSON grid specification; defaults apply to omitted fields.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Worker threads; all cores when omitted.
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory for report.json, report.csv and scatter/*.csv.
    #[arg(long)]
    out: PathBuf,
    /// Count constant-valued slices as tau = 0 instead of skipping them.
    #[arg(long)]
    degenerate_as_zero: bool,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum ShapeArg {
    Cube,
    Sphere,
    Circle,
    Gaussian,
    TwoCluster,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, value_enum)]
    shape: ShapeArg,
    /// Ambient dimension for cube, sphere and gaussian.
    #[arg(long, default_value_t = 2)]
    dim: usize,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Cluster separation for two-cluster.
    #[arg(long, default_value_t = 10.0)]
    sep: f64,
    /// Repeat every point this many times.
    #[arg(long, default_value_t = 1)]
    copies: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum GapArg {
    Worst,
    Final,
}

#[derive(Args, Debug)]
struct KendallArgs {
    /// A report.json written by `topo grid`.
    #[arg(long)]
    grid: PathBuf,
    /// Gap variant; the report's own setting when omitted.
    #[arg(long, value_enum)]
    gap_mode: Option<GapArg>,
    #[arg(long)]
    degenerate_as_zero: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    #[arg(long)]
    bundle: PathBuf,
}

enum CliError {
    Usage(String),
    Topo(TopoError),
}

impl From<TopoError> for CliError {
    fn from(e: TopoError) -> Self {
        CliError::Topo(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Topo(e.into())
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Topo(e) if e.is_validation() => 1,
            CliError::Topo(_) => 2,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "Usage",
            CliError::Topo(e) => e.kind(),
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Usage(m) => m.clone(),
            CliError::Topo(e) => e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Serialize)]
struct ComputeReport {
    bundle: String,
    config: ComputeSpec,
    run_meta: RunMeta,
    gap: Option<GapRecord>,
    #[serde(flatten)]
    complexities: ComplexityRecord,
    #[serde(skip_serializing_if = "Option::is_none")]
    generated_at: Option<u64>,
}

#[derive(Serialize)]
struct ValidateOutput<'a> {
    bundle: String,
    valid: bool,
    n_points: Option<usize>,
    has_weights: bool,
    has_losses: bool,
    has_losses01: bool,
    risk_records: usize,
    report: &'a ValidationReport,
}

fn to_json<T: Serialize>(value: &T) -> CliResult<Vec<u8>> {
    let mut bytes =
        serde_json::to_vec_pretty(value).map_err(|e| TopoError::MetadataParse(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn emit(bytes: &[u8], out: Option<&Path>) -> CliResult<()> {
    match out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            fs::write(path, bytes)?;
        }
        None => std::io::stdout().write_all(bytes)?,
    }
    Ok(())
}

fn metric_kind(metric: MetricArg, p: f64) -> CliResult<MetricKind> {
    Ok(match metric {
        MetricArg::Euclid => MetricKind::Euclidean,
        MetricArg::ZeroOne => MetricKind::ZeroOne,
        MetricArg::RhoP if p >= 1.0 && p.is_finite() => MetricKind::RhoP { p },
        MetricArg::RhoP => return Err(TopoError::InvalidOrder(p).into()),
    })
}

fn compute_spec(args: &ComputeArgs) -> CliResult<ComputeSpec> {
    let scales = args
        .mag_scale
        .iter()
        .map(|s| s.parse::<ScaleToken>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    if let Some(&a) = args.e_alpha.iter().find(|a| !(**a >= 0.0)) {
        return Err(CliError::Usage(format!("--e-alpha {a} must be >= 0")));
    }
    let projection = args.proj_eps.map(|eps| ProjectionSpec {
        distortion_eps: eps,
        seed: args.seed,
        target_dim: args.proj_dim.map_or(TargetDim::AUTO, TargetDim::Fixed),
    });
    Ok(ComputeSpec {
        metric: metric_kind(args.metric, args.p)?,
        alphas: args.e_alpha.clone(),
        scales,
        pmag: args.pmag,
        ph_dim: args.ph_dim,
        dim_protocol: None,
        subsample: Some(args.subsample),
        projection,
        solver: Default::default(),
        seed: args.seed,
    })
}

fn run_compute(args: ComputeArgs) -> CliResult<()> {
    let spec = compute_spec(&args)?;
    let bundle = load_bundle(&args.bundle)?;
    let budget = MemoryBudget::from_env();

    let wanted = CacheInfo {
        metric_kind: spec.metric,
        n_points: bundle.n_points().unwrap_or(0),
        n_reference: None,
        seed: Some(spec.seed),
        fraction: spec.subsample,
        projection: spec.projection,
    };
    let cached = match &args.cache {
        Some(dir) => read_cache(dir, spec.metric)?
            .filter(|(_, info)| {
                CacheInfo {
                    n_reference: None,
                    ..info.clone()
                } == wanted
            })
            .map(|(d, _)| d),
        None => None,
    };
    let d = match cached {
        Some(d) => d,
        None => {
            let d = distance_matrix_for(&bundle, &spec, &budget)?;
            if let Some(dir) = &args.cache {
                write_cache(
                    dir,
                    &d,
                    &CacheInfo {
                        n_reference: d.n_reference(),
                        ..wanted
                    },
                )?;
            }
            d
        }
    };
    let complexities = complexities_from_distances(&d, bundle.run_meta.n_train, &spec)?;
    let report = ComputeReport {
        bundle: args.bundle.display().to_string(),
        config: spec,
        gap: gap_record(&bundle).ok(),
        run_meta: bundle.run_meta,
        complexities,
        generated_at: (!args.no_timestamp).then(|| {
            SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|t| t.as_secs())
                .unwrap_or(0)
        }),
    };
    emit(&to_json(&report)?, args.out.as_deref())
}

fn run_grid(args: GridArgs) -> CliResult<()> {
    let mut spec: GridSpec = match &args.spec {
        Some(path) => {
            let bytes = fs::read(path).map_err(|_| TopoError::MissingFile(path.clone()))?;
            serde_json::from_slice(&bytes)
                .map_err(|e| TopoError::InvalidSpec(format!("{}: {e}", path.display())))?
        }
        None => GridSpec::default(),
    };
    spec.degenerate_as_zero |= args.degenerate_as_zero;
    if !args.root.is_dir() {
        return Err(TopoError::MissingFile(args.root.clone()).into());
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(&args.root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = args.jobs {
        if jobs == 0 {
            return Err(CliError::Usage("--jobs must be >= 1".into()));
        }
        pool = pool.num_threads(jobs);
    }
    let pool = pool
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start worker pool: {e}")))?;
    let budget = MemoryBudget::from_env();
    let report = pool.install(|| {
        let inputs = dirs
            .into_iter()
            .map(|dir| {
                let id = dir
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default();
                (id, load_bundle(&dir))
            })
            .collect();
        build_grid_report(inputs, &spec, &budget)
    })?;
    write_grid_outputs(&report, &args.out)?;
    for f in &report.failures {
        let metric = f
            .metric
            .as_deref()
            .map(|m| format!(" [{m}]"))
            .unwrap_or_default();
        eprintln!("warning: run {}{metric}: {}", f.run_id, f.message);
    }
    Ok(())
}

fn run_synth(args: SynthArgs) -> CliResult<()> {
    let base = match args.shape {
        ShapeArg::Cube => Shape::Cube { dim: args.dim },
        ShapeArg::Sphere => Shape::SphereSurface { dim: args.dim },
        ShapeArg::Circle => Shape::Circle,
        ShapeArg::Gaussian => Shape::Gaussian { dim: args.dim },
        ShapeArg::TwoCluster => Shape::TwoCluster { sep: args.sep },
    };
    let shape = if args.copies == 1 {
        base
    } else {
        Shape::Duplicated {
            base: Box::new(base),
            copies: args.copies,
        }
    };
    let bundle = synth_bundle(&SynthSpec {
        shape,
        n_points: args.n,
        seed: args.seed,
        noise: args.noise,
    })?;
    write_bundle(&bundle, &args.out)?;
    Ok(())
}

#[derive(Serialize)]
struct KendallOutput {
    gap_mode: GapMode,
    degenerate_as_zero: bool,
    coefficients: std::collections::BTreeMap<String, topo_core::analysis::Coefficients>,
    skipped_coefficients: Vec<topo_core::analysis::CoefficientSkip>,
}

fn run_kendall(args: KendallArgs) -> CliResult<()> {
    let bytes = fs::read(&args.grid).map_err(|_| TopoError::MissingFile(args.grid.clone()))?;
    let report: GridReport = serde_json::from_slice(&bytes)
        .map_err(|e| TopoError::MetadataParse(format!("{}: {e}", args.grid.display())))?;
    let gap_mode = match args.gap_mode {
        Some(GapArg::Worst) => GapMode::Worst,
        Some(GapArg::Final) => GapMode::Final,
        None => report.spec.gap_mode,
    };
    let degenerate_as_zero = args.degenerate_as_zero || report.spec.degenerate_as_zero;
    let (coefficients, skipped_coefficients) =
        recompute_coefficients(&report.runs, gap_mode, degenerate_as_zero);
    let out = KendallOutput {
        gap_mode,
        degenerate_as_zero,
        coefficients,
        skipped_coefficients,
    };
    emit(&to_json(&out)?, args.out.as_deref())
}

fn run_validate(args: ValidateArgs) -> CliResult<()> {
    let bundle = read_bundle(&args.bundle)?;
    let report = validate_bundle(&bundle);
    let out = ValidateOutput {
        bundle: args.bundle.display().to_string(),
        valid: report.is_empty(),
        n_points: bundle.n_points(),
        has_weights: bundle.weights.is_some(),
        has_losses: bundle.losses.is_some(),
        has_losses01: bundle.losses01.is_some(),
        risk_records: bundle.risk_history.len(),
        report: &report,
    };
    emit(&to_json(&out)?, None)?;
    if report.is_empty() {
        Ok(())
    } else {
        Err(TopoError::InvalidBundle(report).into())
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Compute(a) => run_compute(a),
        Command::Grid(a) => run_grid(a),
        Command::Synth(a) => run_synth(a),
        Command::Kendall(a) => run_kendall(a),
        Command::Validate(a) => run_validate(a),
    }
}

fn report_error(err: &CliError, as_json: bool) {
    if as_json {
        let obj = serde_json::json!({
            "error": err.kind(),
            "message": err.message(),
            "exit_code": err.exit_code(),
        });
        eprintln!("{obj}");
    } else {
        eprintln!("error ({}): {}", err.kind(), err.message());
    }
}

fn main() -> ExitCode {
    let errors_json = std::env::args().any(|a| a == "--errors-json");
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            if errors_json {
                report_error(&CliError::Usage(e.to_string()), true);
            } else {
                let _ = e.print();
            }
            return ExitCode::from(1);
        }
    };
    let as_json = cli.errors_json;
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            report_error(&err, as_json);
            ExitCode::from(err.exit_code())
        }
    }
}
