//! Command-line surface: `refine`, `prune` and `bench`.
//!
//! Every invocation prints exactly one JSON object to stdout; diagnostics go
//! to stderr. Exit codes: 0 success, 1 usage or validation, 2 data or file
//! format, 3 solver non-convergence (outputs are still written).
//!
//! Config precedence: defaults, then `--config FILE`, then inline flags.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::bench::{run_suite, RegionShape, ScenarioParams, SuiteOptions};
use crate::error::Error;
use crate::io::{load_config, read_array, write_array, DenseArray, RefineConfig, SolverChoice};
use crate::pipeline::{blend_latents, run_pipeline, BinaryMask, PipelineInputs};
use crate::prune::{interpolate, EmbeddingVector, OffsetSign};

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "CASA_REFINE_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExitStatus {
    code: i32,
}

impl ExitStatus {
    pub const SUCCESS: ExitStatus = ExitStatus { code: 0 };
    pub const USAGE: ExitStatus = ExitStatus { code: 1 };
    pub const DATA: ExitStatus = ExitStatus { code: 2 };
    pub const NOT_CONVERGED: ExitStatus = ExitStatus { code: 3 };

    pub fn code(self) -> i32 {
        self.code
    }

    pub fn for_error(err: &Error) -> ExitStatus {
        match err.root() {
            Error::Validation { .. } | Error::Parameter(_) | Error::Generation(_) => ExitStatus::USAGE,
            _ => ExitStatus::DATA,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "casa-refine", version, about = "Laplacian-regularized attention mask refinement")]
struct Cli {
    /// Worker threads (also capped by CASA_REFINE_THREADS).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Refine source/target attention into an edit mask.
    #[command(allow_negative_numbers = true)]
    Refine(RefineArgs),
    /// Add the pruned text offset to an image embedding.
    #[command(allow_negative_numbers = true)]
    Prune(PruneArgs),
    /// Run the synthetic spill benchmark.
    #[command(allow_negative_numbers = true)]
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SolverArg {
    Auto,
    Dense,
    Cg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SignArg {
    Paper,
    Reversed,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScenarioArg {
    Disk,
    Rectangle,
    TwoBlobs,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// JSON config file; inline flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    gamma: Option<i64>,
    #[arg(long, value_enum)]
    solver: Option<SolverArg>,
    #[arg(long)]
    cg_tol: Option<f64>,
    #[arg(long)]
    cg_max_iter: Option<i64>,
    #[arg(long)]
    lambda_floor: Option<f64>,
    /// Confidence ablation: Λ = I.
    #[arg(long)]
    uniform_weights: bool,
    /// Use the raw self-attention without symmetrizing it.
    #[arg(long)]
    no_symmetrize: bool,
    /// Drop negligible affinities when building the Laplacian.
    #[arg(long)]
    sparsify: bool,
}

#[derive(Debug, Args)]
struct RefineArgs {
    #[arg(long)]
    cross_src: PathBuf,
    #[arg(long)]
    cross_tgt: PathBuf,
    #[arg(long)]
    self_src: PathBuf,
    #[arg(long)]
    self_tgt: PathBuf,
    #[arg(long)]
    out_mask: PathBuf,
    /// Fused refined saliency (before thresholding).
    #[arg(long)]
    out_saliency: Option<PathBuf>,
    /// Optional latents to blend with the mask.
    #[arg(long, requires_all = ["latent_src", "out_latent"])]
    latent_tgt: Option<PathBuf>,
    #[arg(long, requires_all = ["latent_tgt", "out_latent"])]
    latent_src: Option<PathBuf>,
    #[arg(long, requires_all = ["latent_tgt", "latent_src"])]
    out_latent: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Debug, Args)]
struct PruneArgs {
    #[arg(long)]
    src_img: PathBuf,
    #[arg(long)]
    src_txt: PathBuf,
    #[arg(long)]
    tgt_txt: PathBuf,
    /// Defaults to the config value (80).
    #[arg(long)]
    tau_percentile: Option<f64>,
    #[arg(long, value_enum, default_value = "paper")]
    sign: SignArg,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Number of seeds, starting at --seed.
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 32)]
    side: usize,
    #[arg(long, value_enum, default_value = "disk")]
    scenario: ScenarioArg,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    spill_count: Option<usize>,
    #[arg(long)]
    spill_magnitude: Option<f64>,
    #[arg(long)]
    out_csv: PathBuf,
    /// Fill the wall_ms column (makes the CSV run-dependent).
    #[arg(long)]
    timings: bool,
    #[command(flatten)]
    config: ConfigArgs,
}

struct CliError {
    status: ExitStatus,
    message: String,
}

impl From<Error> for CliError {
    fn from(err: Error) -> Self {
        let message = match err.root() {
            Error::Validation { field, .. } if !field.starts_with('<') => {
                format!("{err} (--{})", field.replace('_', "-"))
            }
            _ => err.to_string(),
        };
        CliError {
            status: ExitStatus::for_error(&err),
            message,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> ExitStatus
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitStatus::USAGE
            } else {
                ExitStatus::SUCCESS
            };
        }
    };

    let threads = thread_count(cli.jobs);
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitStatus::USAGE;
        }
    };

    let result = pool.install(|| match &cli.command {
        Command::Refine(a) => cmd_refine(a),
        Command::Prune(a) => cmd_prune(a),
        Command::Bench(a) => cmd_bench(a),
    });
    match result {
        Ok((report, status)) => {
            println!("{report}");
            status
        }
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.status
        }
    }
}

fn thread_count(jobs: Option<usize>) -> usize {
    let cap = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0);
    let wanted = jobs.filter(|&n| n > 0).unwrap_or_else(|| {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    });
    cap.map_or(wanted, |c| wanted.min(c))
}

fn build_config(args: &ConfigArgs) -> CliResult<RefineConfig> {
    let mut cfg = match &args.config {
        Some(path) => load_config(path)?,
        None => RefineConfig::default(),
    };
    if let Some(v) = args.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = args.lambda {
        cfg.lambda = v;
    }
    if let Some(v) = args.delta {
        cfg.delta = v;
    }
    if let Some(v) = args.gamma {
        cfg.gamma = usize::try_from(v).map_err(|_| Error::Validation {
            field: "gamma".into(),
            message: "must be ≥ 1".into(),
        })?;
    }
    if let Some(v) = args.solver {
        cfg.solver = match v {
            SolverArg::Auto => SolverChoice::Auto,
            SolverArg::Dense => SolverChoice::Dense,
            SolverArg::Cg => SolverChoice::Cg,
        };
    }
    if let Some(v) = args.cg_tol {
        cfg.cg_tol = v;
    }
    if let Some(v) = args.cg_max_iter {
        cfg.cg_max_iter = Some(usize::try_from(v).map_err(|_| Error::Validation {
            field: "cg_max_iter".into(),
            message: "must be ≥ 1".into(),
        })?);
    }
    if let Some(v) = args.lambda_floor {
        cfg.lambda_floor = v;
    }
    cfg.ablation_uniform_weights |= args.uniform_weights;
    cfg.ablation_no_symmetrize |= args.no_symmetrize;
    cfg.sparsify |= args.sparsify;
    cfg.validate()?;
    Ok(cfg)
}

fn read(path: &Path) -> CliResult<DenseArray> {
    Ok(read_array(path)?)
}

fn cmd_refine(args: &RefineArgs) -> CliResult<(Value, ExitStatus)> {
    let start = Instant::now();
    let cfg = build_config(&args.config)?;
    let cross_src = read(&args.cross_src)?;
    let cross_tgt = read(&args.cross_tgt)?;
    let self_src = read(&args.self_src)?;
    let self_tgt = read(&args.self_tgt)?;
    let out_dtype = cross_src.dtype();

    let out = run_pipeline(
        &PipelineInputs {
            cross_src: &cross_src,
            cross_tgt: &cross_tgt,
            self_src: &self_src,
            self_tgt: &self_tgt,
        },
        &cfg,
    )?;

    write_array(&out.mask.to_array().cast(out_dtype), &args.out_mask)?;
    if let Some(path) = &args.out_saliency {
        write_array(&out.fused.to_array().cast(out_dtype), path)?;
    }
    if let (Some(zt), Some(zs), Some(dst)) = (&args.latent_tgt, &args.latent_src, &args.out_latent) {
        let z_tgt = read(zt)?;
        let z_src = read(zs)?;
        let latent_side = match z_tgt.shape() {
            [.., h, w] if h == w => *h,
            s => {
                return Err(Error::Shape(format!("latent spatial dims must be square, got {s:?}")).into())
            }
        };
        let mask: BinaryMask = out.mask.resize_nearest(latent_side)?;
        write_array(&blend_latents(&mask, &z_tgt, &z_src)?, dst)?;
    }

    let r = &out.report;
    let status = if r.converged() {
        ExitStatus::SUCCESS
    } else {
        eprintln!("warning: solver did not converge; best iterate written");
        ExitStatus::NOT_CONVERGED
    };
    let report = json!({
        "command": "refine",
        "config": cfg,
        "objective_initial": r.src.objective_initial + r.tgt.objective_initial,
        "objective_final": r.src.objective_final + r.tgt.objective_final,
        "solver": r.src.solver,
        "cg_iterations": r.src.cg_iterations + r.tgt.cg_iterations,
        "wall_ms": start.elapsed().as_secs_f64() * 1e3,
        "converged": r.converged(),
        "side": r.side,
        "mask_pixels": r.mask_pixels,
        "fused_min": r.fused_min,
        "fused_max": r.fused_max,
        "branches": { "src": r.src, "tgt": r.tgt },
    });
    Ok((report, status))
}

fn read_embedding(path: &Path) -> CliResult<(DenseArray, EmbeddingVector)> {
    let arr = read(path)?;
    let v = EmbeddingVector::new(arr.to_f64_vec())?;
    Ok((arr, v))
}

fn cmd_prune(args: &PruneArgs) -> CliResult<(Value, ExitStatus)> {
    let start = Instant::now();
    let mut cfg = match &args.config {
        Some(path) => load_config(path)?,
        None => RefineConfig::default(),
    };
    if let Some(p) = args.tau_percentile {
        cfg.tau_percentile = p;
    }
    cfg.validate()?;
    let (img_arr, img) = read_embedding(&args.src_img)?;
    let (_, src_txt) = read_embedding(&args.src_txt)?;
    let (_, tgt_txt) = read_embedding(&args.tgt_txt)?;
    let sign = match args.sign {
        SignArg::Paper => OffsetSign::Paper,
        SignArg::Reversed => OffsetSign::Reversed,
    };
    let out = interpolate(&img, &src_txt, &tgt_txt, cfg.tau_percentile, sign)?;
    let kept = out
        .values()
        .iter()
        .zip(img.values())
        .filter(|(a, b)| a != b)
        .count();
    let arr = DenseArray::from_f64(img_arr.shape().to_vec(), out.into_values())?.cast(img_arr.dtype());
    write_array(&arr, &args.out)?;
    let report = json!({
        "command": "prune",
        "config": cfg,
        "tau_percentile": cfg.tau_percentile,
        "sign": match sign { OffsetSign::Paper => "paper", OffsetSign::Reversed => "reversed" },
        "dim": img.dim(),
        "changed_entries": kept,
        "wall_ms": start.elapsed().as_secs_f64() * 1e3,
    });
    Ok((report, ExitStatus::SUCCESS))
}

fn cmd_bench(args: &BenchArgs) -> CliResult<(Value, ExitStatus)> {
    let start = Instant::now();
    let cfg = build_config(&args.config)?;
    let defaults = ScenarioParams::default();
    let params = ScenarioParams {
        side: args.side,
        shape: match args.scenario {
            ScenarioArg::Disk => RegionShape::Disk,
            ScenarioArg::Rectangle => RegionShape::Rectangle,
            ScenarioArg::TwoBlobs => RegionShape::TwoBlobs,
        },
        noise_sigma: args.noise_sigma.unwrap_or(defaults.noise_sigma),
        spill_count: args.spill_count.unwrap_or(defaults.spill_count),
        spill_magnitude: args.spill_magnitude.unwrap_or(defaults.spill_magnitude),
        ..defaults
    };
    let seeds: Vec<u64> = (args.seed..args.seed + args.seeds).collect();
    let report = run_suite(
        &cfg,
        &seeds,
        &params,
        &SuiteOptions {
            record_timing: args.timings,
        },
    )?;
    report.write_csv(&args.out_csv)?;

    let all_converged = report.rows.iter().all(|r| r.converged);
    let ablations: serde_json::Map<String, Value> = crate::bench::Ablation::ALL
        .iter()
        .map(|a| (a.as_str().to_string(), json!(report.mean_iou_after(*a))))
        .collect();
    let summary = json!({
        "command": "bench",
        "config": cfg,
        "scenario": params,
        "seeds": seeds.len(),
        "rows": report.rows.len(),
        "mean_iou_before": report.iou_before,
        "mean_iou_after": report.iou_after,
        "mean_iou_delta": report.mean_iou_delta(),
        "smoothness_before": report.smoothness_before,
        "smoothness_after": report.smoothness_after,
        "mean_iou_after_by_ablation": ablations,
        "converged": all_converged,
        "wall_ms": start.elapsed().as_secs_f64() * 1e3,
    });
    let status = if all_converged {
        ExitStatus::SUCCESS
    } else {
        eprintln!("warning: some solves did not converge; see CSV");
        ExitStatus::NOT_CONVERGED
    };
    Ok((summary, status))
}
