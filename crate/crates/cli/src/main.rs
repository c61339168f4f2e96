//! Experiment runner: loads or generates a matrix, sweeps (grid, K,
//! strategy, mode) configurations, runs sparse-aware and bulk-baseline
//! modes, and writes plot-ready reports.
//!
//! Exit codes: 0 full sweep, 2 partial (some configurations skipped with a
//! recorded reason), 1 fatal.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::Parser;

use sparse3d::engine::{run, KernelConfig, Mode};
use sparse3d::grid::ProcGrid;
use sparse3d::metrics::MetricsReport;
use sparse3d::plan::Strategy;
use sparse3d::predict::predict;
use sparse3d::sparse::{DenseMatrix, SparseMatrix};
use sparse3d::transport::RunOptions;

mod report;
mod spec;

use spec::RunSpec;

#[derive(Parser, Debug)]
#[command(
    name = "sparse3d",
    about = "3D-grid SDDMM/SpMM with sparsity-aware communication, over an in-process rank simulator",
    disable_help_flag = false
)]
struct Cli {
    /// Matrix Market file to load.
    #[arg(long, value_name = "PATH", conflicts_with = "gen")]
    matrix: Option<PathBuf>,

    /// Synthetic generator, e.g. rmat:14:300000.
    #[arg(long, value_name = "SPEC")]
    gen: Option<String>,

    /// Grid as XxYxZ; repeatable.
    #[arg(long = "grid", value_name = "XxYxZ")]
    grids: Vec<String>,

    /// Dense column count K; repeatable.
    #[arg(long = "k", value_name = "K")]
    ks: Vec<usize>,

    /// Communication strategy bb|rb|nb; repeatable (default: all three).
    #[arg(long = "strategy", value_name = "S")]
    strategies: Vec<String>,

    /// sparse | dense3d | both.
    #[arg(long, default_value = "sparse")]
    mode: String,

    /// Kernel to run: sddmm | spmm | both.
    #[arg(long, default_value = "sddmm")]
    kernel: String,

    /// Iterations per run (>= 3 reports median phase times).
    #[arg(long, default_value_t = 1)]
    iters: usize,

    #[arg(long, default_value_t = 1)]
    seed: u64,

    /// Output report path.
    #[arg(long, default_value = "report.json")]
    out: PathBuf,

    /// json | csv.
    #[arg(long, default_value = "json")]
    format: String,

    /// Analysis only: print lambda histograms and predicted volumes/memory
    /// without executing any kernel.
    #[arg(long, default_value_t = false)]
    explain: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // Usage problems are fatal (exit 1); 2 is reserved for partial
            // sweeps.
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match run_main(cli) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(_) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run_main(cli: Cli) -> anyhow::Result<usize> {
    let spec = RunSpec::from_cli(
        &cli.grids,
        &cli.ks,
        &cli.strategies,
        &cli.mode,
        &cli.kernel,
        cli.iters,
        cli.seed,
    )?;
    let (matrix, source) = load_matrix(&cli)?;
    eprintln!(
        "matrix: {} ({} x {}, {} nonzeros)",
        source,
        matrix.nrows(),
        matrix.ncols(),
        matrix.nnz()
    );

    let mut doc = report::Report::new(&source, &matrix, &spec);
    let skips = if cli.explain {
        explain(&matrix, &spec, &mut doc)?
    } else {
        sweep(&matrix, &spec, &mut doc)?
    };

    match cli.format.as_str() {
        "json" => std::fs::write(&cli.out, serde_json::to_string_pretty(&doc.json())?)?,
        "csv" => std::fs::write(&cli.out, doc.csv())?,
        other => bail!("unknown --format '{other}' (expected json or csv)"),
    }
    eprintln!("report written to {}", cli.out.display());
    Ok(skips)
}

fn load_matrix(cli: &Cli) -> anyhow::Result<(SparseMatrix, String)> {
    match (&cli.matrix, &cli.gen) {
        (Some(path), None) => {
            let m = sparse3d::load_matrix_market(path)
                .with_context(|| format!("loading {}", path.display()))?;
            Ok((m, path.display().to_string()))
        }
        (None, Some(spec)) => {
            let parts: Vec<&str> = spec.split(':').collect();
            match parts.as_slice() {
                ["rmat", scale, nnz] => {
                    let scale: u32 = scale.parse().context("--gen rmat scale")?;
                    let nnz: usize = nnz.parse().context("--gen rmat nnz")?;
                    let m = sparse3d::gen_rmat(scale, nnz, cli.seed)?;
                    Ok((m, format!("rmat:{scale}:{nnz} (seed {})", cli.seed)))
                }
                _ => bail!("unknown --gen spec '{spec}' (expected rmat:scale:nnz)"),
            }
        }
        (None, None) => bail!("one of --matrix or --gen is required"),
        _ => bail!("--matrix and --gen are mutually exclusive"),
    }
}

/// Rough memory guard: skip configurations whose dense footprint estimate
/// exceeds the desk-scale budget instead of aborting the sweep.
const MEMORY_BUDGET_WORDS: usize = 1 << 30;

fn sweep(matrix: &SparseMatrix, spec: &RunSpec, doc: &mut report::Report) -> anyhow::Result<usize> {
    let mut skips = 0usize;
    for &grid in &spec.grids {
        for &k in &spec.ks {
            if k % grid.z != 0 {
                skips += 1;
                let reason = "z_does_not_divide_k";
                eprintln!("skip grid {}x{}x{} K={k}: {reason}", grid.x, grid.y, grid.z);
                doc.skip(grid, k, reason);
                continue;
            }
            let prediction = predict(matrix, &grid, k, spec.seed)?;
            let estimate: usize = prediction
                .per_rank
                .iter()
                .map(|r| {
                    if spec.modes.contains(&Mode::Dense3d) {
                        r.baseline_store_words
                    } else {
                        r.store_words
                    }
                })
                .sum();
            if estimate > MEMORY_BUDGET_WORDS {
                skips += 1;
                let reason = "estimated_memory_exceeds_budget";
                eprintln!("skip grid {}x{}x{} K={k}: {reason}", grid.x, grid.y, grid.z);
                doc.skip(grid, k, reason);
                continue;
            }
            let a0 = DenseMatrix::seeded(matrix.nrows(), k, spec.seed ^ 0xA5A5);
            let b0 = DenseMatrix::seeded(matrix.ncols(), k, spec.seed ^ 0xB5B5);
            for &kernel in &spec.kernels {
                for &strategy in &spec.strategies {
                    let mut sparse_metrics: Option<MetricsReport> = None;
                    let mut base_metrics: Option<MetricsReport> = None;
                    for &mode in &spec.modes {
                        let cfg = KernelConfig {
                            grid,
                            k,
                            strategy,
                            mode,
                            iterations: spec.iterations,
                            seed: spec.seed,
                        };
                        let out = run(matrix, &a0, &b0, kernel, &cfg, &RunOptions::default())
                            .map_err(|e| anyhow!("{e}"))?;
                        eprintln!(
                            "ran {} {} {} grid {}x{}x{} K={k}: max recv (K-norm) {:.1}",
                            kernel.name(),
                            mode.name(),
                            strategy.name(),
                            grid.x,
                            grid.y,
                            grid.z,
                            out.metrics.aggregate.max_recv_volume_k_normalized
                        );
                        doc.add_run(&out.metrics, spec.iterations);
                        match mode {
                            Mode::SparseAware => sparse_metrics = Some(out.metrics),
                            Mode::Dense3d => base_metrics = Some(out.metrics),
                        }
                    }
                    if let (Some(s), Some(b)) = (&sparse_metrics, &base_metrics) {
                        doc.add_comparison(grid, k, strategy, kernel, s, b);
                    }
                }
            }
        }
    }
    doc.print_summary();
    Ok(skips)
}

fn explain(
    matrix: &SparseMatrix,
    spec: &RunSpec,
    doc: &mut report::Report,
) -> anyhow::Result<usize> {
    let mut skips = 0usize;
    for &grid in &spec.grids {
        for &k in &spec.ks {
            if k % grid.z != 0 {
                skips += 1;
                doc.skip(grid, k, "z_does_not_divide_k");
                continue;
            }
            let p = predict(matrix, &grid, k, spec.seed)?;
            report::print_explain(matrix, &grid, k, &p);
            doc.add_prediction(&p);
        }
    }
    Ok(skips)
}

/// Spec-level argument parsing, shared with tests.
pub fn parse_grid(text: &str) -> anyhow::Result<ProcGrid> {
    let dims: Vec<&str> = text.split('x').collect();
    if dims.len() != 3 {
        bail!("--grid '{text}': expected XxYxZ");
    }
    let parse = |s: &str| -> anyhow::Result<usize> {
        s.parse::<usize>()
            .map_err(|_| anyhow!("--grid '{text}': bad dimension '{s}'"))
    };
    ProcGrid::new(parse(dims[0])?, parse(dims[1])?, parse(dims[2])?)
        .map_err(|e| anyhow!("--grid '{text}': {e}"))
}

pub fn parse_strategy(text: &str) -> anyhow::Result<Strategy> {
    text.parse::<Strategy>().map_err(|e| anyhow!("{e}"))
}
