//! Report assembly: JSON document, flat CSV, and stdout summaries.

use serde_json::{json, Value};

use sparse3d::engine::Kernel;
use sparse3d::grid::ProcGrid;
use sparse3d::metrics::MetricsReport;
use sparse3d::plan::Strategy;
use sparse3d::predict::GridPrediction;
use sparse3d::sparse::SparseMatrix;

use crate::spec::RunSpec;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

pub struct Report {
    header: Value,
    runs: Vec<Value>,
    comparisons: Vec<Value>,
    predictions: Vec<Value>,
    skipped: Vec<Value>,
    csv_rows: String,
}

fn grid_name(g: ProcGrid) -> String {
    format!("{}x{}x{}", g.x, g.y, g.z)
}

fn median(mut xs: Vec<f64>) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Median over iterations of the per-iteration maximum across ranks.
fn phase_median(
    metrics: &MetricsReport,
    f: fn(&sparse3d::metrics::RankMetrics) -> &Vec<f64>,
) -> f64 {
    let iters = metrics.per_rank.first().map(|r| f(r).len()).unwrap_or(0);
    let per_iter_max: Vec<f64> = (0..iters)
        .map(|i| metrics.per_rank.iter().map(|r| f(r)[i]).fold(0.0, f64::max))
        .collect();
    median(per_iter_max)
}

impl Report {
    pub fn new(source: &str, matrix: &SparseMatrix, spec: &RunSpec) -> Report {
        let header = json!({
            "schema_version": REPORT_SCHEMA_VERSION,
            "matrix": {
                "source": source,
                "nrows": matrix.nrows(),
                "ncols": matrix.ncols(),
                "nnz": matrix.nnz(),
            },
            "spec": {
                "grids": spec.grids.iter().map(|&g| grid_name(g)).collect::<Vec<_>>(),
                "ks": spec.ks,
                "strategies": spec.strategies.iter().map(|s| s.name()).collect::<Vec<_>>(),
                "modes": spec.modes.iter().map(|m| m.name()).collect::<Vec<_>>(),
                "kernels": spec.kernels.iter().map(|k| k.name()).collect::<Vec<_>>(),
                "iterations": spec.iterations,
                "seed": spec.seed,
            },
        });
        Report {
            header,
            runs: Vec::new(),
            comparisons: Vec::new(),
            predictions: Vec::new(),
            skipped: Vec::new(),
            csv_rows: format!("{}\n", MetricsReport::csv_header()),
        }
    }

    pub fn run_id(m: &MetricsReport) -> String {
        format!(
            "grid={}x{}x{};k={};strategy={};mode={};kernel={}",
            m.run.grid.0,
            m.run.grid.1,
            m.run.grid.2,
            m.run.k,
            m.run.strategy,
            m.run.mode,
            m.run.kernel
        )
    }

    pub fn add_run(&mut self, m: &MetricsReport, iterations: usize) {
        let pre = phase_median(m, |r| &r.precomm_secs);
        let comp = phase_median(m, |r| &r.compute_secs);
        let post = phase_median(m, |r| &r.postcomm_secs);
        let total = pre + comp + post;
        let pct = |x: f64| if total > 0.0 { 100.0 * x / total } else { 0.0 };
        let mut v = serde_json::to_value(m).expect("metrics serialize");
        v["phase_secs_median"] = json!({
            "label": if iterations >= 3 { "median_over_iterations" } else { "single_or_mean" },
            "precomm": pre,
            "compute": comp,
            "postcomm": post,
        });
        v["phase_breakdown_pct"] = json!({
            "precomm": pct(pre),
            "compute": pct(comp),
            "postcomm": pct(post),
        });
        m.write_csv_rows(&Self::run_id(m), &mut self.csv_rows);
        self.runs.push(v);
    }

    pub fn add_comparison(
        &mut self,
        grid: ProcGrid,
        k: usize,
        strategy: Strategy,
        kernel: Kernel,
        sparse: &MetricsReport,
        baseline: &MetricsReport,
    ) {
        let s = sparse.aggregate.max_recv_volume_k_normalized;
        let b = baseline.aggregate.max_recv_volume_k_normalized;
        // Both-zero collapses to parity; a zero sparse volume with nonzero
        // baseline has no finite ratio and is reported as null.
        let ratio = if s > 0.0 {
            Some(b / s)
        } else if b == 0.0 {
            Some(1.0)
        } else {
            None
        };
        self.comparisons.push(json!({
            "grid": grid_name(grid),
            "z": grid.z,
            "k": k,
            "strategy": strategy.name(),
            "kernel": kernel.name(),
            "sparse_max_recv_k_normalized": s,
            "baseline_max_recv_k_normalized": b,
            "improvement_ratio": ratio,
            "sparse_dense_words": sparse.aggregate.total_dense_store_words,
            "baseline_dense_words": baseline.aggregate.total_dense_store_words,
        }));
    }

    pub fn add_prediction(&mut self, p: &GridPrediction) {
        self.predictions
            .push(serde_json::to_value(p).expect("prediction serialize"));
    }

    pub fn skip(&mut self, grid: ProcGrid, k: usize, reason: &str) {
        self.skipped.push(json!({
            "grid": grid_name(grid),
            "k": k,
            "reason": reason,
        }));
        self.csv_rows.push_str(&format!(
            "grid={};k={k},agg,skipped,{reason},1\n",
            grid_name(grid)
        ));
    }

    pub fn json(&self) -> Value {
        let mut doc = self.header.clone();
        doc["runs"] = Value::Array(self.runs.clone());
        doc["comparisons"] = Value::Array(self.comparisons.clone());
        if !self.predictions.is_empty() {
            doc["predictions"] = Value::Array(self.predictions.clone());
        }
        doc["skipped"] = Value::Array(self.skipped.clone());
        doc
    }

    pub fn csv(&self) -> &str {
        &self.csv_rows
    }

    pub fn print_summary(&self) {
        if !self.comparisons.is_empty() {
            println!("improvement (baseline / sparse max recv volume, K-normalized):");
            println!(
                "  {:<10} {:>3} {:>8} {:>8} {:>12} {:>12} {:>7}",
                "grid", "Z", "K", "kernel", "baseline", "sparse", "ratio"
            );
            for c in &self.comparisons {
                let ratio = c["improvement_ratio"]
                    .as_f64()
                    .map_or("n/a".to_string(), |r| format!("{r:.2}"));
                println!(
                    "  {:<10} {:>3} {:>8} {:>8} {:>12.1} {:>12.1} {:>7}",
                    c["grid"].as_str().unwrap(),
                    c["z"].as_u64().unwrap(),
                    c["k"].as_u64().unwrap(),
                    c["kernel"].as_str().unwrap(),
                    c["baseline_max_recv_k_normalized"].as_f64().unwrap(),
                    c["sparse_max_recv_k_normalized"].as_f64().unwrap(),
                    ratio,
                );
            }
        }
        println!(
            "{} runs, {} comparisons, {} skipped",
            self.runs.len(),
            self.comparisons.len(),
            self.skipped.len()
        );
    }
}

pub fn print_explain(matrix: &SparseMatrix, grid: &ProcGrid, k: usize, p: &GridPrediction) {
    println!(
        "analysis of {}x{} nnz {} on grid {} with K={k} (no kernel executed):",
        matrix.nrows(),
        matrix.ncols(),
        matrix.nnz(),
        grid_name(*grid)
    );
    let hist = |name: &str, h: &[usize]| {
        let body: Vec<String> = h
            .iter()
            .enumerate()
            .skip(1)
            .map(|(l, c)| format!("lambda={l}:{c}"))
            .collect();
        println!("  {name} histogram: {}", body.join("  "));
    };
    hist("row lambda", &p.row_lambda_hist);
    hist("col lambda", &p.col_lambda_hist);
    println!(
        "  slice volume: rows {} + cols {} = {} words; all slices: {} words",
        p.slice_volume_words.rows,
        p.slice_volume_words.cols,
        p.slice_volume_words.total,
        p.slice_volume_words.total * grid.z
    );
    println!(
        "  {:>5} {:>9} {:>7} {:>7} {:>7} {:>7} {:>10} {:>10} {:>12} {:>12}",
        "rank",
        "coords",
        "|I|",
        "|J|",
        "ownA",
        "ownB",
        "pre(sddmm)",
        "pre(spmm)",
        "store_words",
        "base_store"
    );
    for r in &p.per_rank {
        println!(
            "  {:>5} {:>9} {:>7} {:>7} {:>7} {:>7} {:>10} {:>10} {:>12} {:>12}",
            r.rank,
            format!("{:?}", r.coords),
            r.need_rows,
            r.need_cols,
            r.owned_rows,
            r.owned_cols,
            r.precomm_words_sddmm,
            r.precomm_words_spmm,
            r.store_words,
            r.baseline_store_words,
        );
    }
    let max_pre = p
        .per_rank
        .iter()
        .map(|r| r.precomm_words_sddmm)
        .max()
        .unwrap_or(0);
    let max_base = p
        .per_rank
        .iter()
        .map(|r| r.baseline_precomm_words_sddmm)
        .max()
        .unwrap_or(0);
    println!(
        "  predicted max recv (K-normalized): sparse {:.1}, baseline {:.1}",
        max_pre as f64 / k as f64,
        max_base as f64 / k as f64
    );
}
