//! Per-rank and aggregate run metrics.
//!
//! Volumes and message counts are exact (measured at the transport);
//! staging-copy words are counted by the plan executor; wall times are
//! informational and excluded from determinism comparisons.

use serde::Serialize;

/// What one rank measured during a run. Volume fields are in words (one f64
/// = one word); `setup_recv_entries` counts sparse entries received while
/// gathering the fiber block.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankMetrics {
    pub rank: usize,
    pub coords: (usize, usize, usize),
    pub local_nnz: usize,
    pub gathered_nnz: usize,
    pub setup_recv_entries: u64,
    pub owned_rows: usize,
    pub owned_cols: usize,
    pub need_rows: usize,
    pub need_cols: usize,
    pub dense_store_words: usize,
    pub precomm_recv_words: u64,
    pub postcomm_recv_words: u64,
    pub precomm_msgs: u64,
    pub postcomm_msgs: u64,
    pub staging_copy_words: u64,
    pub per_iter_precomm_recv_words: Vec<u64>,
    pub per_iter_postcomm_recv_words: Vec<u64>,
    pub plan_checksum_setup: u64,
    pub plan_checksum_final: u64,
    pub setup_secs: f64,
    pub precomm_secs: Vec<f64>,
    pub compute_secs: Vec<f64>,
    pub postcomm_secs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateMetrics {
    pub total_precomm_recv_words: u64,
    pub total_postcomm_recv_words: u64,
    pub total_staging_copy_words: u64,
    pub total_dense_store_words: u64,
    pub max_dense_store_words: usize,
    /// Max over ranks of one iteration's PreComm received words.
    pub max_precomm_recv_words_per_iter: u64,
    /// The same, divided by K.
    pub max_recv_volume_k_normalized: f64,
    /// Mean over ranks of one iteration's PreComm received words.
    pub avg_precomm_recv_words_per_iter: f64,
    pub avg_recv_volume_k_normalized: f64,
    pub total_precomm_msgs: u64,
    pub total_postcomm_msgs: u64,
    pub block_nnz_max: usize,
    pub block_nnz_mean: f64,
    pub setup_secs_max: f64,
    pub precomm_secs_total_max: f64,
    pub compute_secs_total_max: f64,
    pub postcomm_secs_total_max: f64,
}

impl AggregateMetrics {
    pub fn from_ranks(per_rank: &[RankMetrics], k: usize) -> AggregateMetrics {
        let sum_u64 = |f: fn(&RankMetrics) -> u64| per_rank.iter().map(f).sum::<u64>();
        let max_iter_pre = per_rank
            .iter()
            .filter_map(|r| r.per_iter_precomm_recv_words.iter().copied().max())
            .max()
            .unwrap_or(0);
        let avg_iter_pre = if per_rank.is_empty() {
            0.0
        } else {
            per_rank
                .iter()
                .map(|r| r.per_iter_precomm_recv_words.first().copied().unwrap_or(0) as f64)
                .sum::<f64>()
                / per_rank.len() as f64
        };
        // One gathered block per (x, y); z replicas hold the same block.
        let mut block_nnz: Vec<usize> = per_rank
            .iter()
            .filter(|r| r.coords.2 == 0)
            .map(|r| r.gathered_nnz)
            .collect();
        if block_nnz.is_empty() {
            block_nnz.push(0);
        }
        let secs_total_max = |f: fn(&RankMetrics) -> &Vec<f64>| {
            per_rank
                .iter()
                .map(|r| f(r).iter().sum::<f64>())
                .fold(0.0, f64::max)
        };
        AggregateMetrics {
            total_precomm_recv_words: sum_u64(|r| r.precomm_recv_words),
            total_postcomm_recv_words: sum_u64(|r| r.postcomm_recv_words),
            total_staging_copy_words: sum_u64(|r| r.staging_copy_words),
            total_dense_store_words: per_rank.iter().map(|r| r.dense_store_words as u64).sum(),
            max_dense_store_words: per_rank
                .iter()
                .map(|r| r.dense_store_words)
                .max()
                .unwrap_or(0),
            max_precomm_recv_words_per_iter: max_iter_pre,
            max_recv_volume_k_normalized: max_iter_pre as f64 / k as f64,
            avg_precomm_recv_words_per_iter: avg_iter_pre,
            avg_recv_volume_k_normalized: avg_iter_pre / k as f64,
            total_precomm_msgs: sum_u64(|r| r.precomm_msgs),
            total_postcomm_msgs: sum_u64(|r| r.postcomm_msgs),
            block_nnz_max: block_nnz.iter().copied().max().unwrap_or(0),
            block_nnz_mean: block_nnz.iter().sum::<usize>() as f64 / block_nnz.len() as f64,
            setup_secs_max: per_rank.iter().map(|r| r.setup_secs).fold(0.0, f64::max),
            precomm_secs_total_max: secs_total_max(|r| &r.precomm_secs),
            compute_secs_total_max: secs_total_max(|r| &r.compute_secs),
            postcomm_secs_total_max: secs_total_max(|r| &r.postcomm_secs),
        }
    }
}

/// Configuration echo embedded in every report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub kernel: String,
    pub mode: String,
    pub strategy: String,
    pub grid: (usize, usize, usize),
    pub k: usize,
    pub iterations: usize,
    pub seed: u64,
}

pub const METRICS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub run: RunSummary,
    pub per_rank: Vec<RankMetrics>,
    pub aggregate: AggregateMetrics,
}

impl MetricsReport {
    pub fn new(run: RunSummary, per_rank: Vec<RankMetrics>, k: usize) -> MetricsReport {
        let aggregate = AggregateMetrics::from_ranks(&per_rank, k);
        MetricsReport {
            schema_version: METRICS_SCHEMA_VERSION,
            run,
            per_rank,
            aggregate,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("metrics serialize")
    }

    /// Everything except wall times, for determinism comparisons.
    pub fn volume_fingerprint(&self) -> serde_json::Value {
        let mut v = self.to_json();
        for r in v["per_rank"].as_array_mut().unwrap() {
            let o = r.as_object_mut().unwrap();
            for key in [
                "setup_secs",
                "precomm_secs",
                "compute_secs",
                "postcomm_secs",
            ] {
                o.remove(key);
            }
        }
        let agg = v["aggregate"].as_object_mut().unwrap();
        for key in [
            "setup_secs_max",
            "precomm_secs_total_max",
            "compute_secs_total_max",
            "postcomm_secs_total_max",
        ] {
            agg.remove(key);
        }
        v
    }

    /// Flat CSV, one row per (run, rank, phase, metric). Rank "agg" carries
    /// the aggregates.
    pub fn write_csv_rows(&self, run_id: &str, out: &mut String) {
        use std::fmt::Write;
        let mut row = |rank: &str, phase: &str, metric: &str, value: f64| {
            writeln!(out, "{run_id},{rank},{phase},{metric},{value}").unwrap();
        };
        for r in &self.per_rank {
            let rank = r.rank.to_string();
            row(&rank, "setup", "recv_entries", r.setup_recv_entries as f64);
            row(&rank, "setup", "secs", r.setup_secs);
            row(&rank, "precomm", "recv_words", r.precomm_recv_words as f64);
            row(&rank, "precomm", "msgs", r.precomm_msgs as f64);
            row(&rank, "precomm", "secs", r.precomm_secs.iter().sum());
            row(&rank, "compute", "secs", r.compute_secs.iter().sum());
            row(
                &rank,
                "postcomm",
                "recv_words",
                r.postcomm_recv_words as f64,
            );
            row(&rank, "postcomm", "msgs", r.postcomm_msgs as f64);
            row(&rank, "postcomm", "secs", r.postcomm_secs.iter().sum());
            row(
                &rank,
                "all",
                "staging_copy_words",
                r.staging_copy_words as f64,
            );
            row(
                &rank,
                "all",
                "dense_store_words",
                r.dense_store_words as f64,
            );
            row(&rank, "all", "gathered_nnz", r.gathered_nnz as f64);
        }
        let a = &self.aggregate;
        row(
            "agg",
            "precomm",
            "recv_words",
            a.total_precomm_recv_words as f64,
        );
        row(
            "agg",
            "postcomm",
            "recv_words",
            a.total_postcomm_recv_words as f64,
        );
        row(
            "agg",
            "all",
            "staging_copy_words",
            a.total_staging_copy_words as f64,
        );
        row(
            "agg",
            "all",
            "dense_store_words",
            a.total_dense_store_words as f64,
        );
        row(
            "agg",
            "precomm",
            "max_recv_k_normalized",
            a.max_recv_volume_k_normalized,
        );
    }

    pub fn csv_header() -> &'static str {
        "run,rank,phase,metric,value"
    }
}
