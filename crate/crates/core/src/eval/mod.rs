//! Evaluation: suffix identification, retrieval, hard negatives, token statistics,
//! a MAUVE-style divergence score and the decoding grid/timing harness.

mod grid;
mod mauve;
mod retrieval;
mod suffix_id;
mod tokens;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use grid::{
    benchmark, grid_search, standard_grid, write_grid_csv, BenchResult, GridMetric, GridPoint,
    GridRow,
};
pub use mauve::{
    divergence_curve, kmeans, mauve_style, smoothed_histogram, Embedder, MauveConfig, MauveResult,
    HISTOGRAM_EPS,
};
pub use retrieval::{
    candidate_windows, mine_hard_negatives, retrieval_groups, retrieval_recall, RetrievalGroup,
    ScoredSpan, DEFAULT_RECALL_KS,
};
pub use suffix_id::{
    generative_instances, inbook_instances, read_instances, suffix_id_accuracy, write_instances,
    SuffixIdInstance,
};
pub use tokens::{prefix_overlap, rep_of, rep_score, DEFAULT_REP_WINDOW};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: String,
    pub value: f64,
    pub n: usize,
    #[serde(default)]
    pub config: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub records: Option<Vec<serde_json::Value>>,
}

impl EvalReport {
    pub fn new(metric: impl Into<String>, value: f64, n: usize) -> Self {
        EvalReport {
            metric: metric.into(),
            value,
            n,
            config: serde_json::Value::Null,
            records: None,
        }
    }

    pub fn with_config(mut self, config: serde_json::Value) -> Self {
        self.config = config;
        self
    }
}

/// Plain-text table of reports.
pub fn format_table(reports: &[EvalReport]) -> String {
    let width = reports
        .iter()
        .map(|r| r.metric.len())
        .max()
        .unwrap_or(6)
        .max(6);
    let mut s = format!("{:<width$}  {:>10}  {:>8}\n", "metric", "value", "n");
    for r in reports {
        writeln!(s, "{:<width$}  {:>10.4}  {:>8}", r.metric, r.value, r.n).unwrap();
    }
    s
}
