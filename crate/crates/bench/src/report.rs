//! Experiment results and their CSV form.

use std::collections::BTreeMap;
use std::io::Write;

use crate::error::Result;

/// One measurement row.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BenchReport {
    pub experiment: String,
    pub dataset: String,
    pub query_kind: String,
    pub correlation: Option<f64>,
    pub range_len: u64,
    pub n_keys: usize,
    pub n_slots: usize,
    pub fingerprint_bits: u32,
    pub memento_bits: u32,
    pub expansions: u32,
    pub n_queries: usize,
    pub false_positives: usize,
    pub measured_fpr: f64,
    pub fpr_bound: f64,
    /// Average keys per non-empty partition.
    pub ell: f64,
    pub load_factor: f64,
    pub bits_per_key: f64,
    pub mean_cluster_length: f64,
    pub max_cluster_length: usize,
    pub probes_per_query: f64,
    pub mean_query_ns: Option<f64>,
    pub p99_query_ns: Option<f64>,
    pub insert_ops_per_sec: Option<f64>,
    pub point_ops_per_sec: Option<f64>,
    pub range_ops_per_sec: Option<f64>,
    pub construction_secs: Option<f64>,
    /// Cluster length -> count. Not part of the CSV row.
    pub cluster_histogram: BTreeMap<usize, usize>,
}

/// CSV columns, in order. Timing columns are the ones that differ between
/// runs with the same seed.
pub const COLUMNS: &[&str] = &[
    "experiment",
    "dataset",
    "query_kind",
    "correlation",
    "range_len",
    "n_keys",
    "n_slots",
    "fingerprint_bits",
    "memento_bits",
    "expansions",
    "n_queries",
    "false_positives",
    "measured_fpr",
    "fpr_bound",
    "ell",
    "load_factor",
    "bits_per_key",
    "mean_cluster_length",
    "max_cluster_length",
    "probes_per_query",
    "mean_query_ns",
    "p99_query_ns",
    "insert_ops_per_sec",
    "point_ops_per_sec",
    "range_ops_per_sec",
    "construction_secs",
];

pub const TIMING_COLUMNS: &[&str] = &[
    "mean_query_ns",
    "p99_query_ns",
    "insert_ops_per_sec",
    "point_ops_per_sec",
    "range_ops_per_sec",
    "construction_secs",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_default()
}

impl BenchReport {
    pub fn fpr_within_bound(&self) -> bool {
        self.measured_fpr <= self.fpr_bound + three_se(self.fpr_bound, self.n_queries)
    }

    pub fn record(&self) -> Vec<String> {
        vec![
            self.experiment.clone(),
            self.dataset.clone(),
            self.query_kind.clone(),
            self.correlation.map(|d| d.to_string()).unwrap_or_default(),
            self.range_len.to_string(),
            self.n_keys.to_string(),
            self.n_slots.to_string(),
            self.fingerprint_bits.to_string(),
            self.memento_bits.to_string(),
            self.expansions.to_string(),
            self.n_queries.to_string(),
            self.false_positives.to_string(),
            format!("{:.6e}", self.measured_fpr),
            format!("{:.6e}", self.fpr_bound),
            format!("{:.4}", self.ell),
            format!("{:.4}", self.load_factor),
            format!("{:.4}", self.bits_per_key),
            format!("{:.3}", self.mean_cluster_length),
            self.max_cluster_length.to_string(),
            format!("{:.4}", self.probes_per_query),
            opt(self.mean_query_ns),
            opt(self.p99_query_ns),
            opt(self.insert_ops_per_sec),
            opt(self.point_ops_per_sec),
            opt(self.range_ops_per_sec),
            opt(self.construction_secs),
        ]
    }
}

/// Three standard errors of a Bernoulli rate `p` estimated from `n` trials.
pub fn three_se(p: f64, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    3.0 * (p * (1.0 - p) / n as f64).sqrt()
}

pub fn write_csv(out: impl Write, reports: &[BenchReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COLUMNS)?;
    for r in reports {
        w.write_record(r.record())?;
    }
    w.flush()?;
    Ok(())
}
