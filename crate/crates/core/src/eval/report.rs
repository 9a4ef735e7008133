use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One metric measurement, as written to `metrics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub run_id: String,
    pub metric: String,
    pub value: f64,
    pub n: usize,
    pub seed: u64,
}

impl MetricRow {
    pub fn new(run_id: &str, metric: &str, value: f64, n: usize, seed: u64) -> Self {
        Self { run_id: run_id.into(), metric: metric.into(), value, n, seed }
    }
}

/// Serializes rows with a header, in the order given.
pub fn metrics_csv(rows: &[MetricRow]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(["run_id", "metric", "value", "n", "seed"])?;
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| crate::Error::Io(e.into_error()))
}
