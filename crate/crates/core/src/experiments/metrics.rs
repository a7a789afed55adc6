use super::ExperimentError;
use crate::graph::NodeId;
use crate::sim::{to_secs, to_tokens, SimReport, Time, TxnOutcome};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeBucket {
    /// Smallest and largest amount in the bucket, tokens.
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub completed: usize,
    pub success_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowVolume {
    pub src: NodeId,
    pub dst: NodeId,
    pub generated: f64,
    pub delivered: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scheme: String,
    pub seed: u64,
    pub window_start: f64,
    pub window_end: f64,
    pub generated: usize,
    pub completed: usize,
    pub failed: usize,
    pub success_ratio: f64,
    pub generated_volume: f64,
    pub delivered_volume: f64,
    pub normalized_throughput: f64,
    /// Seconds, over completed transactions.
    pub latency_mean: f64,
    pub latency_p99: f64,
    pub onchain: usize,
    /// Completed transactions per blockchain transaction, counting failed
    /// payments and rebalancing events; `None` when there were neither.
    pub offloading_ratio: Option<f64>,
    pub size_buckets: Vec<SizeBucket>,
    pub flows: Vec<FlowVolume>,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        1.0
    }
}

/// Octile buckets by amount; equal amounts never straddle a boundary.
fn buckets(txns: &[&TxnOutcome]) -> Vec<SizeBucket> {
    let mut sorted: Vec<&TxnOutcome> = txns.to_vec();
    sorted.sort_by_key(|t| t.amount);
    let n = sorted.len();
    let mut out = Vec::new();
    let mut start = 0;
    for b in 1..=8 {
        let mut end = (n * b) / 8;
        while end > start && end < n && sorted[end].amount == sorted[end - 1].amount {
            end += 1;
        }
        if end <= start {
            continue;
        }
        let slice = &sorted[start..end];
        let completed = slice.iter().filter(|t| t.completed_at.is_some()).count();
        out.push(SizeBucket {
            lo: to_tokens(slice[0].amount),
            hi: to_tokens(slice[slice.len() - 1].amount),
            count: slice.len(),
            completed,
            success_ratio: ratio(completed as f64, slice.len() as f64),
        });
        start = end;
    }
    out
}

/// Metrics over transactions arriving in `[start, end)`.
pub fn compute_metrics(report: &SimReport, seed: u64, start: Time, end: Time) -> MetricsReport {
    let txns: Vec<&TxnOutcome> = report.transactions.iter().filter(|t| t.arrival >= start && t.arrival < end).collect();
    let completed: Vec<&&TxnOutcome> = txns.iter().filter(|t| t.completed_at.is_some()).collect();
    let generated_volume: f64 = txns.iter().map(|t| to_tokens(t.amount)).sum();
    let delivered_volume: f64 = txns.iter().map(|t| to_tokens(t.delivered)).sum();
    let mut lat: Vec<f64> = completed.iter().map(|t| to_secs(t.completed_at.unwrap() - t.arrival)).collect();
    lat.sort_by(f64::total_cmp);
    let latency_mean = if lat.is_empty() { 0.0 } else { lat.iter().sum::<f64>() / lat.len() as f64 };
    let latency_p99 = if lat.is_empty() {
        0.0
    } else {
        lat[((0.99 * lat.len() as f64).ceil() as usize).clamp(1, lat.len()) - 1]
    };
    let onchain = report.rebalances.iter().filter(|r| r.time >= start && r.time < end).count();
    let failed = txns.len() - completed.len();
    let offloading_ratio = (failed + onchain > 0).then(|| completed.len() as f64 / (failed + onchain) as f64);
    let mut flows: BTreeMap<(NodeId, NodeId), (f64, f64)> = BTreeMap::new();
    for t in &txns {
        let e = flows.entry((t.src, t.dst)).or_default();
        e.0 += to_tokens(t.amount);
        e.1 += to_tokens(t.delivered);
    }
    MetricsReport {
        scheme: report.scheme.clone(),
        seed,
        window_start: to_secs(start),
        window_end: to_secs(end),
        generated: txns.len(),
        completed: completed.len(),
        failed,
        success_ratio: ratio(completed.len() as f64, txns.len() as f64),
        generated_volume,
        delivered_volume,
        normalized_throughput: ratio(delivered_volume, generated_volume),
        latency_mean,
        latency_p99,
        onchain,
        offloading_ratio,
        size_buckets: buckets(&txns),
        flows: flows
            .into_iter()
            .map(|((src, dst), (g, d))| FlowVolume { src, dst, generated: g, delivered: d })
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Json,
    Csv,
}

impl std::str::FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "json" => Ok(OutputFormat::Json),
            "csv" => Ok(OutputFormat::Csv),
            _ => Err(format!("unknown format `{s}` (json or csv)")),
        }
    }
}

/// Flat summary row of a report, in stable column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scheme: String,
    pub seed: u64,
    pub window_start: f64,
    pub window_end: f64,
    pub generated: usize,
    pub completed: usize,
    pub failed: usize,
    pub success_ratio: f64,
    pub generated_volume: f64,
    pub delivered_volume: f64,
    pub normalized_throughput: f64,
    pub latency_mean: f64,
    pub latency_p99: f64,
    pub onchain: usize,
    pub offloading_ratio: Option<f64>,
}

impl From<&MetricsReport> for SummaryRow {
    fn from(r: &MetricsReport) -> Self {
        SummaryRow {
            scheme: r.scheme.clone(),
            seed: r.seed,
            window_start: r.window_start,
            window_end: r.window_end,
            generated: r.generated,
            completed: r.completed,
            failed: r.failed,
            success_ratio: r.success_ratio,
            generated_volume: r.generated_volume,
            delivered_volume: r.delivered_volume,
            normalized_throughput: r.normalized_throughput,
            latency_mean: r.latency_mean,
            latency_p99: r.latency_p99,
            onchain: r.onchain,
            offloading_ratio: r.offloading_ratio,
        }
    }
}

/// Serializes rows as CSV with a header line even when there are no rows.
pub fn rows_to_csv<T: Serialize>(rows: &[T], header: &[&str]) -> Result<String, ExperimentError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header).map_err(|e| ExperimentError::Io(e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| ExperimentError::Io(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| ExperimentError::Io(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn rows_from_csv<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<T>, ExperimentError> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| ExperimentError::Io(e.to_string()))
}

pub const SUMMARY_HEADER: [&str; 15] = [
    "scheme",
    "seed",
    "window_start",
    "window_end",
    "generated",
    "completed",
    "failed",
    "success_ratio",
    "generated_volume",
    "delivered_volume",
    "normalized_throughput",
    "latency_mean",
    "latency_p99",
    "onchain",
    "offloading_ratio",
];

pub const BUCKET_HEADER: [&str; 5] = ["lo", "hi", "count", "completed", "success_ratio"];

/// Files to write for a report: name suffix and contents.
pub fn emit_results(report: &MetricsReport, format: OutputFormat) -> Result<Vec<(String, String)>, ExperimentError> {
    match format {
        OutputFormat::Json => {
            let s = serde_json::to_string_pretty(report).map_err(|e| ExperimentError::Io(e.to_string()))?;
            Ok(vec![("metrics.json".into(), s + "\n")])
        }
        OutputFormat::Csv => Ok(vec![
            ("summary.csv".into(), rows_to_csv(&[SummaryRow::from(report)], &SUMMARY_HEADER)?),
            ("buckets.csv".into(), rows_to_csv(&report.size_buckets, &BUCKET_HEADER)?),
        ]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::SimReport;

    fn txn(id: u64, amount: i64, arrival: Time, done: Option<Time>, delivered: i64) -> TxnOutcome {
        TxnOutcome { id, src: 1, dst: 2, amount, arrival, deadline: arrival + 5_000_000, delivered, completed_at: done }
    }

    fn report(txns: Vec<TxnOutcome>) -> SimReport {
        SimReport {
            scheme: "test".into(),
            end_time: 10_000_000,
            events: 0,
            transactions: txns,
            rebalances: vec![],
            series: vec![],
            audit_failures: 0,
            log: None,
        }
    }

    #[test]
    fn zero_demand_convention() {
        let m = compute_metrics(&report(vec![]), 0, 0, 10_000_000);
        assert_eq!(m.success_ratio, 1.0);
        assert_eq!(m.generated_volume, 0.0);
        assert_eq!(m.offloading_ratio, None);
        assert!(m.size_buckets.is_empty());
    }

    #[test]
    fn window_and_ratios() {
        let txns = vec![
            txn(0, 1_000, 0, Some(100_000), 1_000),
            txn(1, 3_000, 1_000_000, None, 1_000),
            txn(2, 2_000, 2_000_000, Some(2_300_000), 2_000),
            txn(3, 9_000, 20_000_000, None, 0),
        ];
        let m = compute_metrics(&report(txns), 0, 0, 10_000_000);
        assert_eq!((m.generated, m.completed, m.failed), (3, 2, 1));
        assert!((m.success_ratio - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.normalized_throughput - 4.0 / 6.0).abs() < 1e-12);
        assert!((m.latency_mean - 0.2).abs() < 1e-12);
        assert!((m.latency_p99 - 0.3).abs() < 1e-12);
        assert_eq!(m.offloading_ratio, Some(2.0));
        assert_eq!(m.size_buckets.iter().map(|b| b.count).sum::<usize>(), 3);
    }

    #[test]
    fn octiles() {
        let txns: Vec<TxnOutcome> = (0..80).map(|i| txn(i, 1_000 * (i as i64 + 1), 0, None, 0)).collect();
        let m = compute_metrics(&report(txns), 0, 0, 1);
        assert_eq!(m.size_buckets.len(), 8);
        assert!(m.size_buckets.iter().all(|b| b.count == 10));
    }

    #[test]
    fn json_and_csv_round_trip() {
        let txns = vec![txn(0, 1_000, 0, Some(100_000), 1_000), txn(1, 3_000, 0, None, 0)];
        let m = compute_metrics(&report(txns), 4, 0, 10_000_000);
        let files = emit_results(&m, OutputFormat::Json).unwrap();
        let back: MetricsReport = serde_json::from_str(&files[0].1).unwrap();
        assert_eq!(back, m);
        let files = emit_results(&m, OutputFormat::Csv).unwrap();
        let rows: Vec<SummaryRow> = rows_from_csv(&files[0].1).unwrap();
        assert_eq!(rows, vec![SummaryRow::from(&m)]);
        let b: Vec<SizeBucket> = rows_from_csv(&files[1].1).unwrap();
        assert_eq!(b, m.size_buckets);
    }

    #[test]
    fn empty_csv_has_headers_only() {
        let m = compute_metrics(&report(vec![]), 0, 0, 1);
        let files = emit_results(&m, OutputFormat::Csv).unwrap();
        assert_eq!(files[1].1, "lo,hi,count,completed,success_ratio\n");
    }
}
