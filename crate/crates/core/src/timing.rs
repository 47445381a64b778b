//! Per-call timing records, their CSV form, and cross-rank aggregation.
//!
//! Warmup iterations carry negative `iter` values (`-warmup..=-1`) and are
//! excluded from every aggregate.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub const CSV_HEADER: [&str; 7] = ["run_id", "rank", "op", "component", "iter", "bytes", "micros"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub run_id: String,
    pub rank: u32,
    pub op: String,
    pub component: String,
    pub iter: i64,
    pub bytes: u64,
    pub micros: f64,
}

impl TimingRecord {
    pub fn is_warmup(&self) -> bool {
        self.iter < 0
    }

    /// Bytes per second for this call.
    pub fn throughput(&self) -> f64 {
        self.bytes as f64 / (self.micros * 1e-6)
    }
}

/// Collects records for one rank; `iter` is set by the caller's loop.
#[derive(Debug, Clone)]
pub struct TimingSink {
    pub run_id: String,
    pub rank: u32,
    pub iter: i64,
    records: Vec<TimingRecord>,
}

impl TimingSink {
    pub fn new(run_id: impl Into<String>, rank: u32) -> Self {
        TimingSink {
            run_id: run_id.into(),
            rank,
            iter: 0,
            records: Vec::new(),
        }
    }

    pub fn record(&mut self, op: &str, component: &str, bytes: u64, micros: f64) {
        self.records.push(TimingRecord {
            run_id: self.run_id.clone(),
            rank: self.rank,
            op: op.to_owned(),
            component: component.to_owned(),
            iter: self.iter,
            bytes,
            // sub-nanosecond calls still count as positive durations
            micros: micros.max(1e-3),
        });
    }

    pub fn records(&self) -> &[TimingRecord] {
        &self.records
    }

    pub fn take(&mut self) -> Vec<TimingRecord> {
        std::mem::take(&mut self.records)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CsvError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("unexpected CSV header {found:?}")]
    Schema { found: Vec<String> },
}

pub fn write_csv<W: Write>(w: W, records: &[TimingRecord]) -> Result<(), CsvError> {
    let mut wr = csv::Writer::from_writer(w);
    if records.is_empty() {
        wr.write_record(CSV_HEADER)?;
    }
    for r in records {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_csv_file(path: &Path, records: &[TimingRecord]) -> Result<(), CsvError> {
    write_csv(File::create(path)?, records)
}

pub fn read_csv<R: Read>(r: R) -> Result<Vec<TimingRecord>, CsvError> {
    let mut rd = csv::Reader::from_reader(r);
    let header: Vec<String> = rd.headers()?.iter().map(String::from).collect();
    if header != CSV_HEADER {
        return Err(CsvError::Schema { found: header });
    }
    rd.deserialize().map(|r| r.map_err(CsvError::from)).collect()
}

pub fn read_csv_file(path: &Path) -> Result<Vec<TimingRecord>, CsvError> {
    read_csv(File::open(path)?)
}

/// Mean and population standard deviation across ranks of each rank's total
/// time in one component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpStats {
    pub component: String,
    pub ranks: usize,
    pub mean_sec: f64,
    pub std_sec: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn op_stats(records: &[TimingRecord]) -> Vec<OpStats> {
    let mut totals: BTreeMap<&str, BTreeMap<u32, f64>> = BTreeMap::new();
    for r in records.iter().filter(|r| !r.is_warmup()) {
        *totals
            .entry(r.component.as_str())
            .or_default()
            .entry(r.rank)
            .or_default() += r.micros * 1e-6;
    }
    totals
        .into_iter()
        .map(|(component, per_rank)| {
            let values: Vec<f64> = per_rank.into_values().collect();
            let (mean_sec, std_sec) = mean_std(&values);
            OpStats {
                component: component.to_owned(),
                ranks: values.len(),
                mean_sec,
                std_sec,
            }
        })
        .collect()
}

/// Per-call latency distribution of one component over non-warmup rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub component: String,
    pub count: usize,
    pub mean_us: f64,
    pub std_us: f64,
    pub p50_us: f64,
    pub p99_us: f64,
    pub mean_bytes: f64,
    /// Total bytes over total time, in MB/s.
    pub throughput_mbs: f64,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = (q * (sorted.len() - 1) as f64).round() as usize;
    sorted[rank.min(sorted.len() - 1)]
}

pub fn latency_stats(records: &[TimingRecord]) -> Vec<LatencyStats> {
    let mut groups: BTreeMap<&str, Vec<&TimingRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| !r.is_warmup()) {
        groups.entry(r.component.as_str()).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(component, rows)| {
            let mut micros: Vec<f64> = rows.iter().map(|r| r.micros).collect();
            let (mean_us, std_us) = mean_std(&micros);
            micros.sort_by(f64::total_cmp);
            let total_bytes: f64 = rows.iter().map(|r| r.bytes as f64).sum();
            let total_us: f64 = micros.iter().sum();
            LatencyStats {
                component: component.to_owned(),
                count: rows.len(),
                mean_us,
                std_us,
                p50_us: percentile(&micros, 0.5),
                p99_us: percentile(&micros, 0.99),
                mean_bytes: total_bytes / rows.len() as f64,
                throughput_mbs: total_bytes / total_us,
            }
        })
        .collect()
}
