//! Producer, consumer and inference loops that emulate a coupled
//! simulation/ML workflow, plus the reconstruction-error metric.
//!
//! All loops run `warmup + iterations` steps. Step `s` is recorded with
//! `iter = s - warmup`, so warmup rows have negative iteration numbers.

mod cli;
mod consumer;
mod infer;
mod metric;
mod pacer;
mod producer;

pub use cli::RankArgs;
pub use consumer::consume;
pub use infer::{expected_infer_rows, infer, infer_inline, inference_input, output_key};
pub use metric::{relative_frobenius, relative_frobenius_tensors, MetricError};
pub use pacer::{Pacer, Schedule, ENV_EPOCH_MS};
pub use producer::{expected_producer_rows, produce};

pub use crate::timing::{op_stats, OpStats, TimingRecord};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::ClientError;
use crate::exec::{ExecError, ModelError};
use crate::prng::{fill_f32_signed, payload_seed};
use crate::wire::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkloadMode {
    Transfer,
    Inference,
    TrainFeed,
}

fn default_sleep_ms() -> u32 {
    100
}
fn one() -> u32 {
    1
}
fn default_poll_interval() -> u64 {
    10
}
fn default_poll_tries() -> u32 {
    1000
}
fn default_model_key() -> String {
    "model".into()
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    pub payload_bytes_per_rank: u64,
    pub iterations: u32,
    #[serde(default)]
    pub warmup: u32,
    #[serde(default = "default_sleep_ms")]
    pub sleep_ms: u32,
    #[serde(default)]
    pub schedule: Schedule,
    pub mode: WorkloadMode,
    #[serde(default = "one")]
    pub send_every: u32,
    #[serde(default)]
    pub model_file: Option<PathBuf>,
    #[serde(default = "default_model_key")]
    pub model_key: String,
    #[serde(default = "one")]
    pub batch_n: u32,
    /// Per-sample feature dims for inference inputs; defaults to the model's input width.
    #[serde(default)]
    pub feature_dims: Option<Vec<u64>>,
    #[serde(default)]
    pub seed: u64,
    /// Keep only the newest `n` sends per rank in the store.
    #[serde(default)]
    pub retain_steps: Option<u32>,
    #[serde(default)]
    pub train_ms: u32,
    #[serde(default = "default_poll_interval")]
    pub poll_interval_ms: u64,
    #[serde(default = "default_poll_tries")]
    pub poll_max_tries: u32,
    #[serde(default)]
    pub shuffle: bool,
    /// Consumers compare every retrieved tensor against the regenerated payload.
    #[serde(default = "yes")]
    pub verify: bool,
}

impl WorkloadSpec {
    pub fn transfer(payload_bytes_per_rank: u64, iterations: u32, warmup: u32) -> Self {
        WorkloadSpec {
            payload_bytes_per_rank,
            iterations,
            warmup,
            sleep_ms: default_sleep_ms(),
            schedule: Schedule::Free,
            mode: WorkloadMode::Transfer,
            send_every: 1,
            model_file: None,
            model_key: default_model_key(),
            batch_n: 1,
            feature_dims: None,
            seed: 0,
            retain_steps: None,
            train_ms: 0,
            poll_interval_ms: default_poll_interval(),
            poll_max_tries: default_poll_tries(),
            shuffle: false,
            verify: true,
        }
    }

    pub fn validate(&self) -> Result<(), ReproError> {
        let bad = |m: String| Err(ReproError::Config(m));
        if self.iterations == 0 {
            return bad("iterations must be >= 1".into());
        }
        if self.send_every == 0 {
            return bad("send_every must be >= 1".into());
        }
        if self.payload_bytes_per_rank % 4 != 0 {
            return bad(format!(
                "payload_bytes_per_rank {} is not a multiple of 4 (f32)",
                self.payload_bytes_per_rank
            ));
        }
        if self.mode != WorkloadMode::Inference && self.payload_bytes_per_rank == 0 {
            return bad("payload_bytes_per_rank must be > 0".into());
        }
        if self.mode == WorkloadMode::Inference && self.model_file.is_none() {
            return bad("inference workloads need model_file".into());
        }
        if self.batch_n == 0 {
            return bad("batch_n must be >= 1".into());
        }
        if self.retain_steps == Some(0) {
            return bad("retain_steps must be >= 1".into());
        }
        if self.poll_interval_ms == 0 || self.poll_max_tries == 0 {
            return bad("poll_interval_ms and poll_max_tries must be >= 1".into());
        }
        Ok(())
    }

    pub fn total_steps(&self) -> u32 {
        self.warmup + self.iterations
    }

    pub fn iter_of(&self, step: u32) -> i64 {
        i64::from(step) - i64::from(self.warmup)
    }

    pub fn sends(&self, step: u32) -> bool {
        step % self.send_every == 0
    }

    pub fn from_json(text: &str) -> Result<Self, ReproError> {
        let spec: WorkloadSpec =
            serde_json::from_str(text).map_err(|e| ReproError::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Error)]
pub enum ReproError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("store error: {0}")]
    Client(#[from] ClientError),
    #[error("no data produced: {0}")]
    NoData(String),
    #[error("data mismatch: {0}")]
    Mismatch(String),
    #[error("model error: {0}")]
    Model(#[from] ModelError),
    #[error("executor error: {0}")]
    Exec(#[from] ExecError),
}

impl ReproError {
    /// Process exit code: 2 config, 3 store, 4 missing or corrupt data.
    pub fn exit_code(&self) -> i32 {
        match self {
            ReproError::Config(_) | ReproError::Model(_) => 2,
            ReproError::Client(_) | ReproError::Exec(_) => 3,
            ReproError::NoData(_) | ReproError::Mismatch(_) => 4,
        }
    }
}

pub fn solution_key(rank: u32, step: u64) -> String {
    format!("{rank}.sol.{step}")
}

pub fn meta_key(rank: u32, field: &str) -> String {
    format!("{rank}.{field}")
}

/// Deterministic f32 payload written by `rank` at `step`.
pub fn payload(seed: u64, rank: u32, step: u64, bytes: u64) -> Tensor {
    let n = (bytes / 4).max(1) as usize;
    let values = fill_f32_signed(payload_seed(seed, rank, step), n);
    Tensor::from_f32(vec![n as u64], &values).expect("shape matches data")
}

fn sleep_ms(ms: u32) {
    if ms > 0 {
        std::thread::sleep(std::time::Duration::from_millis(u64::from(ms)));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_defaults_and_strictness() {
        let s = WorkloadSpec::from_json(
            r#"{"payload_bytes_per_rank": 262144, "iterations": 40, "warmup": 2, "mode": "transfer"}"#,
        )
        .unwrap();
        assert_eq!(s.sleep_ms, 100);
        assert_eq!(s.send_every, 1);
        assert_eq!(s.total_steps(), 42);
        assert_eq!(s.iter_of(0), -2);
        assert!(WorkloadSpec::from_json(
            r#"{"payload_bytes_per_rank": 4, "iterations": 1, "mode": "transfer", "bogus": 1}"#
        )
        .is_err());
    }

    #[test]
    fn spec_validation() {
        let mut s = WorkloadSpec::transfer(1024, 1, 0);
        assert!(s.validate().is_ok());
        s.payload_bytes_per_rank = 1023;
        assert_eq!(s.validate().unwrap_err().exit_code(), 2);
        let mut s = WorkloadSpec::transfer(1024, 0, 0);
        assert!(s.validate().is_err());
        s.iterations = 1;
        s.mode = WorkloadMode::Inference;
        assert!(s.validate().is_err());
    }

    #[test]
    fn payload_is_reproducible() {
        let a = payload(7, 3, 10, 4096);
        assert_eq!(a, payload(7, 3, 10, 4096));
        assert_ne!(a, payload(7, 3, 11, 4096));
        assert_eq!(a.data().len(), 4096);
    }

    #[test]
    fn send_cadence() {
        let mut s = WorkloadSpec::transfer(4, 6, 0);
        s.send_every = 2;
        let sends: Vec<u32> = (0..s.total_steps()).filter(|&k| s.sends(k)).collect();
        assert_eq!(sends, vec![0, 2, 4]);
    }
}
