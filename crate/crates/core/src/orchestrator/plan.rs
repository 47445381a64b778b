use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::repro::{WorkloadMode, WorkloadSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    Colocated,
    Clustered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WorkloadRef {
    Inline(WorkloadSpec),
    File(PathBuf),
}

fn default_host() -> String {
    "127.0.0.1".into()
}
fn default_db_cores() -> u32 {
    1
}
fn default_max_bytes() -> u64 {
    2 << 30
}
fn default_ready_timeout() -> u64 {
    10_000
}

/// Declarative description of one run: virtual nodes, stores, ranks.
///
/// Co-located plans put one store on every node at `base_port + node`.
/// Clustered plans run `shards` stores on dedicated nodes at
/// `base_port + shard`, and every client receives the full shard map.
/// `base_port = 0` lets each store pick a free port.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeploymentPlan {
    pub mode: Topology,
    pub nodes: u32,
    pub ranks_per_node: u32,
    #[serde(default = "default_db_cores")]
    pub db_cores: u32,
    #[serde(default)]
    pub shards: Option<u32>,
    #[serde(default)]
    pub consumer_ranks_per_node: u32,
    pub base_port: u16,
    /// Explicit per-store ports, overriding `base_port`.
    #[serde(default)]
    pub store_ports: Option<Vec<u16>>,
    #[serde(default = "default_host")]
    pub host: String,
    #[serde(default = "default_max_bytes")]
    pub store_max_bytes: u64,
    /// Per-request JSON logging in store logs.
    #[serde(default)]
    pub store_request_log: bool,
    /// Pin stores to CPUs `0..db_cores` (advisory).
    #[serde(default)]
    pub pin_db_cores: bool,
    /// Clustered only: emulated per-store interface bandwidth in MB/s.
    #[serde(default)]
    pub store_link_mbps: Option<f64>,
    #[serde(default)]
    pub store_link_overhead_us: f64,
    /// Evaluate models in-process instead of through the store.
    #[serde(default)]
    pub inline: bool,
    #[serde(default = "default_ready_timeout")]
    pub ready_timeout_ms: u64,
    pub workload: WorkloadRef,
}

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: line {line}, column {column}: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid field `{field}`: {message}")]
    Invalid { field: &'static str, message: String },
}

fn invalid(field: &'static str, message: impl Into<String>) -> PlanError {
    PlanError::Invalid {
        field,
        message: message.into(),
    }
}

impl DeploymentPlan {
    pub fn from_json(text: &str, origin: &str) -> Result<Self, PlanError> {
        serde_json::from_str(text).map_err(|e| PlanError::Parse {
            path: origin.to_owned(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    pub fn store_count(&self) -> u32 {
        match self.mode {
            Topology::Colocated => self.nodes,
            Topology::Clustered => self.shards.unwrap_or(0),
        }
    }

    pub fn producer_count(&self) -> u32 {
        self.nodes * self.ranks_per_node
    }

    pub fn consumer_count(&self) -> u32 {
        self.nodes * self.consumer_ranks_per_node
    }

    /// Port of store `index`; 0 means "pick any".
    pub fn store_port(&self, index: u32) -> u16 {
        match &self.store_ports {
            Some(ports) => ports[index as usize],
            None if self.base_port == 0 => 0,
            None => self.base_port + index as u16,
        }
    }

    /// Producer global ranks served by consumer `local` on `node`.
    pub fn consumer_assignment(&self, node: u32, local: u32) -> Vec<u32> {
        let cpn = self.consumer_ranks_per_node.max(1);
        (0..self.ranks_per_node)
            .filter(|i| i % cpn == local)
            .map(|i| node * self.ranks_per_node + i)
            .collect()
    }

    pub fn workload(&self) -> Result<WorkloadSpec, PlanError> {
        match &self.workload {
            WorkloadRef::Inline(w) => Ok(w.clone()),
            WorkloadRef::File(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| PlanError::Io {
                    path: p.clone(),
                    source,
                })?;
                serde_json::from_str(&text).map_err(|e| PlanError::Parse {
                    path: p.display().to_string(),
                    line: e.line(),
                    column: e.column(),
                    message: e.to_string(),
                })
            }
        }
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        if self.nodes == 0 {
            return Err(invalid("nodes", "must be >= 1"));
        }
        if self.ranks_per_node == 0 {
            return Err(invalid("ranks_per_node", "must be >= 1"));
        }
        if self.db_cores == 0 {
            return Err(invalid("db_cores", "must be >= 1"));
        }
        match (self.mode, self.shards) {
            (Topology::Colocated, Some(_)) => {
                return Err(invalid("shards", "not allowed in colocated mode"))
            }
            (Topology::Clustered, None) => {
                return Err(invalid("shards", "required in clustered mode"))
            }
            (Topology::Clustered, Some(0)) => return Err(invalid("shards", "must be >= 1")),
            _ => {}
        }
        if self.consumer_ranks_per_node > self.ranks_per_node {
            return Err(invalid(
                "consumer_ranks_per_node",
                "cannot exceed ranks_per_node",
            ));
        }
        match self.store_link_mbps {
            Some(_) if self.mode == Topology::Colocated => {
                return Err(invalid("store_link_mbps", "co-located stores have no network link"))
            }
            Some(b) if !(b > 0.0 && b.is_finite()) => {
                return Err(invalid("store_link_mbps", "must be positive"))
            }
            _ => {}
        }
        if !(self.store_link_overhead_us >= 0.0) {
            return Err(invalid("store_link_overhead_us", "must be >= 0"));
        }
        let count = self.store_count();
        if let Some(ports) = &self.store_ports {
            if ports.len() != count as usize {
                return Err(invalid(
                    "store_ports",
                    format!("lists {} ports for {count} stores", ports.len()),
                ));
            }
            let mut seen = HashSet::new();
            for &p in ports {
                if p == 0 {
                    return Err(invalid("store_ports", "port 0 is not allowed"));
                }
                if !seen.insert(p) {
                    return Err(invalid("store_ports", format!("port {p} listed twice")));
                }
            }
        } else if self.base_port != 0 && u32::from(self.base_port) + count - 1 > u32::from(u16::MAX) {
            return Err(invalid("base_port", "store ports overflow 65535"));
        }
        let workload = self.workload()?;
        workload
            .validate()
            .map_err(|e| invalid("workload", e.to_string()))?;
        if self.consumer_ranks_per_node > 0 && workload.mode != WorkloadMode::TrainFeed {
            return Err(invalid(
                "consumer_ranks_per_node",
                "consumers only run with train_feed workloads",
            ));
        }
        if self.inline && workload.mode != WorkloadMode::Inference {
            return Err(invalid("inline", "only applies to inference workloads"));
        }
        Ok(())
    }

    /// Makes a file workload path absolute relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        if let WorkloadRef::File(p) = &mut self.workload {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let WorkloadRef::Inline(w) = &mut self.workload {
            if let Some(m) = &mut w.model_file {
                if m.is_relative() {
                    *m = base.join(&*m);
                }
            }
        }
    }
}

/// Reads, parses (rejecting unknown fields) and validates a plan file.
pub fn plan_from_file(path: &Path) -> Result<DeploymentPlan, PlanError> {
    let text = std::fs::read_to_string(path).map_err(|source| PlanError::Io {
        path: path.to_owned(),
        source,
    })?;
    let mut plan = DeploymentPlan::from_json(&text, &path.display().to_string())?;
    plan.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    plan.validate()?;
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> serde_json::Value {
        serde_json::json!({
            "mode": "colocated",
            "nodes": 2,
            "ranks_per_node": 4,
            "base_port": 7000,
            "workload": {"payload_bytes_per_rank": 1024, "iterations": 2, "mode": "transfer"}
        })
    }

    fn parse(v: serde_json::Value) -> Result<DeploymentPlan, PlanError> {
        let p = DeploymentPlan::from_json(&v.to_string(), "test")?;
        p.validate()?;
        Ok(p)
    }

    #[test]
    fn colocated_ports() {
        let p = parse(base()).unwrap();
        assert_eq!(p.store_count(), 2);
        assert_eq!((p.store_port(0), p.store_port(1)), (7000, 7001));
        assert_eq!(p.producer_count(), 8);
    }

    #[test]
    fn zero_ranks_rejected() {
        let mut v = base();
        v["ranks_per_node"] = 0.into();
        assert!(matches!(parse(v), Err(PlanError::Invalid { field: "ranks_per_node", .. })));
    }

    #[test]
    fn clustered_needs_shards() {
        let mut v = base();
        v["mode"] = "clustered".into();
        assert!(matches!(parse(v.clone()), Err(PlanError::Invalid { field: "shards", .. })));
        v["shards"] = 1.into();
        assert_eq!(parse(v).unwrap().store_count(), 1);
        let mut c = base();
        c["shards"] = 2.into();
        assert!(matches!(parse(c), Err(PlanError::Invalid { field: "shards", .. })));
    }

    #[test]
    fn unknown_fields_rejected_with_position() {
        let mut v = base();
        v["colour"] = "blue".into();
        let err = parse(v).unwrap_err();
        assert!(matches!(err, PlanError::Parse { line: 1, .. }), "{err}");
        assert!(err.to_string().contains("colour"));
    }

    #[test]
    fn duplicate_ports_rejected() {
        let mut v = base();
        v["store_ports"] = serde_json::json!([7000, 7000]);
        assert!(matches!(parse(v), Err(PlanError::Invalid { field: "store_ports", .. })));
    }

    #[test]
    fn consumer_assignment_is_round_robin() {
        let mut v = base();
        v["ranks_per_node"] = 24.into();
        v["consumer_ranks_per_node"] = 4.into();
        v["workload"]["mode"] = "train_feed".into();
        let p = parse(v).unwrap();
        let a = p.consumer_assignment(1, 2);
        assert_eq!(a.len(), 6);
        assert_eq!(a, vec![26, 30, 34, 38, 42, 46]);
    }
}
