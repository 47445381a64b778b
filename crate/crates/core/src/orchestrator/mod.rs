//! Local deployment driver: runs stores and rank programs as virtual nodes
//! on one machine, injects discovery variables, supervises shutdown and
//! collects logs and timings into an artifact directory.

mod launch;
mod plan;

pub use launch::{
    launch, new_run_id, pid_alive, run_plan, sort_records, LaunchError, Launcher, ProcessRecord,
    ProcessStatus, Role, Run, RunManifest, RunSummary, StoreSnapshot, ENV_NODE, ENV_RANK,
    ENV_RUN_ID,
};
pub use plan::{plan_from_file, DeploymentPlan, PlanError, Topology, WorkloadRef};
