use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitStatus, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::plan::{DeploymentPlan, PlanError, Topology};
use crate::client::{Client, ClientConfig, ENV_DB_ADDR, ENV_SHARD_MAP};
use crate::repro::{WorkloadMode, ENV_EPOCH_MS};
use crate::timing::{read_csv_file, write_csv_file, TimingRecord};
use crate::wire::MetaValue;

pub const ENV_RUN_ID: &str = "ISF_RUN_ID";
pub const ENV_NODE: &str = "ISF_NODE";
pub const ENV_RANK: &str = "ISF_RANK";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Store,
    Producer,
    Consumer,
    Infer,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Store => "store",
            Role::Producer => "producer",
            Role::Consumer => "consumer",
            Role::Infer => "infer",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcessStatus {
    Running,
    Ok,
    Failed,
    Killed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessRecord {
    pub role: Role,
    pub node: u32,
    /// Global rank for clients, shard or node index for stores.
    pub rank: u32,
    pub pid: u32,
    pub status: ProcessStatus,
    pub exit_code: Option<i32>,
    pub args: Vec<String>,
    /// Discovery variables injected into the child.
    pub env: BTreeMap<String, String>,
    pub log: PathBuf,
    pub csv: Option<PathBuf>,
    /// Store address as reported by its READY line.
    pub addr: Option<String>,
}

impl ProcessRecord {
    pub fn label(&self) -> String {
        format!("{}-{}-{}", self.role.name(), self.node, self.rank)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreSnapshot {
    pub rank: u32,
    pub addr: String,
    pub info: BTreeMap<String, serde_json::Value>,
}

impl StoreSnapshot {
    pub fn int(&self, name: &str) -> Option<i64> {
        self.info.get(name)?.as_i64()
    }

    /// `(owner rank, key count)` for every owner with keys on this store.
    pub fn owners(&self) -> Vec<(u64, i64)> {
        self.info
            .iter()
            .filter_map(|(k, v)| Some((k.strip_prefix("owner.")?.parse().ok()?, v.as_i64()?)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub ok: bool,
    pub timed_out: bool,
    pub interrupted: bool,
    pub failed: Vec<String>,
    pub rows: usize,
    /// Pids still alive after teardown.
    pub orphans: Vec<u32>,
    /// Co-located only: keys found on a store other than their owner's node.
    pub non_local_keys: Option<i64>,
    pub stores: Vec<StoreSnapshot>,
    pub elapsed_sec: f64,
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub plan: DeploymentPlan,
    pub artifact_dir: PathBuf,
    pub started_unix_ms: u64,
    pub processes: Vec<ProcessRecord>,
    pub summary: Option<RunSummary>,
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self, LaunchError> {
        let text = fs::read_to_string(path).map_err(|e| LaunchError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| LaunchError::Manifest(e.to_string()))
    }

    pub fn write(&self) -> Result<(), LaunchError> {
        let path = self.artifact_dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(&path, text).map_err(|e| LaunchError::io(&path, e))
    }

    pub fn stores(&self) -> impl Iterator<Item = &ProcessRecord> {
        self.processes.iter().filter(|p| p.role == Role::Store)
    }

    pub fn clients(&self) -> impl Iterator<Item = &ProcessRecord> {
        self.processes.iter().filter(|p| p.role != Role::Store)
    }

    /// Co-located topology law: every producer's address is its own node's store.
    pub fn colocation_violations(&self) -> Vec<String> {
        let stores: BTreeMap<u32, &str> = self
            .stores()
            .filter_map(|s| Some((s.node, s.addr.as_deref()?)))
            .collect();
        self.clients()
            .filter(|c| c.env.get(ENV_DB_ADDR).map(String::as_str) != stores.get(&c.node).copied())
            .map(ProcessRecord::label)
            .collect()
    }
}

#[derive(Debug, Error)]
pub enum LaunchError {
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("spawning {program}: {source}")]
    Spawn { program: PathBuf, source: io::Error },
    #[error("store {index} not ready: {reason}")]
    NotReady { index: u32, reason: String },
    #[error("manifest: {0}")]
    Manifest(String),
}

impl LaunchError {
    fn io(path: &Path, source: io::Error) -> Self {
        LaunchError::Io {
            path: path.to_owned(),
            source,
        }
    }
}

/// Locates the store and rank executables.
#[derive(Debug, Clone)]
pub struct Launcher {
    pub bin_dir: PathBuf,
}

impl Launcher {
    pub fn new(bin_dir: impl Into<PathBuf>) -> Self {
        Launcher {
            bin_dir: bin_dir.into(),
        }
    }

    /// Executables next to the running binary.
    pub fn beside_current_exe() -> io::Result<Self> {
        let exe = std::env::current_exe()?;
        Ok(Launcher::new(exe.parent().unwrap_or(Path::new("."))))
    }

    fn program(&self, role: Role) -> Result<PathBuf, LaunchError> {
        let path = self.bin_dir.join(format!("{}{}", role.name(), std::env::consts::EXE_SUFFIX));
        if !path.is_file() {
            return Err(LaunchError::Spawn {
                program: path,
                source: io::Error::new(io::ErrorKind::NotFound, "executable not found"),
            });
        }
        Ok(path)
    }
}

/// A launched run: children still attached.
pub struct Run {
    pub manifest: RunManifest,
    children: Vec<Option<Child>>,
    pumps: Vec<JoinHandle<()>>,
    started: Instant,
    done: bool,
}

fn unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

pub fn new_run_id() -> String {
    format!("run-{}-{}", unix_ms(), std::process::id())
}

fn signal(pid: u32, sig: i32) {
    // SAFETY: kill(2) has no memory-safety preconditions.
    unsafe {
        libc::kill(pid as libc::pid_t, sig);
    }
}

/// True while `pid` names a live (or unreaped) process.
pub fn pid_alive(pid: u32) -> bool {
    // SAFETY: signal 0 only checks for existence.
    unsafe { libc::kill(pid as libc::pid_t, 0) == 0 }
}

fn open_log(path: &Path) -> Result<File, LaunchError> {
    File::create(path).map_err(|e| LaunchError::io(path, e))
}

fn status_of(exit: ExitStatus) -> (ProcessStatus, Option<i32>) {
    match exit.code() {
        Some(0) => (ProcessStatus::Ok, Some(0)),
        Some(c) => (ProcessStatus::Failed, Some(c)),
        None => (ProcessStatus::Killed, None),
    }
}

fn meta_json(v: &MetaValue) -> serde_json::Value {
    match v {
        MetaValue::Str(s) => s.clone().into(),
        MetaValue::Int(i) => (*i).into(),
        MetaValue::Float(f) => serde_json::Number::from_f64(*f)
            .map(serde_json::Value::Number)
            .unwrap_or(serde_json::Value::Null),
    }
}

/// Starts the stores, waits for each READY line, then starts every client.
///
/// Any store that fails to report READY in time aborts the run and
/// terminates everything already spawned.
pub fn launch(
    plan: &DeploymentPlan,
    out_dir: &Path,
    launcher: &Launcher,
    run_id: Option<String>,
) -> Result<Run, LaunchError> {
    plan.validate()?;
    let mut workload = plan.workload()?;
    let out_dir = if out_dir.is_absolute() {
        out_dir.to_owned()
    } else {
        std::env::current_dir()
            .map_err(|e| LaunchError::io(out_dir, e))?
            .join(out_dir)
    };
    for dir in [out_dir.clone(), out_dir.join("logs"), out_dir.join("raw")] {
        fs::create_dir_all(&dir).map_err(|e| LaunchError::io(&dir, e))?;
    }
    if let Some(m) = &workload.model_file {
        if let Ok(abs) = fs::canonicalize(m) {
            workload.model_file = Some(abs);
        }
    }
    let spec_path = out_dir.join("workload.json");
    fs::write(&spec_path, serde_json::to_string_pretty(&workload).expect("spec serializes"))
        .map_err(|e| LaunchError::io(&spec_path, e))?;

    let mut run = Run {
        manifest: RunManifest {
            run_id: run_id.unwrap_or_else(new_run_id),
            plan: plan.clone(),
            artifact_dir: out_dir.clone(),
            started_unix_ms: unix_ms(),
            processes: Vec::new(),
            summary: None,
        },
        children: Vec::new(),
        pumps: Vec::new(),
        started: Instant::now(),
        done: false,
    };
    if let Err(e) = run.start_stores(launcher) {
        run.abort();
        return Err(e);
    }
    if let Err(e) = run.start_clients(launcher, &spec_path, workload.mode) {
        run.abort();
        return Err(e);
    }
    run.manifest.write()?;
    Ok(run)
}

impl Run {
    fn push(&mut self, record: ProcessRecord, child: Child) {
        self.manifest.processes.push(record);
        self.children.push(Some(child));
    }

    fn start_stores(&mut self, launcher: &Launcher) -> Result<(), LaunchError> {
        let plan = self.manifest.plan.clone();
        let program = launcher.program(Role::Store)?;
        let count = plan.store_count();
        for index in 0..count {
            let node = match plan.mode {
                Topology::Colocated => index,
                Topology::Clustered => plan.nodes + index,
            };
            let mut args = vec![
                "--bind".to_owned(),
                format!("{}:{}", plan.host, plan.store_port(index)),
                "--max-bytes".into(),
                plan.store_max_bytes.to_string(),
                "--workers".into(),
                plan.db_cores.to_string(),
            ];
            if plan.pin_db_cores {
                args.extend(["--cpus".into(), format!("0-{}", plan.db_cores - 1)]);
            }
            if plan.mode == Topology::Clustered {
                args.extend([
                    "--shard-index".into(),
                    index.to_string(),
                    "--shard-count".into(),
                    count.to_string(),
                ]);
            }
            if let Some(mbps) = plan.store_link_mbps {
                args.extend([
                    "--link-mbps".into(),
                    mbps.to_string(),
                    "--link-overhead-us".into(),
                    plan.store_link_overhead_us.to_string(),
                ]);
            }
            if !plan.store_request_log {
                args.push("--quiet".into());
            }
            let log = self
                .manifest
                .artifact_dir
                .join("logs")
                .join(format!("store-{node}-{index}.log"));
            let file = open_log(&log)?;
            let err = file.try_clone().map_err(|e| LaunchError::io(&log, e))?;
            let mut child = Command::new(&program)
                .args(&args)
                .env_remove(ENV_DB_ADDR)
                .env_remove(ENV_SHARD_MAP)
                .stdin(Stdio::null())
                .stdout(Stdio::piped())
                .stderr(err)
                .spawn()
                .map_err(|source| LaunchError::Spawn {
                    program: program.clone(),
                    source,
                })?;
            let stdout = child.stdout.take().expect("piped stdout");
            let (tx, rx) = mpsc::channel();
            self.pumps.push(thread::spawn(move || pump_store_output(stdout, file, tx)));
            self.push(
                ProcessRecord {
                    role: Role::Store,
                    node,
                    rank: index,
                    pid: child.id(),
                    status: ProcessStatus::Running,
                    exit_code: None,
                    args,
                    env: BTreeMap::new(),
                    log,
                    csv: None,
                    addr: None,
                },
                child,
            );
            let addr = rx
                .recv_timeout(Duration::from_millis(plan.ready_timeout_ms))
                .map_err(|_| LaunchError::NotReady {
                    index,
                    reason: format!("no READY line within {} ms", plan.ready_timeout_ms),
                })?;
            self.manifest.processes.last_mut().expect("just pushed").addr = Some(addr);
        }
        Ok(())
    }

    fn start_clients(
        &mut self,
        launcher: &Launcher,
        spec_path: &Path,
        mode: WorkloadMode,
    ) -> Result<(), LaunchError> {
        let plan = self.manifest.plan.clone();
        let addrs: Vec<String> = self
            .manifest
            .stores()
            .map(|s| s.addr.clone().expect("ready stores have addresses"))
            .collect();
        let role = match mode {
            WorkloadMode::Inference => Role::Infer,
            _ => Role::Producer,
        };
        let mut jobs = Vec::new();
        for node in 0..plan.nodes {
            for local in 0..plan.ranks_per_node {
                let rank = node * plan.ranks_per_node + local;
                let mut extra = vec!["--num-ranks".to_owned(), plan.producer_count().to_string()];
                if plan.inline {
                    extra.push("--inline".to_owned());
                }
                jobs.push((role, node, rank, extra));
            }
        }
        for node in 0..plan.nodes {
            for local in 0..plan.consumer_ranks_per_node {
                let rank = plan.producer_count() + node * plan.consumer_ranks_per_node + local;
                let producers = plan.consumer_assignment(node, local);
                let list = producers.iter().map(u32::to_string).collect::<Vec<_>>().join(",");
                jobs.push((Role::Consumer, node, rank, vec!["--producers".to_owned(), list]));
            }
        }
        let epoch = unix_ms() + plan.ready_timeout_ms.min(200) + 20 * jobs.len() as u64;
        for (role, node, rank, extra) in jobs {
            let program = launcher.program(role)?;
            let label = format!("{}-{node}-{rank}", role.name());
            let csv = self.manifest.artifact_dir.join("raw").join(format!("{label}.csv"));
            let log = self.manifest.artifact_dir.join("logs").join(format!("{label}.log"));
            let mut args = vec![
                "--spec".to_owned(),
                spec_path.display().to_string(),
                "--rank".into(),
                rank.to_string(),
                "--run-id".into(),
                self.manifest.run_id.clone(),
                "--csv".into(),
                csv.display().to_string(),
            ];
            args.extend(extra);
            let mut env = BTreeMap::new();
            match plan.mode {
                Topology::Colocated => {
                    env.insert(ENV_DB_ADDR.to_owned(), addrs[node as usize].clone());
                }
                Topology::Clustered => {
                    env.insert(ENV_SHARD_MAP.to_owned(), addrs.join(","));
                }
            }
            env.insert(ENV_RUN_ID.to_owned(), self.manifest.run_id.clone());
            env.insert(ENV_NODE.to_owned(), node.to_string());
            env.insert(ENV_RANK.to_owned(), rank.to_string());
            env.insert(ENV_EPOCH_MS.to_owned(), epoch.to_string());
            let file = open_log(&log)?;
            let err = file.try_clone().map_err(|e| LaunchError::io(&log, e))?;
            let child = Command::new(&program)
                .args(&args)
                .env_remove(ENV_DB_ADDR)
                .env_remove(ENV_SHARD_MAP)
                .envs(&env)
                .stdin(Stdio::null())
                .stdout(file)
                .stderr(err)
                .spawn()
                .map_err(|source| LaunchError::Spawn {
                    program: program.clone(),
                    source,
                })?;
            self.push(
                ProcessRecord {
                    role,
                    node,
                    rank,
                    pid: child.id(),
                    status: ProcessStatus::Running,
                    exit_code: None,
                    args,
                    env,
                    log,
                    csv: Some(csv),
                    addr: None,
                },
                child,
            );
        }
        Ok(())
    }

    fn reap(&mut self, i: usize, status: Option<ProcessStatus>) {
        if let Some(mut child) = self.children[i].take() {
            let exit = child.wait();
            let record = &mut self.manifest.processes[i];
            match (exit, status) {
                (Ok(e), None) => (record.status, record.exit_code) = status_of(e),
                (Ok(e), Some(s)) => (record.status, record.exit_code) = (s, e.code()),
                (Err(_), s) => record.status = s.unwrap_or(ProcessStatus::Failed),
            }
        }
    }

    fn kill(&mut self, i: usize, status: ProcessStatus) {
        if let Some(child) = self.children[i].as_mut() {
            let _ = child.kill();
        }
        self.reap(i, Some(status));
    }

    /// Terminates a store politely, escalating after a grace period.
    fn stop_store(&mut self, i: usize) {
        let Some(child) = self.children[i].as_mut() else {
            return;
        };
        if let Ok(Some(exit)) = child.try_wait() {
            self.children[i] = None;
            let record = &mut self.manifest.processes[i];
            record.exit_code = exit.code();
            record.status = ProcessStatus::Failed;
            return;
        }
        signal(child.id(), libc::SIGTERM);
        let deadline = Instant::now() + Duration::from_secs(2);
        while Instant::now() < deadline {
            if let Ok(Some(_)) = child.try_wait() {
                break;
            }
            thread::sleep(Duration::from_millis(10));
        }
        self.kill(i, ProcessStatus::Ok);
    }

    fn abort(&mut self) {
        for i in (0..self.children.len()).rev() {
            self.kill(i, ProcessStatus::Killed);
        }
        for p in self.pumps.drain(..) {
            let _ = p.join();
        }
        self.done = true;
        let _ = self.manifest.write();
    }

    fn client_indices(&self) -> Vec<usize> {
        (0..self.children.len())
            .filter(|&i| self.manifest.processes[i].role != Role::Store)
            .collect()
    }

    fn store_indices(&self) -> Vec<usize> {
        (0..self.children.len())
            .filter(|&i| self.manifest.processes[i].role == Role::Store)
            .collect()
    }

    /// Waits for every client, snapshots store INFO, stops the stores last,
    /// merges the per-rank CSVs into `timings.csv` and rewrites the manifest.
    ///
    /// Clients still running at `timeout` (or when `interrupt` is raised)
    /// are killed and marked `killed`.
    pub fn await_completion(
        mut self,
        timeout: Duration,
        interrupt: Option<&AtomicBool>,
    ) -> Result<RunManifest, LaunchError> {
        let deadline = Instant::now() + timeout;
        let mut timed_out = false;
        let mut interrupted = false;
        let clients = self.client_indices();
        loop {
            let mut running = 0;
            for &i in &clients {
                if let Some(child) = self.children[i].as_mut() {
                    match child.try_wait() {
                        Ok(Some(_)) | Err(_) => self.reap(i, None),
                        Ok(None) => running += 1,
                    }
                }
            }
            if running == 0 {
                break;
            }
            if interrupt.is_some_and(|f| f.load(Ordering::SeqCst)) {
                interrupted = true;
            } else if Instant::now() >= deadline {
                timed_out = true;
            }
            if interrupted || timed_out {
                for &i in &clients {
                    if self.children[i].is_some() {
                        self.kill(i, ProcessStatus::Killed);
                    }
                }
                break;
            }
            thread::sleep(Duration::from_millis(20));
        }

        let mut errors = Vec::new();
        let mut stores = Vec::new();
        for i in self.store_indices() {
            let record = &self.manifest.processes[i];
            let (Some(addr), true) = (record.addr.clone(), self.children[i].is_some()) else {
                continue;
            };
            match snapshot(&addr) {
                Ok(info) => stores.push(StoreSnapshot {
                    rank: record.rank,
                    addr,
                    info,
                }),
                Err(e) => errors.push(format!("INFO from {addr}: {e}")),
            }
        }
        for i in self.store_indices() {
            self.stop_store(i);
        }
        for p in self.pumps.drain(..) {
            let _ = p.join();
        }
        self.done = true;

        let mut rows: Vec<TimingRecord> = Vec::new();
        for &i in &clients {
            let Some(csv) = &self.manifest.processes[i].csv else {
                continue;
            };
            if !csv.exists() {
                errors.push(format!("{} wrote no csv", self.manifest.processes[i].label()));
                continue;
            }
            match read_csv_file(csv) {
                Ok(mut r) => rows.append(&mut r),
                Err(e) => errors.push(format!("{}: {e}", csv.display())),
            }
        }
        sort_records(&mut rows);
        let merged = self.manifest.artifact_dir.join("timings.csv");
        if let Err(e) = write_csv_file(&merged, &rows) {
            errors.push(format!("{}: {e}", merged.display()));
        }

        let orphans: Vec<u32> = self
            .manifest
            .processes
            .iter()
            .map(|p| p.pid)
            .filter(|&pid| pid_alive(pid))
            .collect();
        let failed: Vec<String> = self
            .manifest
            .processes
            .iter()
            .filter(|p| p.status != ProcessStatus::Ok)
            .map(ProcessRecord::label)
            .collect();
        let non_local_keys = (self.manifest.plan.mode == Topology::Colocated)
            .then(|| non_local(&self.manifest.plan, &stores));
        let summary = RunSummary {
            ok: failed.is_empty() && orphans.is_empty() && errors.is_empty(),
            timed_out,
            interrupted,
            failed,
            rows: rows.len(),
            orphans,
            non_local_keys,
            stores,
            elapsed_sec: self.started.elapsed().as_secs_f64(),
            errors,
        };
        self.manifest.summary = Some(summary);
        self.manifest.write()?;
        Ok(self.manifest.clone())
    }
}

impl Drop for Run {
    fn drop(&mut self) {
        if !self.done {
            self.abort();
        }
    }
}

/// Deterministic merge order: run id, rank, iteration; ties keep input order.
pub fn sort_records(rows: &mut [TimingRecord]) {
    rows.sort_by(|a, b| {
        (a.run_id.as_str(), a.rank, a.iter).cmp(&(b.run_id.as_str(), b.rank, b.iter))
    });
}

fn non_local(plan: &DeploymentPlan, stores: &[StoreSnapshot]) -> i64 {
    let rpn = u64::from(plan.ranks_per_node);
    stores
        .iter()
        .flat_map(|s| {
            s.owners()
                .into_iter()
                .filter(move |&(owner, _)| owner / rpn != u64::from(s.rank))
                .map(|(_, n)| n)
        })
        .sum()
}

fn snapshot(addr: &str) -> Result<BTreeMap<String, serde_json::Value>, crate::client::ClientError> {
    let mut config = ClientConfig::colocated(addr);
    config.max_attempts = 2;
    config.request_timeout_ms = 5_000;
    let mut client = Client::connect(config)?;
    Ok(client
        .info(0)?
        .iter()
        .map(|(k, v)| (k.clone(), meta_json(v)))
        .collect())
}

fn pump_store_output(stdout: std::process::ChildStdout, mut log: File, ready: mpsc::Sender<String>) {
    let mut lines = BufReader::new(stdout).lines();
    let mut announced = false;
    while let Some(Ok(line)) = lines.next() {
        if !announced {
            if let Some(addr) = line.strip_prefix("READY ") {
                announced = true;
                let _ = ready.send(addr.trim().to_owned());
                continue;
            }
        }
        let _ = writeln!(log, "{line}");
    }
}

/// Parses, launches and supervises a plan in one call.
pub fn run_plan(
    plan: &DeploymentPlan,
    out_dir: &Path,
    launcher: &Launcher,
    timeout: Duration,
    interrupt: Option<&AtomicBool>,
) -> Result<RunManifest, LaunchError> {
    launch(plan, out_dir, launcher, None)?.await_completion(timeout, interrupt)
}
