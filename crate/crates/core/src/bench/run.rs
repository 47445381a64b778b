use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use super::plot::{line_chart, plot_report};
use super::report::{check_properties, derive_metrics, summarize, PointResult, RunOutcome, ScalingReport};
use super::spec::{ExperimentSpec, ModelGen};
use super::BenchError;
use crate::exec::{random_affine, random_mlp, Model};
use crate::orchestrator::{run_plan, DeploymentPlan, Launcher, ProcessStatus, RunManifest};
use crate::repro::{expected_infer_rows, expected_producer_rows, WorkloadMode};
use crate::timing::{read_csv_file, TimingRecord};

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub paper_scale: bool,
    /// Overrides the spec's repetition count.
    pub repetitions: Option<u32>,
    /// Print one progress line per run on stderr.
    pub verbose: bool,
}

fn io_err(path: &Path, e: std::io::Error) -> BenchError {
    BenchError::Io(format!("{}: {e}", path.display()))
}

fn file_label(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

fn write_model(gen: &ModelGen, dir: &Path) -> Result<(), BenchError> {
    let model = match gen.dims.as_slice() {
        [] => return Err(BenchError::Spec(format!("model {} has no dims", gen.file))),
        [_] => Model::Identity,
        [i, o] => random_affine(*i, *o, gen.seed),
        dims => random_mlp(dims, gen.seed),
    };
    let path = dir.join(&gen.file);
    fs::write(&path, model.to_blob()).map_err(|e| io_err(&path, e))
}

/// Rows a clean run of `plan` must produce, when the roles make it exact.
pub fn expected_rows(plan: &DeploymentPlan) -> Option<usize> {
    if plan.consumer_ranks_per_node > 0 {
        return None;
    }
    let spec = plan.workload().ok()?;
    let per_rank = match spec.mode {
        WorkloadMode::Inference => expected_infer_rows(&spec, plan.inline),
        _ => expected_producer_rows(&spec),
    };
    Some(per_rank * plan.producer_count() as usize)
}

fn outcome(manifest: &RunManifest, rows: &[TimingRecord], plan: &DeploymentPlan) -> RunOutcome {
    let summary = manifest.summary.as_ref();
    let expected_rows = expected_rows(plan);
    let launched = plan.store_count() + plan.producer_count() + plan.consumer_count();
    let pids: HashSet<u32> = manifest.processes.iter().map(|p| p.pid).collect();
    let accounting_ok = manifest.processes.len() == launched as usize
        && pids.len() == manifest.processes.len()
        && manifest.processes.iter().all(|p| p.status != ProcessStatus::Running)
        && expected_rows.is_none_or(|n| n == rows.len())
        && summary.is_some_and(|s| s.rows == rows.len());
    let op_means = summarize(rows)
        .into_iter()
        .map(|(k, v)| (k, v.op_mean_sec))
        .collect();
    RunOutcome {
        run_id: manifest.run_id.clone(),
        dir: manifest.artifact_dir.clone(),
        ok: summary.is_some_and(|s| s.ok),
        rows: rows.len(),
        expected_rows,
        accounting_ok,
        orphans: summary.map_or(0, |s| s.orphans.len()),
        non_local_keys: summary.and_then(|s| s.non_local_keys),
        failed: summary.map(|s| s.failed.clone()).unwrap_or_default(),
        errors: summary.map(|s| s.errors.clone()).unwrap_or_default(),
        elapsed_sec: summary.map_or(0.0, |s| s.elapsed_sec),
        op_means,
    }
}

fn failed_outcome(dir: &Path, error: String) -> RunOutcome {
    RunOutcome {
        run_id: String::new(),
        dir: dir.to_owned(),
        ok: false,
        rows: 0,
        expected_rows: None,
        accounting_ok: false,
        orphans: 0,
        non_local_keys: None,
        failed: Vec::new(),
        errors: vec![error],
        elapsed_sec: 0.0,
        op_means: BTreeMap::new(),
    }
}

/// Runs every sweep point (strictly one after another) through the
/// orchestrator and writes `raw/`, `runs/`, `merged.csv`, `report.json`
/// and plots under `out`. Failed runs mark their point failed; the report
/// is still written.
pub fn run_experiment(
    spec: &ExperimentSpec,
    out: &Path,
    launcher: &Launcher,
    opts: &RunOptions,
) -> Result<ScalingReport, BenchError> {
    let started = Instant::now();
    let models = out.join("models");
    let raw = out.join("raw");
    for dir in [out, &models, &raw] {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let models = fs::canonicalize(&models).map_err(|e| io_err(&models, e))?;
    for gen in &spec.models {
        write_model(gen, &models)?;
    }
    let reps = opts.repetitions.unwrap_or(spec.repetitions).max(1);
    let plans = spec
        .points
        .iter()
        .map(|point| spec.expand(point, opts.paper_scale, &models))
        .collect::<Result<Vec<_>, _>>()?;
    let mut runs: Vec<Vec<RunOutcome>> = vec![Vec::new(); plans.len()];
    let mut rows: Vec<Vec<TimingRecord>> = vec![Vec::new(); plans.len()];
    // Repetitions go round-robin over the points so slow spells spread across them.
    for rep in 0..reps {
        for (i, (point, plan)) in spec.points.iter().zip(&plans).enumerate() {
            let name = format!("{}-rep{rep}", file_label(&point.label));
            let dir = out.join("runs").join(&name);
            let result = run_plan(plan, &dir, launcher, Duration::from_secs(spec.timeout_secs), None);
            let run = match result {
                Ok(manifest) => {
                    let merged = dir.join("timings.csv");
                    let rep_rows = read_csv_file(&merged).unwrap_or_default();
                    let copy = raw.join(format!("{name}.csv"));
                    if merged.exists() {
                        fs::copy(&merged, &copy).map_err(|e| io_err(&copy, e))?;
                    }
                    let o = outcome(&manifest, &rep_rows, plan);
                    rows[i].extend(rep_rows);
                    o
                }
                Err(e) => failed_outcome(&dir, e.to_string()),
            };
            if opts.verbose {
                eprintln!(
                    "{} {} rep {rep}: {} rows={} {:.1}s",
                    spec.id,
                    point.label,
                    if run.ok && run.accounting_ok { "ok" } else { "FAILED" },
                    run.rows,
                    run.elapsed_sec
                );
            }
            runs[i].push(run);
        }
    }
    let mut points = Vec::new();
    for (((point, plan), runs), rows) in spec.points.iter().zip(&plans).zip(runs).zip(rows) {
        let workload = plan.workload()?;
        points.push(PointResult {
            label: point.label.clone(),
            x: point.x,
            payload_bytes_per_rank: workload.payload_bytes_per_rank,
            producer_ranks: plan.producer_count(),
            ok: runs.iter().all(|r| r.ok && r.accounting_ok),
            runs,
            components: summarize(&rows),
            efficiency: BTreeMap::new(),
            speedup: BTreeMap::new(),
        });
    }
    derive_metrics(&mut points);
    let mut report = ScalingReport {
        id: spec.id.clone(),
        title: spec.title.clone(),
        x_label: spec.x_label.clone(),
        log_x: spec.log_x,
        log_y: spec.log_y,
        paper_scale: opts.paper_scale,
        components: spec.components.clone(),
        points,
        checks: spec.checks.clone(),
        verdicts: Vec::new(),
        elapsed_sec: 0.0,
    };
    report.verdicts = check_properties(&report);
    report.elapsed_sec = started.elapsed().as_secs_f64();
    report.write(&out.join("report.json"))?;
    if let Err(e) = plot_report(&report, out) {
        eprintln!("plotting: {e}");
    }
    if let Err(e) = merge_and_plot(&raw, out) {
        eprintln!("merging: {e}");
    }
    Ok(report)
}

/// Reads every `*.csv` in `raw_dir`, name order, into one sorted table.
pub fn merge_dir(raw_dir: &Path) -> Result<(Vec<PathBuf>, Vec<TimingRecord>), BenchError> {
    let mut files: Vec<PathBuf> = fs::read_dir(raw_dir)
        .map_err(|e| io_err(raw_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(BenchError::Empty(raw_dir.to_owned()));
    }
    let mut rows = Vec::new();
    for f in &files {
        let mut r = read_csv_file(f).map_err(|e| BenchError::Csv(format!("{}: {e}", f.display())))?;
        rows.append(&mut r);
    }
    crate::orchestrator::sort_records(&mut rows);
    Ok((files, rows))
}

/// Merges `raw_dir` into `out/merged.csv` with a per-row throughput column
/// (bytes per second) and plots per-call latency against bytes.
pub fn merge_and_plot(raw_dir: &Path, out: &Path) -> Result<usize, BenchError> {
    let (_, rows) = merge_dir(raw_dir)?;
    let path = out.join("merged.csv");
    let file = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    let csv_err = |e: csv::Error| BenchError::Csv(format!("{}: {e}", path.display()));
    w.write_record(["run_id", "rank", "op", "component", "iter", "bytes", "micros", "throughput"])
        .map_err(csv_err)?;
    for r in &rows {
        w.write_record([
            r.run_id.clone(),
            r.rank.to_string(),
            r.op.clone(),
            r.component.clone(),
            r.iter.to_string(),
            r.bytes.to_string(),
            r.micros.to_string(),
            r.throughput().to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.into_inner()
        .map_err(|e| BenchError::Io(format!("{}: {e}", path.display())))?
        .flush()
        .map_err(|e| io_err(&path, e))?;

    let mut by: BTreeMap<&str, BTreeMap<u64, (f64, usize)>> = BTreeMap::new();
    for r in rows.iter().filter(|r| !r.is_warmup() && r.bytes > 0) {
        let e = by.entry(&r.component).or_default().entry(r.bytes).or_default();
        e.0 += r.micros * 1e-6;
        e.1 += 1;
    }
    let series: Vec<(String, Vec<(f64, f64)>)> = by
        .into_iter()
        .map(|(c, m)| {
            let pts = m.into_iter().map(|(b, (s, n))| (b as f64, s / n as f64)).collect();
            (c.to_owned(), pts)
        })
        .collect();
    if !series.is_empty() {
        line_chart(
            &out.join("latency_vs_bytes.svg"),
            "per-call latency",
            "bytes per call",
            "seconds",
            &series,
            true,
            true,
        )?;
    }
    Ok(rows.len())
}
