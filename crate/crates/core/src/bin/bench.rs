use std::path::PathBuf;

use clap::{Parser, Subcommand};
use isf::bench::{
    builtin_ids, builtin_spec, merge_and_plot, run_experiment, ExperimentSpec, RunOptions,
    ScalingReport, VerdictStatus,
};
use isf::orchestrator::Launcher;

/// Runs the scaling experiments and checks their reports.
#[derive(Parser)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one experiment sweep end to end.
    Run {
        /// Built-in experiment id (E1..E7).
        #[arg(long, required_unless_present = "spec")]
        experiment: Option<String>,
        /// Experiment file instead of a built-in id.
        #[arg(long, conflicts_with = "experiment")]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Use the full-size parameters (needs a large machine).
        #[arg(long)]
        paper_scale: bool,
        #[arg(long)]
        repetitions: Option<u32>,
        #[arg(long)]
        bin_dir: Option<PathBuf>,
    },
    /// Print the verdicts of a report; exit 1 if any required check failed.
    Check {
        #[arg(long)]
        report: PathBuf,
    },
    /// Merge a directory of per-run CSVs into merged.csv plus a plot.
    Merge {
        #[arg(long)]
        raw: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// List the built-in experiments.
    List,
}

fn fail(msg: impl std::fmt::Display) -> ! {
    eprintln!("{msg}");
    std::process::exit(2)
}

fn print_verdicts(report: &ScalingReport) {
    for p in &report.points {
        let means: Vec<String> = p
            .components
            .iter()
            .map(|(k, s)| format!("{k}={:.3}ms", s.op_mean_sec * 1e3))
            .collect();
        println!(
            "  {:<10} {} {}",
            p.label,
            if p.ok { "ok    " } else { "FAILED" },
            means.join(" ")
        );
    }
    for v in &report.verdicts {
        let status = match v.status {
            VerdictStatus::Pass => "PASS",
            VerdictStatus::Fail => "FAIL",
            VerdictStatus::Inconclusive => "INCONCLUSIVE",
        };
        let tag = if v.advisory { " (advisory)" } else { "" };
        println!("{status} {} {}{tag}: {}", report.id, v.name, v.detail);
    }
}

fn main() {
    match Cli::parse().command {
        Cmd::List => {
            for id in builtin_ids() {
                let s = builtin_spec(id).unwrap_or_else(|e| fail(e));
                println!("{id}  {} ({} points)", s.title, s.points.len());
            }
        }
        Cmd::Run {
            experiment,
            spec,
            out,
            paper_scale,
            repetitions,
            bin_dir,
        } => {
            let spec = match (experiment, spec) {
                (_, Some(path)) => ExperimentSpec::from_file(&path),
                (Some(id), None) => builtin_spec(&id),
                (None, None) => unreachable!("clap requires one of them"),
            }
            .unwrap_or_else(|e| fail(e));
            let launcher = match bin_dir {
                Some(d) => Launcher::new(d),
                None => Launcher::beside_current_exe().unwrap_or_else(|e| fail(e)),
            };
            let opts = RunOptions {
                paper_scale,
                repetitions,
                verbose: true,
            };
            let report = run_experiment(&spec, &out, &launcher, &opts).unwrap_or_else(|e| fail(e));
            print_verdicts(&report);
            println!("report: {}", out.join("report.json").display());
            if !report.passed() {
                std::process::exit(1);
            }
        }
        Cmd::Check { report } => {
            let report = ScalingReport::read(&report).unwrap_or_else(|e| fail(e));
            print_verdicts(&report);
            if !report.passed() {
                std::process::exit(1);
            }
        }
        Cmd::Merge { raw, out } => {
            let rows = merge_and_plot(&raw, &out).unwrap_or_else(|e| fail(e));
            println!("{rows} rows -> {}", out.join("merged.csv").display());
        }
    }
}
