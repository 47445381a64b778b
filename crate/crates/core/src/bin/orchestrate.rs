use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand};
use isf::orchestrator::{launch, plan_from_file, Launcher};

/// Launches a deployment plan as local virtual nodes.
#[derive(Parser)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Launch, wait for completion and collect artifacts.
    Run {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Kill all clients after this many seconds.
        #[arg(long, default_value_t = 3600)]
        timeout_secs: u64,
        #[arg(long)]
        run_id: Option<String>,
        /// Directory holding the store and rank executables.
        #[arg(long)]
        bin_dir: Option<PathBuf>,
    },
    /// Parse and validate a plan without launching anything.
    Validate {
        #[arg(long)]
        plan: PathBuf,
    },
}

fn main() {
    match Cli::parse().command {
        Cmd::Validate { plan } => match plan_from_file(&plan) {
            Ok(p) => println!(
                "ok: {:?}, {} stores, {} producers, {} consumers",
                p.mode,
                p.store_count(),
                p.producer_count(),
                p.consumer_count()
            ),
            Err(e) => {
                eprintln!("{e}");
                std::process::exit(2);
            }
        },
        Cmd::Run {
            plan,
            out,
            timeout_secs,
            run_id,
            bin_dir,
        } => {
            let plan = match plan_from_file(&plan) {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("{e}");
                    std::process::exit(2);
                }
            };
            let launcher = match bin_dir {
                Some(d) => Launcher::new(d),
                None => Launcher::beside_current_exe().expect("locating executables"),
            };
            let stop = Arc::new(AtomicBool::new(false));
            let flag = stop.clone();
            if let Err(e) = ctrlc::set_handler(move || flag.store(true, Ordering::SeqCst)) {
                eprintln!("signal handler: {e}");
            }
            let run = match launch(&plan, &out, &launcher, run_id) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("launch failed: {e}");
                    std::process::exit(1);
                }
            };
            println!("run {} started, artifacts in {}", run.manifest.run_id, out.display());
            match run.await_completion(Duration::from_secs(timeout_secs), Some(&stop)) {
                Ok(manifest) => {
                    let s = manifest.summary.expect("completed runs have a summary");
                    println!(
                        "{} rows={} failed={:?} orphans={} elapsed={:.1}s",
                        if s.ok { "ok" } else { "FAILED" },
                        s.rows,
                        s.failed,
                        s.orphans.len(),
                        s.elapsed_sec
                    );
                    for e in &s.errors {
                        eprintln!("{e}");
                    }
                    if !s.ok {
                        std::process::exit(1);
                    }
                }
                Err(e) => {
                    eprintln!("{e}");
                    std::process::exit(1);
                }
            }
        }
    }
}
