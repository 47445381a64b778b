use std::path::{Path, PathBuf};

use clap::Args;

use super::{Pacer, ReproError, WorkloadSpec};
use crate::client::{Client, ClientConfig};
use crate::timing::{write_csv_file, TimingSink};

/// Arguments shared by every rank program.
#[derive(Debug, Clone, Args)]
pub struct RankArgs {
    /// Workload spec (JSON).
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub rank: u32,
    #[arg(long, default_value = "local")]
    pub run_id: String,
    /// Ranks sharing the step grid (staggered schedules).
    #[arg(long, default_value_t = 1)]
    pub num_ranks: u32,
    /// Where to write this rank's timing rows; defaults to `<run-id>-<rank>.csv`.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

impl RankArgs {
    pub fn load_spec(&self) -> Result<WorkloadSpec, ReproError> {
        let text = std::fs::read_to_string(&self.spec)
            .map_err(|e| ReproError::Config(format!("reading {}: {e}", self.spec.display())))?;
        let mut spec = WorkloadSpec::from_json(&text)?;
        if let Some(m) = &spec.model_file {
            if m.is_relative() {
                let base = self.spec.parent().unwrap_or(Path::new("."));
                spec.model_file = Some(base.join(m));
            }
        }
        Ok(spec)
    }

    pub fn pacer(&self, spec: &WorkloadSpec) -> Pacer {
        Pacer::from_env(spec, self.rank, self.num_ranks)
    }

    pub fn csv_path(&self) -> PathBuf {
        self.csv
            .clone()
            .unwrap_or_else(|| PathBuf::from(format!("{}-{}.csv", self.run_id, self.rank)))
    }

    pub fn sink(&self) -> TimingSink {
        TimingSink::new(self.run_id.clone(), self.rank)
    }

    /// Connects using the discovery environment, recording `client_init`.
    pub fn connect(&self) -> Result<Client, ReproError> {
        Ok(Client::connect_with_sink(ClientConfig::from_env(), Some(self.sink()))?)
    }

    /// Writes whatever rows were gathered, then maps the outcome to an exit code.
    pub fn finish(&self, sink: Option<TimingSink>, outcome: Result<(), ReproError>) -> i32 {
        let mut code = 0;
        if let Err(e) = &outcome {
            eprintln!("rank {}: {e}", self.rank);
            code = e.exit_code();
        }
        if let Some(sink) = sink {
            if let Err(e) = write_csv_file(&self.csv_path(), sink.records()) {
                eprintln!("rank {}: writing csv: {e}", self.rank);
                if code == 0 {
                    code = 2;
                }
            }
        }
        code
    }
}
