use clap::Parser;
use isf::store::{serve_forever, LinkModel, StoreConfig};
use isf::store::telemetry::parse_cpu_list;

// An alias keeps clap from treating the list as a repeated argument.
type CpuList = Vec<usize>;

/// In-memory tensor store server.
#[derive(Parser)]
struct Cli {
    #[arg(long, default_value = "127.0.0.1:6780")]
    bind: String,
    /// Memory cap for tensors and model blobs.
    #[arg(long, default_value_t = 4 << 30)]
    max_bytes: u64,
    /// Executor threads; 0 serves each request on its connection thread.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// CPU list to pin to, e.g. `0-3,6` (advisory).
    #[arg(long, value_parser = parse_cpu_list)]
    cpus: Option<CpuList>,
    #[arg(long, requires = "shard_count")]
    shard_index: Option<usize>,
    #[arg(long, requires = "shard_index")]
    shard_count: Option<usize>,
    /// Emulate a network interface of this bandwidth (MB/s) shared by all clients.
    #[arg(long)]
    link_mbps: Option<f64>,
    /// Fixed per-request cost on the emulated interface.
    #[arg(long, default_value_t = 0.0, requires = "link_mbps")]
    link_overhead_us: f64,
    /// Suppress per-request log lines.
    #[arg(long)]
    quiet: bool,
}

fn main() {
    let cli = Cli::parse();
    let shard = match (cli.shard_index, cli.shard_count) {
        (Some(i), Some(n)) if i < n => Some((i, n)),
        (Some(i), Some(n)) => {
            eprintln!("shard index {i} out of range for {n} shards");
            std::process::exit(2);
        }
        _ => None,
    };
    let link = match cli.link_mbps {
        Some(mbps) if mbps > 0.0 && cli.link_overhead_us >= 0.0 => Some(LinkModel {
            bytes_per_sec: mbps * 1e6,
            overhead_us: cli.link_overhead_us,
        }),
        Some(_) => {
            eprintln!("link bandwidth must be positive");
            std::process::exit(2);
        }
        None => None,
    };
    let config = StoreConfig {
        link,
        max_bytes: cli.max_bytes,
        workers: cli.workers,
        cpus: cli.cpus.unwrap_or_default(),
        shard,
        log_requests: !cli.quiet,
        ..StoreConfig::default()
    };
    if let Err(e) = serve_forever(&cli.bind, &config) {
        eprintln!("store on {}: {e}", cli.bind);
        std::process::exit(1);
    }
}
