use clap::Parser;
use isf::repro::{produce, RankArgs};

/// Simulation-side reproducer rank.
#[derive(Parser)]
struct Cli {
    #[command(flatten)]
    rank: RankArgs,
}

fn main() {
    let cli = Cli::parse();
    let args = &cli.rank;
    let spec = match args.load_spec() {
        Ok(s) => s,
        Err(e) => std::process::exit(args.finish(None, Err(e))),
    };
    let mut client = match args.connect() {
        Ok(c) => c,
        Err(e) => std::process::exit(args.finish(None, Err(e))),
    };
    let mut pacer = args.pacer(&spec);
    let outcome = produce(&spec, &mut client, args.rank, args.num_ranks, &mut pacer);
    std::process::exit(args.finish(client.take_sink(), outcome));
}
