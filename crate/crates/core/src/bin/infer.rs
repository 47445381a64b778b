use clap::Parser;
use isf::repro::{infer, infer_inline, RankArgs};

/// Inference reproducer rank: networked through the store, or inline.
#[derive(Parser)]
struct Cli {
    #[command(flatten)]
    rank: RankArgs,
    /// Evaluate the model in this process; no store is contacted.
    #[arg(long)]
    inline: bool,
}

fn main() {
    let cli = Cli::parse();
    let args = &cli.rank;
    let spec = match args.load_spec() {
        Ok(s) => s,
        Err(e) => std::process::exit(args.finish(None, Err(e))),
    };
    let mut pacer = args.pacer(&spec);
    if cli.inline {
        let mut sink = args.sink();
        let outcome = infer_inline(&spec, args.rank, &mut sink, &mut pacer).map(drop);
        std::process::exit(args.finish(Some(sink), outcome));
    }
    let mut client = match args.connect() {
        Ok(c) => c,
        Err(e) => std::process::exit(args.finish(None, Err(e))),
    };
    let outcome = infer(&spec, &mut client, args.rank, &mut pacer);
    std::process::exit(args.finish(client.take_sink(), outcome));
}
