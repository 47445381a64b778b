use clap::Parser;
use isf::repro::{consume, RankArgs};

/// ML-side data loader rank.
#[derive(Parser)]
struct Cli {
    #[command(flatten)]
    rank: RankArgs,
    /// Producer ranks this consumer reads, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    producers: Vec<u32>,
    /// Visit producers in a random order every epoch.
    #[arg(long)]
    shuffle: bool,
}

fn main() {
    let cli = Cli::parse();
    let args = &cli.rank;
    let mut spec = match args.load_spec() {
        Ok(s) => s,
        Err(e) => std::process::exit(args.finish(None, Err(e))),
    };
    spec.shuffle |= cli.shuffle;
    let mut client = match args.connect() {
        Ok(c) => c,
        Err(e) => std::process::exit(args.finish(None, Err(e))),
    };
    let outcome = consume(&spec, &mut client, args.rank, &cli.producers).map(|n| {
        println!("gathered {n} values per epoch");
    });
    std::process::exit(args.finish(client.take_sink(), outcome));
}
