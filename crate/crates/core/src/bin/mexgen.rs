use std::path::PathBuf;

use clap::{Parser, ValueEnum};
use isf::exec::{random_affine, random_mlp, Model};

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Identity,
    Affine,
    Mlp,
}

/// Writes a MEX1 model blob with seeded random weights.
#[derive(Parser)]
struct Cli {
    #[arg(long = "type", value_enum)]
    kind: Kind,
    #[arg(long = "in", default_value_t = 16)]
    in_dim: u32,
    #[arg(long = "out", default_value_t = 16)]
    out_dim: u32,
    /// Hidden layer widths for `mlp`, comma separated.
    #[arg(long, value_delimiter = ',')]
    hidden: Vec<u32>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short = 'o', long)]
    output: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    if cli.in_dim == 0 || cli.out_dim == 0 || cli.hidden.contains(&0) {
        eprintln!("dimensions must be positive");
        std::process::exit(2);
    }
    let model = match cli.kind {
        Kind::Identity => Model::Identity,
        Kind::Affine => random_affine(cli.in_dim, cli.out_dim, cli.seed),
        Kind::Mlp => {
            let mut dims = vec![cli.in_dim];
            dims.extend(&cli.hidden);
            dims.push(cli.out_dim);
            random_mlp(&dims, cli.seed)
        }
    };
    if let Err(e) = std::fs::write(&cli.output, model.to_blob()) {
        eprintln!("writing {}: {e}", cli.output.display());
        std::process::exit(1);
    }
}
