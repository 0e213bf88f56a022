use clap::Parser;

use capsim::cli::{self, RunConfig};

fn main() {
    let config = RunConfig::parse();
    std::process::exit(cli::run(&config));
}
