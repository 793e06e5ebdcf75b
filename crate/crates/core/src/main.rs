use clap::Parser;
use partial_varifold::cli::{run, Cli};

fn main() -> std::process::ExitCode {
    run(Cli::parse())
}
