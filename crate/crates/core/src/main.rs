use clap::Parser;

use gpfeat::cli;

fn main() {
    let args = cli::Cli::parse();
    if let Err(error) = cli::run(args) {
        eprintln!("error: {error}");
        std::process::exit(cli::exit_code(&error));
    }
}
