use clap::Parser;

use hyface_cli::cli::Cli;

fn main() {
    let cli = Cli::parse();
    if let Err(err) = hyface_cli::run(&cli) {
        eprintln!("error: {err}");
        std::process::exit(hyface_cli::exit_code(&err));
    }
}
