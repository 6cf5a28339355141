use clap::Parser;

fn main() {
    let cli = falcon::cli::Cli::parse();
    if let Err(err) = falcon::cli::run(cli) {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
