use clap::Parser;

fn main() {
    let cli = aapi_core::cli::Cli::parse();
    if let Err(e) = aapi_core::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
