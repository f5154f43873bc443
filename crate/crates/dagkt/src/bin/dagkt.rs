use clap::Parser;

fn main() {
    let cli = dagkt::cli::Cli::parse();
    if let Err(err) = dagkt::cli::run(cli) {
        eprintln!("error: {err}");
        std::process::exit(err.code());
    }
}
