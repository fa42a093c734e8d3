use clap::Parser;

fn main() {
    let cli = egorec::cli::Cli::parse();
    if let Err(e) = egorec::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
