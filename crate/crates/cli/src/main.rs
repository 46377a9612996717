use clap::Parser;

fn main() {
    let cli = rankabr_cli::Cli::parse();
    if let Err(e) = rankabr_cli::run(&cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
