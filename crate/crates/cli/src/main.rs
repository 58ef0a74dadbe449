use clap::Parser;

fn main() {
    let cli = chargegen_cli::Cli::parse();
    if let Err(err) = chargegen_cli::run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
