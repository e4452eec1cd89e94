use clap::Parser;

fn main() {
    let cli = gsvs_cli::Cli::parse();
    if let Err(e) = gsvs_cli::run(cli) {
        eprintln!("gsvs: {e}");
        std::process::exit(e.code());
    }
}
