use clap::Parser;

fn main() {
    let cli = dicke::cli::Cli::parse();
    if let Err(e) = dicke::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
