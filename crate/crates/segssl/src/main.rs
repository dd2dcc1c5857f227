fn main() {
    let cli = <segssl::cli::Cli as clap::Parser>::parse();
    if let Err(e) = segssl::cli::execute(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
