use clap::Parser;

fn main() {
    let cli = sdm_core::cli::Cli::parse();
    std::process::exit(sdm_core::cli::run(cli));
}
