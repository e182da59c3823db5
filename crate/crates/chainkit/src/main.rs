use clap::Parser;

fn main() {
    let cli = chainkit::cli::Cli::parse();
    std::process::exit(chainkit::cli::run(cli));
}
