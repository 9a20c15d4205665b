use clap::Parser;

fn main() {
    let cli = fedsplit::cli::Cli::parse();
    std::process::exit(fedsplit::cli::main_with(cli));
}
