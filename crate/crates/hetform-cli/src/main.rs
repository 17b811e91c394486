use clap::Parser as _;

fn main() {
    let cli = hetform_cli::Cli::parse();
    std::process::exit(hetform_cli::run(&cli));
}
