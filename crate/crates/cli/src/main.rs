use clap::Parser;

fn main() {
    let cli = funfem_cli::args::Cli::parse();
    std::process::exit(funfem_cli::run(cli));
}
