use clap::Parser;

fn main() -> std::process::ExitCode {
    scgflow_cli::main_with(scgflow_cli::Cli::parse())
}
