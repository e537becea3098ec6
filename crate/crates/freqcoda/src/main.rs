use std::process::ExitCode;

fn main() -> ExitCode {
    freqcoda::cli::main_with(std::env::args_os())
}
