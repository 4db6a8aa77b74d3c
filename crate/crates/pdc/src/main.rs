use std::process::ExitCode;

fn main() -> ExitCode {
    pdc::cli::main_with_args(std::env::args_os())
}
