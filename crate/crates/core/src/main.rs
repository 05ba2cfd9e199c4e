use std::process::ExitCode;

fn main() -> ExitCode {
    fbftl_core::cli::main_with_args(std::env::args_os())
}
