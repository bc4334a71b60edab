use std::process::ExitCode;

fn main() -> ExitCode {
    gridlab_cli::main_with_args(std::env::args_os())
}
