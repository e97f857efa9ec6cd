use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(spclt_cli::run(std::env::args_os()))
}
