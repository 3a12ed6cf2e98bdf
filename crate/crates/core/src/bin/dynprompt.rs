use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(dynprompt::cli::run(std::env::args_os()))
}
