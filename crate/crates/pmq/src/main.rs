use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(pmq::cli::run(std::env::args_os()))
}
