use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(cost::cli::run_from_args() as u8)
}
