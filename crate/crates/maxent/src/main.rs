use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(maxent::cli::run(std::env::args()) as u8)
}
