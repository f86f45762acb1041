use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(pm25net::cli::main() as u8)
}
