use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(regulib::cli::main() as u8)
}
