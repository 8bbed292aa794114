use std::process::ExitCode;

fn main() -> ExitCode {
    ambient_risk::cli::init_logging();
    let code = ambient_risk::cli::main_with_args(std::env::args_os());
    ExitCode::from(u8::try_from(code).unwrap_or(2))
}
