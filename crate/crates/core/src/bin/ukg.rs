use std::io::{self, Write};
use std::process::ExitCode;

use tracing_subscriber::EnvFilter;

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::from_env("UKG_LOG"))
        .with_writer(io::stderr)
        .init();
    let mut out = io::stdout().lock();
    let mut err = io::stderr().lock();
    let code = ukg_core::cli::run(std::env::args_os(), &mut out, &mut err);
    let _ = out.flush();
    ExitCode::from(code as u8)
}
