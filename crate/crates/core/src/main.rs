use std::io::{self, Write};
use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut stdout = io::stdout().lock();
    let code = bundlekit::cli::run(std::env::args_os(), &mut stdout);
    let _ = stdout.flush();
    ExitCode::from(code as u8)
}
