use std::process::ExitCode;

fn main() -> ExitCode {
    gwloops::cli::run()
}
