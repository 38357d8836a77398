use std::process::ExitCode;

fn main() -> ExitCode {
    xmlr::cli::main()
}
