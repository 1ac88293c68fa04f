use std::process::ExitCode;

fn main() -> ExitCode {
    locconf::cli::main()
}
