use std::process::ExitCode;

fn main() -> ExitCode {
    polyalign::cli::main()
}
