use std::process::ExitCode;

fn main() -> ExitCode {
    i2s_forge::cli::main()
}
