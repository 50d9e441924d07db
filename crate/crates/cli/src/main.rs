use std::process::ExitCode;

fn main() -> ExitCode {
    tacbench::cli_main()
}
