use std::process::ExitCode;

fn main() -> ExitCode {
    gat_infomax::cli::main()
}
