fn main() -> std::process::ExitCode {
    wipu_cli::run(std::env::args_os())
}
