fn main() -> std::process::ExitCode {
    budamaf_cli::run(std::env::args_os())
}
