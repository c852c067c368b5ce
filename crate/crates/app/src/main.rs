fn main() -> std::process::ExitCode {
    typogen_app::cli::main_with_args(std::env::args_os())
}
