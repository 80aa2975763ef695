fn main() -> std::process::ExitCode {
    rac::cli::main()
}
