fn main() -> std::process::ExitCode {
    adasim::cli::main()
}
