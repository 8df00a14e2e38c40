fn main() -> std::process::ExitCode {
    narrative_core::cli::main()
}
